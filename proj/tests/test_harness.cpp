#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "cfisim/harness.hpp"
#include "cfisim/instrument.hpp"
#include "cfisim/program.hpp"

using namespace cfisim;

namespace {

const Report& report() {
  static const Report r = [] {
    auto res = bench_all();
    REQUIRE_MESSAGE(res.ok(), (res.error));
    return *res.report;
  }();
  return r;
}

const BenchRow& row_of(const std::string& bench, Scheme s) {
  for (const auto& r : report().rows)
    if (r.bench == bench && r.scheme == s) return r;
  REQUIRE_MESSAGE(false, ("missing row " + bench));
  static BenchRow dummy;
  return dummy;
}

const SchemeAggregate& agg_of(Scheme s) {
  for (const auto& a : report().aggregates)
    if (a.scheme == s) return a;
  static SchemeAggregate dummy;
  return dummy;
}

const AttackRow& attack_of(const std::string& name) {
  for (const auto& a : report().attacks)
    if (a.attack == name) return a;
  REQUIRE_MESSAGE(false, ("missing attack " + name));
  static AttackRow dummy;
  return dummy;
}

int64_t delta(const BenchRow& r) {
  return int64_t(r.instr_retired) - int64_t(r.base_retired);
}

}  // namespace

TEST_CASE("corpus inventory is stable") {
  const auto& c = corpus();
  std::vector<std::string> names;
  for (const auto& b : c) names.push_back(b.name);
  CHECK(names == std::vector<std::string>{
                     "call-micro", "factorial", "nested-recursion", "tak",
                     "nqueens", "indirect-dispatch", "jump-table",
                     "setjmp-micro", "leaf-math", "irq-race"});
  CHECK(find_case("tak") != nullptr);
  CHECK(find_case("tak")->expected_output == 6);
  CHECK(find_case("no-such-bench") == nullptr);

  std::vector<std::string> attacks;
  for (const auto& a : attack_cases()) attacks.push_back(a.name);
  CHECK(attacks == std::vector<std::string>{"returns", "indirect-calls",
                                            "indirect-jumps", "fine-grained",
                                            "interrupts"});
}

TEST_CASE("every baseline reproduces its frozen output") {
  for (const auto& b : corpus()) {
    auto lr = load_program(b.asm_text, b.cfg_text);
    REQUIRE_MESSAGE(lr.ok(), (b.name + ": " + lr.error));
    auto lay = layout(*lr.program);
    REQUIRE_MESSAGE(lay.ok(), (b.name + ": " + lay.error));
    RunOptions opts;
    if (!b.irq_text.empty()) {
      auto q = parse_irqs(b.irq_text, *lay.image);
      REQUIRE_MESSAGE(q.ok(), (b.name + ": " + q.error));
      opts.irqs = *q.irqs;
    }
    RunStats st = run(*lay.image, nullptr, opts);
    CHECK_MESSAGE(st.verdict == RunVerdict::Completed, b.name);
    CHECK_MESSAGE(st.output == b.expected_output, b.name);
  }
}

TEST_CASE("call-micro deltas are exact") {
  CHECK(row_of("call-micro", Scheme::Fixer).base_retired == 40005);
  CHECK(delta(row_of("call-micro", Scheme::Fixer)) == 20000);
  CHECK(delta(row_of("call-micro", Scheme::Hcfi)) == 20000);
  CHECK(delta(row_of("call-micro", Scheme::Hecfi)) == 20000);
  CHECK(delta(row_of("call-micro", Scheme::Hafix)) == 30001);
  CHECK(delta(row_of("call-micro", Scheme::Cet)) == 0);
  CHECK(delta(row_of("call-micro", Scheme::Excec)) == 0);
  CHECK(row_of("call-micro", Scheme::Fixer).retired_cfi == 20000);
}

TEST_CASE("factorial row hits the published band") {
  const BenchRow& fx = row_of("factorial", Scheme::Fixer);
  CHECK(fx.base_retired == 287);
  CHECK(fx.runtime_hundredths == 1463);
  CHECK(row_of("factorial", Scheme::Hcfi).runtime_hundredths == 1463);
  CHECK(row_of("factorial", Scheme::Hecfi).runtime_hundredths == 1463);
  CHECK(row_of("factorial", Scheme::Hafix).runtime_hundredths == 2230);
  CHECK(delta(fx) == 42);
  CHECK(delta(row_of("factorial", Scheme::Hafix)) == 64);
}

TEST_CASE("self recursive rows count every invocation") {
  // tak(9,6,3) makes 293 calls; every call/return pair costs two under the
  // stack schemes and three under the activation scheme (plus main's act).
  CHECK(row_of("tak", Scheme::Fixer).base_retired == 3367);
  CHECK(delta(row_of("tak", Scheme::Fixer)) == 2 * 293);
  CHECK(delta(row_of("tak", Scheme::Hafix)) == 3 * 293 + 1);
  CHECK(delta(row_of("tak", Scheme::Cet)) == 0);
}

TEST_CASE("forward edge rows split by protection style") {
  // 32 dispatches and 20 direct calls per run.
  CHECK(row_of("indirect-dispatch", Scheme::Fixer).base_retired == 1072);
  CHECK(delta(row_of("indirect-dispatch", Scheme::Cet)) == 32);
  CHECK(delta(row_of("indirect-dispatch", Scheme::Excec)) == 32 * 2 + 2);
  CHECK(delta(row_of("indirect-dispatch", Scheme::Fixer)) == 136);
  CHECK(delta(row_of("indirect-dispatch", Scheme::Hcfi)) == 168);
  CHECK(delta(row_of("indirect-dispatch", Scheme::Hecfi)) == 168);

  CHECK(row_of("jump-table", Scheme::Fixer).base_retired == 388);
  CHECK(delta(row_of("jump-table", Scheme::Fixer)) == 0);
  CHECK(delta(row_of("jump-table", Scheme::Hcfi)) == 0);
  CHECK(delta(row_of("jump-table", Scheme::Hafix)) == 1);
  CHECK(delta(row_of("jump-table", Scheme::Hecfi)) == 16);
  CHECK(delta(row_of("jump-table", Scheme::Cet)) == 8);
  CHECK(delta(row_of("jump-table", Scheme::Excec)) == 18);
}

TEST_CASE("leaf and interrupt rows") {
  CHECK(row_of("leaf-math", Scheme::Fixer).runtime_hundredths == 0);
  CHECK(row_of("leaf-math", Scheme::Hafix).runtime_hundredths == 98);
  CHECK(row_of("leaf-math", Scheme::Excec).runtime_hundredths == 0);

  CHECK(row_of("irq-race", Scheme::Fixer).base_retired == 19);
  CHECK(delta(row_of("irq-race", Scheme::Fixer)) == 6);
  CHECK(delta(row_of("irq-race", Scheme::Hafix)) == 11);
  CHECK(delta(row_of("irq-race", Scheme::Cet)) == 0);
  CHECK(delta(row_of("irq-race", Scheme::Excec)) == 0);
}

TEST_CASE("refusals land where designed") {
  const BenchRow& nested = row_of("nested-recursion", Scheme::Hafix);
  CHECK(nested.refused);
  CHECK(nested.reason.find("mutual recursion") != std::string::npos);
  CHECK(!row_of("nested-recursion", Scheme::Fixer).refused);

  CHECK(row_of("setjmp-micro", Scheme::Fixer).refused);
  CHECK(row_of("setjmp-micro", Scheme::Hecfi).refused);
  CHECK(row_of("setjmp-micro", Scheme::Cet).refused);
  CHECK(!row_of("setjmp-micro", Scheme::Hafix).refused);
  CHECK(!row_of("setjmp-micro", Scheme::Hcfi).refused);
  CHECK(!row_of("setjmp-micro", Scheme::Excec).refused);
  CHECK(row_of("setjmp-micro", Scheme::Excec).instr_retired == 36);
}

TEST_CASE("common basis excludes anything any scheme refused") {
  CHECK(report().common_basis ==
        std::vector<std::string>{"call-micro", "factorial", "tak", "nqueens",
                                 "indirect-dispatch", "jump-table",
                                 "leaf-math", "irq-race"});
}

TEST_CASE("aggregate ordering matches the published ranking") {
  const auto& fixer = agg_of(Scheme::Fixer);
  const auto& hafix = agg_of(Scheme::Hafix);
  const auto& hcfi = agg_of(Scheme::Hcfi);
  const auto& hecfi = agg_of(Scheme::Hecfi);
  const auto& cet = agg_of(Scheme::Cet);
  const auto& excec = agg_of(Scheme::Excec);

  // CET and EXCEC sit together at the bottom, within one point.
  CHECK(std::abs(cet.avg_hundredths - excec.avg_hundredths) <= 100);
  CHECK(cet.avg_hundredths < fixer.avg_hundredths);
  CHECK(excec.avg_hundredths < fixer.avg_hundredths);
  CHECK(fixer.avg_hundredths <= hcfi.avg_hundredths);
  CHECK(hcfi.avg_hundredths <= hecfi.avg_hundredths);
  CHECK(hecfi.avg_hundredths < hafix.avg_hundredths);

  CHECK(fixer.avg_hundredths == 1639);
  CHECK(cet.avg_hundredths == 63);
  CHECK(excec.avg_hundredths == 135);
  CHECK(hafix.max_hundredths == 7499);
  CHECK(cet.median_hundredths == 0);
}

TEST_CASE("label stack costs more code than plain labels on shared callees") {
  CHECK(row_of("tak", Scheme::Hecfi).code_hundredths >
        row_of("tak", Scheme::Hcfi).code_hundredths);
}

TEST_CASE("attack matrix reproduces the protection scope table") {
  struct Want {
    const char* attack;
    std::array<bool, 6> detected;
  };
  // Scheme order: fixer, hafix, hcfi, hecfi, cet, excec.
  const Want wants[] = {
      {"returns", {true, true, true, true, true, true}},
      {"indirect-calls", {true, false, true, true, true, true}},
      {"indirect-jumps", {false, false, false, true, true, true}},
      {"fine-grained", {true, false, true, true, false, true}},
      {"interrupts", {false, false, false, false, true, true}},
  };
  for (const auto& w : wants) {
    const AttackRow& row = attack_of(w.attack);
    for (size_t i = 0; i < 6; ++i) {
      INFO(w.attack << " vs " << scheme_name(kAllSchemes[i]));
      CHECK(row.cells[i].detected == w.detected[i]);
      if (!w.detected[i]) {
        // A miss is only a miss if the program still ran to completion with
        // corrupted semantics.
        CHECK(row.cells[i].output != row.benign_output);
      }
    }
  }
}

TEST_CASE("attack detection kinds") {
  const AttackRow& ret = attack_of("returns");
  CHECK(ret.cells[0].kind == ExceptionKind::ReturnMismatch);   // fixer
  CHECK(ret.cells[1].kind == ExceptionKind::InvalidFlow);      // hafix
  CHECK(ret.cells[5].kind == ExceptionKind::ReturnMismatch);   // excec

  const AttackRow& fine = attack_of("fine-grained");
  CHECK(fine.cells[0].kind == ExceptionKind::PolicyDenied);
  CHECK(fine.cells[2].kind == ExceptionKind::LabelMismatch);
  CHECK(fine.cells[5].kind == ExceptionKind::LabelMismatch);
  CHECK(fine.cells[1].output == 4);
  CHECK(fine.cells[4].output == 4);

  const AttackRow& irq = attack_of("interrupts");
  CHECK(irq.cells[4].kind == ExceptionKind::ReturnMismatch);
  CHECK(irq.cells[5].kind == ExceptionKind::ReturnMismatch);
  CHECK(irq.cells[0].output == 4);

  CHECK(attack_of("indirect-jumps").cells[0].output == 777);
  CHECK(attack_of("indirect-calls").cells[1].output == 43);
}

TEST_CASE("report is deterministic and carries the data") {
  auto again = bench_all();
  REQUIRE_MESSAGE(again.ok(), (again.error));
  std::string a = write_report(report());
  std::string b = write_report(*again.report);
  CHECK(a == b);

  CHECK(a.rfind("rep-v1\n", 0) == 0);
  CHECK(a.find("row factorial fixer runtime 14.63 ") != std::string::npos);
  CHECK(a.find("row call-micro hafix runtime 74.99 ") != std::string::npos);
  CHECK(a.find("row setjmp-micro fixer refused ") != std::string::npos);
  CHECK(a.find("agg hafix max 74.99 ") != std::string::npos);
  CHECK(a.find("cell interrupts excec detected ReturnMismatch") !=
        std::string::npos);
  CHECK(a.find("cell indirect-jumps fixer undetected 777") !=
        std::string::npos);
  CHECK(a.find("hw fixer policy_matrix 4096") != std::string::npos);
  CHECK(a.find("hw excec shadow_stack 2304") != std::string::npos);
  CHECK(a.find("basis call-micro factorial tak ") != std::string::npos);
}

TEST_CASE("human and csv renderings") {
  std::string h = format_report(report());
  CHECK(h.find("Runtime overhead") != std::string::npos);
  CHECK(h.find("n/a") != std::string::npos);
  CHECK(h.find("Attack matrix") != std::string::npos);
  CHECK(h.find("total=9385") != std::string::npos);

  std::string rt = report_csv_runtime(report());
  CHECK(rt.rfind("bench,baseline_retired,fixer,hafix,hcfi,hecfi,cet,excec\n",
                 0) == 0);
  CHECK(rt.find("factorial,287,14.63,22.30,14.63,14.63,0.00,0.00") !=
        std::string::npos);
  CHECK(rt.find("setjmp-micro,28,n/a,28.57,28.57,n/a,n/a,28.57") !=
        std::string::npos);

  std::string cs = report_csv_codesize(report());
  CHECK(cs.rfind("bench,baseline_bytes,", 0) == 0);

  std::string hw = report_csv_hwcost(report());
  CHECK(hw.find("excec,shadow_stack,2304") != std::string::npos);
  CHECK(hw.find("fixer,total,9385") != std::string::npos);
}

TEST_CASE("capacity exhaustion surfaces as an attack matrix error") {
  MonitorConfig cfg;
  cfg.indirect_calls = 0;
  auto res = attack_matrix(cfg);
  CHECK(!res.ok());
  CHECK(res.error.find("refused") != std::string::npos);
}

TEST_CASE("doubling the shadow stack doubles the stack cost items") {
  MonitorConfig big;
  big.shadow_stack_size = 256;
  CHECK(ff_cost(Scheme::Fixer, big).item("shadow_stack") == 8192);
  CHECK(ff_cost(Scheme::Excec, big).item("shadow_stack") == 4608);
  CHECK(ff_cost(Scheme::Fixer, MonitorConfig{}).item("shadow_stack") == 4096);
}
