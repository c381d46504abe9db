#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cfisim/instrument.hpp"
#include "cfisim/sim.hpp"

using namespace cfisim;

namespace {

Program load(const char* asm_text, const char* cfg_text = "") {
  auto r = load_program(asm_text, cfg_text);
  REQUIRE_MESSAGE(r.ok(), r.error);
  return *r.program;
}

CodeImage image_of(const Program& p) {
  auto r = layout(p);
  REQUIRE_MESSAGE(r.ok(), r.error);
  return *r.image;
}

const char* kFactorial =
    ".func main\n"
    "  la sp, __mem_top\n"
    "  li a0, 10\n"
    "  call fact\n"
    "  ecall\n"
    ".endfunc\n"
    ".func fact\n"
    "  li t0, 1\n"
    "  bge t0, a0, base\n"
    "  addi sp, sp, -8\n"
    "  sw ra, 4(sp)\n"
    "  sw a0, 0(sp)\n"
    "  addi a0, a0, -1\n"
    "  call fact\n"
    "  lw t1, 0(sp)\n"
    "  mul a0, a0, t1\n"
    "  lw ra, 4(sp)\n"
    "  addi sp, sp, 8\n"
    "  ret\n"
    "base: li a0, 1\n"
    "  ret\n"
    ".endfunc\n";

// Three indirect calls; lt and gt share two sites (trampolines under the
// label schemes), wf is exclusive.
const char* kSharedAsm =
    ".func main\n"
    "  la sp, __mem_top\n"
    "  la s3, lt\n"
    "  call s3\n"
    "  la s4, gt\n"
    "  call s4\n"
    "  la s5, wf\n"
    "  call s5\n"
    "  ecall\n"
    ".endfunc\n"
    ".func lt\n"
    "  addi a0, a0, 1\n"
    "  ret\n"
    ".endfunc\n"
    ".func gt\n"
    "  addi a0, a0, 2\n"
    "  ret\n"
    ".endfunc\n"
    ".func wf\n"
    "  addi a0, a0, 3\n"
    "  ret\n"
    ".endfunc\n";
const char* kSharedCfg =
    "cfg-v1\n"
    "icall main 2 targets=lt,gt\n"
    "icall main 4 targets=lt,gt\n"
    "icall main 6 targets=wf\n";

const char* kSetjmpAsm =
    ".func main\n"
    "  la sp, __mem_top\n"
    "  call sj\n"
    "rs: addi s0, s0, 1\n"
    "  li t1, 2\n"
    "  beq s0, t1, done\n"
    "  call deep\n"
    "done: mv a0, s0\n"
    "  ecall\n"
    ".endfunc\n"
    ".func sj\n"
    "  la t1, __heap\n"
    "  sw sp, 0(t1)\n"
    "  li a0, 0\n"
    "  ret\n"
    ".endfunc\n"
    ".func deep\n"
    "  la t1, __heap\n"
    "  lw sp, 0(t1)\n"
    "  la t0, rs\n"
    "  jr t0\n"
    ".endfunc\n";
const char* kSetjmpCfg =
    "cfg-v1\n"
    "setjmp main 1 slot=0\n"
    "ijump deep 3 targets=rs\n";

}  // namespace

TEST_CASE("baseline factorial of 10") {
  CodeImage img = image_of(load(kFactorial));
  RunStats st = run(img, nullptr);
  CHECK(st.verdict == RunVerdict::Completed);
  CHECK(st.output == 3628800);
  CHECK(st.retired_cfi == 0);
  CHECK(st.retired_total > 0);
}

TEST_CASE("identical runs are bit-identical") {
  CodeImage img = image_of(load(kSharedAsm, kSharedCfg));
  RunStats a = run(img, nullptr);
  RunStats b = run(img, nullptr);
  CHECK(write_stats(a) == write_stats(b));
  CHECK(a.output == 6);
}

TEST_CASE("register zero is hard-wired") {
  CodeImage img = image_of(load(
      ".func main\n"
      "  addi zero, zero, 5\n"
      "  mv a0, zero\n"
      "  ecall\n"
      ".endfunc\n"));
  RunStats st = run(img, nullptr);
  CHECK(st.verdict == RunVerdict::Completed);
  CHECK(st.output == 0);
}

TEST_CASE("memory width and sign semantics") {
  CodeImage img = image_of(load(
      ".func main\n"
      "  la sp, __mem_top\n"
      "  li t0, -2\n"
      "  sw t0, -4(sp)\n"
      "  lb t1, -4(sp)\n"     // 0xfe sign-extended = -2
      "  lbu t2, -4(sp)\n"    // 254
      "  lhu t3, -4(sp)\n"    // 0xfffe = 65534
      "  sub a0, t2, t1\n"    // 254 - (-2) = 256
      "  add a0, a0, t3\n"    // 256 + 65534 = 65790
      "  ecall\n"
      ".endfunc\n"));
  RunStats st = run(img, nullptr);
  CHECK(st.verdict == RunVerdict::Completed);
  CHECK(st.output == 65790);
}

TEST_CASE("misaligned and out-of-bounds accesses fault") {
  CodeImage bad_align = image_of(load(
      ".func main\n"
      "  la sp, __mem_top\n"
      "  lw t0, -3(sp)\n"
      "  ecall\n"
      ".endfunc\n"));
  RunStats st = run(bad_align, nullptr);
  CHECK(st.verdict == RunVerdict::MemFault);
  CHECK(st.retired_total == 1);

  CodeImage oob = image_of(load(
      ".func main\n"
      "  la sp, __mem_top\n"
      "  sw t0, 0(sp)\n"      // one past the last byte
      "  ecall\n"
      ".endfunc\n"));
  CHECK(run(oob, nullptr).verdict == RunVerdict::MemFault);
}

TEST_CASE("instruction fetch is not affected by data stores") {
  CodeImage img = image_of(load(
      ".func main\n"
      "  la t0, patch\n"
      "  li t1, 0\n"
      "  sw t1, 0(t0)\n"
      "patch: li a0, 42\n"
      "  ecall\n"
      ".endfunc\n"));
  RunStats st = run(img, nullptr);
  CHECK(st.verdict == RunVerdict::Completed);
  CHECK(st.output == 42);
}

TEST_CASE("word tables in the image are loadable") {
  CodeImage img = image_of(load(
      ".func main\n"
      "  la t0, table\n"
      "  lw t1, 4(t0)\n"
      "  lw t2, 0(t0)\n"
      "  add a0, t1, t2\n"
      "  ecall\n"
      "table: .word 1000\n"
      "  .word 234\n"
      ".endfunc\n"));
  RunStats st = run(img, nullptr);
  CHECK(st.output == 1234);
}

TEST_CASE("fuel exhaustion") {
  CodeImage img = image_of(load(
      ".func main\n"
      "loop: j loop\n"
      ".endfunc\n"));
  RunOptions opts;
  opts.fuel = 100;
  RunStats st = run(img, nullptr, opts);
  CHECK(st.verdict == RunVerdict::FuelExhausted);
  CHECK(st.retired_total == 100);
}

TEST_CASE("abnormal fetch verdicts") {
  CodeImage data_pc = image_of(load(
      ".func main\n"
      "  j w\n"
      "w: .word 12\n"
      ".endfunc\n"));
  RunStats st = run(data_pc, nullptr);
  CHECK(st.verdict == RunVerdict::IllegalInstruction);
  CHECK(st.retired_total == 1);

  CodeImage off_end = image_of(load(
      ".func main\n"
      "  la t0, __heap\n"
      "  jr t0\n"
      ".endfunc\n"));
  CHECK(run(off_end, nullptr).verdict == RunVerdict::MemFault);

  CodeImage stray_mret = image_of(load(
      ".func main\n"
      "  mret\n"
      ".endfunc\n"));
  CHECK(run(stray_mret, nullptr).verdict == RunVerdict::IllegalInstruction);

  CodeImage brk = image_of(load(
      ".func main\n"
      "  addi a0, a0, 1\n"
      "  ebreak\n"
      ".endfunc\n"));
  RunStats bs = run(brk, nullptr);
  CHECK(bs.verdict == RunVerdict::Breakpoint);
  CHECK(bs.retired_total == 1);
  CHECK(bs.fault_pc == brk.entry + 4);
}

TEST_CASE("instrumented programs stay transparent under a null monitor") {
  Program p = load(kSharedAsm, kSharedCfg);
  CodeImage base = image_of(p);
  RunStats b = run(base, nullptr);
  REQUIRE(b.verdict == RunVerdict::Completed);
  MonitorConfig cfg;
  for (Scheme s : kAllSchemes) {
    CAPTURE(scheme_name(s));
    auto ir = instrument(p, s, cfg);
    REQUIRE_MESSAGE(ir.ok(), ir.error);
    CodeImage img = image_of(*ir.prog);
    RunStats st = run(img, nullptr);
    CHECK(st.verdict == RunVerdict::Completed);
    CHECK(st.output == b.output);
    CHECK(st.retired_total - b.retired_total == st.retired_cfi);
  }
}

TEST_CASE("instrumented programs complete under their own monitor") {
  Program p = load(kSharedAsm, kSharedCfg);
  CodeImage base = image_of(p);
  RunStats b = run(base, nullptr);
  MonitorConfig cfg;
  for (Scheme s : kAllSchemes) {
    CAPTURE(scheme_name(s));
    auto ir = instrument(p, s, cfg);
    REQUIRE_MESSAGE(ir.ok(), ir.error);
    CodeImage img = image_of(*ir.prog);
    auto mon = make_monitor(s, cfg, ir.init);
    RunStats st = run(img, mon.get());
    CHECK(st.verdict == RunVerdict::Completed);
    CHECK(st.output == b.output);
    CHECK(st.irqs_while_masked == 0);
  }
}

TEST_CASE("setjmp and longjmp round trip through the label schemes") {
  Program p = load(kSetjmpAsm, kSetjmpCfg);
  CodeImage base = image_of(p);
  RunStats b = run(base, nullptr);
  REQUIRE(b.verdict == RunVerdict::Completed);
  REQUIRE(b.output == 2);
  MonitorConfig cfg;
  for (Scheme s : {Scheme::Hcfi, Scheme::Excec, Scheme::Hafix}) {
    CAPTURE(scheme_name(s));
    auto ir = instrument(p, s, cfg);
    REQUIRE_MESSAGE(ir.ok(), ir.error);
    CodeImage img = image_of(*ir.prog);
    auto mon = make_monitor(s, cfg, ir.init);
    RunStats st = run(img, mon.get());
    CHECK(st.verdict == RunVerdict::Completed);
    CHECK(st.output == 2);
  }
}

TEST_CASE("overwriting a spilled return address") {
  const char* text =
      ".func main\n"
      "  la sp, __mem_top\n"
      "  call victim\n"
      "  mv a0, s0\n"
      "  ecall\n"
      ".endfunc\n"
      ".func victim\n"
      "  addi sp, sp, -4\n"
      "  sw ra, 0(sp)\n"
      "  addi s0, s0, 5\n"
      "reload: lw ra, 0(sp)\n"
      "  addi sp, sp, 4\n"
      "  ret\n"
      ".endfunc\n"
      ".func gadget\n"
      "  li a0, 666\n"
      "  ecall\n"
      ".endfunc\n";
  const char* fault_text =
      "faults-v1\n"
      "fault overwrite-return-slot at-pc=reload slot=__mem_top-4 new=gadget\n";
  Program p = load(text);

  CodeImage base = image_of(p);
  auto bf = parse_faults(fault_text, base);
  REQUIRE_MESSAGE(bf.ok(), bf.error);
  RunOptions opts;
  opts.faults = *bf.faults;
  RunStats st = run(base, nullptr, opts);
  CHECK(st.verdict == RunVerdict::Completed);
  CHECK(st.output == 666);  // hijack succeeds on the bare machine

  MonitorConfig cfg;
  for (Scheme s : {Scheme::Fixer, Scheme::Excec, Scheme::Cet}) {
    CAPTURE(scheme_name(s));
    auto ir = instrument(p, s, cfg);
    REQUIRE_MESSAGE(ir.ok(), ir.error);
    CodeImage img = image_of(*ir.prog);
    auto f = parse_faults(fault_text, img);
    REQUIRE(f.ok());
    RunOptions o;
    o.faults = *f.faults;
    auto mon = make_monitor(s, cfg, ir.init);
    RunStats r = run(img, mon.get(), o);
    CHECK(r.verdict == RunVerdict::CfiException);
    CHECK(r.exception == ExceptionKind::ReturnMismatch);
  }
}

TEST_CASE("register corruption within and across target classes") {
  Program p = load(kSharedAsm, kSharedCfg);
  MonitorConfig cfg;
  auto ir = instrument(p, Scheme::Excec, cfg);
  REQUIRE(ir.ok());
  CodeImage img = image_of(*ir.prog);

  // The first site dispatches lt/gt through a trampoline; the pointer is
  // spilled three instructions before the jalr, so corrupt it there.
  size_t idx = 0;
  while (classify(img.decoded[idx]) != InstrClass::IndirectCall) ++idx;
  REQUIRE(img.decoded[idx - 3].m == Mnemonic::Sw);
  FaultSpec f;
  f.kind = FaultSpec::Kind::CorruptRegisterBeforeIndirect;
  f.at_pc = img.base + uint32_t((idx - 3) * 4);
  f.reg = 19;  // s3
  f.new_value = *img.symbol("gt");

  // Within the declared class: lt swapped for gt passes every check but
  // computes the wrong value.
  RunOptions o1;
  o1.faults.push_back(f);
  auto m1 = make_monitor(Scheme::Excec, cfg);
  RunStats r1 = run(img, m1.get(), o1);
  CHECK(r1.verdict == RunVerdict::Completed);
  CHECK(r1.output == 7);  // gt ran twice, lt never

  // Outside the class: the dispatch chain closes with the poison label.
  RunOptions o2;
  f.new_value = *img.symbol("wf");
  o2.faults.push_back(f);
  auto m2 = make_monitor(Scheme::Excec, cfg);
  RunStats r2 = run(img, m2.get(), o2);
  CHECK(r2.verdict == RunVerdict::CfiException);
  CHECK(r2.exception == ExceptionKind::LabelMismatch);
}

TEST_CASE("force-pc skips an instruction on its nth occurrence") {
  const char* text =
      ".func main\n"
      "  li t0, 3\n"
      "loop: addi t1, t1, 1\n"
      "body: addi a0, a0, 10\n"
      "  bne t1, t0, loop\n"
      "  ecall\n"
      ".endfunc\n";
  CodeImage img = image_of(load(text));
  RunStats clean = run(img, nullptr);
  REQUIRE(clean.output == 30);

  auto f = parse_faults(
      "faults-v1\nfault force-pc at-pc=body occurrence=2 new=body+4\n", img);
  REQUIRE_MESSAGE(f.ok(), f.error);
  RunOptions opts;
  opts.faults = *f.faults;
  RunStats st = run(img, nullptr, opts);
  CHECK(st.verdict == RunVerdict::Completed);
  CHECK(st.output == 20);
  CHECK(st.retired_total == clean.retired_total - 1);
}

TEST_CASE("interrupt triggers and delivery accounting") {
  const char* text =
      ".func main\n"
      "  la sp, __mem_top\n"
      "  addi t0, t0, 1\n"
      "mid: addi t0, t0, 1\n"
      "  addi t0, t0, 1\n"
      "  mv a0, t6\n"
      "  ecall\n"
      ".endfunc\n"
      ".func __irq\n"
      "  addi t6, t6, 7\n"
      "  mret\n"
      ".endfunc\n";
  CodeImage img = image_of(load(text));

  RunOptions by_count;
  by_count.irqs.push_back({uint64_t(2), std::nullopt});
  RunStats a = run(img, nullptr, by_count);
  CHECK(a.verdict == RunVerdict::Completed);
  CHECK(a.output == 7);
  CHECK(a.irqs_serviced == 1);
  CHECK(a.irq_max_defer == 0);

  auto irqs = parse_irqs("irq-v1\nirq before-pc=mid\n", img);
  REQUIRE_MESSAGE(irqs.ok(), irqs.error);
  RunOptions by_pc;
  by_pc.irqs = *irqs.irqs;
  RunStats b = run(img, nullptr, by_pc);
  CHECK(b.output == 7);
  CHECK(b.irqs_serviced == 1);

  // The handler's two instructions retire like any others.
  RunStats quiet = run(img, nullptr);
  CHECK(a.retired_total == quiet.retired_total + 2);

  // A request while the program never unmasks is impossible here; one that
  // arrives after the final boundary is silently dropped.
  RunOptions late;
  late.irqs.push_back({uint64_t(10000), std::nullopt});
  RunStats c = run(img, nullptr, late);
  CHECK(c.irqs_serviced == 0);
}

TEST_CASE("interrupt without a handler is a hard fault") {
  CodeImage img = image_of(load(
      ".func main\n  addi a0, a0, 1\n  ecall\n.endfunc\n"));
  RunOptions opts;
  opts.irqs.push_back({uint64_t(0), std::nullopt});
  CHECK(run(img, nullptr, opts).verdict == RunVerdict::IllegalInstruction);
}

TEST_CASE("excec defers interrupts inside announce windows") {
  const char* text =
      ".func main\n"
      "  la sp, __mem_top\n"
      "  la s3, lt\n"
      "  call s3\n"
      "  la s4, gt\n"
      "  call s4\n"
      "  mv a0, s5\n"
      "  ecall\n"
      ".endfunc\n"
      ".func lt\n"
      "  addi s5, s5, 1\n"
      "  ret\n"
      ".endfunc\n"
      ".func gt\n"
      "  addi s5, s5, 2\n"
      "  ret\n"
      ".endfunc\n"
      ".func __irq\n"
      "  addi t6, t6, 1\n"
      "  mret\n"
      ".endfunc\n";
  const char* cfg_text =
      "cfg-v1\nicall main 2 targets=lt\nicall main 4 targets=gt\n";
  Program p = load(text, cfg_text);
  MonitorConfig cfg;
  auto ir = instrument(p, Scheme::Excec, cfg);
  REQUIRE_MESSAGE(ir.ok(), ir.error);
  CodeImage img = image_of(*ir.prog);

  auto quiet_mon = make_monitor(Scheme::Excec, cfg);
  RunStats quiet = run(img, quiet_mon.get());
  REQUIRE(quiet.verdict == RunVerdict::Completed);
  REQUIRE(quiet.output == 3);

  uint64_t max_defer_seen = 0;
  for (uint64_t n = 0; n < quiet.retired_total; ++n) {
    auto mon = make_monitor(Scheme::Excec, cfg);
    RunOptions opts;
    opts.irqs.push_back({n, std::nullopt});
    RunStats st = run(img, mon.get(), opts);
    CAPTURE(n);
    CHECK(st.verdict == RunVerdict::Completed);
    CHECK(st.output == 3);
    CHECK(st.irqs_serviced == 1);
    CHECK(st.irqs_while_masked == 0);
    max_defer_seen = std::max(max_defer_seen, st.irq_max_defer);
  }
  // At least one boundary sits inside an announce window, so the masking
  // path really engaged.
  CHECK(max_defer_seen >= 1);
}

TEST_CASE("overhead arithmetic is exact") {
  CHECK(overhead_hundredths(100000, 100000) == 0);
  CHECK(format_percent(0) == "0.00");
  CHECK(overhead_hundredths(287, 329) == 1463);
  CHECK(format_percent(1463) == "14.63");
  CHECK(overhead_hundredths(287, 351) == 2230);
  CHECK(format_percent(2230) == "22.30");
  CHECK(overhead_hundredths(100000, 102000) == 200);
  CHECK(format_percent(200) == "2.00");
  CHECK(overhead_hundredths(4000, 4001) == 3);   // 2.5 hundredths rounds up
  CHECK(overhead_hundredths(8000, 8001) == 1);   // 1.25 rounds down
  CHECK(format_percent(-50) == "-0.50");
  CHECK(overhead_hundredths(2, 3) == 5000);
  CHECK(format_percent(5000) == "50.00");
}

TEST_CASE("stats round trip") {
  RunStats s;
  s.verdict = RunVerdict::CfiException;
  s.exception = ExceptionKind::ReturnMismatch;
  s.fault_pc = 0x1c000040;
  s.retired_total = 1234;
  s.retired_cfi = 56;
  s.irqs_serviced = 2;
  s.irq_max_defer = 3;
  std::string text = write_stats(s);
  auto back = parse_stats(text);
  REQUIRE_MESSAGE(back.ok(), back.error);
  CHECK(write_stats(*back.stats) == text);
  CHECK(back.stats->exception == ExceptionKind::ReturnMismatch);
  CHECK(back.stats->fault_pc == 0x1c000040);

  CHECK(!parse_stats("nope\n").ok());
  CHECK(!parse_stats("stats-v1\nverdict sideways\n").ok());
  CHECK(!parse_stats("stats-v1\nretired-total 1\n").ok());
}

TEST_CASE("fault and irq sidecar parsing") {
  CodeImage img = image_of(load(kFactorial));

  auto ok = parse_faults(
      "faults-v1\n"
      "# comment\n"
      "fault overwrite-return-slot at-retired=12 slot=__mem_top-8 new=fact\n"
      "fault corrupt-register at-pc=fact+4 reg=s3 new=0x1c000010\n"
      "fault force-pc at-pc=base occurrence=3 new=base+4\n",
      img);
  REQUIRE_MESSAGE(ok.ok(), ok.error);
  REQUIRE(ok.faults->size() == 3);
  const auto& f = *ok.faults;
  CHECK(f[0].slot_addr == img.base + img.mem_size - 8);
  CHECK(*f[0].at_retired == 12);
  CHECK(f[1].reg == 19);
  CHECK(*f[1].at_pc == *img.symbol("fact") + 4);
  CHECK(f[2].occurrence == 3);

  std::string round = write_faults(f);
  auto back = parse_faults(round, img);
  REQUIRE_MESSAGE(back.ok(), back.error);
  CHECK(write_faults(*back.faults) == round);

  CHECK(!parse_faults("faults-v1\nfault force-pc new=4\n", img).ok());
  CHECK(!parse_faults(
           "faults-v1\nfault force-pc at-pc=4 at-retired=1 new=4\n", img)
           .ok());
  CHECK(!parse_faults("faults-v1\nfault corrupt-register at-pc=4 new=4\n", img)
           .ok());
  CHECK(!parse_faults("faults-v1\nfault force-pc at-pc=nope new=4\n", img)
           .ok());
  CHECK(!parse_faults("faults-v1\nfault force-pc at-pc=4 occurrence=0 new=4\n",
                      img)
           .ok());

  auto irqs = parse_irqs("irq-v1\nirq at-retired=5\nirq before-pc=fact\n", img);
  REQUIRE_MESSAGE(irqs.ok(), irqs.error);
  CHECK(irqs.irqs->size() == 2);
  CHECK(*(*irqs.irqs)[1].before_pc == *img.symbol("fact"));
  std::string rtext = write_irqs(*irqs.irqs);
  auto rback = parse_irqs(rtext, img);
  REQUIRE(rback.ok());
  CHECK(write_irqs(*rback.irqs) == rtext);
  CHECK(!parse_irqs("irq-v1\nirq\n", img).ok());
  CHECK(!parse_irqs("irq-v1\nirq at-retired=1 before-pc=fact\n", img).ok());
}

TEST_CASE("verdict names round trip") {
  for (RunVerdict v :
       {RunVerdict::Completed, RunVerdict::CfiException,
        RunVerdict::FuelExhausted, RunVerdict::MemFault,
        RunVerdict::IllegalInstruction, RunVerdict::Breakpoint})
    CHECK(parse_verdict(verdict_name(v)) == v);
  CHECK(!parse_verdict("crashed").has_value());
}
