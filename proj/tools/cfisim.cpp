// Command line front end. Wraps the library passes so programs can be
// instrumented, executed and measured from the shell: single-file
// instrument/run round trips, the built-in benchmark corpus, the attack
// matrix and the hardware cost table.
//
// Exit codes: 0 on success, 1 when the CFI machinery rejects something
// (a run ends in a cfi-exception, or a pass refuses the program), 2 on
// usage, parse or I/O errors and on non-CFI abnormal verdicts.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "cfisim/harness.hpp"
#include "cfisim/instrument.hpp"
#include "cfisim/sim.hpp"

namespace {

using namespace cfisim;

int fail(const std::string& msg) {
  std::cerr << "cfisim: " << msg << "\n";
  return 2;
}

std::optional<std::string> read_file(const std::string& path,
                                     std::string* err) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    *err = "cannot open " + path;
    return std::nullopt;
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool write_file(const std::string& path, const std::string& text,
                std::string* err) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    *err = "cannot write " + path;
    return false;
  }
  out << text;
  out.flush();
  if (!out) {
    *err = "short write to " + path;
    return false;
  }
  return true;
}

// Fills *cfg from a mon-v1 config file; empty path keeps the defaults.
bool load_config(const std::string& path, MonitorConfig* cfg,
                 std::string* err) {
  if (path.empty()) return true;
  auto text = read_file(path, err);
  if (!text) return false;
  auto pr = parse_monitor_config(*text);
  if (!pr.ok()) {
    *err = path + ": " + pr.error;
    return false;
  }
  std::string verr = pr.config->validate();
  if (!verr.empty()) {
    *err = path + ": " + verr;
    return false;
  }
  *cfg = *pr.config;
  return true;
}

struct InstrumentArgs {
  std::string scheme;
  std::string asm_path;
  std::string cfg_path;
  std::string out_path;
  std::string out_cfg_path;
  std::string mon_path;
  std::string ledger_path;
  std::string config_path;
};

int cmd_instrument(const InstrumentArgs& a) {
  auto sch = parse_scheme(a.scheme);
  if (!sch) return fail("unknown scheme '" + a.scheme + "'");
  MonitorConfig cfg;
  std::string err;
  if (!load_config(a.config_path, &cfg, &err)) return fail(err);

  auto asm_text = read_file(a.asm_path, &err);
  if (!asm_text) return fail(err);
  std::string cfg_text;
  if (!a.cfg_path.empty()) {
    auto t = read_file(a.cfg_path, &err);
    if (!t) return fail(err);
    cfg_text = *t;
  }
  auto lr = load_program(*asm_text, cfg_text);
  if (!lr.ok()) return fail(a.asm_path + ": " + lr.error);

  auto ir = instrument(*lr.program, *sch, cfg);
  if (!ir.ok()) {
    std::cout << "refused: " << ir.error << "\n";
    return 1;
  }
  if (!write_file(a.out_path, write_asm(*ir.prog), &err)) return fail(err);
  if (!a.out_cfg_path.empty() &&
      !write_file(a.out_cfg_path, write_cfg(ir.prog->cfg), &err))
    return fail(err);
  if (!a.mon_path.empty() &&
      !write_file(a.mon_path, write_mon(ir.init), &err))
    return fail(err);
  if (!a.ledger_path.empty() &&
      !write_file(a.ledger_path, write_ledger(ir.ledger, *sch), &err))
    return fail(err);

  std::cout << scheme_name(*sch) << ": +" << ir.ledger.total
            << " words injected";
  if (ir.ledger.trampolines)
    std::cout << " (" << ir.ledger.trampolines << " trampoline words)";
  std::cout << ", code " << code_size(*lr.program) << " -> "
            << code_size(*ir.prog) << " bytes\n";
  return 0;
}

struct RunArgs {
  std::string scheme = "baseline";
  std::string asm_path;
  std::string cfg_path;
  std::string mon_path;
  std::string faults_path;
  std::string irq_path;
  std::string stats_path;
  std::string config_path;
  uint64_t fuel = 100000000;
};

int cmd_run(const RunArgs& a) {
  std::optional<Scheme> sch;
  if (a.scheme != "baseline" && a.scheme != "none") {
    sch = parse_scheme(a.scheme);
    if (!sch) return fail("unknown scheme '" + a.scheme + "'");
  }
  MonitorConfig cfg;
  std::string err;
  if (!load_config(a.config_path, &cfg, &err)) return fail(err);

  auto asm_text = read_file(a.asm_path, &err);
  if (!asm_text) return fail(err);
  std::string cfg_text;
  if (!a.cfg_path.empty()) {
    auto t = read_file(a.cfg_path, &err);
    if (!t) return fail(err);
    cfg_text = *t;
  }
  auto lr = load_program(*asm_text, cfg_text);
  if (!lr.ok()) return fail(a.asm_path + ": " + lr.error);
  auto lay = layout(*lr.program);
  if (!lay.ok()) return fail(a.asm_path + ": " + lay.error);

  MonitorInit init;
  if (!a.mon_path.empty()) {
    auto t = read_file(a.mon_path, &err);
    if (!t) return fail(err);
    auto mr = parse_mon(*t);
    if (!mr.ok()) return fail(a.mon_path + ": " + mr.error);
    init = *mr.init;
  }

  RunOptions opts;
  opts.fuel = a.fuel;
  if (!a.faults_path.empty()) {
    auto t = read_file(a.faults_path, &err);
    if (!t) return fail(err);
    auto fr = parse_faults(*t, *lay.image);
    if (!fr.ok()) return fail(a.faults_path + ": " + fr.error);
    opts.faults = *fr.faults;
  }
  if (!a.irq_path.empty()) {
    auto t = read_file(a.irq_path, &err);
    if (!t) return fail(err);
    auto qr = parse_irqs(*t, *lay.image);
    if (!qr.ok()) return fail(a.irq_path + ": " + qr.error);
    opts.irqs = *qr.irqs;
  }

  std::unique_ptr<Monitor> mon;
  if (sch) mon = make_monitor(*sch, cfg, init);
  RunStats st = run(*lay.image, mon.get(), opts);

  if (!a.stats_path.empty() &&
      !write_file(a.stats_path, write_stats(st), &err))
    return fail(err);

  std::ostringstream line;
  line << verdict_name(st.verdict);
  switch (st.verdict) {
    case RunVerdict::Completed:
      line << " output=" << st.output;
      break;
    case RunVerdict::CfiException:
      line << " kind=" << exception_name(st.exception) << " pc=0x" << std::hex
           << st.fault_pc << std::dec;
      break;
    default:
      line << " pc=0x" << std::hex << st.fault_pc << std::dec;
      break;
  }
  line << " retired=" << st.retired_total << " cfi=" << st.retired_cfi;
  if (st.irqs_serviced) line << " irqs=" << st.irqs_serviced;
  std::cout << line.str() << "\n";

  if (st.verdict == RunVerdict::Completed) return 0;
  if (st.verdict == RunVerdict::CfiException) return 1;
  return 2;
}

struct BenchArgs {
  std::string config_path;
  std::string out_path;
  std::string csv_dir;
};

int cmd_bench(const BenchArgs& a) {
  MonitorConfig cfg;
  std::string err;
  if (!load_config(a.config_path, &cfg, &err)) return fail(err);
  auto br = bench_all(cfg);
  if (!br.ok()) return fail(br.error);
  std::cout << format_report(*br.report);
  if (!a.out_path.empty() &&
      !write_file(a.out_path, write_report(*br.report), &err))
    return fail(err);
  if (!a.csv_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(a.csv_dir, ec);
    if (ec) return fail("cannot create " + a.csv_dir + ": " + ec.message());
    auto p = [&](const char* name) { return a.csv_dir + "/" + name; };
    if (!write_file(p("runtime.csv"), report_csv_runtime(*br.report), &err) ||
        !write_file(p("codesize.csv"), report_csv_codesize(*br.report),
                    &err) ||
        !write_file(p("hwcost.csv"), report_csv_hwcost(*br.report), &err))
      return fail(err);
  }
  return 0;
}

int cmd_attack_matrix(const std::string& config_path) {
  MonitorConfig cfg;
  std::string err;
  if (!load_config(config_path, &cfg, &err)) return fail(err);
  auto am = attack_matrix(cfg);
  if (!am.ok()) return fail(am.error);

  std::cout << "Attack matrix (X = detected, output shown when the attack "
               "sneaks through)\n";
  std::cout << std::left << std::setw(16) << "attack";
  for (Scheme s : kAllSchemes)
    std::cout << std::right << std::setw(9) << scheme_name(s);
  std::cout << "\n";
  for (const auto& row : *am.rows) {
    std::cout << std::left << std::setw(16) << row.attack;
    for (size_t i = 0; i < kAllSchemes.size(); ++i) {
      const AttackOutcome& c = row.cells[i];
      std::cout << std::right << std::setw(9)
                << (c.detected ? std::string("X") : std::to_string(c.output));
    }
    std::cout << "\n";
  }
  std::cout << "\nDetections\n";
  for (const auto& row : *am.rows)
    for (size_t i = 0; i < kAllSchemes.size(); ++i)
      if (row.cells[i].detected)
        std::cout << "  " << row.attack << " / "
                  << scheme_name(kAllSchemes[i]) << ": "
                  << exception_name(row.cells[i].kind) << "\n";
  return 0;
}

int cmd_hwcost(const std::string& config_path) {
  MonitorConfig cfg;
  std::string err;
  if (!load_config(config_path, &cfg, &err)) return fail(err);
  std::cout << "Hardware state cost (flip-flops)\n";
  for (Scheme s : kAllSchemes) {
    FfCost cost = ff_cost(s, cfg);
    std::cout << std::left << std::setw(10) << scheme_name(s);
    bool first = true;
    for (const auto& [item, bits] : cost.items) {
      std::cout << (first ? "" : " + ") << item << "=" << bits;
      first = false;
    }
    std::cout << "  total=" << cost.total << "\n";
  }
  return 0;
}

int cmd_corpus_list() {
  std::cout << "benchmarks:\n";
  for (const auto& b : corpus())
    std::cout << "  " << std::left << std::setw(18) << b.name
              << " output=" << b.expected_output
              << (b.irq_text.empty() ? "" : "  (irq plan)") << "\n";
  std::cout << "attacks:\n";
  for (const auto& a : attack_cases())
    std::cout << "  " << std::left << std::setw(18) << a.name
              << " benign-output=" << a.benign_output << "\n";
  return 0;
}

int cmd_corpus_emit(const std::string& name, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) return fail("cannot create " + dir + ": " + ec.message());

  std::string err;
  auto emit = [&](const std::string& suffix, const std::string& text) {
    if (text.empty()) return true;
    std::string path = dir + "/" + name + suffix;
    if (!write_file(path, text, &err)) return false;
    std::cout << path << "\n";
    return true;
  };

  if (const BenchCase* b = find_case(name)) {
    if (!emit(".s", b->asm_text) || !emit(".cfg", b->cfg_text) ||
        !emit(".irq", b->irq_text))
      return fail(err);
    return 0;
  }
  for (const auto& a : attack_cases()) {
    if (a.name != name) continue;
    if (!emit(".s", a.asm_text) || !emit(".cfg", a.cfg_text) ||
        !emit(".faults", a.faults_text) || !emit(".irq", a.irq_text))
      return fail(err);
    return 0;
  }
  return fail("no corpus entry named '" + name + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "cfisim: CFI scheme instrumentation and simulation toolkit"};
  app.require_subcommand(1);

  InstrumentArgs ia;
  auto* ins = app.add_subcommand(
      "instrument", "Apply a scheme's pass to an assembly program");
  ins->add_option("--scheme", ia.scheme,
                  "fixer|hafix|hcfi|hecfi|cet|excec")
      ->required();
  ins->add_option("--asm", ia.asm_path, "baseline assembly file")->required();
  ins->add_option("--cfg", ia.cfg_path, "cfg-v1 sidecar");
  ins->add_option("--out", ia.out_path, "instrumented assembly output")
      ->required();
  ins->add_option("--out-cfg", ia.out_cfg_path, "re-indexed sidecar output");
  ins->add_option("--mon", ia.mon_path,
                  "mon-v1 output (fixer decoder and policy matrix)");
  ins->add_option("--ledger", ia.ledger_path, "ledger-v1 output");
  ins->add_option("--config", ia.config_path, "monitor config file");

  RunArgs ra;
  auto* rn = app.add_subcommand("run", "Assemble and execute a program");
  rn->add_option("--scheme", ra.scheme,
                 "baseline (no monitor) or a scheme name");
  rn->add_option("--asm", ra.asm_path, "assembly file (instrumented or not)")
      ->required();
  rn->add_option("--cfg", ra.cfg_path, "cfg-v1 sidecar");
  rn->add_option("--mon", ra.mon_path, "mon-v1 init (needed for fixer)");
  rn->add_option("--faults", ra.faults_path, "faults-v1 plan");
  rn->add_option("--irq", ra.irq_path, "irq-v1 plan");
  rn->add_option("--stats", ra.stats_path, "stats-v1 output");
  rn->add_option("--config", ra.config_path, "monitor config file");
  rn->add_option("--fuel", ra.fuel, "max instructions to retire");

  BenchArgs ba;
  auto* bn = app.add_subcommand(
      "bench", "Run the built-in corpus under every scheme");
  bn->add_option("--config", ba.config_path, "monitor config file");
  bn->add_option("--out", ba.out_path, "rep-v1 output file");
  bn->add_option("--csv-dir", ba.csv_dir,
                 "directory for runtime/codesize/hwcost csv files");

  std::string am_config;
  auto* am = app.add_subcommand("attack-matrix",
                                "Run the attack suite under every scheme");
  am->add_option("--config", am_config, "monitor config file");

  std::string hw_config;
  auto* hw = app.add_subcommand("hwcost",
                                "Print per-scheme flip-flop budgets");
  hw->add_option("--config", hw_config, "monitor config file");

  auto* co = app.add_subcommand("corpus", "Inspect the built-in corpus");
  co->require_subcommand(1);
  auto* cl = co->add_subcommand("list", "List benchmarks and attacks");
  std::string emit_name, emit_dir = ".";
  auto* ce = co->add_subcommand("emit", "Write a corpus entry's files");
  ce->add_option("name", emit_name, "corpus entry name")->required();
  ce->add_option("--dir", emit_dir, "output directory");

  CLI11_PARSE(app, argc, argv);

  if (*ins) return cmd_instrument(ia);
  if (*rn) return cmd_run(ra);
  if (*bn) return cmd_bench(ba);
  if (*am) return cmd_attack_matrix(am_config);
  if (*hw) return cmd_hwcost(hw_config);
  if (*cl) return cmd_corpus_list();
  if (*ce) return cmd_corpus_emit(emit_name, emit_dir);
  return fail("no subcommand");
}
