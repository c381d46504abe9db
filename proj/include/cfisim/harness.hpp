#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cfisim/monitor.hpp"
#include "cfisim/sim.hpp"

namespace cfisim {

// A benchmark is a self-contained source bundle plus the frozen output the
// baseline run must produce. The optional irq plan is part of the workload
// and applies to the baseline and to every instrumented variant alike.
struct BenchCase {
  std::string name;
  std::string asm_text;
  std::string cfg_text;
  std::string irq_text;
  uint32_t expected_output = 0;
};

const std::vector<BenchCase>& corpus();
const BenchCase* find_case(const std::string& name);

// An attack bundle: a program, the fault or irq plan that carries out the
// attack, and the output of an unattacked run. An undetected attack still
// completes, but with a different final output.
struct AttackCase {
  std::string name;
  std::string asm_text;
  std::string cfg_text;
  std::string faults_text;
  std::string irq_text;
  uint32_t benign_output = 0;
};

const std::vector<AttackCase>& attack_cases();

struct BenchRow {
  std::string bench;
  Scheme scheme = Scheme::Fixer;
  bool refused = false;
  std::string reason;
  uint64_t base_retired = 0;
  uint64_t instr_retired = 0;
  uint64_t retired_cfi = 0;
  uint32_t base_code = 0;
  uint32_t instr_code = 0;
  int64_t runtime_hundredths = 0;
  int64_t code_hundredths = 0;
};

// Aggregates are computed over the common basis: benchmarks every scheme
// could instrument. Rows any scheme refused are excluded for all schemes so
// the per-scheme numbers stay comparable.
struct SchemeAggregate {
  Scheme scheme = Scheme::Fixer;
  int64_t max_hundredths = 0;
  int64_t avg_hundredths = 0;
  int64_t median_hundredths = 0;
  int64_t code_avg_hundredths = 0;
};

struct AttackOutcome {
  bool detected = false;
  ExceptionKind kind = ExceptionKind::InvalidFlow;  // when detected
  uint32_t output = 0;                              // when undetected
};

struct AttackRow {
  std::string attack;
  uint32_t benign_output = 0;
  std::array<AttackOutcome, kAllSchemes.size()> cells{};
};

struct Report {
  std::vector<BenchRow> rows;  // corpus-major, scheme-minor
  std::vector<std::string> common_basis;
  std::vector<SchemeAggregate> aggregates;
  std::vector<AttackRow> attacks;
  std::vector<std::pair<Scheme, FfCost>> hw;
};

struct BenchAllResult {
  std::optional<Report> report;
  std::string error;
  bool ok() const { return report.has_value(); }
};

// Runs the whole corpus, baseline and all six schemes, then the attack
// matrix and the hardware cost table. Fails on any baseline or instrumented
// run whose output deviates from the frozen expected value.
BenchAllResult bench_all(const MonitorConfig& cfg = {});

struct AttackMatrixResult {
  std::optional<std::vector<AttackRow>> rows;
  std::string error;
  bool ok() const { return rows.has_value(); }
};

AttackMatrixResult attack_matrix(const MonitorConfig& cfg = {});

// rep-v1, machine readable and byte-stable for a given config.
std::string write_report(const Report& r);
// Human-readable tables built from the same data.
std::string format_report(const Report& r);

std::string report_csv_runtime(const Report& r);
std::string report_csv_codesize(const Report& r);
std::string report_csv_hwcost(const Report& r);

}  // namespace cfisim
