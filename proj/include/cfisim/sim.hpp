#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cfisim/monitor.hpp"
#include "cfisim/program.hpp"

namespace cfisim {

// Architectural state. Register 0 reads as zero always; pc is 4-byte aligned
// at fetch. Memory is a flat byte array covering [base, base+mem_size); the
// code image is copied into its head so that tables emitted with .word are
// readable, but instruction fetch always goes through the decoded image
// (writes to the copy never alter what executes).
struct MachineState {
  std::array<uint32_t, 32> regs{};
  uint32_t pc = 0;
  uint32_t mepc = 0;
  std::vector<uint8_t> mem;
  uint64_t retired = 0;
  bool in_handler = false;

  uint32_t reg(uint8_t r) const { return regs[r & 31]; }
  void set_reg(uint8_t r, uint32_t v) {
    if ((r & 31) != 0) regs[r & 31] = v;
  }
};

// A scripted machine perturbation. Exactly one trigger (at_retired fires at
// the retire boundary where that many instructions have completed; at_pc
// fires when the fetch pc matches, on its occurrence-th hit) and one action.
struct FaultSpec {
  enum class Kind {
    OverwriteReturnSlot,           // mem32[slot_addr] = new_value
    CorruptRegisterBeforeIndirect, // regs[reg] = new_value
    ForcePc,                       // pc = new_value, skipping the instruction
  };
  Kind kind = Kind::ForcePc;
  std::optional<uint64_t> at_retired;
  std::optional<uint32_t> at_pc;
  uint32_t occurrence = 1;
  uint32_t slot_addr = 0;
  uint8_t reg = 0;
  uint32_t new_value = 0;
};

// One external interrupt request; it stays pending until the first retire
// boundary where the monitor does not mask interrupts and no handler is
// already running. The image must define __irq for delivery to succeed.
struct IrqSpec {
  std::optional<uint64_t> at_retired;
  std::optional<uint32_t> before_pc;
};

struct RunOptions {
  uint64_t fuel = 100000000;
  std::vector<FaultSpec> faults;
  std::vector<IrqSpec> irqs;
};

enum class RunVerdict {
  Completed,           // ecall reached; output = a0
  CfiException,        // monitor rejected an event; run terminates
  FuelExhausted,
  MemFault,            // out-of-bounds or misaligned access, or bad fetch
  IllegalInstruction,  // data word or undecodable fetch, stray mret
  Breakpoint,          // ebreak retired
};

const char* verdict_name(RunVerdict v);
std::optional<RunVerdict> parse_verdict(const std::string& name);

struct RunStats {
  RunVerdict verdict = RunVerdict::Completed;
  uint32_t output = 0;                   // Completed
  ExceptionKind exception = ExceptionKind::InvalidFlow;  // CfiException
  uint32_t fault_pc = 0;                 // any abnormal verdict
  uint64_t retired_total = 0;
  uint64_t retired_cfi = 0;              // injected instructions retired
  uint64_t irqs_serviced = 0;
  uint64_t irq_max_defer = 0;            // retires between request and entry
  uint64_t irqs_while_masked = 0;        // must stay zero
};

// Executes until halt, fuel exhaustion, or an abnormal verdict. Every retired
// instruction emits exactly one event to the monitor (when one is attached);
// a null monitor runs the bare machine. The monitor's boot handshake happens
// before the first fetch.
RunStats run(const CodeImage& image, Monitor* monitor,
             const RunOptions& opts = {});

// Relative overhead in hundredths of a percent, exact rational arithmetic
// rounded half away from zero: (instr - base) / base * 10000.
int64_t overhead_hundredths(uint64_t base_retired, uint64_t instr_retired);
// "12.34" rendering of a hundredths count.
std::string format_percent(int64_t hundredths);

std::string write_stats(const RunStats& s);
struct StatsParseResult {
  std::optional<RunStats> stats;
  std::string error;
  bool ok() const { return stats.has_value(); }
};
StatsParseResult parse_stats(const std::string& text);

// faults-v1 / irq-v1 sidecars. Addresses may be written as sym+off against
// the image's symbol table or as plain integers.
struct FaultsParseResult {
  std::optional<std::vector<FaultSpec>> faults;
  std::string error;
  bool ok() const { return faults.has_value(); }
};
FaultsParseResult parse_faults(const std::string& text, const CodeImage& img);
std::string write_faults(const std::vector<FaultSpec>& faults);

struct IrqParseResult {
  std::optional<std::vector<IrqSpec>> irqs;
  std::string error;
  bool ok() const { return irqs.has_value(); }
};
IrqParseResult parse_irqs(const std::string& text, const CodeImage& img);
std::string write_irqs(const std::vector<IrqSpec>& irqs);

}  // namespace cfisim
