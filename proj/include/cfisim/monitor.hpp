#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cfisim/isa.hpp"

namespace cfisim {

enum class Scheme { Fixer, Hafix, Hcfi, Hecfi, Cet, Excec };

constexpr std::array<Scheme, 6> kAllSchemes{Scheme::Fixer, Scheme::Hafix,
                                            Scheme::Hcfi,  Scheme::Hecfi,
                                            Scheme::Cet,   Scheme::Excec};

const char* scheme_name(Scheme s);
std::optional<Scheme> parse_scheme(const std::string& name);

struct MonitorConfig {
  uint32_t shadow_stack_size = 128;
  uint32_t recursion_depth = 128;
  uint32_t indirect_calls = 64;
  uint32_t indirect_jumps = 64;
  uint32_t indirectly_called = 64;
  uint32_t num_functions = 1024;
  uint32_t setjmp_calls = 8;

  enum class EntryBits { Full32, Bits18to1 };
  // Reduced shadow-stack entry width; applies to the scheme whose stack
  // exploits the fixed high address bits.
  EntryBits shadow_entry_bits = EntryBits::Bits18to1;
  // Bounded-counter recursion handling for the schemes that have it; when
  // off, every push takes a fresh entry and deep recursion hits StackFull.
  bool recursion_counters = true;

  // Returns an error message, or empty when the config is valid.
  std::string validate() const;
};

// Parses "key=value" lines (blank lines and # comments ignored).
struct MonitorConfigResult {
  std::optional<MonitorConfig> config;
  std::string error;
  bool ok() const { return config.has_value(); }
};
MonitorConfigResult parse_monitor_config(const std::string& text);

enum class EventKind {
  DirectCall,
  IndirectCall,
  Return,
  IndirectJump,
  Cfi,
  Retire,
};

// One event per retired instruction, built by the simulator.
struct CfiEvent {
  EventKind kind = EventKind::Retire;
  uint32_t pc = 0;
  uint32_t return_addr = 0;            // calls
  uint32_t target = 0;                 // calls, returns, jumps
  Mnemonic op = Mnemonic::Addi;        // kind == Cfi
  uint32_t payload = 0;

  static CfiEvent direct_call(uint32_t pc, uint32_t ra, uint32_t target);
  static CfiEvent indirect_call(uint32_t pc, uint32_t ra, uint32_t target);
  static CfiEvent ret(uint32_t pc, uint32_t target);
  static CfiEvent indirect_jump(uint32_t pc, uint32_t target);
  static CfiEvent cfi(uint32_t pc, Mnemonic op, uint32_t payload);
  static CfiEvent retire(uint32_t pc);
};

enum class ExceptionKind {
  StackFull,
  StackEmpty,
  ReturnMismatch,
  LabelMismatch,
  InactiveTarget,
  PolicyDenied,
  RecursionExceeded,
  SetjmpSlotInvalid,
  InvalidFlow,
};

const char* exception_name(ExceptionKind k);
std::optional<ExceptionKind> parse_exception(const std::string& name);

struct Verdict {
  bool ok = true;
  ExceptionKind kind = ExceptionKind::InvalidFlow;

  static Verdict good() { return {}; }
  static Verdict bad(ExceptionKind k) { return {false, k}; }
};

// Bounded shadow stack with optional per-entry recursion counters and an
// optional reduced entry width that keeps only address bits [18:1].
class ShadowStack {
 public:
  enum class Mask { Full32, Bits18to1 };

  ShadowStack(uint32_t size, Mask mask, bool counters, uint32_t depth)
      : size_(size), mask_(mask), counters_(counters), depth_(depth) {}

  uint32_t mask_value(uint32_t v) const {
    return mask_ == Mask::Full32 ? v : (v >> 1) & 0x3ffff;
  }

  // Pushing the value already on top increments its counter (bounded by the
  // configured recursion depth); otherwise a fresh entry is taken.
  std::optional<ExceptionKind> push(uint32_t value);
  // Compares against the top entry, then decrements its counter or pops.
  std::optional<ExceptionKind> pop_check(uint32_t value);

  bool empty() const { return entries_.empty(); }
  uint32_t sp() const { return uint32_t(entries_.size()); }
  uint32_t top_value() const { return entries_.back().value; }
  uint32_t top_counter() const { return entries_.back().counter; }
  uint32_t max_sp() const { return max_sp_; }
  void clear() { entries_.clear(); }

  struct Position {
    uint32_t sp = 0;
    uint32_t top_counter = 0;
  };
  Position position() const;
  void unwind_to(const Position& pos);

 private:
  struct Entry {
    uint32_t value;
    uint32_t counter;
  };
  uint32_t size_;
  Mask mask_;
  bool counters_;
  uint32_t depth_;
  uint32_t max_sp_ = 0;
  std::vector<Entry> entries_;
};

// Monitor initialization data (mon-v1): the policy matrix and address
// decoder images emitted by the FIXER instrumentation pass.
struct MonitorInit {
  struct DecoderEntry {
    uint32_t col = 0;
    uint32_t tag = 0;  // address bits [18:1] of the function entry
    std::string name;
  };
  std::vector<DecoderEntry> decoder;
  std::vector<std::pair<uint32_t, uint32_t>> matrix;  // allowed (row, col)
};

struct MonitorInitResult {
  std::optional<MonitorInit> init;
  std::string error;
  bool ok() const { return init.has_value(); }
};
MonitorInitResult parse_mon(const std::string& text);
std::string write_mon(const MonitorInit& init);

// A monitor consumes exactly one event per retired instruction. It starts in
// the post-reset state with CFI disabled; the simulator performs the boot
// handshake (boot()) before the first fetch, mirroring a hardware reset
// release. While disabled every event is a NOP except CFI_ENABLE.
class Monitor {
 public:
  virtual ~Monitor() = default;
  virtual Verdict on_event(const CfiEvent& e) = 0;
  virtual bool interrupts_masked() const { return false; }
  void boot() { enabled_ = true; }
  bool enabled() const { return enabled_; }

 protected:
  bool enabled_ = false;
};

std::unique_ptr<Monitor> make_monitor(Scheme s, const MonitorConfig& cfg,
                                      const MonitorInit& init = {});

// Structural flip-flop cost of a monitor configuration.
struct FfCost {
  std::vector<std::pair<std::string, uint64_t>> items;
  uint64_t total = 0;
  uint64_t item(const std::string& name) const;
};

FfCost ff_cost(Scheme s, const MonitorConfig& cfg);

}  // namespace cfisim
