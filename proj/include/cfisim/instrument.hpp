#pragma once

#include <map>
#include <string>

#include "cfisim/monitor.hpp"
#include "cfisim/program.hpp"

namespace cfisim {

// Count table of injected instructions, by mnemonic. `total` covers every
// injected word, including whole trampoline bodies.
struct Ledger {
  std::map<std::string, uint64_t> injected;
  uint64_t trampolines = 0;
  uint64_t total = 0;
};

std::string write_ledger(const Ledger& l, Scheme s);

struct LedgerParseResult {
  std::optional<Ledger> ledger;
  std::optional<Scheme> scheme;
  std::string error;
  bool ok() const { return ledger.has_value(); }
};
LedgerParseResult parse_ledger(const std::string& text);

struct InstrumentResult {
  std::optional<Program> prog;
  MonitorInit init;  // FIXER policy matrix / decoder; empty for the others
  Ledger ledger;
  std::string error;
  bool ok() const { return prog.has_value(); }
};

// Applies the scheme's pass to a baseline program. The input is left
// untouched; sites in the returned program's cfg are re-indexed to the new
// instruction positions. Refuses programs the scheme cannot protect
// (mutual recursion under HAFIX, setjmp under FIXER/HECFI/CET), programs
// with tail calls, and anything over the configured capacities.
InstrumentResult instrument(const Program& p, Scheme s,
                            const MonitorConfig& cfg);

}  // namespace cfisim
