#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cfisim/isa.hpp"

namespace cfisim {

// A function is a named, contiguous instruction sequence. Labels are stored
// per function as instruction indices so that instrumentation passes can
// insert instructions and keep references intact until layout resolves them.
struct Function {
  std::string name;
  std::vector<Instruction> instrs;
  std::vector<bool> injected;
  std::vector<bool> is_data;
  std::map<std::string, size_t> labels;
};

// Sites are addressed by (function, instruction index) into the baseline
// program, which survives reassembly unchanged.
struct IndirectCallSite {
  std::string func;
  size_t index = 0;
  uint32_t label = 0;  // 0 = assign automatically
  std::vector<std::string> targets;  // function names
};

struct IndirectJumpSite {
  std::string func;
  size_t index = 0;
  uint32_t label = 0;
  std::vector<std::string> targets;  // code labels
};

struct SetjmpSite {
  std::string func;
  size_t index = 0;   // index of the setjmp call instruction
  uint32_t slot = 0;  // jmp_buf slot
};

struct CfgInfo {
  std::vector<IndirectCallSite> icalls;
  std::vector<IndirectJumpSite> ijumps;
  std::vector<SetjmpSite> setjmps;
};

struct Program {
  uint32_t base_address = 0x1c000000;
  uint32_t mem_size = 512 * 1024;
  std::vector<Function> funcs;
  CfgInfo cfg;

  const Function* find(const std::string& name) const;
  Function* find(const std::string& name);
};

// Total image bytes (4 bytes per instruction or data word).
uint32_t code_size(const Program& p);

std::set<std::string> indirect_call_targets(const CfgInfo& cfg);

struct LoadResult {
  std::optional<Program> program;
  std::string error;
  bool ok() const { return program.has_value(); }
};

// Builds a Program from assembly text and a cfg-v1 sidecar (may be empty for
// programs without indirect transfers). Validates that referenced functions,
// labels and site indices exist and have the right instruction class, and
// that every function ends with a return or a non-returning transfer.
LoadResult load_program(const std::string& asm_text,
                        const std::string& cfg_text);

// Parses only the sidecar (cfg-v1). Used by load_program.
struct CfgParseResult {
  std::optional<CfgInfo> cfg;
  std::string error;
  bool ok() const { return cfg.has_value(); }
};
CfgParseResult parse_cfg(const std::string& text);
std::string write_cfg(const CfgInfo& cfg);

// Laid-out image: resolved, encoded words at their final addresses.
struct CodeImage {
  uint32_t base = 0;
  uint32_t mem_size = 0;
  std::vector<uint32_t> words;
  std::vector<Instruction> decoded;  // resolved instructions, parallel to words
  std::vector<bool> injected;
  std::vector<bool> is_data;
  std::map<std::string, uint32_t> symbols;
  uint32_t entry = 0;
  std::optional<uint32_t> irq_handler;

  uint32_t code_bytes() const { return uint32_t(words.size() * 4); }
  std::optional<uint32_t> symbol(const std::string& name) const {
    auto it = symbols.find(name);
    if (it == symbols.end()) return std::nullopt;
    return it->second;
  }
};

struct LayoutResult {
  std::optional<CodeImage> image;
  std::string error;
  bool ok() const { return image.has_value(); }
};

// Assigns addresses from base_address in function order, resolves symbolic
// operands (pc-relative branches/jumps, base-relative la, absolute .word),
// and provides the builtins __mem_top and __heap. Errors on unresolved
// symbols, range overflows, or an image exceeding the memory bound.
LayoutResult layout(const Program& p);

// Renders the program back to assembly text (with #!cfi markers on injected
// instructions) so that instrument output can be written to disk and
// reloaded without losing information.
std::string write_asm(const Program& p);

}  // namespace cfisim
