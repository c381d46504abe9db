#include "cfisim/program.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace cfisim {

const Function* Program::find(const std::string& name) const {
  for (const auto& f : funcs)
    if (f.name == name) return &f;
  return nullptr;
}

Function* Program::find(const std::string& name) {
  for (auto& f : funcs)
    if (f.name == name) return &f;
  return nullptr;
}

uint32_t code_size(const Program& p) {
  size_t n = 0;
  for (const auto& f : p.funcs) n += f.instrs.size();
  return uint32_t(n * 4);
}

std::set<std::string> indirect_call_targets(const CfgInfo& cfg) {
  std::set<std::string> out;
  for (const auto& s : cfg.icalls)
    for (const auto& t : s.targets) out.insert(t);
  return out;
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

bool parse_u32(const std::string& s, uint32_t* out) {
  if (s.empty()) return false;
  uint64_t v = 0;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    for (size_t i = 2; i < s.size(); ++i) {
      char c = char(std::tolower(static_cast<unsigned char>(s[i])));
      int d;
      if (c >= '0' && c <= '9') d = c - '0';
      else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
      else return false;
      v = v * 16 + uint64_t(d);
      if (v > 0xffffffffull) return false;
    }
  } else {
    for (char c : s) {
      if (!std::isdigit(static_cast<unsigned char>(c))) return false;
      v = v * 10 + uint64_t(c - '0');
      if (v > 0xffffffffull) return false;
    }
  }
  *out = uint32_t(v);
  return true;
}

}  // namespace

CfgParseResult parse_cfg(const std::string& text) {
  CfgParseResult r;
  CfgInfo cfg;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  bool have_header = false;
  auto fail = [&](const std::string& msg) {
    r.error = "cfg line " + std::to_string(lineno) + ": " + msg;
    return r;
  };
  while (std::getline(in, raw)) {
    ++lineno;
    if (auto h = raw.find('#'); h != std::string::npos) raw = raw.substr(0, h);
    std::istringstream ls(raw);
    std::vector<std::string> parts;
    std::string w;
    while (ls >> w) parts.push_back(w);
    if (parts.empty()) continue;
    if (!have_header) {
      if (parts.size() != 1 || parts[0] != "cfg-v1")
        return fail("expected cfg-v1 header");
      have_header = true;
      continue;
    }
    const std::string& kind = parts[0];
    if (kind != "icall" && kind != "ijump" && kind != "setjmp")
      return fail("unknown record '" + kind + "'");
    if (parts.size() < 3) return fail("record needs function and index");
    std::string func = parts[1];
    uint32_t index;
    if (!parse_u32(parts[2], &index)) return fail("bad instruction index");
    uint32_t label = 0, slot = 0;
    bool have_slot = false;
    std::vector<std::string> targets;
    for (size_t k = 3; k < parts.size(); ++k) {
      auto eq = parts[k].find('=');
      if (eq == std::string::npos) return fail("expected key=value");
      std::string key = parts[k].substr(0, eq);
      std::string val = parts[k].substr(eq + 1);
      if (key == "targets") {
        targets = split(val, ',');
      } else if (key == "label") {
        if (!parse_u32(val, &label) || label == 0 || label > 0xfffff)
          return fail("label must be nonzero and fit 20 bits");
      } else if (key == "slot") {
        if (!parse_u32(val, &slot)) return fail("bad slot");
        have_slot = true;
      } else {
        return fail("unknown key '" + key + "'");
      }
    }
    if (kind == "icall") {
      if (targets.empty()) return fail("icall needs targets");
      cfg.icalls.push_back({func, index, label, targets});
    } else if (kind == "ijump") {
      if (targets.empty()) return fail("ijump needs targets");
      cfg.ijumps.push_back({func, index, label, targets});
    } else {
      if (!have_slot) return fail("setjmp needs slot");
      cfg.setjmps.push_back({func, index, slot});
    }
  }
  if (!have_header && !text.empty()) {
    lineno = 1;
    return fail("expected cfg-v1 header");
  }
  r.cfg = std::move(cfg);
  return r;
}

std::string write_cfg(const CfgInfo& cfg) {
  std::ostringstream o;
  o << "cfg-v1\n";
  for (const auto& s : cfg.icalls) {
    o << "icall " << s.func << " " << s.index << " targets=";
    for (size_t k = 0; k < s.targets.size(); ++k)
      o << (k ? "," : "") << s.targets[k];
    if (s.label) o << " label=" << s.label;
    o << "\n";
  }
  for (const auto& s : cfg.ijumps) {
    o << "ijump " << s.func << " " << s.index << " targets=";
    for (size_t k = 0; k < s.targets.size(); ++k)
      o << (k ? "," : "") << s.targets[k];
    if (s.label) o << " label=" << s.label;
    o << "\n";
  }
  for (const auto& s : cfg.setjmps)
    o << "setjmp " << s.func << " " << s.index << " slot=" << s.slot << "\n";
  return o.str();
}

LoadResult load_program(const std::string& asm_text,
                        const std::string& cfg_text) {
  LoadResult r;
  AsmResult ar = assemble(asm_text);
  if (!ar.ok()) {
    r.error = "asm line " + std::to_string(ar.error.line) + ": " + ar.error.msg;
    return r;
  }
  const AsmUnit& u = *ar.unit;

  Program p;
  for (const auto& fu : u.funcs) {
    Function f;
    f.name = fu.name;
    f.instrs.assign(u.instrs.begin() + long(fu.begin),
                    u.instrs.begin() + long(fu.end));
    f.injected.assign(u.injected.begin() + long(fu.begin),
                      u.injected.begin() + long(fu.end));
    f.is_data.assign(u.is_data.begin() + long(fu.begin),
                     u.is_data.begin() + long(fu.end));
    p.funcs.push_back(std::move(f));
  }
  for (const auto& [name, idx] : u.labels) {
    for (size_t fi = 0; fi < u.funcs.size(); ++fi) {
      if (idx >= u.funcs[fi].begin && idx < u.funcs[fi].end) {
        if (name != u.funcs[fi].name)
          p.funcs[fi].labels[name] = idx - u.funcs[fi].begin;
        break;
      }
    }
  }

  // Every function must end in a return or a non-returning transfer;
  // trailing .word data (literal pools, jump tables) is allowed after it.
  for (const auto& f : p.funcs) {
    long last = -1;
    for (size_t k = 0; k < f.instrs.size(); ++k)
      if (!f.is_data[k]) last = long(k);
    if (last < 0) continue;  // pure data block
    const Instruction& t = f.instrs[size_t(last)];
    InstrClass c = classify(t);
    bool terminator = c == InstrClass::Return || c == InstrClass::IndirectJump ||
                      (t.m == Mnemonic::Jal && t.rd == kRegZero) ||
                      t.m == Mnemonic::Ecall || t.m == Mnemonic::Ebreak ||
                      t.m == Mnemonic::Mret;
    if (!terminator) {
      r.error = "function '" + f.name +
                "' does not end with a return or non-returning jump";
      return r;
    }
    for (size_t k = 0; k < size_t(last); ++k) {
      if (f.is_data[k]) {
        r.error = "function '" + f.name + "' has data before its terminator";
        return r;
      }
    }
  }

  CfgParseResult cr = parse_cfg(cfg_text);
  if (!cr.ok()) {
    r.error = cr.error;
    return r;
  }
  p.cfg = std::move(*cr.cfg);

  // Validate sites against the program.
  std::set<std::pair<std::string, size_t>> seen;
  auto site_instr = [&](const std::string& fn, size_t idx,
                        const Instruction** out) -> std::string {
    const Function* f = p.find(fn);
    if (!f) return "unknown function '" + fn + "'";
    if (idx >= f->instrs.size())
      return "site index " + std::to_string(idx) + " out of range in '" + fn +
             "'";
    *out = &f->instrs[idx];
    if (!seen.insert({fn, idx}).second)
      return "duplicate site at " + fn + ":" + std::to_string(idx);
    return "";
  };
  auto label_exists = [&](const std::string& l) {
    for (const auto& f : p.funcs)
      if (f.labels.count(l) || f.name == l) return true;
    return false;
  };

  for (const auto& s : p.cfg.icalls) {
    const Instruction* i = nullptr;
    std::string e = site_instr(s.func, s.index, &i);
    if (e.empty() && classify(*i) != InstrClass::IndirectCall)
      e = "icall site " + s.func + ":" + std::to_string(s.index) +
          " is not an indirect call";
    if (e.empty())
      for (const auto& t : s.targets)
        if (!p.find(t)) {
          e = "icall target '" + t + "' is not a function";
          break;
        }
    if (!e.empty()) {
      r.error = e;
      return r;
    }
  }
  for (const auto& s : p.cfg.ijumps) {
    const Instruction* i = nullptr;
    std::string e = site_instr(s.func, s.index, &i);
    if (e.empty() && classify(*i) != InstrClass::IndirectJump)
      e = "ijump site " + s.func + ":" + std::to_string(s.index) +
          " is not an indirect jump";
    if (e.empty())
      for (const auto& t : s.targets)
        if (!label_exists(t)) {
          e = "ijump target label '" + t + "' does not exist";
          break;
        }
    if (!e.empty()) {
      r.error = e;
      return r;
    }
  }
  std::set<uint32_t> slots;
  for (const auto& s : p.cfg.setjmps) {
    const Instruction* i = nullptr;
    std::string e = site_instr(s.func, s.index, &i);
    if (e.empty()) {
      InstrClass c = classify(*i);
      if (c != InstrClass::DirectCall && c != InstrClass::IndirectCall)
        e = "setjmp site " + s.func + ":" + std::to_string(s.index) +
            " is not a call";
    }
    if (e.empty() && !slots.insert(s.slot).second)
      e = "duplicate setjmp slot " + std::to_string(s.slot);
    if (!e.empty()) {
      r.error = e;
      return r;
    }
  }

  r.program = std::move(p);
  return r;
}

LayoutResult layout(const Program& p) {
  LayoutResult r;
  uint32_t bytes = code_size(p);
  if (bytes > p.mem_size) {
    r.error = "image of " + std::to_string(bytes) +
              " bytes exceeds memory bound of " + std::to_string(p.mem_size);
    return r;
  }

  CodeImage img;
  img.base = p.base_address;
  img.mem_size = p.mem_size;

  // First pass: addresses for functions and labels.
  uint32_t addr = p.base_address;
  for (const auto& f : p.funcs) {
    if (img.symbols.count(f.name)) {
      r.error = "duplicate symbol '" + f.name + "'";
      return r;
    }
    img.symbols[f.name] = addr;
    for (const auto& [l, idx] : f.labels) {
      if (img.symbols.count(l)) {
        r.error = "duplicate symbol '" + l + "'";
        return r;
      }
      img.symbols[l] = addr + uint32_t(idx * 4);
    }
    addr += uint32_t(f.instrs.size() * 4);
  }
  img.symbols["__heap"] = addr;
  img.symbols["__mem_top"] = p.base_address + p.mem_size;

  // Second pass: resolve and encode.
  addr = p.base_address;
  for (const auto& f : p.funcs) {
    for (size_t k = 0; k < f.instrs.size(); ++k) {
      Instruction i = f.instrs[k];
      if (!i.sym.empty()) {
        auto it = img.symbols.find(i.sym);
        if (it == img.symbols.end()) {
          r.error = "unresolved symbol '" + i.sym + "'";
          return r;
        }
        uint32_t target = it->second + uint32_t(i.sym_addend);
        switch (i.m) {
          case Mnemonic::Jal: {
            int64_t off = int64_t(target) - int64_t(addr);
            if (off < -(1 << 20) || off >= (1 << 20)) {
              r.error = "jal target out of range for '" + i.sym + "'";
              return r;
            }
            i.imm = int32_t(off);
            break;
          }
          case Mnemonic::Beq:
          case Mnemonic::Bne:
          case Mnemonic::Blt:
          case Mnemonic::Bge:
          case Mnemonic::Bltu:
          case Mnemonic::Bgeu: {
            int64_t off = int64_t(target) - int64_t(addr);
            if (off < -(1 << 12) || off >= (1 << 12)) {
              r.error = "branch target out of range for '" + i.sym + "'";
              return r;
            }
            i.imm = int32_t(off);
            break;
          }
          case Mnemonic::La: {
            uint32_t delta = target - p.base_address;
            if (delta % 4 != 0 || (delta >> 2) > 0xfffff) {
              r.error = "la target out of range for '" + i.sym + "'";
              return r;
            }
            i.imm = int32_t(delta >> 2);
            break;
          }
          case Mnemonic::Word:
            i.imm = int32_t(target);
            break;
          default:
            r.error = "symbol operand not allowed on " +
                      std::string(mnemonic_name(i.m));
            return r;
        }
        i.sym.clear();
        i.sym_addend = 0;
      }
      uint32_t w;
      try {
        w = encode(i);
      } catch (const EncodeError& e) {
        r.error = e.msg;
        return r;
      }
      img.words.push_back(w);
      img.decoded.push_back(i);
      img.injected.push_back(f.injected[k]);
      img.is_data.push_back(f.is_data[k]);
      addr += 4;
    }
  }

  if (auto m = img.symbol("main")) img.entry = *m;
  else if (!p.funcs.empty()) img.entry = p.base_address;
  else {
    r.error = "empty program";
    return r;
  }
  img.irq_handler = img.symbol("__irq");
  return LayoutResult{std::move(img), ""};
}

std::string write_asm(const Program& p) {
  std::ostringstream o;
  for (const auto& f : p.funcs) {
    o << ".func " << f.name << "\n";
    // Labels by index for stable emission.
    std::multimap<size_t, std::string> by_idx;
    for (const auto& [l, idx] : f.labels) by_idx.insert({idx, l});
    for (size_t k = 0; k < f.instrs.size(); ++k) {
      auto range = by_idx.equal_range(k);
      for (auto it = range.first; it != range.second; ++it)
        o << it->second << ":\n";
      o << "  " << print_instr(f.instrs[k]);
      if (f.injected[k]) o << " #!cfi";
      o << "\n";
    }
    o << ".endfunc\n";
  }
  return o.str();
}

}  // namespace cfisim
