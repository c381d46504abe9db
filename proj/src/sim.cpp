#include "cfisim/sim.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace cfisim {

namespace {

bool parse_u64(const std::string& s, uint64_t* out) {
  if (s.empty()) return false;
  uint64_t v = 0;
  if (s.size() > 2 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X')) {
    for (size_t k = 2; k < s.size(); ++k) {
      char c = char(std::tolower(static_cast<unsigned char>(s[k])));
      int d;
      if (c >= '0' && c <= '9') d = c - '0';
      else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
      else return false;
      v = v * 16 + uint64_t(d);
    }
  } else {
    for (char c : s) {
      if (!std::isdigit(static_cast<unsigned char>(c))) return false;
      v = v * 10 + uint64_t(c - '0');
    }
  }
  *out = v;
  return true;
}

// "sym", "sym+12", "sym-4", or a plain integer, resolved against the image.
bool resolve_addr(const CodeImage& img, const std::string& s, uint32_t* out) {
  uint64_t v;
  if (parse_u64(s, &v)) {
    *out = uint32_t(v);
    return true;
  }
  size_t pos = s.find_first_of("+-", 1);
  std::string base = pos == std::string::npos ? s : s.substr(0, pos);
  auto addr = img.symbol(base);
  if (!addr) return false;
  int64_t off = 0;
  if (pos != std::string::npos) {
    bool neg = s[pos] == '-';
    uint64_t mag;
    if (!parse_u64(s.substr(pos + 1), &mag)) return false;
    off = neg ? -int64_t(mag) : int64_t(mag);
  }
  *out = uint32_t(int64_t(*addr) + off);
  return true;
}

struct KvLine {
  std::string head;
  std::vector<std::pair<std::string, std::string>> kv;
};

// Splits "head k1=v1 k2=v2"; '#' starts a comment.
std::optional<KvLine> split_kv(const std::string& raw) {
  std::string line = raw;
  if (auto h = line.find('#'); h != std::string::npos) line = line.substr(0, h);
  std::istringstream in(line);
  std::string tok;
  KvLine out;
  while (in >> tok) {
    auto eq = tok.find('=');
    if (out.head.empty() && eq == std::string::npos) {
      out.head = tok;
    } else {
      if (eq == std::string::npos || eq == 0) return std::nullopt;
      out.kv.emplace_back(tok.substr(0, eq), tok.substr(eq + 1));
    }
  }
  if (out.head.empty() && out.kv.empty()) return {KvLine{}};
  if (out.head.empty()) return std::nullopt;
  return out;
}

void store_word_raw(std::vector<uint8_t>& mem, uint32_t off, uint32_t v) {
  mem[off] = uint8_t(v);
  mem[off + 1] = uint8_t(v >> 8);
  mem[off + 2] = uint8_t(v >> 16);
  mem[off + 3] = uint8_t(v >> 24);
}

}  // namespace

const char* verdict_name(RunVerdict v) {
  switch (v) {
    case RunVerdict::Completed: return "completed";
    case RunVerdict::CfiException: return "cfi-exception";
    case RunVerdict::FuelExhausted: return "fuel-exhausted";
    case RunVerdict::MemFault: return "mem-fault";
    case RunVerdict::IllegalInstruction: return "illegal-instruction";
    case RunVerdict::Breakpoint: return "breakpoint";
  }
  return "?";
}

std::optional<RunVerdict> parse_verdict(const std::string& name) {
  for (RunVerdict v :
       {RunVerdict::Completed, RunVerdict::CfiException,
        RunVerdict::FuelExhausted, RunVerdict::MemFault,
        RunVerdict::IllegalInstruction, RunVerdict::Breakpoint})
    if (name == verdict_name(v)) return v;
  return std::nullopt;
}

RunStats run(const CodeImage& img, Monitor* mon, const RunOptions& opts) {
  RunStats st;
  MachineState ms;
  ms.mem.assign(img.mem_size, 0);
  for (size_t k = 0; k < img.words.size(); ++k)
    store_word_raw(ms.mem, uint32_t(k * 4), img.words[k]);
  ms.pc = img.entry;
  if (mon) mon->boot();

  struct IrqState {
    bool requested = false;
    bool delivered = false;
    uint64_t requested_at = 0;
  };
  std::vector<IrqState> irq(opts.irqs.size());
  std::vector<uint32_t> fault_hits(opts.faults.size(), 0);
  std::vector<bool> fault_done(opts.faults.size(), false);

  auto finish = [&](RunVerdict v, uint32_t at) {
    st.verdict = v;
    st.fault_pc = at;
    st.retired_total = ms.retired;
    return st;
  };

  for (;;) {
    if (ms.retired >= opts.fuel)
      return finish(RunVerdict::FuelExhausted, ms.pc);

    // Interrupt requests arm at retire boundaries; delivery waits for the
    // first boundary where the monitor does not mask and no handler runs.
    for (size_t k = 0; k < opts.irqs.size(); ++k) {
      if (irq[k].requested || irq[k].delivered) continue;
      const IrqSpec& s = opts.irqs[k];
      bool hit = (s.at_retired && ms.retired >= *s.at_retired) ||
                 (s.before_pc && ms.pc == *s.before_pc);
      if (hit) {
        irq[k].requested = true;
        irq[k].requested_at = ms.retired;
      }
    }
    if (!ms.in_handler) {
      size_t pending = irq.size();
      for (size_t k = 0; k < irq.size(); ++k)
        if (irq[k].requested && !irq[k].delivered) {
          pending = k;
          break;
        }
      if (pending != irq.size()) {
        bool masked = mon && mon->interrupts_masked();
        if (!masked) {
          if (!img.irq_handler)
            return finish(RunVerdict::IllegalInstruction, ms.pc);
          irq[pending].delivered = true;
          ms.mepc = ms.pc;
          ms.pc = *img.irq_handler;
          ms.in_handler = true;
          ++st.irqs_serviced;
          st.irq_max_defer = std::max(
              st.irq_max_defer, ms.retired - irq[pending].requested_at);
          continue;
        }
      }
    }

    // Scripted faults, applied before the instruction at pc executes.
    bool redirected = false;
    for (size_t k = 0; k < opts.faults.size() && !redirected; ++k) {
      if (fault_done[k]) continue;
      const FaultSpec& f = opts.faults[k];
      bool hit = false;
      if (f.at_retired && ms.retired == *f.at_retired) hit = true;
      if (f.at_pc && ms.pc == *f.at_pc) hit = ++fault_hits[k] == f.occurrence;
      if (!hit) continue;
      fault_done[k] = true;
      switch (f.kind) {
        case FaultSpec::Kind::OverwriteReturnSlot: {
          uint32_t off = f.slot_addr - img.base;
          if (off % 4 != 0 || off >= img.mem_size || img.mem_size - off < 4)
            return finish(RunVerdict::MemFault, ms.pc);
          store_word_raw(ms.mem, off, f.new_value);
          break;
        }
        case FaultSpec::Kind::CorruptRegisterBeforeIndirect:
          ms.set_reg(f.reg, f.new_value);
          break;
        case FaultSpec::Kind::ForcePc:
          ms.pc = f.new_value;
          redirected = true;
          break;
      }
    }
    if (redirected) continue;

    // Fetch.
    uint32_t pc = ms.pc;
    uint32_t off = pc - img.base;
    if (pc % 4 != 0 || off >= img.code_bytes())
      return finish(RunVerdict::MemFault, pc);
    size_t idx = off / 4;
    if (img.is_data[idx])
      return finish(RunVerdict::IllegalInstruction, pc);
    const Instruction& I = img.decoded[idx];

    // Execute.
    uint32_t next = pc + 4;
    bool halted = false;
    auto in_range = [&](uint32_t o, uint32_t size) {
      return o < img.mem_size && img.mem_size - o >= size;
    };
    auto load = [&](uint32_t addr, uint32_t size, uint32_t* out) {
      uint32_t o = addr - img.base;
      if (addr % size != 0 || !in_range(o, size)) return false;
      *out = 0;
      for (uint32_t b = 0; b < size; ++b)
        *out |= uint32_t(ms.mem[o + b]) << (8 * b);
      return true;
    };
    auto store = [&](uint32_t addr, uint32_t size, uint32_t v) {
      uint32_t o = addr - img.base;
      if (addr % size != 0 || !in_range(o, size)) return false;
      for (uint32_t b = 0; b < size; ++b)
        ms.mem[o + b] = uint8_t(v >> (8 * b));
      return true;
    };

    uint32_t a = ms.reg(I.rs1);
    uint32_t b = ms.reg(I.rs2);
    switch (I.m) {
      case Mnemonic::Lui: ms.set_reg(I.rd, uint32_t(I.imm) << 12); break;
      case Mnemonic::Auipc:
        ms.set_reg(I.rd, pc + (uint32_t(I.imm) << 12));
        break;
      case Mnemonic::La:
        ms.set_reg(I.rd, img.base + (uint32_t(I.imm) << 2));
        break;
      case Mnemonic::Jal:
        ms.set_reg(I.rd, pc + 4);
        next = pc + uint32_t(I.imm);
        break;
      case Mnemonic::Jalr:
        next = (a + uint32_t(I.imm)) & ~1u;
        ms.set_reg(I.rd, pc + 4);
        break;
      case Mnemonic::Beq: if (a == b) next = pc + uint32_t(I.imm); break;
      case Mnemonic::Bne: if (a != b) next = pc + uint32_t(I.imm); break;
      case Mnemonic::Blt:
        if (int32_t(a) < int32_t(b)) next = pc + uint32_t(I.imm);
        break;
      case Mnemonic::Bge:
        if (int32_t(a) >= int32_t(b)) next = pc + uint32_t(I.imm);
        break;
      case Mnemonic::Bltu: if (a < b) next = pc + uint32_t(I.imm); break;
      case Mnemonic::Bgeu: if (a >= b) next = pc + uint32_t(I.imm); break;
      case Mnemonic::Lb:
      case Mnemonic::Lbu: {
        uint32_t v;
        if (!load(a + uint32_t(I.imm), 1, &v))
          return finish(RunVerdict::MemFault, pc);
        ms.set_reg(I.rd, I.m == Mnemonic::Lb ? uint32_t(int32_t(int8_t(v)))
                                             : v);
        break;
      }
      case Mnemonic::Lh:
      case Mnemonic::Lhu: {
        uint32_t v;
        if (!load(a + uint32_t(I.imm), 2, &v))
          return finish(RunVerdict::MemFault, pc);
        ms.set_reg(I.rd, I.m == Mnemonic::Lh ? uint32_t(int32_t(int16_t(v)))
                                             : v);
        break;
      }
      case Mnemonic::Lw: {
        uint32_t v;
        if (!load(a + uint32_t(I.imm), 4, &v))
          return finish(RunVerdict::MemFault, pc);
        ms.set_reg(I.rd, v);
        break;
      }
      case Mnemonic::Sb:
        if (!store(a + uint32_t(I.imm), 1, b))
          return finish(RunVerdict::MemFault, pc);
        break;
      case Mnemonic::Sh:
        if (!store(a + uint32_t(I.imm), 2, b))
          return finish(RunVerdict::MemFault, pc);
        break;
      case Mnemonic::Sw:
        if (!store(a + uint32_t(I.imm), 4, b))
          return finish(RunVerdict::MemFault, pc);
        break;
      case Mnemonic::Addi: ms.set_reg(I.rd, a + uint32_t(I.imm)); break;
      case Mnemonic::Slti:
        ms.set_reg(I.rd, int32_t(a) < I.imm ? 1 : 0);
        break;
      case Mnemonic::Sltiu:
        ms.set_reg(I.rd, a < uint32_t(I.imm) ? 1 : 0);
        break;
      case Mnemonic::Xori: ms.set_reg(I.rd, a ^ uint32_t(I.imm)); break;
      case Mnemonic::Ori: ms.set_reg(I.rd, a | uint32_t(I.imm)); break;
      case Mnemonic::Andi: ms.set_reg(I.rd, a & uint32_t(I.imm)); break;
      case Mnemonic::Slli: ms.set_reg(I.rd, a << (I.imm & 31)); break;
      case Mnemonic::Srli: ms.set_reg(I.rd, a >> (I.imm & 31)); break;
      case Mnemonic::Srai:
        ms.set_reg(I.rd, uint32_t(int32_t(a) >> (I.imm & 31)));
        break;
      case Mnemonic::Add: ms.set_reg(I.rd, a + b); break;
      case Mnemonic::Sub: ms.set_reg(I.rd, a - b); break;
      case Mnemonic::Sll: ms.set_reg(I.rd, a << (b & 31)); break;
      case Mnemonic::Slt:
        ms.set_reg(I.rd, int32_t(a) < int32_t(b) ? 1 : 0);
        break;
      case Mnemonic::Sltu: ms.set_reg(I.rd, a < b ? 1 : 0); break;
      case Mnemonic::Xor: ms.set_reg(I.rd, a ^ b); break;
      case Mnemonic::Srl: ms.set_reg(I.rd, a >> (b & 31)); break;
      case Mnemonic::Sra:
        ms.set_reg(I.rd, uint32_t(int32_t(a) >> (b & 31)));
        break;
      case Mnemonic::Or: ms.set_reg(I.rd, a | b); break;
      case Mnemonic::And: ms.set_reg(I.rd, a & b); break;
      case Mnemonic::Mul: ms.set_reg(I.rd, a * b); break;
      case Mnemonic::Ecall: halted = true; break;
      case Mnemonic::Ebreak:
        return finish(RunVerdict::Breakpoint, pc);
      case Mnemonic::Mret:
        if (!ms.in_handler)
          return finish(RunVerdict::IllegalInstruction, pc);
        next = ms.mepc;
        ms.in_handler = false;
        break;
      case Mnemonic::Word:
        return finish(RunVerdict::IllegalInstruction, pc);
      default:
        break;  // CFI family: no architectural effect
    }

    CfiEvent ev = CfiEvent::retire(pc);
    switch (classify(I)) {
      case InstrClass::DirectCall:
        ev = CfiEvent::direct_call(pc, pc + 4, next);
        break;
      case InstrClass::IndirectCall:
        ev = CfiEvent::indirect_call(pc, pc + 4, next);
        break;
      case InstrClass::Return:
        ev = CfiEvent::ret(pc, next);
        break;
      case InstrClass::IndirectJump:
        ev = CfiEvent::indirect_jump(pc, next);
        break;
      case InstrClass::CfiInstr:
        ev = CfiEvent::cfi(pc, I.m, I.cfi_payload.value_or(0));
        break;
      default:
        break;
    }

    ++ms.retired;
    if (img.injected[idx]) ++st.retired_cfi;
    if (mon) {
      Verdict v = mon->on_event(ev);
      if (!v.ok) {
        st.exception = v.kind;
        return finish(RunVerdict::CfiException, pc);
      }
    }
    if (halted) {
      st.output = ms.reg(10);
      st.retired_total = ms.retired;
      return st;
    }
    ms.pc = next;
  }
}

int64_t overhead_hundredths(uint64_t base_retired, uint64_t instr_retired) {
  int64_t d = int64_t(instr_retired) - int64_t(base_retired);
  int64_t b = int64_t(base_retired);
  int64_t half = d < 0 ? -b / 2 : b / 2;
  return (d * 10000 + half) / b;
}

std::string format_percent(int64_t hundredths) {
  std::ostringstream o;
  int64_t v = hundredths;
  if (v < 0) {
    o << '-';
    v = -v;
  }
  o << v / 100 << '.' << char('0' + (v / 10) % 10) << char('0' + v % 10);
  return o.str();
}

std::string write_stats(const RunStats& s) {
  std::ostringstream o;
  o << "stats-v1\n";
  o << "verdict " << verdict_name(s.verdict) << "\n";
  if (s.verdict == RunVerdict::Completed)
    o << "output " << s.output << "\n";
  if (s.verdict == RunVerdict::CfiException)
    o << "exception " << exception_name(s.exception) << "\n";
  if (s.verdict != RunVerdict::Completed) {
    std::ostringstream h;
    h << std::hex << s.fault_pc;
    o << "fault-pc 0x" << h.str() << "\n";
  }
  o << "retired-total " << s.retired_total << "\n";
  o << "retired-cfi " << s.retired_cfi << "\n";
  o << "irqs-serviced " << s.irqs_serviced << "\n";
  o << "irq-max-defer " << s.irq_max_defer << "\n";
  o << "irqs-while-masked " << s.irqs_while_masked << "\n";
  return o.str();
}

StatsParseResult parse_stats(const std::string& text) {
  StatsParseResult r;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "stats-v1") {
    r.error = "missing stats-v1 header";
    return r;
  }
  RunStats s;
  bool have_verdict = false;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ls(line);
    std::string key, val;
    if (!(ls >> key)) continue;
    ls >> val;
    auto bad = [&](const std::string& why) {
      r.error = "line " + std::to_string(lineno) + ": " + why;
      return r;
    };
    uint64_t n = 0;
    if (key == "verdict") {
      auto v = parse_verdict(val);
      if (!v) return bad("unknown verdict '" + val + "'");
      s.verdict = *v;
      have_verdict = true;
    } else if (key == "output") {
      if (!parse_u64(val, &n)) return bad("bad output");
      s.output = uint32_t(n);
    } else if (key == "exception") {
      auto k = parse_exception(val);
      if (!k) return bad("unknown exception '" + val + "'");
      s.exception = *k;
    } else if (key == "fault-pc") {
      if (!parse_u64(val, &n)) return bad("bad fault-pc");
      s.fault_pc = uint32_t(n);
    } else if (key == "retired-total") {
      if (!parse_u64(val, &n)) return bad("bad retired-total");
      s.retired_total = n;
    } else if (key == "retired-cfi") {
      if (!parse_u64(val, &n)) return bad("bad retired-cfi");
      s.retired_cfi = n;
    } else if (key == "irqs-serviced") {
      if (!parse_u64(val, &n)) return bad("bad irqs-serviced");
      s.irqs_serviced = n;
    } else if (key == "irq-max-defer") {
      if (!parse_u64(val, &n)) return bad("bad irq-max-defer");
      s.irq_max_defer = n;
    } else if (key == "irqs-while-masked") {
      if (!parse_u64(val, &n)) return bad("bad irqs-while-masked");
      s.irqs_while_masked = n;
    } else {
      return bad("unknown key '" + key + "'");
    }
  }
  if (!have_verdict) {
    r.error = "missing verdict";
    return r;
  }
  r.stats = s;
  return r;
}

namespace {

const char* fault_kind_name(FaultSpec::Kind k) {
  switch (k) {
    case FaultSpec::Kind::OverwriteReturnSlot: return "overwrite-return-slot";
    case FaultSpec::Kind::CorruptRegisterBeforeIndirect:
      return "corrupt-register";
    case FaultSpec::Kind::ForcePc: return "force-pc";
  }
  return "?";
}

}  // namespace

FaultsParseResult parse_faults(const std::string& text, const CodeImage& img) {
  FaultsParseResult r;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "faults-v1") {
    r.error = "missing faults-v1 header";
    return r;
  }
  std::vector<FaultSpec> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    auto bad = [&](const std::string& why) {
      r.error = "line " + std::to_string(lineno) + ": " + why;
      return r;
    };
    std::string body = line;
    if (auto h = body.find('#'); h != std::string::npos)
      body = body.substr(0, h);
    std::istringstream ls(body);
    std::string w0;
    if (!(ls >> w0)) continue;
    if (w0 != "fault") return bad("expected 'fault'");
    std::string kind_s;
    if (!(ls >> kind_s)) return bad("missing fault kind");
    FaultSpec f;
    if (kind_s == "overwrite-return-slot")
      f.kind = FaultSpec::Kind::OverwriteReturnSlot;
    else if (kind_s == "corrupt-register")
      f.kind = FaultSpec::Kind::CorruptRegisterBeforeIndirect;
    else if (kind_s == "force-pc")
      f.kind = FaultSpec::Kind::ForcePc;
    else
      return bad("unknown fault kind '" + kind_s + "'");
    bool have_new = false, have_slot = false, have_reg = false;
    std::string tok;
    while (ls >> tok) {
      auto eq = tok.find('=');
      if (eq == std::string::npos || eq == 0) return bad("expected key=value");
      std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
      uint32_t addr = 0;
      uint64_t n = 0;
      if (key == "at-retired") {
        if (!parse_u64(val, &n)) return bad("bad at-retired");
        f.at_retired = n;
      } else if (key == "at-pc") {
        if (!resolve_addr(img, val, &addr)) return bad("bad at-pc '" + val + "'");
        f.at_pc = addr;
      } else if (key == "occurrence") {
        if (!parse_u64(val, &n) || n == 0) return bad("bad occurrence");
        f.occurrence = uint32_t(n);
      } else if (key == "slot") {
        if (!resolve_addr(img, val, &addr)) return bad("bad slot '" + val + "'");
        f.slot_addr = addr;
        have_slot = true;
      } else if (key == "reg") {
        auto reg = parse_reg(val);
        if (!reg) return bad("bad reg '" + val + "'");
        f.reg = *reg;
        have_reg = true;
      } else if (key == "new") {
        if (!resolve_addr(img, val, &addr)) return bad("bad new '" + val + "'");
        f.new_value = addr;
        have_new = true;
      } else {
        return bad("unknown key '" + key + "'");
      }
    }
    if (f.at_retired.has_value() == f.at_pc.has_value())
      return bad("exactly one of at-retired / at-pc required");
    if (!have_new) return bad("missing new=");
    if (f.kind == FaultSpec::Kind::OverwriteReturnSlot && !have_slot)
      return bad("overwrite-return-slot needs slot=");
    if (f.kind == FaultSpec::Kind::CorruptRegisterBeforeIndirect && !have_reg)
      return bad("corrupt-register needs reg=");
    out.push_back(f);
  }
  r.faults = std::move(out);
  return r;
}

std::string write_faults(const std::vector<FaultSpec>& faults) {
  std::ostringstream o;
  o << "faults-v1\n";
  for (const auto& f : faults) {
    o << "fault " << fault_kind_name(f.kind);
    if (f.at_retired) o << " at-retired=" << *f.at_retired;
    if (f.at_pc) o << " at-pc=0x" << std::hex << *f.at_pc << std::dec;
    if (f.occurrence != 1) o << " occurrence=" << f.occurrence;
    if (f.kind == FaultSpec::Kind::OverwriteReturnSlot)
      o << " slot=0x" << std::hex << f.slot_addr << std::dec;
    if (f.kind == FaultSpec::Kind::CorruptRegisterBeforeIndirect)
      o << " reg=" << reg_name(f.reg);
    o << " new=0x" << std::hex << f.new_value << std::dec << "\n";
  }
  return o.str();
}

IrqParseResult parse_irqs(const std::string& text, const CodeImage& img) {
  IrqParseResult r;
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "irq-v1") {
    r.error = "missing irq-v1 header";
    return r;
  }
  std::vector<IrqSpec> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    auto bad = [&](const std::string& why) {
      r.error = "line " + std::to_string(lineno) + ": " + why;
      return r;
    };
    auto kvl = split_kv(line);
    if (!kvl) return bad("malformed line");
    if (kvl->head.empty()) continue;
    if (kvl->head != "irq") return bad("expected 'irq'");
    IrqSpec s;
    for (const auto& [key, val] : kvl->kv) {
      if (key == "at-retired") {
        uint64_t n;
        if (!parse_u64(val, &n)) return bad("bad at-retired");
        s.at_retired = n;
      } else if (key == "before-pc") {
        uint32_t addr;
        if (!resolve_addr(img, val, &addr))
          return bad("bad before-pc '" + val + "'");
        s.before_pc = addr;
      } else {
        return bad("unknown key '" + key + "'");
      }
    }
    if (s.at_retired.has_value() == s.before_pc.has_value())
      return bad("exactly one of at-retired / before-pc required");
    out.push_back(s);
  }
  r.irqs = std::move(out);
  return r;
}

std::string write_irqs(const std::vector<IrqSpec>& irqs) {
  std::ostringstream o;
  o << "irq-v1\n";
  for (const auto& s : irqs) {
    o << "irq";
    if (s.at_retired) o << " at-retired=" << *s.at_retired;
    if (s.before_pc) o << " before-pc=0x" << std::hex << *s.before_pc << std::dec;
    o << "\n";
  }
  return o.str();
}

}  // namespace cfisim
