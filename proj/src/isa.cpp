#include "cfisim/isa.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <sstream>

namespace cfisim {

namespace {

constexpr uint32_t kOpLui = 0b0110111;
constexpr uint32_t kOpAuipc = 0b0010111;
constexpr uint32_t kOpJal = 0b1101111;
constexpr uint32_t kOpJalr = 0b1100111;
constexpr uint32_t kOpBranch = 0b1100011;
constexpr uint32_t kOpLoad = 0b0000011;
constexpr uint32_t kOpStore = 0b0100011;
constexpr uint32_t kOpImm = 0b0010011;
constexpr uint32_t kOpReg = 0b0110011;
constexpr uint32_t kOpSystem = 0b1110011;
constexpr uint32_t kOpCfi = 0b0001011;  // custom-0
constexpr uint32_t kOpLa = 0b0101011;   // custom-1

struct CfiOpInfo {
  Mnemonic m;
  uint8_t subop;
  bool takes_operand;
};

constexpr std::array<CfiOpInfo, 23> kCfiOps{{
    {Mnemonic::CfiCall, 0, true},
    {Mnemonic::CfiJump, 1, true},
    {Mnemonic::CfiCheck, 2, true},
    {Mnemonic::CfiSetjmp, 3, true},
    {Mnemonic::CfiLongjmp, 4, false},
    {Mnemonic::CfiEnable, 5, false},
    {Mnemonic::CfiDisable, 6, false},
    {Mnemonic::CfiReset, 7, false},
    {Mnemonic::Endbranch, 8, false},
    {Mnemonic::FixerPush, 9, false},
    {Mnemonic::FixerPop, 10, false},
    {Mnemonic::FixerChk, 11, true},
    {Mnemonic::HafixAct, 12, true},
    {Mnemonic::HafixRec, 13, true},
    {Mnemonic::HafixDel, 14, true},
    {Mnemonic::HafixChk, 15, true},
    {Mnemonic::HcfiPush, 16, false},
    {Mnemonic::HcfiPop, 17, false},
    {Mnemonic::HcfiSetLabel, 18, true},
    {Mnemonic::HcfiCheckLabel, 19, true},
    {Mnemonic::HecfiPush, 20, true},
    {Mnemonic::HecfiPop, 21, true},
    {Mnemonic::HecfiCheck, 22, true},
}};

const CfiOpInfo* cfi_info(Mnemonic m) {
  for (const auto& e : kCfiOps)
    if (e.m == m) return &e;
  return nullptr;
}

const CfiOpInfo* cfi_info_by_subop(uint8_t subop) {
  for (const auto& e : kCfiOps)
    if (e.subop == subop) return &e;
  return nullptr;
}

uint32_t bits(uint32_t v, int hi, int lo) {
  return (v >> lo) & ((1u << (hi - lo + 1)) - 1);
}

int32_t sext(uint32_t v, int width) {
  uint32_t sign = 1u << (width - 1);
  return static_cast<int32_t>((v ^ sign) - sign);
}

uint32_t enc_r(uint32_t f7, uint8_t rs2, uint8_t rs1, uint32_t f3, uint8_t rd,
               uint32_t op) {
  return (f7 << 25) | (uint32_t(rs2) << 20) | (uint32_t(rs1) << 15) |
         (f3 << 12) | (uint32_t(rd) << 7) | op;
}

uint32_t enc_i(int32_t imm, uint8_t rs1, uint32_t f3, uint8_t rd, uint32_t op) {
  return (uint32_t(imm & 0xfff) << 20) | (uint32_t(rs1) << 15) | (f3 << 12) |
         (uint32_t(rd) << 7) | op;
}

uint32_t enc_s(int32_t imm, uint8_t rs2, uint8_t rs1, uint32_t f3,
               uint32_t op) {
  uint32_t u = uint32_t(imm) & 0xfff;
  return (bits(u, 11, 5) << 25) | (uint32_t(rs2) << 20) |
         (uint32_t(rs1) << 15) | (f3 << 12) | (bits(u, 4, 0) << 7) | op;
}

uint32_t enc_b(int32_t imm, uint8_t rs2, uint8_t rs1, uint32_t f3,
               uint32_t op) {
  uint32_t u = uint32_t(imm);
  return (bits(u, 12, 12) << 31) | (bits(u, 10, 5) << 25) |
         (uint32_t(rs2) << 20) | (uint32_t(rs1) << 15) | (f3 << 12) |
         (bits(u, 4, 1) << 8) | (bits(u, 11, 11) << 7) | op;
}

uint32_t enc_u(int32_t imm20, uint8_t rd, uint32_t op) {
  return (uint32_t(imm20 & 0xfffff) << 12) | (uint32_t(rd) << 7) | op;
}

uint32_t enc_j(int32_t imm, uint8_t rd, uint32_t op) {
  uint32_t u = uint32_t(imm);
  return (bits(u, 20, 20) << 31) | (bits(u, 10, 1) << 21) |
         (bits(u, 11, 11) << 20) | (bits(u, 19, 12) << 12) |
         (uint32_t(rd) << 7) | op;
}

struct NameEntry {
  const char* name;
  Mnemonic m;
};

constexpr std::array<NameEntry, 65> kNames{{
    {"lui", Mnemonic::Lui},       {"auipc", Mnemonic::Auipc},
    {"jal", Mnemonic::Jal},       {"jalr", Mnemonic::Jalr},
    {"beq", Mnemonic::Beq},       {"bne", Mnemonic::Bne},
    {"blt", Mnemonic::Blt},       {"bge", Mnemonic::Bge},
    {"bltu", Mnemonic::Bltu},     {"bgeu", Mnemonic::Bgeu},
    {"lb", Mnemonic::Lb},         {"lh", Mnemonic::Lh},
    {"lw", Mnemonic::Lw},         {"lbu", Mnemonic::Lbu},
    {"lhu", Mnemonic::Lhu},       {"sb", Mnemonic::Sb},
    {"sh", Mnemonic::Sh},         {"sw", Mnemonic::Sw},
    {"addi", Mnemonic::Addi},     {"slti", Mnemonic::Slti},
    {"sltiu", Mnemonic::Sltiu},   {"xori", Mnemonic::Xori},
    {"ori", Mnemonic::Ori},       {"andi", Mnemonic::Andi},
    {"slli", Mnemonic::Slli},     {"srli", Mnemonic::Srli},
    {"srai", Mnemonic::Srai},     {"add", Mnemonic::Add},
    {"sub", Mnemonic::Sub},       {"sll", Mnemonic::Sll},
    {"slt", Mnemonic::Slt},       {"sltu", Mnemonic::Sltu},
    {"xor", Mnemonic::Xor},       {"srl", Mnemonic::Srl},
    {"sra", Mnemonic::Sra},       {"or", Mnemonic::Or},
    {"and", Mnemonic::And},       {"mul", Mnemonic::Mul},
    {"ecall", Mnemonic::Ecall},   {"ebreak", Mnemonic::Ebreak},
    {"mret", Mnemonic::Mret},     {"la", Mnemonic::La},
    {"cfi_call", Mnemonic::CfiCall},
    {"cfi_jump", Mnemonic::CfiJump},
    {"cfi_check", Mnemonic::CfiCheck},
    {"cfi_setjmp", Mnemonic::CfiSetjmp},
    {"cfi_longjmp", Mnemonic::CfiLongjmp},
    {"cfi_enable", Mnemonic::CfiEnable},
    {"cfi_disable", Mnemonic::CfiDisable},
    {"cfi_reset", Mnemonic::CfiReset},
    {"endbranch", Mnemonic::Endbranch},
    {"fixer_push", Mnemonic::FixerPush},
    {"fixer_pop", Mnemonic::FixerPop},
    {"fixer_chk", Mnemonic::FixerChk},
    {"hafix_act", Mnemonic::HafixAct},
    {"hafix_rec", Mnemonic::HafixRec},
    {"hafix_del", Mnemonic::HafixDel},
    {"hafix_chk", Mnemonic::HafixChk},
    {"hcfi_push", Mnemonic::HcfiPush},
    {"hcfi_pop", Mnemonic::HcfiPop},
    {"hcfi_setlabel", Mnemonic::HcfiSetLabel},
    {"hcfi_checklabel", Mnemonic::HcfiCheckLabel},
    {"hecfi_push", Mnemonic::HecfiPush},
    {"hecfi_pop", Mnemonic::HecfiPop},
    {"hecfi_check", Mnemonic::HecfiCheck},
}};

constexpr std::array<const char*, 32> kAbiNames{
    "zero", "ra", "sp", "gp", "tp", "t0", "t1", "t2", "s0", "s1", "a0",
    "a1",   "a2", "a3", "a4", "a5", "a6", "a7", "s2", "s3", "s4", "s5",
    "s6",   "s7", "s8", "s9", "s10", "s11", "t3", "t4", "t5", "t6"};

}  // namespace

bool is_cfi_family(Mnemonic m) { return cfi_info(m) != nullptr; }

bool cfi_takes_operand(Mnemonic m) {
  const CfiOpInfo* e = cfi_info(m);
  return e && e->takes_operand;
}

const char* mnemonic_name(Mnemonic m) {
  if (m == Mnemonic::Word) return ".word";
  for (const auto& e : kNames)
    if (e.m == m) return e.name;
  return "?";
}

InstrClass classify(const Instruction& i) {
  switch (i.m) {
    case Mnemonic::Jal:
      return i.rd == kRegRa ? InstrClass::DirectCall : InstrClass::Other;
    case Mnemonic::Jalr:
      if (i.rd != kRegZero) return InstrClass::IndirectCall;
      return i.rs1 == kRegRa ? InstrClass::Return : InstrClass::IndirectJump;
    case Mnemonic::Beq:
    case Mnemonic::Bne:
    case Mnemonic::Blt:
    case Mnemonic::Bge:
    case Mnemonic::Bltu:
    case Mnemonic::Bgeu:
      return InstrClass::CondBranch;
    default:
      return is_cfi_family(i.m) ? InstrClass::CfiInstr : InstrClass::Other;
  }
}

uint32_t encode(const Instruction& i) {
  if (!i.sym.empty())
    throw EncodeError{"unresolved symbol '" + i.sym + "' in " +
                      mnemonic_name(i.m)};
  if (const CfiOpInfo* e = cfi_info(i.m)) {
    uint32_t payload = i.cfi_payload.value_or(0);
    return (payload & 0xfffff) << 12 | (uint32_t(e->subop) << 7) | kOpCfi;
  }
  switch (i.m) {
    case Mnemonic::Lui: return enc_u(i.imm, i.rd, kOpLui);
    case Mnemonic::Auipc: return enc_u(i.imm, i.rd, kOpAuipc);
    case Mnemonic::La: return enc_u(i.imm, i.rd, kOpLa);
    case Mnemonic::Jal: return enc_j(i.imm, i.rd, kOpJal);
    case Mnemonic::Jalr: return enc_i(i.imm, i.rs1, 0, i.rd, kOpJalr);
    case Mnemonic::Beq: return enc_b(i.imm, i.rs2, i.rs1, 0, kOpBranch);
    case Mnemonic::Bne: return enc_b(i.imm, i.rs2, i.rs1, 1, kOpBranch);
    case Mnemonic::Blt: return enc_b(i.imm, i.rs2, i.rs1, 4, kOpBranch);
    case Mnemonic::Bge: return enc_b(i.imm, i.rs2, i.rs1, 5, kOpBranch);
    case Mnemonic::Bltu: return enc_b(i.imm, i.rs2, i.rs1, 6, kOpBranch);
    case Mnemonic::Bgeu: return enc_b(i.imm, i.rs2, i.rs1, 7, kOpBranch);
    case Mnemonic::Lb: return enc_i(i.imm, i.rs1, 0, i.rd, kOpLoad);
    case Mnemonic::Lh: return enc_i(i.imm, i.rs1, 1, i.rd, kOpLoad);
    case Mnemonic::Lw: return enc_i(i.imm, i.rs1, 2, i.rd, kOpLoad);
    case Mnemonic::Lbu: return enc_i(i.imm, i.rs1, 4, i.rd, kOpLoad);
    case Mnemonic::Lhu: return enc_i(i.imm, i.rs1, 5, i.rd, kOpLoad);
    case Mnemonic::Sb: return enc_s(i.imm, i.rs2, i.rs1, 0, kOpStore);
    case Mnemonic::Sh: return enc_s(i.imm, i.rs2, i.rs1, 1, kOpStore);
    case Mnemonic::Sw: return enc_s(i.imm, i.rs2, i.rs1, 2, kOpStore);
    case Mnemonic::Addi: return enc_i(i.imm, i.rs1, 0, i.rd, kOpImm);
    case Mnemonic::Slti: return enc_i(i.imm, i.rs1, 2, i.rd, kOpImm);
    case Mnemonic::Sltiu: return enc_i(i.imm, i.rs1, 3, i.rd, kOpImm);
    case Mnemonic::Xori: return enc_i(i.imm, i.rs1, 4, i.rd, kOpImm);
    case Mnemonic::Ori: return enc_i(i.imm, i.rs1, 6, i.rd, kOpImm);
    case Mnemonic::Andi: return enc_i(i.imm, i.rs1, 7, i.rd, kOpImm);
    case Mnemonic::Slli: return enc_r(0, uint8_t(i.imm), i.rs1, 1, i.rd, kOpImm);
    case Mnemonic::Srli: return enc_r(0, uint8_t(i.imm), i.rs1, 5, i.rd, kOpImm);
    case Mnemonic::Srai:
      return enc_r(0x20, uint8_t(i.imm), i.rs1, 5, i.rd, kOpImm);
    case Mnemonic::Add: return enc_r(0, i.rs2, i.rs1, 0, i.rd, kOpReg);
    case Mnemonic::Sub: return enc_r(0x20, i.rs2, i.rs1, 0, i.rd, kOpReg);
    case Mnemonic::Sll: return enc_r(0, i.rs2, i.rs1, 1, i.rd, kOpReg);
    case Mnemonic::Slt: return enc_r(0, i.rs2, i.rs1, 2, i.rd, kOpReg);
    case Mnemonic::Sltu: return enc_r(0, i.rs2, i.rs1, 3, i.rd, kOpReg);
    case Mnemonic::Xor: return enc_r(0, i.rs2, i.rs1, 4, i.rd, kOpReg);
    case Mnemonic::Srl: return enc_r(0, i.rs2, i.rs1, 5, i.rd, kOpReg);
    case Mnemonic::Sra: return enc_r(0x20, i.rs2, i.rs1, 5, i.rd, kOpReg);
    case Mnemonic::Or: return enc_r(0, i.rs2, i.rs1, 6, i.rd, kOpReg);
    case Mnemonic::And: return enc_r(0, i.rs2, i.rs1, 7, i.rd, kOpReg);
    case Mnemonic::Mul: return enc_r(1, i.rs2, i.rs1, 0, i.rd, kOpReg);
    case Mnemonic::Ecall: return 0x00000073;
    case Mnemonic::Ebreak: return 0x00100073;
    case Mnemonic::Mret: return 0x30200073;
    case Mnemonic::Word: return uint32_t(i.imm);
    default: throw EncodeError{"unencodable mnemonic"};
  }
}

std::optional<Instruction> decode(uint32_t w) {
  Instruction i;
  uint32_t op = bits(w, 6, 0);
  uint8_t rd = uint8_t(bits(w, 11, 7));
  uint32_t f3 = bits(w, 14, 12);
  uint8_t rs1 = uint8_t(bits(w, 19, 15));
  uint8_t rs2 = uint8_t(bits(w, 24, 20));
  uint32_t f7 = bits(w, 31, 25);
  switch (op) {
    case kOpCfi: {
      const CfiOpInfo* e = cfi_info_by_subop(rd);
      if (!e) return std::nullopt;
      i.m = e->m;
      i.cfi_payload = bits(w, 31, 12);
      return i;
    }
    case kOpLui:
    case kOpAuipc:
    case kOpLa:
      i.m = op == kOpLui ? Mnemonic::Lui
                         : (op == kOpAuipc ? Mnemonic::Auipc : Mnemonic::La);
      i.rd = rd;
      i.imm = int32_t(bits(w, 31, 12));
      return i;
    case kOpJal: {
      i.m = Mnemonic::Jal;
      i.rd = rd;
      uint32_t u = (bits(w, 31, 31) << 20) | (bits(w, 19, 12) << 12) |
                   (bits(w, 20, 20) << 11) | (bits(w, 30, 21) << 1);
      i.imm = sext(u, 21);
      return i;
    }
    case kOpJalr:
      if (f3 != 0) return std::nullopt;
      i.m = Mnemonic::Jalr;
      i.rd = rd;
      i.rs1 = rs1;
      i.imm = sext(bits(w, 31, 20), 12);
      return i;
    case kOpBranch: {
      static const Mnemonic bm[8] = {Mnemonic::Beq,  Mnemonic::Bne,
                                     Mnemonic::Beq,  Mnemonic::Beq,
                                     Mnemonic::Blt,  Mnemonic::Bge,
                                     Mnemonic::Bltu, Mnemonic::Bgeu};
      if (f3 == 2 || f3 == 3) return std::nullopt;
      i.m = bm[f3];
      i.rs1 = rs1;
      i.rs2 = rs2;
      uint32_t u = (bits(w, 31, 31) << 12) | (bits(w, 7, 7) << 11) |
                   (bits(w, 30, 25) << 5) | (bits(w, 11, 8) << 1);
      i.imm = sext(u, 13);
      return i;
    }
    case kOpLoad: {
      static const Mnemonic lm[8] = {Mnemonic::Lb, Mnemonic::Lh, Mnemonic::Lw,
                                     Mnemonic::Lb, Mnemonic::Lbu, Mnemonic::Lhu,
                                     Mnemonic::Lb, Mnemonic::Lb};
      if (f3 == 3 || f3 > 5) return std::nullopt;
      i.m = lm[f3];
      i.rd = rd;
      i.rs1 = rs1;
      i.imm = sext(bits(w, 31, 20), 12);
      return i;
    }
    case kOpStore: {
      if (f3 > 2) return std::nullopt;
      static const Mnemonic sm[3] = {Mnemonic::Sb, Mnemonic::Sh, Mnemonic::Sw};
      i.m = sm[f3];
      i.rs1 = rs1;
      i.rs2 = rs2;
      i.imm = sext((bits(w, 31, 25) << 5) | bits(w, 11, 7), 12);
      return i;
    }
    case kOpImm: {
      i.rd = rd;
      i.rs1 = rs1;
      switch (f3) {
        case 0: i.m = Mnemonic::Addi; break;
        case 2: i.m = Mnemonic::Slti; break;
        case 3: i.m = Mnemonic::Sltiu; break;
        case 4: i.m = Mnemonic::Xori; break;
        case 6: i.m = Mnemonic::Ori; break;
        case 7: i.m = Mnemonic::Andi; break;
        case 1:
          if (f7 != 0) return std::nullopt;
          i.m = Mnemonic::Slli;
          i.imm = rs2;
          return i;
        case 5:
          if (f7 == 0) i.m = Mnemonic::Srli;
          else if (f7 == 0x20) i.m = Mnemonic::Srai;
          else return std::nullopt;
          i.imm = rs2;
          return i;
        default: return std::nullopt;
      }
      i.imm = sext(bits(w, 31, 20), 12);
      return i;
    }
    case kOpReg: {
      i.rd = rd;
      i.rs1 = rs1;
      i.rs2 = rs2;
      if (f7 == 1) {
        if (f3 != 0) return std::nullopt;
        i.m = Mnemonic::Mul;
        return i;
      }
      if (f7 != 0 && f7 != 0x20) return std::nullopt;
      switch (f3) {
        case 0: i.m = f7 ? Mnemonic::Sub : Mnemonic::Add; break;
        case 1: if (f7) return std::nullopt; i.m = Mnemonic::Sll; break;
        case 2: if (f7) return std::nullopt; i.m = Mnemonic::Slt; break;
        case 3: if (f7) return std::nullopt; i.m = Mnemonic::Sltu; break;
        case 4: if (f7) return std::nullopt; i.m = Mnemonic::Xor; break;
        case 5: i.m = f7 ? Mnemonic::Sra : Mnemonic::Srl; break;
        case 6: if (f7) return std::nullopt; i.m = Mnemonic::Or; break;
        case 7: if (f7) return std::nullopt; i.m = Mnemonic::And; break;
        default: return std::nullopt;
      }
      return i;
    }
    case kOpSystem:
      if (w == 0x00000073) { i.m = Mnemonic::Ecall; return i; }
      if (w == 0x00100073) { i.m = Mnemonic::Ebreak; return i; }
      if (w == 0x30200073) { i.m = Mnemonic::Mret; return i; }
      return std::nullopt;
    default:
      return std::nullopt;
  }
}

std::optional<uint8_t> parse_reg(const std::string& s) {
  for (uint8_t r = 0; r < 32; ++r)
    if (s == kAbiNames[r]) return r;
  if (s.size() >= 2 && s[0] == 'x') {
    int v = 0;
    for (size_t k = 1; k < s.size(); ++k) {
      if (!std::isdigit(static_cast<unsigned char>(s[k]))) return std::nullopt;
      v = v * 10 + (s[k] - '0');
    }
    if (v < 32) return uint8_t(v);
  }
  if (s == "fp") return 8;
  return std::nullopt;
}

const char* reg_name(uint8_t r) { return kAbiNames[r & 31]; }

namespace {

struct Tok {
  std::vector<std::string> parts;  // mnemonic + operands (commas stripped)
  bool injected = false;
};

bool parse_int(const std::string& s, int64_t* out) {
  if (s.empty()) return false;
  size_t k = 0;
  bool neg = false;
  if (s[0] == '-' || s[0] == '+') {
    neg = s[0] == '-';
    k = 1;
  }
  if (k >= s.size()) return false;
  int64_t v = 0;
  if (s.size() > k + 1 && s[k] == '0' && (s[k + 1] == 'x' || s[k + 1] == 'X')) {
    for (size_t j = k + 2; j < s.size(); ++j) {
      char c = char(std::tolower(static_cast<unsigned char>(s[j])));
      int d;
      if (c >= '0' && c <= '9') d = c - '0';
      else if (c >= 'a' && c <= 'f') d = c - 'a' + 10;
      else return false;
      v = v * 16 + d;
    }
    if (s.size() == k + 2) return false;
  } else {
    for (size_t j = k; j < s.size(); ++j) {
      if (!std::isdigit(static_cast<unsigned char>(s[j]))) return false;
      v = v * 10 + (s[j] - '0');
    }
  }
  *out = neg ? -v : v;
  return true;
}

// Splits "sym+off" / "sym-off" / "sym" / plain integer.
bool parse_sym_or_int(const std::string& s, std::string* sym, int64_t* off) {
  int64_t v;
  if (parse_int(s, &v)) {
    sym->clear();
    *off = v;
    return true;
  }
  size_t pos = s.find_first_of("+-", 1);
  std::string base = pos == std::string::npos ? s : s.substr(0, pos);
  if (base.empty() || (!std::isalpha(static_cast<unsigned char>(base[0])) &&
                       base[0] != '_' && base[0] != '.'))
    return false;
  *sym = base;
  *off = 0;
  if (pos != std::string::npos) {
    int64_t rest;
    if (!parse_int(s.substr(pos), &rest)) return false;
    *off = rest;
  }
  return true;
}

}  // namespace

AsmResult assemble(const std::string& text) {
  AsmUnit u;
  auto fail = [](int line, const std::string& msg) {
    AsmResult r;
    r.error = {line, msg};
    return r;
  };

  struct Pending {
    size_t index;
    int line;
  };
  std::vector<std::string> pending_labels;
  bool in_func = false;
  std::string cur_func;
  size_t func_begin = 0;
  int lineno = 0;

  std::istringstream in(text);
  std::string raw;
  auto push_instr = [&](Instruction ins, bool injected, bool data) {
    for (const auto& l : pending_labels) u.labels[l] = u.instrs.size();
    pending_labels.clear();
    u.instrs.push_back(std::move(ins));
    u.injected.push_back(injected);
    u.is_data.push_back(data);
  };

  while (std::getline(in, raw)) {
    ++lineno;
    bool injected = raw.find("#!cfi") != std::string::npos;
    std::string line = raw;
    if (auto h = line.find('#'); h != std::string::npos) line = line.substr(0, h);
    // Tokenize, honoring "imm(reg)" addressing.
    std::vector<std::string> parts;
    std::string cur;
    for (char c : line) {
      if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
        if (!cur.empty()) parts.push_back(cur), cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) parts.push_back(cur);
    if (parts.empty()) continue;

    // Labels (possibly several on one line).
    while (!parts.empty() && parts[0].back() == ':') {
      std::string lbl = parts[0].substr(0, parts[0].size() - 1);
      if (lbl.empty()) return fail(lineno, "empty label");
      if (u.labels.count(lbl) ||
          std::find(pending_labels.begin(), pending_labels.end(), lbl) !=
              pending_labels.end())
        return fail(lineno, "duplicate label '" + lbl + "'");
      pending_labels.push_back(lbl);
      parts.erase(parts.begin());
    }
    if (parts.empty()) continue;

    const std::string& op = parts[0];
    size_t n = parts.size() - 1;
    auto want = [&](size_t k) { return n == k; };

    if (op == ".func") {
      if (in_func) return fail(lineno, ".func inside .func");
      if (!want(1)) return fail(lineno, ".func needs a name");
      in_func = true;
      cur_func = parts[1];
      func_begin = u.instrs.size();
      for (const auto& f : u.funcs)
        if (f.name == cur_func)
          return fail(lineno, "duplicate function '" + cur_func + "'");
      if (u.labels.count(cur_func))
        return fail(lineno, "function name collides with label");
      pending_labels.push_back(cur_func);
      continue;
    }
    if (op == ".endfunc") {
      if (!in_func) return fail(lineno, ".endfunc outside .func");
      if (u.instrs.size() == func_begin)
        return fail(lineno, "empty function '" + cur_func + "'");
      u.funcs.push_back({cur_func, func_begin, u.instrs.size()});
      in_func = false;
      if (!pending_labels.empty())
        return fail(lineno, "label at end of function body");
      continue;
    }
    if (!in_func) return fail(lineno, "instruction outside .func");

    if (op == ".word") {
      if (!want(1)) return fail(lineno, ".word needs one value");
      Instruction ins;
      ins.m = Mnemonic::Word;
      std::string sym;
      int64_t v;
      if (!parse_sym_or_int(parts[1], &sym, &v))
        return fail(lineno, "bad .word operand");
      ins.sym = sym;
      if (sym.empty()) ins.imm = int32_t(v);
      else ins.sym_addend = int32_t(v);
      push_instr(ins, injected, true);
      continue;
    }

    auto reg = [&](size_t k) -> std::optional<uint8_t> {
      return parse_reg(parts[k]);
    };
    auto imm_or_sym = [&](size_t k, Instruction* ins) -> bool {
      std::string sym;
      int64_t v;
      if (!parse_sym_or_int(parts[k], &sym, &v)) return false;
      if (sym.empty()) {
        ins->imm = int32_t(v);
      } else {
        ins->sym = sym;
        ins->sym_addend = int32_t(v);
      }
      return true;
    };

    Instruction ins;

    // Pseudo-instructions.
    if (op == "nop") {
      if (!want(0)) return fail(lineno, "nop takes no operands");
      ins.m = Mnemonic::Addi;
      push_instr(ins, injected, false);
      continue;
    }
    if (op == "ret") {
      if (!want(0)) return fail(lineno, "ret takes no operands");
      ins.m = Mnemonic::Jalr;
      ins.rd = kRegZero;
      ins.rs1 = kRegRa;
      push_instr(ins, injected, false);
      continue;
    }
    if (op == "mv") {
      if (!want(2)) return fail(lineno, "mv rd, rs");
      auto rd = reg(1), rs = reg(2);
      if (!rd || !rs) return fail(lineno, "bad register");
      ins.m = Mnemonic::Addi;
      ins.rd = *rd;
      ins.rs1 = *rs;
      push_instr(ins, injected, false);
      continue;
    }
    if (op == "li") {
      if (!want(2)) return fail(lineno, "li rd, imm");
      auto rd = reg(1);
      int64_t v;
      if (!rd) return fail(lineno, "bad register");
      if (!parse_int(parts[2], &v)) return fail(lineno, "li needs a literal");
      if (v >= -2048 && v <= 2047) {
        ins.m = Mnemonic::Addi;
        ins.rd = *rd;
        ins.imm = int32_t(v);
        push_instr(ins, injected, false);
      } else {
        uint32_t uv = uint32_t(v);
        int32_t lo = sext(uv & 0xfff, 12);
        uint32_t hi = (uv - uint32_t(lo)) >> 12;
        Instruction l{};
        l.m = Mnemonic::Lui;
        l.rd = *rd;
        l.imm = int32_t(hi & 0xfffff);
        push_instr(l, injected, false);
        ins.m = Mnemonic::Addi;
        ins.rd = *rd;
        ins.rs1 = *rd;
        ins.imm = lo;
        push_instr(ins, injected, false);
      }
      continue;
    }
    if (op == "j") {
      if (!want(1)) return fail(lineno, "j label");
      ins.m = Mnemonic::Jal;
      ins.rd = kRegZero;
      if (!imm_or_sym(1, &ins)) return fail(lineno, "bad jump target");
      push_instr(ins, injected, false);
      continue;
    }
    if (op == "jr") {
      if (!want(1)) return fail(lineno, "jr rs");
      auto rs = reg(1);
      if (!rs) return fail(lineno, "bad register");
      ins.m = Mnemonic::Jalr;
      ins.rd = kRegZero;
      ins.rs1 = *rs;
      push_instr(ins, injected, false);
      continue;
    }
    if (op == "call") {
      if (!want(1)) return fail(lineno, "call target");
      if (auto rs = reg(1)) {
        ins.m = Mnemonic::Jalr;
        ins.rd = kRegRa;
        ins.rs1 = *rs;
      } else {
        ins.m = Mnemonic::Jal;
        ins.rd = kRegRa;
        if (!imm_or_sym(1, &ins)) return fail(lineno, "bad call target");
      }
      push_instr(ins, injected, false);
      continue;
    }

    Mnemonic m;
    bool found = false;
    for (const auto& e : kNames)
      if (op == e.name) {
        m = e.m;
        found = true;
        break;
      }
    if (!found) return fail(lineno, "unknown mnemonic '" + op + "'");
    ins.m = m;

    if (is_cfi_family(m)) {
      if (cfi_takes_operand(m)) {
        if (!want(1)) return fail(lineno, std::string(mnemonic_name(m)) +
                                              " needs a payload");
        int64_t v;
        if (!parse_int(parts[1], &v) || v < 0 || v > 0xfffff)
          return fail(lineno, "payload out of range");
        ins.cfi_payload = uint32_t(v);
      } else {
        if (!want(0)) return fail(lineno, std::string(mnemonic_name(m)) +
                                              " takes no operands");
        ins.cfi_payload = 0;
      }
      push_instr(ins, injected, false);
      continue;
    }

    switch (m) {
      case Mnemonic::Lui:
      case Mnemonic::Auipc: {
        if (!want(2)) return fail(lineno, "rd, imm20 expected");
        auto rd = reg(1);
        int64_t v;
        if (!rd || !parse_int(parts[2], &v) || v < 0 || v > 0xfffff)
          return fail(lineno, "bad operands");
        ins.rd = *rd;
        ins.imm = int32_t(v);
        break;
      }
      case Mnemonic::La: {
        if (!want(2)) return fail(lineno, "la rd, sym");
        auto rd = reg(1);
        if (!rd) return fail(lineno, "bad register");
        ins.rd = *rd;
        if (!imm_or_sym(2, &ins)) return fail(lineno, "bad la operand");
        break;
      }
      case Mnemonic::Jal: {
        if (!want(2)) return fail(lineno, "jal rd, target");
        auto rd = reg(1);
        if (!rd) return fail(lineno, "bad register");
        ins.rd = *rd;
        if (!imm_or_sym(2, &ins)) return fail(lineno, "bad target");
        break;
      }
      case Mnemonic::Jalr: {
        if (!want(3)) return fail(lineno, "jalr rd, rs1, imm");
        auto rd = reg(1), rs1 = reg(2);
        int64_t v;
        if (!rd || !rs1 || !parse_int(parts[3], &v))
          return fail(lineno, "bad operands");
        ins.rd = *rd;
        ins.rs1 = *rs1;
        ins.imm = int32_t(v);
        break;
      }
      case Mnemonic::Beq:
      case Mnemonic::Bne:
      case Mnemonic::Blt:
      case Mnemonic::Bge:
      case Mnemonic::Bltu:
      case Mnemonic::Bgeu: {
        if (!want(3)) return fail(lineno, "rs1, rs2, target expected");
        auto rs1 = reg(1), rs2 = reg(2);
        if (!rs1 || !rs2) return fail(lineno, "bad register");
        ins.rs1 = *rs1;
        ins.rs2 = *rs2;
        if (!imm_or_sym(3, &ins)) return fail(lineno, "bad branch target");
        break;
      }
      case Mnemonic::Lb:
      case Mnemonic::Lh:
      case Mnemonic::Lw:
      case Mnemonic::Lbu:
      case Mnemonic::Lhu:
      case Mnemonic::Sb:
      case Mnemonic::Sh:
      case Mnemonic::Sw: {
        if (!want(2)) return fail(lineno, "reg, imm(reg) expected");
        auto r1 = reg(1);
        if (!r1) return fail(lineno, "bad register");
        const std::string& a = parts[2];
        auto lp = a.find('(');
        auto rp = a.find(')');
        if (lp == std::string::npos || rp == std::string::npos || rp < lp)
          return fail(lineno, "expected imm(reg)");
        int64_t off = 0;
        std::string offs = a.substr(0, lp);
        if (!offs.empty() && !parse_int(offs, &off))
          return fail(lineno, "bad offset");
        auto rb = parse_reg(a.substr(lp + 1, rp - lp - 1));
        if (!rb) return fail(lineno, "bad base register");
        if (off < -2048 || off > 2047) return fail(lineno, "offset out of range");
        bool store = m == Mnemonic::Sb || m == Mnemonic::Sh || m == Mnemonic::Sw;
        if (store) {
          ins.rs2 = *r1;
        } else {
          ins.rd = *r1;
        }
        ins.rs1 = *rb;
        ins.imm = int32_t(off);
        break;
      }
      case Mnemonic::Slli:
      case Mnemonic::Srli:
      case Mnemonic::Srai: {
        if (!want(3)) return fail(lineno, "rd, rs1, shamt expected");
        auto rd = reg(1), rs1 = reg(2);
        int64_t v;
        if (!rd || !rs1 || !parse_int(parts[3], &v) || v < 0 || v > 31)
          return fail(lineno, "bad operands");
        ins.rd = *rd;
        ins.rs1 = *rs1;
        ins.imm = int32_t(v);
        break;
      }
      case Mnemonic::Addi:
      case Mnemonic::Slti:
      case Mnemonic::Sltiu:
      case Mnemonic::Xori:
      case Mnemonic::Ori:
      case Mnemonic::Andi: {
        if (!want(3)) return fail(lineno, "rd, rs1, imm expected");
        auto rd = reg(1), rs1 = reg(2);
        int64_t v;
        if (!rd || !rs1 || !parse_int(parts[3], &v) || v < -2048 || v > 2047)
          return fail(lineno, "bad operands");
        ins.rd = *rd;
        ins.rs1 = *rs1;
        ins.imm = int32_t(v);
        break;
      }
      case Mnemonic::Add:
      case Mnemonic::Sub:
      case Mnemonic::Sll:
      case Mnemonic::Slt:
      case Mnemonic::Sltu:
      case Mnemonic::Xor:
      case Mnemonic::Srl:
      case Mnemonic::Sra:
      case Mnemonic::Or:
      case Mnemonic::And:
      case Mnemonic::Mul: {
        if (!want(3)) return fail(lineno, "rd, rs1, rs2 expected");
        auto rd = reg(1), rs1 = reg(2), rs2 = reg(3);
        if (!rd || !rs1 || !rs2) return fail(lineno, "bad register");
        ins.rd = *rd;
        ins.rs1 = *rs1;
        ins.rs2 = *rs2;
        break;
      }
      case Mnemonic::Ecall:
      case Mnemonic::Ebreak:
      case Mnemonic::Mret:
        if (!want(0)) return fail(lineno, "no operands expected");
        break;
      default:
        return fail(lineno, "unsupported mnemonic");
    }
    push_instr(ins, injected, false);
  }

  if (in_func) return fail(lineno, "missing .endfunc");
  if (!pending_labels.empty()) return fail(lineno, "trailing label");
  if (u.instrs.empty()) return fail(lineno, "no instructions");

  // Validate symbol references.
  std::map<std::string, size_t> all = u.labels;
  for (size_t k = 0; k < u.instrs.size(); ++k) {
    const std::string& s = u.instrs[k].sym;
    if (s.empty() || s.rfind("__", 0) == 0) continue;  // builtins resolve later
    if (!all.count(s)) {
      AsmResult r;
      r.error = {0, "undefined symbol '" + s + "'"};
      return r;
    }
  }

  AsmResult r;
  r.unit = std::move(u);
  return r;
}

std::string print_instr(const Instruction& i) {
  std::ostringstream o;
  auto sym_or_imm = [&](int32_t imm) {
    if (!i.sym.empty()) {
      o << i.sym;
      if (i.sym_addend > 0) o << "+" << i.sym_addend;
      else if (i.sym_addend < 0) o << i.sym_addend;
    } else {
      o << imm;
    }
  };
  if (i.m == Mnemonic::Word) {
    o << ".word ";
    sym_or_imm(i.imm);
    return o.str();
  }
  o << mnemonic_name(i.m);
  if (is_cfi_family(i.m)) {
    if (cfi_takes_operand(i.m)) {
      o << " 0x" << std::hex << i.cfi_payload.value_or(0);
    }
    return o.str();
  }
  switch (i.m) {
    case Mnemonic::Lui:
    case Mnemonic::Auipc:
      o << " " << reg_name(i.rd) << ", " << i.imm;
      break;
    case Mnemonic::La:
      o << " " << reg_name(i.rd) << ", ";
      sym_or_imm(i.imm);
      break;
    case Mnemonic::Jal:
      o << " " << reg_name(i.rd) << ", ";
      sym_or_imm(i.imm);
      break;
    case Mnemonic::Jalr:
      o << " " << reg_name(i.rd) << ", " << reg_name(i.rs1) << ", " << i.imm;
      break;
    case Mnemonic::Beq:
    case Mnemonic::Bne:
    case Mnemonic::Blt:
    case Mnemonic::Bge:
    case Mnemonic::Bltu:
    case Mnemonic::Bgeu:
      o << " " << reg_name(i.rs1) << ", " << reg_name(i.rs2) << ", ";
      sym_or_imm(i.imm);
      break;
    case Mnemonic::Lb:
    case Mnemonic::Lh:
    case Mnemonic::Lw:
    case Mnemonic::Lbu:
    case Mnemonic::Lhu:
      o << " " << reg_name(i.rd) << ", " << i.imm << "(" << reg_name(i.rs1)
        << ")";
      break;
    case Mnemonic::Sb:
    case Mnemonic::Sh:
    case Mnemonic::Sw:
      o << " " << reg_name(i.rs2) << ", " << i.imm << "(" << reg_name(i.rs1)
        << ")";
      break;
    case Mnemonic::Ecall:
    case Mnemonic::Ebreak:
    case Mnemonic::Mret:
      break;
    case Mnemonic::Addi:
    case Mnemonic::Slti:
    case Mnemonic::Sltiu:
    case Mnemonic::Xori:
    case Mnemonic::Ori:
    case Mnemonic::Andi:
    case Mnemonic::Slli:
    case Mnemonic::Srli:
    case Mnemonic::Srai:
      o << " " << reg_name(i.rd) << ", " << reg_name(i.rs1) << ", " << i.imm;
      break;
    default:
      o << " " << reg_name(i.rd) << ", " << reg_name(i.rs1) << ", "
        << reg_name(i.rs2);
      break;
  }
  return o.str();
}

}  // namespace cfisim
