#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace cfisim {

// Compact RV32-style instruction set: the integer subset needed by the
// benchmark corpus plus one reserved major opcode (custom-0, 0x0b) that
// carries the whole CFI instruction family with a 20-bit payload in the
// upper-immediate field, and a base-relative LA on custom-1 (0x2b).
enum class Mnemonic : uint8_t {
  Lui, Auipc,
  Jal, Jalr,
  Beq, Bne, Blt, Bge, Bltu, Bgeu,
  Lb, Lh, Lw, Lbu, Lhu,
  Sb, Sh, Sw,
  Addi, Slti, Sltiu, Xori, Ori, Andi, Slli, Srli, Srai,
  Add, Sub, Sll, Slt, Sltu, Xor, Srl, Sra, Or, And,
  Mul,
  Ecall, Ebreak, Mret,
  La,
  // CFI family (custom-0). Payload semantics depend on the scheme.
  CfiCall, CfiJump, CfiCheck, CfiSetjmp, CfiLongjmp,
  CfiEnable, CfiDisable, CfiReset,
  Endbranch,
  FixerPush, FixerPop, FixerChk,
  HafixAct, HafixRec, HafixDel, HafixChk,
  HcfiPush, HcfiPop, HcfiSetLabel, HcfiCheckLabel,
  HecfiPush, HecfiPop, HecfiCheck,
  // Literal data word emitted with .word; never produced by decode().
  Word,
};

enum class InstrClass : uint8_t {
  DirectCall,
  IndirectCall,
  Return,
  IndirectJump,
  CondBranch,
  CfiInstr,
  Other,
};

struct Instruction {
  Mnemonic m = Mnemonic::Addi;
  uint8_t rd = 0;
  uint8_t rs1 = 0;
  uint8_t rs2 = 0;
  int32_t imm = 0;
  // Present iff the mnemonic belongs to the CFI family.
  std::optional<uint32_t> cfi_payload;
  // Assembler-level symbolic operand; resolved during layout. Encoding a
  // still-symbolic instruction is an error.
  std::string sym;
  int32_t sym_addend = 0;

  bool operator==(const Instruction& o) const {
    return m == o.m && rd == o.rd && rs1 == o.rs1 && rs2 == o.rs2 &&
           imm == o.imm && cfi_payload == o.cfi_payload && sym == o.sym &&
           sym_addend == o.sym_addend;
  }
};

constexpr uint8_t kRegZero = 0;
constexpr uint8_t kRegRa = 1;
constexpr uint8_t kRegSp = 2;

bool is_cfi_family(Mnemonic m);
// True for CFI mnemonics whose assembly form takes a payload operand.
bool cfi_takes_operand(Mnemonic m);
const char* mnemonic_name(Mnemonic m);

InstrClass classify(const Instruction& i);

struct EncodeError {
  std::string msg;
};

// Encodes a resolved instruction to its 32-bit word. Word entries encode to
// their literal value.
uint32_t encode(const Instruction& i);
// Returns nullopt when the word does not decode to a known instruction.
std::optional<Instruction> decode(uint32_t word);

// Register parsing/printing (x-names and ABI names are both accepted;
// printing uses ABI names).
std::optional<uint8_t> parse_reg(const std::string& s);
const char* reg_name(uint8_t r);

struct AsmError {
  int line = 0;
  std::string msg;
};

struct AsmFunction {
  std::string name;
  size_t begin = 0;  // index into instrs
  size_t end = 0;    // one past last
};

// Flat assembly unit: instructions in order, function extents, and a label
// table mapping every label to its instruction index (byte offset = 4 * idx).
struct AsmUnit {
  std::vector<Instruction> instrs;
  std::vector<bool> injected;  // parallel to instrs, set by "#!cfi" markers
  std::vector<bool> is_data;   // .word entries
  std::vector<AsmFunction> funcs;
  std::map<std::string, size_t> labels;
};

// Two-pass assembler for the line-oriented grammar (see docs/assembly.md).
// Labels resolve to instruction offsets; references to labels stay symbolic
// inside the returned instructions so that later passes can relocate them.
// On failure returns an AsmError with a 1-based line number.
struct AsmResult {
  std::optional<AsmUnit> unit;
  AsmError error;
  bool ok() const { return unit.has_value(); }
};
AsmResult assemble(const std::string& text);

// Renders one instruction in assembly syntax (symbolic operands preserved).
std::string print_instr(const Instruction& i);

}  // namespace cfisim
