#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "cfisim/isa.hpp"

using namespace cfisim;

namespace {

Instruction ins(Mnemonic m, uint8_t rd = 0, uint8_t rs1 = 0, uint8_t rs2 = 0,
                int32_t imm = 0) {
  Instruction i;
  i.m = m;
  i.rd = rd;
  i.rs1 = rs1;
  i.rs2 = rs2;
  i.imm = imm;
  if (is_cfi_family(m)) i.cfi_payload = uint32_t(imm), i.imm = 0;
  return i;
}

}  // namespace

// Reference encodings frozen from the standard RV32I/M listings. These pin
// the encoder against an external oracle rather than against itself.
TEST_CASE("frozen rv32 encodings") {
  CHECK(encode(ins(Mnemonic::Addi, 1, 0, 0, 5)) == 0x00500093u);
  CHECK(encode(ins(Mnemonic::Jalr, 0, 1, 0, 0)) == 0x00008067u);  // ret
  CHECK(encode(ins(Mnemonic::Jal, 1, 0, 0, 8)) == 0x008000efu);
  CHECK(encode(ins(Mnemonic::Beq, 0, 1, 2, 8)) == 0x00208463u);
  CHECK(encode(ins(Mnemonic::Bne, 0, 6, 0, -4)) == 0xfe031ee3u);
  CHECK(encode(ins(Mnemonic::Lw, 5, 2, 0, 4)) == 0x00412283u);
  CHECK(encode(ins(Mnemonic::Sw, 0, 2, 5, 4)) == 0x00512223u);
  CHECK(encode(ins(Mnemonic::Lui, 3, 0, 0, 0x12345)) == 0x123451b7u);
  CHECK(encode(ins(Mnemonic::Mul, 5, 6, 7)) == 0x027302b3u);
  CHECK(encode(ins(Mnemonic::Sub, 1, 2, 3)) == 0x403100b3u);
  CHECK(encode(ins(Mnemonic::Sra, 1, 2, 3)) == 0x403150b3u);
  CHECK(encode(ins(Mnemonic::Srai, 1, 1, 0, 3)) == 0x4030d093u);
  CHECK(encode(ins(Mnemonic::Andi, 10, 10, 0, 255)) == 0x0ff57513u);
  CHECK(encode(ins(Mnemonic::Jalr, 1, 5, 0, 0)) == 0x000280e7u);
  CHECK(encode(ins(Mnemonic::Ecall)) == 0x00000073u);
  CHECK(encode(ins(Mnemonic::Ebreak)) == 0x00100073u);
  CHECK(encode(ins(Mnemonic::Mret)) == 0x30200073u);
}

// The CFI family occupies custom-0 (0x0b) with the payload in the 20-bit
// upper-immediate field and the subop where rd normally sits.
TEST_CASE("frozen cfi family encodings") {
  CHECK(encode(ins(Mnemonic::CfiCall, 0, 0, 0, 0x42)) == 0x0004200bu);
  CHECK(encode(ins(Mnemonic::CfiCheck, 0, 0, 0, 0)) == 0x0000010bu);
  CHECK(encode(ins(Mnemonic::Endbranch)) == 0x0000040bu);
  CHECK(encode(ins(Mnemonic::HcfiSetLabel, 0, 0, 0, 7)) == 0x0000790bu);
  Instruction la = ins(Mnemonic::La, 5, 0, 0, 0x20000);
  CHECK(encode(la) == 0x200002abu);
}

TEST_CASE("decode of known words") {
  auto d = decode(0x00008067u);
  REQUIRE(d.has_value());
  CHECK(d->m == Mnemonic::Jalr);
  CHECK(d->rd == 0);
  CHECK(d->rs1 == kRegRa);
  CHECK(d->imm == 0);
  CHECK(classify(*d) == InstrClass::Return);

  d = decode(0x0004200bu);
  REQUIRE(d.has_value());
  CHECK(d->m == Mnemonic::CfiCall);
  REQUIRE(d->cfi_payload.has_value());
  CHECK(*d->cfi_payload == 0x42u);

  CHECK(!decode(0xffffffffu).has_value());
  CHECK(!decode(0x00000000u).has_value());
}

TEST_CASE("classification table") {
  CHECK(classify(ins(Mnemonic::Jal, 1, 0, 0, 16)) == InstrClass::DirectCall);
  CHECK(classify(ins(Mnemonic::Jal, 0, 0, 0, 16)) == InstrClass::Other);
  CHECK(classify(ins(Mnemonic::Jalr, 1, 5)) == InstrClass::IndirectCall);
  CHECK(classify(ins(Mnemonic::Jalr, 0, 1)) == InstrClass::Return);
  CHECK(classify(ins(Mnemonic::Jalr, 0, 6)) == InstrClass::IndirectJump);
  CHECK(classify(ins(Mnemonic::Beq, 0, 1, 2, 8)) == InstrClass::CondBranch);
  CHECK(classify(ins(Mnemonic::CfiCall, 0, 0, 0, 1)) == InstrClass::CfiInstr);
  CHECK(classify(ins(Mnemonic::Endbranch)) == InstrClass::CfiInstr);
  CHECK(classify(ins(Mnemonic::Addi, 1, 1, 0, 1)) == InstrClass::Other);
  CHECK(classify(ins(Mnemonic::Mret)) == InstrClass::Other);
}

TEST_CASE("cfi payload present iff cfi family") {
  for (int mi = 0; mi <= int(Mnemonic::HecfiCheck); ++mi) {
    Mnemonic m = Mnemonic(mi);
    Instruction i = ins(m, 1, 1, 1, 4);
    if (is_cfi_family(m)) {
      CHECK(i.cfi_payload.has_value());
    } else {
      CHECK(!i.cfi_payload.has_value());
    }
  }
}

// Property: decode(encode(i)) == i over randomly generated valid
// instructions, 100000 cases with a fixed seed.
TEST_CASE("encode/decode round trip") {
  std::mt19937 rng(0xc0ffee);
  auto reg = [&] { return uint8_t(rng() % 32); };
  auto pick = [&](int n) { return int(rng() % uint32_t(n)); };

  static const Mnemonic kAll[] = {
      Mnemonic::Lui, Mnemonic::Auipc, Mnemonic::Jal, Mnemonic::Jalr,
      Mnemonic::Beq, Mnemonic::Bne, Mnemonic::Blt, Mnemonic::Bge,
      Mnemonic::Bltu, Mnemonic::Bgeu, Mnemonic::Lb, Mnemonic::Lh,
      Mnemonic::Lw, Mnemonic::Lbu, Mnemonic::Lhu, Mnemonic::Sb, Mnemonic::Sh,
      Mnemonic::Sw, Mnemonic::Addi, Mnemonic::Slti, Mnemonic::Sltiu,
      Mnemonic::Xori, Mnemonic::Ori, Mnemonic::Andi, Mnemonic::Slli,
      Mnemonic::Srli, Mnemonic::Srai, Mnemonic::Add, Mnemonic::Sub,
      Mnemonic::Sll, Mnemonic::Slt, Mnemonic::Sltu, Mnemonic::Xor,
      Mnemonic::Srl, Mnemonic::Sra, Mnemonic::Or, Mnemonic::And,
      Mnemonic::Mul, Mnemonic::Ecall, Mnemonic::Ebreak, Mnemonic::Mret,
      Mnemonic::La, Mnemonic::CfiCall, Mnemonic::CfiJump, Mnemonic::CfiCheck,
      Mnemonic::CfiSetjmp, Mnemonic::CfiLongjmp, Mnemonic::CfiEnable,
      Mnemonic::CfiDisable, Mnemonic::CfiReset, Mnemonic::Endbranch,
      Mnemonic::FixerPush, Mnemonic::FixerPop, Mnemonic::FixerChk,
      Mnemonic::HafixAct, Mnemonic::HafixRec, Mnemonic::HafixDel,
      Mnemonic::HafixChk, Mnemonic::HcfiPush, Mnemonic::HcfiPop,
      Mnemonic::HcfiSetLabel, Mnemonic::HcfiCheckLabel, Mnemonic::HecfiPush,
      Mnemonic::HecfiPop, Mnemonic::HecfiCheck};

  int failures = 0;
  for (int n = 0; n < 100000; ++n) {
    Mnemonic m = kAll[pick(int(sizeof(kAll) / sizeof(kAll[0])))];
    Instruction i;
    i.m = m;
    if (is_cfi_family(m)) {
      i.cfi_payload = rng() & 0xfffff;
    } else {
      switch (m) {
        case Mnemonic::Lui:
        case Mnemonic::Auipc:
        case Mnemonic::La:
          i.rd = reg();
          i.imm = int32_t(rng() & 0xfffff);
          break;
        case Mnemonic::Jal:
          i.rd = reg();
          i.imm = (int32_t(rng() % 0x100000) - 0x80000) & ~1;
          break;
        case Mnemonic::Jalr:
          i.rd = reg();
          i.rs1 = reg();
          i.imm = int32_t(rng() % 4096) - 2048;
          break;
        case Mnemonic::Beq:
        case Mnemonic::Bne:
        case Mnemonic::Blt:
        case Mnemonic::Bge:
        case Mnemonic::Bltu:
        case Mnemonic::Bgeu:
          i.rs1 = reg();
          i.rs2 = reg();
          i.imm = (int32_t(rng() % 8192) - 4096) & ~1;
          break;
        case Mnemonic::Lb:
        case Mnemonic::Lh:
        case Mnemonic::Lw:
        case Mnemonic::Lbu:
        case Mnemonic::Lhu:
          i.rd = reg();
          i.rs1 = reg();
          i.imm = int32_t(rng() % 4096) - 2048;
          break;
        case Mnemonic::Sb:
        case Mnemonic::Sh:
        case Mnemonic::Sw:
          i.rs1 = reg();
          i.rs2 = reg();
          i.imm = int32_t(rng() % 4096) - 2048;
          break;
        case Mnemonic::Slli:
        case Mnemonic::Srli:
        case Mnemonic::Srai:
          i.rd = reg();
          i.rs1 = reg();
          i.imm = int32_t(rng() % 32);
          break;
        case Mnemonic::Addi:
        case Mnemonic::Slti:
        case Mnemonic::Sltiu:
        case Mnemonic::Xori:
        case Mnemonic::Ori:
        case Mnemonic::Andi:
          i.rd = reg();
          i.rs1 = reg();
          i.imm = int32_t(rng() % 4096) - 2048;
          break;
        case Mnemonic::Ecall:
        case Mnemonic::Ebreak:
        case Mnemonic::Mret:
          break;
        default:
          i.rd = reg();
          i.rs1 = reg();
          i.rs2 = reg();
          break;
      }
    }
    auto back = decode(encode(i));
    if (!back.has_value() || !(*back == i)) ++failures;
  }
  CHECK(failures == 0);
}

TEST_CASE("assemble basics") {
  auto r = assemble(
      ".func main\n"
      "main_body:\n"
      "  addi a0, zero, 1\n"
      "  ret\n"
      ".endfunc\n");
  REQUIRE(r.ok());
  const AsmUnit& u = *r.unit;
  REQUIRE(u.instrs.size() == 2);
  CHECK(u.instrs[0].m == Mnemonic::Addi);
  CHECK(u.instrs[0].rd == 10);
  CHECK(u.instrs[0].imm == 1);
  CHECK(u.instrs[1].m == Mnemonic::Jalr);
  CHECK(classify(u.instrs[1]) == InstrClass::Return);
  REQUIRE(u.funcs.size() == 1);
  CHECK(u.funcs[0].name == "main");
  CHECK(u.labels.at("main") == 0);
  CHECK(u.labels.at("main_body") == 0);
}

TEST_CASE("assemble ret and cfi_call examples") {
  auto r = assemble(".func f\n ret\n.endfunc\n");
  REQUIRE(r.ok());
  Instruction i = r.unit->instrs[0];
  CHECK(i.m == Mnemonic::Jalr);
  CHECK(i.rd == 0);
  CHECK(i.rs1 == kRegRa);
  CHECK(i.imm == 0);

  r = assemble(".func f\n cfi_call 0x42\n ecall\n.endfunc\n");
  REQUIRE(r.ok());
  i = r.unit->instrs[0];
  CHECK(i.m == Mnemonic::CfiCall);
  CHECK(i.cfi_payload == uint32_t(0x42));
}

TEST_CASE("assemble pseudo instructions") {
  auto r = assemble(
      ".func main\n"
      "  li t0, 10000\n"
      "  li t1, 12\n"
      "  mv a0, t0\n"
      "  nop\n"
      "  call work\n"
      "  j out\n"
      "out:\n"
      "  jr t2\n"
      ".endfunc\n"
      ".func work\n"
      "  call t0\n"
      "  ret\n"
      ".endfunc\n");
  REQUIRE(r.ok());
  const auto& v = r.unit->instrs;
  CHECK(v[0].m == Mnemonic::Lui);   // li 10000 expands
  CHECK(v[1].m == Mnemonic::Addi);
  CHECK(v[2].m == Mnemonic::Addi);  // li 12 fits
  CHECK(v[2].imm == 12);
  CHECK(v[3].m == Mnemonic::Addi);  // mv
  CHECK(v[3].rs1 == 5);
  CHECK(v[4].m == Mnemonic::Addi);  // nop
  CHECK(classify(v[5]) == InstrClass::DirectCall);
  CHECK(v[5].sym == "work");
  CHECK(classify(v[6]) == InstrClass::Other);  // j
  CHECK(classify(v[7]) == InstrClass::IndirectJump);
  CHECK(classify(v[8]) == InstrClass::IndirectCall);  // call t0
  // li expansion round-trips the value: lui+addi with sign-carry.
  uint32_t hi = uint32_t(v[0].imm) << 12;
  int32_t lo = v[1].imm;
  CHECK(int32_t(hi) + lo == 10000);
}

TEST_CASE("assemble errors carry line numbers") {
  auto r = assemble(".func f\n addi a0 zero\n.endfunc\n");
  CHECK(!r.ok());
  CHECK(r.error.line == 2);

  r = assemble(".func f\nx: ret\nx: ret\n.endfunc\n");
  CHECK(!r.ok());
  CHECK(r.error.line == 3);

  r = assemble("");
  CHECK(!r.ok());

  r = assemble(".func f\n ret\n");
  CHECK(!r.ok());  // missing .endfunc

  r = assemble(".func f\n j nowhere\n.endfunc\n");
  CHECK(!r.ok());  // undefined symbol

  r = assemble(" addi a0, zero, 1\n");
  CHECK(!r.ok());  // instruction outside .func
}

TEST_CASE("word entries and injected markers") {
  auto r = assemble(
      ".func t\n"
      "  ret\n"
      "tab:\n"
      "  .word 0x1234\n"
      "  .word t\n"
      ".endfunc\n");
  REQUIRE(r.ok());
  const AsmUnit& u = *r.unit;
  CHECK(u.is_data[1]);
  CHECK(u.instrs[1].imm == 0x1234);
  CHECK(u.instrs[2].sym == "t");
  CHECK(u.labels.at("tab") == 1);

  r = assemble(".func t\n endbranch #!cfi\n ret\n.endfunc\n");
  REQUIRE(r.ok());
  CHECK(r.unit->injected[0]);
  CHECK(!r.unit->injected[1]);
}

TEST_CASE("print round trips through assemble") {
  auto r = assemble(
      ".func f\n"
      "  lw a0, 8(sp)\n"
      "  beq a0, zero, done\n"
      "  cfi_check 0x10\n"
      "done:\n"
      "  ret\n"
      ".endfunc\n");
  REQUIRE(r.ok());
  for (const auto& i : r.unit->instrs) {
    std::string text = ".func f\n " + print_instr(i) + "\n done: ret\n.endfunc\n";
    auto rr = assemble(text);
    REQUIRE(rr.ok());
    CHECK(rr.unit->instrs[0] == i);
  }
}
