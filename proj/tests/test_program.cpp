#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cfisim/program.hpp"

using namespace cfisim;

namespace {

const char* kSmall =
    ".func main\n"
    "  la sp, __mem_top\n"
    "  call work\n"
    "  ecall\n"
    ".endfunc\n"
    ".func work\n"
    "  addi a0, a0, 1\n"
    "  ret\n"
    ".endfunc\n";

std::string dispatch_asm() {
  std::string s =
      ".func main\n"
      "  la sp, __mem_top\n"
      "  la s3, f0\n"
      "  call s3\n"
      "  ecall\n"
      ".endfunc\n";
  for (int k = 0; k < 8; ++k) {
    s += ".func f" + std::to_string(k) + "\n  addi a0, a0, " +
         std::to_string(k) + "\n  ret\n.endfunc\n";
  }
  return s;
}

}  // namespace

TEST_CASE("load splits functions and labels") {
  auto r = load_program(kSmall, "");
  REQUIRE(r.ok());
  const Program& p = *r.program;
  REQUIRE(p.funcs.size() == 2);
  CHECK(p.funcs[0].name == "main");
  CHECK(p.funcs[0].instrs.size() == 3);
  CHECK(p.funcs[1].name == "work");
  CHECK(code_size(p) == 20);
}

TEST_CASE("terminator validation") {
  auto r = load_program(".func f\n  addi a0, a0, 1\n.endfunc\n", "");
  CHECK(!r.ok());
  CHECK(r.error.find("does not end") != std::string::npos);

  // mret, ecall, j, jr and ret all terminate.
  CHECK(load_program(".func f\n mret\n.endfunc\n", "").ok());
  CHECK(load_program(".func f\n ecall\n.endfunc\n", "").ok());
  CHECK(load_program(".func f\nx: j x\n.endfunc\n", "").ok());
  CHECK(load_program(".func f\n jr t0\n.endfunc\n", "").ok());
}

TEST_CASE("layout resolves symbols with frozen encodings") {
  auto r = load_program(kSmall, "");
  REQUIRE(r.ok());
  auto lr = layout(*r.program);
  REQUIRE(lr.ok());
  const CodeImage& img = *lr.image;
  CHECK(img.base == 0x1c000000u);
  CHECK(img.entry == 0x1c000000u);
  CHECK(img.symbols.at("main") == 0x1c000000u);
  CHECK(img.symbols.at("work") == 0x1c00000cu);
  CHECK(img.symbols.at("__heap") == 0x1c000014u);
  CHECK(img.symbols.at("__mem_top") == 0x1c080000u);
  REQUIRE(img.words.size() == 5);
  CHECK(img.words[0] == 0x2000012bu);  // la sp, __mem_top
  CHECK(img.words[1] == 0x008000efu);  // jal ra, +8
  CHECK(img.words[2] == 0x00000073u);  // ecall
  CHECK(!img.irq_handler.has_value());
}

TEST_CASE("layout resolves backward branches") {
  auto r = load_program(
      ".func main\n"
      "  li t0, 3\n"
      "loop:\n"
      "  addi t0, t0, -1\n"
      "  bne t0, zero, loop\n"
      "  ecall\n"
      ".endfunc\n",
      "");
  REQUIRE(r.ok());
  auto lr = layout(*r.program);
  REQUIRE(lr.ok());
  CHECK(lr.image->words[2] == 0xfe029ee3u);  // bne t0, zero, -4
}

TEST_CASE("layout places word data absolutely") {
  auto r = load_program(
      ".func main\n"
      "  ecall\n"
      "tab:\n"
      "  .word main\n"
      "  .word 7\n"
      ".endfunc\n",
      "");
  REQUIRE(r.ok());
  auto lr = layout(*r.program);
  REQUIRE(lr.ok());
  CHECK(lr.image->symbols.at("tab") == 0x1c000004u);
  CHECK(lr.image->words[1] == 0x1c000000u);
  CHECK(lr.image->words[2] == 7u);
  CHECK(lr.image->is_data[1]);
  CHECK(!lr.image->is_data[0]);
}

TEST_CASE("layout is deterministic") {
  auto r = load_program(dispatch_asm(), "");
  REQUIRE(r.ok());
  auto a = layout(*r.program);
  auto b = layout(*r.program);
  REQUIRE(a.ok());
  REQUIRE(b.ok());
  CHECK(a.image->words == b.image->words);
  CHECK(a.image->symbols == b.image->symbols);
}

TEST_CASE("irq handler symbol is exported") {
  auto r = load_program(
      ".func main\n  ecall\n.endfunc\n.func __irq\n  mret\n.endfunc\n", "");
  REQUIRE(r.ok());
  auto lr = layout(*r.program);
  REQUIRE(lr.ok());
  REQUIRE(lr.image->irq_handler.has_value());
  CHECK(*lr.image->irq_handler == 0x1c000004u);
}

TEST_CASE("sidecar with one indirect call site and eight targets") {
  std::string cfg = "cfg-v1\nicall main 2 targets=f0,f1,f2,f3,f4,f5,f6,f7\n";
  auto r = load_program(dispatch_asm(), cfg);
  REQUIRE(r.ok());
  REQUIRE(r.program->cfg.icalls.size() == 1);
  const auto& site = r.program->cfg.icalls[0];
  CHECK(site.func == "main");
  CHECK(site.index == 2);
  CHECK(site.targets.size() == 8);
  CHECK(site.label == 0);
}

TEST_CASE("sidecar validation errors") {
  // Wrong header.
  auto c = parse_cfg("cfg-v2\n");
  CHECK(!c.ok());

  // Site is not an indirect call.
  auto r = load_program(kSmall, "cfg-v1\nicall main 1 targets=work\n");
  CHECK(!r.ok());
  CHECK(r.error.find("not an indirect call") != std::string::npos);

  // Unknown function.
  r = load_program(kSmall, "cfg-v1\nicall nosuch 0 targets=work\n");
  CHECK(!r.ok());

  // Unknown target.
  std::string cfg = "cfg-v1\nicall main 2 targets=ghost\n";
  r = load_program(dispatch_asm(), cfg);
  CHECK(!r.ok());
  CHECK(r.error.find("ghost") != std::string::npos);

  // Index out of range.
  r = load_program(kSmall, "cfg-v1\nicall main 99 targets=work\n");
  CHECK(!r.ok());

  // Duplicate setjmp slot.
  r = load_program(
      ".func main\n  call work\n  call work\n  ecall\n.endfunc\n"
      ".func work\n  ret\n.endfunc\n",
      "cfg-v1\nsetjmp main 0 slot=1\nsetjmp main 1 slot=1\n");
  CHECK(!r.ok());
  CHECK(r.error.find("duplicate setjmp slot") != std::string::npos);

  // Label zero is reserved.
  c = parse_cfg("cfg-v1\nicall main 2 targets=f0 label=0\n");
  CHECK(!c.ok());
}

TEST_CASE("image exceeding memory bound is rejected") {
  Program p;
  Function f;
  f.name = "main";
  Instruction halt;
  halt.m = Mnemonic::Ecall;
  Instruction filler;
  filler.m = Mnemonic::Addi;
  for (int k = 0; k < 300; ++k) {
    f.instrs.push_back(filler);
    f.injected.push_back(false);
    f.is_data.push_back(false);
  }
  f.instrs.push_back(halt);
  f.injected.push_back(false);
  f.is_data.push_back(false);
  p.funcs.push_back(f);
  p.mem_size = 1024;
  auto lr = layout(p);
  CHECK(!lr.ok());
  CHECK(lr.error.find("exceeds memory bound") != std::string::npos);
}

TEST_CASE("write_asm reloads to an identical image") {
  std::string cfg = "cfg-v1\nicall main 2 targets=f0,f1,f2,f3,f4,f5,f6,f7\n";
  auto r = load_program(dispatch_asm(), cfg);
  REQUIRE(r.ok());
  std::string text = write_asm(*r.program);
  auto r2 = load_program(text, cfg);
  REQUIRE(r2.ok());
  auto a = layout(*r.program);
  auto b = layout(*r2.program);
  REQUIRE(a.ok());
  REQUIRE(b.ok());
  CHECK(a.image->words == b.image->words);
  CHECK(a.image->symbols == b.image->symbols);
}

TEST_CASE("cfg round trips through write_cfg") {
  CfgInfo cfg;
  cfg.icalls.push_back({"main", 2, 5, {"f0", "f1"}});
  cfg.ijumps.push_back({"sw1", 7, 0, {"case0", "case1"}});
  cfg.setjmps.push_back({"g", 3, 0});
  auto p = parse_cfg(write_cfg(cfg));
  REQUIRE(p.ok());
  CHECK(p.cfg->icalls.size() == 1);
  CHECK(p.cfg->icalls[0].label == 5);
  CHECK(p.cfg->ijumps[0].targets.size() == 2);
  CHECK(p.cfg->setjmps[0].slot == 0);
}
