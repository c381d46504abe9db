#include "cfisim/harness.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "cfisim/instrument.hpp"
#include "cfisim/program.hpp"

namespace cfisim {

namespace {

// Deterministic arithmetic padding on temporaries; keeps the accumulator
// registers untouched so it never changes a program's output.
std::string filler(int n) {
  std::string out;
  for (int i = 0; i < n; ++i)
    out += (i % 2) ? "  add t3, t3, t0\n" : "  xor t2, t2, t3\n";
  return out;
}

// One indirect-call site, eight exclusive targets, call density tuned to
// roughly 60% indirect. s4 accumulates (k+1)^2 per callee plus 1 per helper
// call: 4 * (204 + 5) = 836.
BenchCase dispatch_case() {
  std::string a;
  a +=
      ".func main\n"
      "  la sp, __mem_top\n"
      "  li s0, 4\n"
      "outer: la s1, ftab\n"
      "  li s2, 8\n"
      "inner: lw s3, 0(s1)\n"
      "  call s3\n"
      "  addi s1, s1, 4\n"
      "  addi s2, s2, -1\n"
      "  bne s2, zero, inner\n"
      "  call helper\n"
      "  call helper\n"
      "  call helper\n"
      "  call helper\n"
      "  call helper\n"
      "  addi s0, s0, -1\n"
      "  bne s0, zero, outer\n"
      "  mv a0, s4\n"
      "  ecall\n";
  a += "ftab: .word f0\n";
  for (int k = 1; k < 8; ++k) a += "  .word f" + std::to_string(k) + "\n";
  a += ".endfunc\n";
  a +=
      ".func helper\n"
      "  addi s4, s4, 1\n"
      "  ret\n"
      ".endfunc\n";
  for (int k = 0; k < 8; ++k) {
    a += ".func f" + std::to_string(k) + "\n";
    a += "  li t0, " + std::to_string(k + 1) + "\n";
    a += "  mul t1, t0, t0\n";
    a += "  add s4, s4, t1\n";
    a += filler(22);
    a += "  ret\n.endfunc\n";
  }
  BenchCase c;
  c.name = "indirect-dispatch";
  c.asm_text = a;
  c.cfg_text = "cfg-v1\nicall main 5 targets=f0,f1,f2,f3,f4,f5,f6,f7\n";
  c.expected_output = 836;
  return c;
}

// Four-way dispatch through a .word table driven by jr, eight iterations:
// s2 = 2*(1+2+3+5) = 22. gdg is the out-of-table gadget used by the attack
// matrix; no benign path reaches it.
BenchCase jump_table_case() {
  std::string a;
  a +=
      ".func main\n"
      "  la sp, __mem_top\n"
      "  li s0, 8\n"
      "  li s1, 0\n"
      "  li s2, 0\n"
      "lp: andi t0, s1, 3\n"
      "  slli t0, t0, 2\n"
      "  la t1, jtab\n"
      "  add t1, t1, t0\n"
      "  lw t1, 0(t1)\n"
      "jrsite: jr t1\n"
      "c0: addi s2, s2, 1\n";
  a += filler(38);
  a += "  j next\n";
  a += "c1: addi s2, s2, 2\n";
  a += filler(38);
  a += "  j next\n";
  a += "c2: addi s2, s2, 3\n";
  a += filler(38);
  a += "  j next\n";
  a +=
      "gdg: li a0, 777\n"
      "  ecall\n";
  a += "c3: addi s2, s2, 5\n";
  a += filler(38);
  a +=
      "next: addi s1, s1, 1\n"
      "  bne s1, s0, lp\n"
      "  mv a0, s2\n"
      "  ecall\n"
      "jtab: .word c0\n"
      "  .word c1\n"
      "  .word c2\n"
      "  .word c3\n"
      ".endfunc\n";
  BenchCase c;
  c.name = "jump-table";
  c.asm_text = a;
  c.cfg_text = "cfg-v1\nijump main 9 targets=c0,c1,c2,c3\n";
  c.expected_output = 22;
  return c;
}

const char* kCallMicroAsm =
    ".func main\n"
    "  la sp, __mem_top\n"
    "  li s0, 10000\n"
    "loop: addi s1, s1, 1\n"
    "  call work\n"
    "  bne s1, s0, loop\n"
    "  mv a0, s1\n"
    "  ecall\n"
    ".endfunc\n"
    ".func work\n"
    "  ret\n"
    ".endfunc\n";

// 21 invocations of fact (base case at zero), 14 instructions on the
// recursive path: 287 retired instructions, 21 call/return pairs.
const char* kFactorialAsm =
    ".func main\n"
    "  la sp, __mem_top\n"
    "  li a0, 20\n"
    "  call fact\n"
    "  ecall\n"
    ".endfunc\n"
    ".func fact\n"
    "  beq a0, zero, base\n"
    "  addi sp, sp, -8\n"
    "  sw ra, 4(sp)\n"
    "  sw a0, 0(sp)\n"
    "  addi a0, a0, -1\n"
    "  xor t2, t2, a0\n"
    "  add t3, t3, t2\n"
    "  slli t4, t2, 1\n"
    "  call fact\n"
    "  lw t1, 0(sp)\n"
    "  mul a0, a0, t1\n"
    "  lw ra, 4(sp)\n"
    "  addi sp, sp, 8\n"
    "  ret\n"
    "base: li a0, 1\n"
    "  ret\n"
    ".endfunc\n";

const char* kNestedRecAsm =
    ".func main\n"
    "  la sp, __mem_top\n"
    "  li a0, 12\n"
    "  call is_even\n"
    "  ecall\n"
    ".endfunc\n"
    ".func is_even\n"
    "  beq a0, zero, even_y\n"
    "  addi sp, sp, -4\n"
    "  sw ra, 0(sp)\n"
    "  addi a0, a0, -1\n"
    "  call is_odd\n"
    "  lw ra, 0(sp)\n"
    "  addi sp, sp, 4\n"
    "  ret\n"
    "even_y: li a0, 1\n"
    "  ret\n"
    ".endfunc\n"
    ".func is_odd\n"
    "  beq a0, zero, odd_n\n"
    "  addi sp, sp, -4\n"
    "  sw ra, 0(sp)\n"
    "  addi a0, a0, -1\n"
    "  call is_even\n"
    "  lw ra, 0(sp)\n"
    "  addi sp, sp, 4\n"
    "  ret\n"
    "odd_n: li a0, 0\n"
    "  ret\n"
    ".endfunc\n";

const char* kTakAsm =
    ".func main\n"
    "  la sp, __mem_top\n"
    "  li a0, 9\n"
    "  li a1, 6\n"
    "  li a2, 3\n"
    "  call tak\n"
    "  ecall\n"
    ".endfunc\n"
    ".func tak\n"
    "  blt a1, a0, rec\n"
    "  mv a0, a2\n"
    "  ret\n"
    "rec: addi sp, sp, -24\n"
    "  sw ra, 20(sp)\n"
    "  sw s0, 16(sp)\n"
    "  sw s1, 12(sp)\n"
    "  sw s2, 8(sp)\n"
    "  sw s4, 4(sp)\n"
    "  sw s5, 0(sp)\n"
    "  mv s0, a0\n"
    "  mv s1, a1\n"
    "  mv s2, a2\n"
    "  addi a0, s0, -1\n"
    "  mv a1, s1\n"
    "  mv a2, s2\n"
    "  call tak\n"
    "  mv s4, a0\n"
    "  addi a0, s1, -1\n"
    "  mv a1, s2\n"
    "  mv a2, s0\n"
    "  call tak\n"
    "  mv s5, a0\n"
    "  addi a0, s2, -1\n"
    "  mv a1, s0\n"
    "  mv a2, s1\n"
    "  call tak\n"
    "  mv a2, a0\n"
    "  mv a0, s4\n"
    "  mv a1, s5\n"
    "  call tak\n"
    "  lw ra, 20(sp)\n"
    "  lw s0, 16(sp)\n"
    "  lw s1, 12(sp)\n"
    "  lw s2, 8(sp)\n"
    "  lw s4, 4(sp)\n"
    "  lw s5, 0(sp)\n"
    "  addi sp, sp, 24\n"
    "  ret\n"
    ".endfunc\n";

// Bitmask board search; six queens on a 6x6 board have 4 solutions.
const char* kNqueensAsm =
    ".func main\n"
    "  la sp, __mem_top\n"
    "  li a0, 0\n"
    "  li a1, 0\n"
    "  li a2, 0\n"
    "  call nq\n"
    "  ecall\n"
    ".endfunc\n"
    ".func nq\n"
    "  li t0, 63\n"
    "  bne a0, t0, go\n"
    "  li a0, 1\n"
    "  ret\n"
    "go: addi sp, sp, -28\n"
    "  sw ra, 24(sp)\n"
    "  sw s0, 20(sp)\n"
    "  sw s1, 16(sp)\n"
    "  sw s2, 12(sp)\n"
    "  sw s3, 8(sp)\n"
    "  sw s4, 4(sp)\n"
    "  sw s5, 0(sp)\n"
    "  mv s0, a0\n"
    "  mv s1, a1\n"
    "  mv s2, a2\n"
    "  or t1, s0, s1\n"
    "  or t1, t1, s2\n"
    "  xori t1, t1, -1\n"
    "  andi s3, t1, 63\n"
    "  li s4, 0\n"
    "nqloop: beq s3, zero, nqdone\n"
    "  sub t2, zero, s3\n"
    "  and s5, s3, t2\n"
    "  sub s3, s3, s5\n"
    "  or a0, s0, s5\n"
    "  or t3, s1, s5\n"
    "  slli a1, t3, 1\n"
    "  andi a1, a1, 63\n"
    "  or t4, s2, s5\n"
    "  srli a2, t4, 1\n"
    "  call nq\n"
    "  add s4, s4, a0\n"
    "  j nqloop\n"
    "nqdone: mv a0, s4\n"
    "  lw ra, 24(sp)\n"
    "  lw s0, 20(sp)\n"
    "  lw s1, 16(sp)\n"
    "  lw s2, 12(sp)\n"
    "  lw s3, 8(sp)\n"
    "  lw s4, 4(sp)\n"
    "  lw s5, 0(sp)\n"
    "  addi sp, sp, 28\n"
    "  ret\n"
    ".endfunc\n";

// g installs a resume point, h unwinds into it; s2 picks up 5 on the first
// pass and 9 on the second: output 14.
const char* kSetjmpAsm =
    ".func main\n"
    "  la sp, __mem_top\n"
    "  call g\n"
    "  mv a0, s2\n"
    "  ecall\n"
    "jb: .word 0\n"
    ".endfunc\n"
    ".func g\n"
    "  addi sp, sp, -4\n"
    "  sw ra, 0(sp)\n"
    "  la t1, jb\n"
    "  sw sp, 0(t1)\n"
    "  call sj\n"
    "resume: add s2, s2, a0\n"
    "  li t2, 1\n"
    "  beq s3, t2, gout\n"
    "  li s3, 1\n"
    "  addi s2, s2, 5\n"
    "  call h\n"
    "gout: lw ra, 0(sp)\n"
    "  addi sp, sp, 4\n"
    "  ret\n"
    ".endfunc\n"
    ".func sj\n"
    "  li a0, 0\n"
    "  ret\n"
    ".endfunc\n"
    ".func h\n"
    "  li a0, 9\n"
    "  la t1, jb\n"
    "  lw sp, 0(t1)\n"
    "  la t0, resume\n"
    "  jr t0\n"
    ".endfunc\n";

const char* kSetjmpCfg =
    "cfg-v1\n"
    "setjmp g 4 slot=0\n"
    "ijump h 4 targets=resume\n";

const char* kLeafMathAsm =
    ".func main\n"
    "  la sp, __mem_top\n"
    "  li s0, 24\n"
    "  li s1, 0\n"
    "  li s2, 0\n"
    "lm: addi s1, s1, 1\n"
    "  mul t0, s1, s1\n"
    "  add s2, s2, t0\n"
    "  bne s1, s0, lm\n"
    "  mv a0, s2\n"
    "  ecall\n"
    ".endfunc\n";

// Shared body of the interrupt benchmark and of the interrupt attack: the
// handler's inner call/ret pair lands in the return window opened at
// victim_ret. The benign handler restores ra; the attack variant swaps in
// the address after main's second call before mret.
std::string irq_race_asm(bool attacker) {
  std::string a =
      ".func main\n"
      "  la sp, __mem_top\n"
      "  call victim\n"
      "main_call2: call other\n"
      "  mv a0, s2\n"
      "  ecall\n"
      ".endfunc\n"
      ".func victim\n"
      "  addi s2, s2, 4\n"
      "victim_ret: ret\n"
      ".endfunc\n"
      ".func other\n"
      "  addi s2, s2, 7\n"
      "  ret\n"
      ".endfunc\n"
      ".func __irq\n"
      "  addi sp, sp, -8\n"
      "  sw ra, 4(sp)\n"
      "  sw t5, 0(sp)\n"
      "  call hdummy\n"
      "  lw t5, 0(sp)\n"
      "  lw ra, 4(sp)\n"
      "  addi sp, sp, 8\n";
  if (attacker) a += "  la ra, main_call2+4\n";
  a +=
      "  mret\n"
      ".endfunc\n"
      ".func hdummy\n"
      "  addi t5, t5, 1\n"
      "  ret\n"
      ".endfunc\n";
  return a;
}

const char* kAttackRetAsm =
    ".func main\n"
    "  la sp, __mem_top\n"
    "  call victim\n"
    "  mv a0, s0\n"
    "  ecall\n"
    ".endfunc\n"
    ".func victim\n"
    "  addi sp, sp, -4\n"
    "  sw ra, 0(sp)\n"
    "  addi s0, s0, 5\n"
    "vl: lw ra, 0(sp)\n"
    "  addi sp, sp, 4\n"
    "  ret\n"
    ".endfunc\n"
    ".func gadget\n"
    "  li a0, 666\n"
    "  ecall\n"
    ".endfunc\n";

// Three indirect-call sites: two share {lt,gt}, the third is exclusive to
// wf. attack_here marks the point where the register feeding the third site
// gets corrupted; wf_mid is the mid-function target of the coarse attack.
const char* kAttackFwdAsm =
    ".func main\n"
    "  la sp, __mem_top\n"
    "  la s3, lt\n"
    "  call s3\n"
    "  la s3, gt\n"
    "  call s3\n"
    "  la s3, wf\n"
    "attack_here: addi t4, zero, 0\n"
    "  call s3\n"
    "  add a0, s5, zero\n"
    "  ecall\n"
    ".endfunc\n"
    ".func lt\n"
    "  addi s5, s5, 1\n"
    "  ret\n"
    ".endfunc\n"
    ".func gt\n"
    "  addi s5, s5, 2\n"
    "  ret\n"
    ".endfunc\n"
    ".func wf\n"
    "  addi s5, s5, 3\n"
    "wf_mid: addi s5, s5, 40\n"
    "  ret\n"
    ".endfunc\n"
    ".func __irq\n"
    "  addi sp, sp, -8\n"
    "  sw ra, 4(sp)\n"
    "  sw t5, 0(sp)\n"
    "  call hdummy\n"
    "  lw t5, 0(sp)\n"
    "  lw ra, 4(sp)\n"
    "  addi sp, sp, 8\n"
    "  mret\n"
    ".endfunc\n"
    ".func hdummy\n"
    "  addi t5, t5, 1\n"
    "  ret\n"
    ".endfunc\n";

const char* kAttackFwdCfg =
    "cfg-v1\n"
    "icall main 2 targets=lt,gt\n"
    "icall main 4 targets=lt,gt\n"
    "icall main 7 targets=wf\n";

std::vector<BenchCase> build_corpus() {
  std::vector<BenchCase> v;
  v.push_back({"call-micro", kCallMicroAsm, "", "", 10000});
  v.push_back({"factorial", kFactorialAsm, "", "", 2192834560u});
  v.push_back({"nested-recursion", kNestedRecAsm, "", "", 1});
  v.push_back({"tak", kTakAsm, "", "", 6});
  v.push_back({"nqueens", kNqueensAsm, "", "", 4});
  v.push_back(dispatch_case());
  v.push_back(jump_table_case());
  v.push_back({"setjmp-micro", kSetjmpAsm, kSetjmpCfg, "", 14});
  v.push_back({"leaf-math", kLeafMathAsm, "", "", 4900});
  v.push_back({"irq-race", irq_race_asm(false), "",
               "irq-v1\nirq before-pc=victim_ret\n", 11});
  return v;
}

std::vector<AttackCase> build_attacks() {
  std::vector<AttackCase> v;
  AttackCase ret;
  ret.name = "returns";
  ret.asm_text = kAttackRetAsm;
  ret.faults_text =
      "faults-v1\n"
      "fault overwrite-return-slot at-pc=vl slot=__mem_top-4 new=gadget\n";
  ret.benign_output = 5;
  v.push_back(ret);

  AttackCase icall;
  icall.name = "indirect-calls";
  icall.asm_text = kAttackFwdAsm;
  icall.cfg_text = kAttackFwdCfg;
  icall.faults_text =
      "faults-v1\n"
      "fault corrupt-register at-pc=attack_here reg=s3 new=wf_mid\n";
  icall.benign_output = 46;
  v.push_back(icall);

  AttackCase ijump;
  ijump.name = "indirect-jumps";
  ijump.asm_text = jump_table_case().asm_text;
  ijump.cfg_text = jump_table_case().cfg_text;
  ijump.faults_text =
      "faults-v1\n"
      "fault corrupt-register at-pc=jrsite reg=t1 new=gdg\n";
  ijump.benign_output = 22;
  v.push_back(ijump);

  AttackCase fine;
  fine.name = "fine-grained";
  fine.asm_text = kAttackFwdAsm;
  fine.cfg_text = kAttackFwdCfg;
  fine.faults_text =
      "faults-v1\n"
      "fault corrupt-register at-pc=attack_here reg=s3 new=lt\n";
  fine.benign_output = 46;
  v.push_back(fine);

  AttackCase irq;
  irq.name = "interrupts";
  irq.asm_text = irq_race_asm(true);
  irq.irq_text = "irq-v1\nirq before-pc=victim_ret\n";
  irq.benign_output = 11;
  v.push_back(irq);
  return v;
}

size_t scheme_index(Scheme s) {
  for (size_t i = 0; i < kAllSchemes.size(); ++i)
    if (kAllSchemes[i] == s) return i;
  return 0;
}

std::string percent_or(const BenchRow& r, int64_t BenchRow::*field) {
  return r.refused ? std::string("n/a") : format_percent(r.*field);
}

}  // namespace

const std::vector<BenchCase>& corpus() {
  static const std::vector<BenchCase> v = build_corpus();
  return v;
}

const BenchCase* find_case(const std::string& name) {
  for (const auto& c : corpus())
    if (c.name == name) return &c;
  return nullptr;
}

const std::vector<AttackCase>& attack_cases() {
  static const std::vector<AttackCase> v = build_attacks();
  return v;
}

AttackMatrixResult attack_matrix(const MonitorConfig& cfg) {
  AttackMatrixResult res;
  std::vector<AttackRow> rows;
  for (const auto& ac : attack_cases()) {
    auto lr = load_program(ac.asm_text, ac.cfg_text);
    if (!lr.ok()) {
      res.error = "attack " + ac.name + ": " + lr.error;
      return res;
    }
    AttackRow row;
    row.attack = ac.name;
    row.benign_output = ac.benign_output;
    for (Scheme s : kAllSchemes) {
      auto ir = instrument(*lr.program, s, cfg);
      if (!ir.ok()) {
        res.error = "attack " + ac.name + ": " + std::string(scheme_name(s)) +
                    " refused: " + ir.error;
        return res;
      }
      auto lay = layout(*ir.prog);
      if (!lay.ok()) {
        res.error = "attack " + ac.name + ": " + lay.error;
        return res;
      }
      RunOptions opts;
      if (!ac.faults_text.empty()) {
        auto f = parse_faults(ac.faults_text, *lay.image);
        if (!f.ok()) {
          res.error = "attack " + ac.name + ": " + f.error;
          return res;
        }
        opts.faults = *f.faults;
      }
      if (!ac.irq_text.empty()) {
        auto q = parse_irqs(ac.irq_text, *lay.image);
        if (!q.ok()) {
          res.error = "attack " + ac.name + ": " + q.error;
          return res;
        }
        opts.irqs = *q.irqs;
      }
      auto mon = make_monitor(s, cfg, ir.init);
      RunStats st = run(*lay.image, mon.get(), opts);
      AttackOutcome& cell = row.cells[scheme_index(s)];
      if (st.verdict == RunVerdict::CfiException) {
        cell.detected = true;
        cell.kind = st.exception;
      } else if (st.verdict == RunVerdict::Completed) {
        cell.detected = false;
        cell.output = st.output;
      } else {
        res.error = "attack " + ac.name + " under " + scheme_name(s) +
                    ": unexpected verdict " + verdict_name(st.verdict);
        return res;
      }
    }
    rows.push_back(std::move(row));
  }
  res.rows = std::move(rows);
  return res;
}

BenchAllResult bench_all(const MonitorConfig& cfg) {
  BenchAllResult res;
  Report rep;
  for (const auto& bc : corpus()) {
    auto lr = load_program(bc.asm_text, bc.cfg_text);
    if (!lr.ok()) {
      res.error = bc.name + ": " + lr.error;
      return res;
    }
    auto base_lay = layout(*lr.program);
    if (!base_lay.ok()) {
      res.error = bc.name + ": " + base_lay.error;
      return res;
    }
    RunOptions base_opts;
    if (!bc.irq_text.empty()) {
      auto q = parse_irqs(bc.irq_text, *base_lay.image);
      if (!q.ok()) {
        res.error = bc.name + ": " + q.error;
        return res;
      }
      base_opts.irqs = *q.irqs;
    }
    RunStats base = run(*base_lay.image, nullptr, base_opts);
    if (base.verdict != RunVerdict::Completed) {
      res.error = bc.name + ": baseline verdict " + verdict_name(base.verdict);
      return res;
    }
    if (base.output != bc.expected_output) {
      res.error = bc.name + ": baseline output " + std::to_string(base.output) +
                  ", expected " + std::to_string(bc.expected_output);
      return res;
    }
    uint32_t base_code = base_lay.image->code_bytes();
    bool refused_any = false;
    for (Scheme s : kAllSchemes) {
      BenchRow row;
      row.bench = bc.name;
      row.scheme = s;
      row.base_retired = base.retired_total;
      row.base_code = base_code;
      auto ir = instrument(*lr.program, s, cfg);
      if (!ir.ok()) {
        row.refused = true;
        row.reason = ir.error;
        refused_any = true;
        rep.rows.push_back(std::move(row));
        continue;
      }
      auto lay = layout(*ir.prog);
      if (!lay.ok()) {
        res.error = bc.name + " under " + scheme_name(s) + ": " + lay.error;
        return res;
      }
      RunOptions opts;
      if (!bc.irq_text.empty()) {
        auto q = parse_irqs(bc.irq_text, *lay.image);
        if (!q.ok()) {
          res.error = bc.name + " under " + scheme_name(s) + ": " + q.error;
          return res;
        }
        opts.irqs = *q.irqs;
      }
      auto mon = make_monitor(s, cfg, ir.init);
      RunStats st = run(*lay.image, mon.get(), opts);
      if (st.verdict != RunVerdict::Completed) {
        res.error = bc.name + " under " + scheme_name(s) + ": verdict " +
                    verdict_name(st.verdict) +
                    (st.verdict == RunVerdict::CfiException
                         ? std::string(" (") + exception_name(st.exception) + ")"
                         : std::string());
        return res;
      }
      if (st.output != bc.expected_output) {
        res.error = bc.name + " under " + scheme_name(s) + ": output " +
                    std::to_string(st.output) + ", expected " +
                    std::to_string(bc.expected_output);
        return res;
      }
      row.instr_retired = st.retired_total;
      row.retired_cfi = st.retired_cfi;
      row.instr_code = lay.image->code_bytes();
      row.runtime_hundredths =
          overhead_hundredths(base.retired_total, st.retired_total);
      row.code_hundredths = overhead_hundredths(base_code, row.instr_code);
      rep.rows.push_back(std::move(row));
    }
    if (!refused_any) rep.common_basis.push_back(bc.name);
  }

  for (Scheme s : kAllSchemes) {
    std::vector<int64_t> rt, code;
    for (const auto& row : rep.rows) {
      if (row.scheme != s || row.refused) continue;
      if (std::find(rep.common_basis.begin(), rep.common_basis.end(),
                    row.bench) == rep.common_basis.end())
        continue;
      rt.push_back(row.runtime_hundredths);
      code.push_back(row.code_hundredths);
    }
    SchemeAggregate agg;
    agg.scheme = s;
    if (!rt.empty()) {
      std::sort(rt.begin(), rt.end());
      agg.max_hundredths = rt.back();
      int64_t sum = 0;
      for (int64_t v : rt) sum += v;
      agg.avg_hundredths = (sum + int64_t(rt.size()) / 2) / int64_t(rt.size());
      size_t n = rt.size();
      agg.median_hundredths =
          n % 2 ? rt[n / 2] : (rt[n / 2 - 1] + rt[n / 2]) / 2;
      int64_t csum = 0;
      for (int64_t v : code) csum += v;
      agg.code_avg_hundredths =
          (csum + int64_t(code.size()) / 2) / int64_t(code.size());
    }
    rep.aggregates.push_back(agg);
  }

  auto am = attack_matrix(cfg);
  if (!am.ok()) {
    res.error = am.error;
    return res;
  }
  rep.attacks = std::move(*am.rows);

  for (Scheme s : kAllSchemes) rep.hw.emplace_back(s, ff_cost(s, cfg));

  res.report = std::move(rep);
  return res;
}

std::string write_report(const Report& r) {
  std::ostringstream os;
  os << "rep-v1\n";
  std::string last_bench;
  for (const auto& row : r.rows) {
    if (row.bench != last_bench) {
      os << "bench " << row.bench << " base-retired " << row.base_retired
         << " base-code " << row.base_code << "\n";
      last_bench = row.bench;
    }
    os << "row " << row.bench << " " << scheme_name(row.scheme);
    if (row.refused) {
      os << " refused " << row.reason << "\n";
    } else {
      os << " runtime " << format_percent(row.runtime_hundredths) << " code "
         << format_percent(row.code_hundredths) << " retired "
         << row.instr_retired << " cfi " << row.retired_cfi << "\n";
    }
  }
  os << "basis";
  for (const auto& b : r.common_basis) os << " " << b;
  os << "\n";
  for (const auto& a : r.aggregates) {
    os << "agg " << scheme_name(a.scheme) << " max "
       << format_percent(a.max_hundredths) << " avg "
       << format_percent(a.avg_hundredths) << " median "
       << format_percent(a.median_hundredths) << " code-avg "
       << format_percent(a.code_avg_hundredths) << "\n";
  }
  for (const auto& at : r.attacks) {
    os << "attack " << at.attack << " benign " << at.benign_output << "\n";
    for (size_t i = 0; i < kAllSchemes.size(); ++i) {
      const AttackOutcome& c = at.cells[i];
      os << "cell " << at.attack << " " << scheme_name(kAllSchemes[i]);
      if (c.detected)
        os << " detected " << exception_name(c.kind) << "\n";
      else
        os << " undetected " << c.output << "\n";
    }
  }
  for (const auto& [s, cost] : r.hw) {
    for (const auto& [item, bits] : cost.items)
      os << "hw " << scheme_name(s) << " " << item << " " << bits << "\n";
    os << "hw " << scheme_name(s) << " total " << cost.total << "\n";
  }
  return os.str();
}

std::string format_report(const Report& r) {
  std::ostringstream os;
  auto header = [&](const char* title) {
    os << title << "\n";
    os << std::left << std::setw(20) << "benchmark" << std::right
       << std::setw(12) << "baseline";
    for (Scheme s : kAllSchemes) os << std::setw(9) << scheme_name(s);
    os << "\n";
  };

  header("Runtime overhead (% retired instructions vs baseline)");
  std::string cur;
  for (const auto& row : r.rows) {
    if (row.bench != cur) {
      if (!cur.empty()) os << "\n";
      cur = row.bench;
      os << std::left << std::setw(20) << row.bench << std::right
         << std::setw(12) << row.base_retired;
    }
    os << std::setw(9) << percent_or(row, &BenchRow::runtime_hundredths);
  }
  os << "\n\n";

  header("Code size overhead (% image bytes vs baseline)");
  cur.clear();
  for (const auto& row : r.rows) {
    if (row.bench != cur) {
      if (!cur.empty()) os << "\n";
      cur = row.bench;
      os << std::left << std::setw(20) << row.bench << std::right
         << std::setw(12) << row.base_code;
    }
    os << std::setw(9) << percent_or(row, &BenchRow::code_hundredths);
  }
  os << "\n\n";

  os << "Aggregates over common basis (";
  for (size_t i = 0; i < r.common_basis.size(); ++i)
    os << (i ? ", " : "") << r.common_basis[i];
  os << ")\n";
  os << std::left << std::setw(10) << "scheme" << std::right << std::setw(9)
     << "max" << std::setw(9) << "avg" << std::setw(9) << "median"
     << std::setw(11) << "code-avg" << "\n";
  for (const auto& a : r.aggregates) {
    os << std::left << std::setw(10) << scheme_name(a.scheme) << std::right
       << std::setw(9) << format_percent(a.max_hundredths) << std::setw(9)
       << format_percent(a.avg_hundredths) << std::setw(9)
       << format_percent(a.median_hundredths) << std::setw(11)
       << format_percent(a.code_avg_hundredths) << "\n";
  }
  os << "\n";

  os << "Attack matrix (X = detected, output shown when the attack sneaks "
        "through)\n";
  os << std::left << std::setw(16) << "attack";
  for (Scheme s : kAllSchemes) os << std::right << std::setw(9)
                                  << scheme_name(s);
  os << "\n";
  for (const auto& at : r.attacks) {
    os << std::left << std::setw(16) << at.attack;
    for (size_t i = 0; i < kAllSchemes.size(); ++i) {
      const AttackOutcome& c = at.cells[i];
      os << std::right << std::setw(9)
         << (c.detected ? std::string("X") : std::to_string(c.output));
    }
    os << "\n";
  }
  os << "\n";

  os << "Hardware state cost (flip-flops)\n";
  for (const auto& [s, cost] : r.hw) {
    os << std::left << std::setw(10) << scheme_name(s);
    bool first = true;
    for (const auto& [item, bits] : cost.items) {
      os << (first ? "" : " + ") << item << "=" << bits;
      first = false;
    }
    os << "  total=" << cost.total << "\n";
  }
  return os.str();
}

std::string report_csv_runtime(const Report& r) {
  std::ostringstream os;
  os << "bench,baseline_retired";
  for (Scheme s : kAllSchemes) os << "," << scheme_name(s);
  os << "\n";
  std::string cur;
  for (const auto& row : r.rows) {
    if (row.bench != cur) {
      if (!cur.empty()) os << "\n";
      cur = row.bench;
      os << row.bench << "," << row.base_retired;
    }
    os << "," << percent_or(row, &BenchRow::runtime_hundredths);
  }
  os << "\n";
  return os.str();
}

std::string report_csv_codesize(const Report& r) {
  std::ostringstream os;
  os << "bench,baseline_bytes";
  for (Scheme s : kAllSchemes) os << "," << scheme_name(s);
  os << "\n";
  std::string cur;
  for (const auto& row : r.rows) {
    if (row.bench != cur) {
      if (!cur.empty()) os << "\n";
      cur = row.bench;
      os << row.bench << "," << row.base_code;
    }
    os << "," << percent_or(row, &BenchRow::code_hundredths);
  }
  os << "\n";
  return os.str();
}

std::string report_csv_hwcost(const Report& r) {
  std::ostringstream os;
  os << "scheme,item,bits\n";
  for (const auto& [s, cost] : r.hw) {
    for (const auto& [item, bits] : cost.items)
      os << scheme_name(s) << "," << item << "," << bits << "\n";
    os << scheme_name(s) << ",total," << cost.total << "\n";
  }
  return os.str();
}

}  // namespace cfisim
