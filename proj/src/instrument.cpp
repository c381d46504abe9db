#include "cfisim/instrument.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace cfisim {

namespace {

constexpr uint8_t kRegT0 = 5;

uint32_t ceil_log2(uint32_t n) {
  uint32_t bits = 0;
  while ((1u << bits) < n) ++bits;
  return bits;
}

Instruction cfi_op(Mnemonic m, uint32_t payload = 0) {
  Instruction i;
  i.m = m;
  i.cfi_payload = payload;
  return i;
}

Instruction la_sym(uint8_t rd, const std::string& sym) {
  Instruction i;
  i.m = Mnemonic::La;
  i.rd = rd;
  i.sym = sym;
  return i;
}

Instruction addi_ri(uint8_t rd, uint8_t rs1, int32_t imm) {
  Instruction i;
  i.m = Mnemonic::Addi;
  i.rd = rd;
  i.rs1 = rs1;
  i.imm = imm;
  return i;
}

Instruction sw_ri(uint8_t rs2, uint8_t rs1, int32_t imm) {
  Instruction i;
  i.m = Mnemonic::Sw;
  i.rs1 = rs1;
  i.rs2 = rs2;
  i.imm = imm;
  return i;
}

Instruction lw_ri(uint8_t rd, uint8_t rs1, int32_t imm) {
  Instruction i;
  i.m = Mnemonic::Lw;
  i.rd = rd;
  i.rs1 = rs1;
  i.imm = imm;
  return i;
}

Instruction beq_sym(uint8_t rs1, uint8_t rs2, const std::string& sym,
                    int32_t addend) {
  Instruction i;
  i.m = Mnemonic::Beq;
  i.rs1 = rs1;
  i.rs2 = rs2;
  i.sym = sym;
  i.sym_addend = addend;
  return i;
}

Instruction ebreak_op() {
  Instruction i;
  i.m = Mnemonic::Ebreak;
  return i;
}

// Collects insert-before requests per function; applied in one pass so all
// indices refer to the baseline layout. A claiming block takes over the
// labels of the instruction it is inserted in front of (needed where an
// indirect transfer must land on the injected check, e.g. jump targets and
// longjmp resume points); non-claiming blocks leave labels on the original
// so direct branches skip the companions.
//
// When several blocks land at one index, companions that RECEIVE a transfer
// (landing checks/pops, slot saves: kPhaseLanding) must come before
// companions that PRIME the following instruction (pushes, announces,
// spills: kPhasePreamble), whatever order the passes requested them in.
constexpr int kPhaseLanding = 0;
constexpr int kPhasePreamble = 1;

struct Editor {
  struct Block {
    size_t at;
    std::vector<Instruction> code;
    bool claim;
    int phase;
    int seq;
  };
  std::map<std::string, std::vector<Block>> blocks;
  int seq = 0;
  bool empty = true;

  void before(const std::string& fn, size_t at, std::vector<Instruction> code,
              bool claim = false, int phase = kPhasePreamble) {
    blocks[fn].push_back({at, std::move(code), claim, phase, seq++});
    empty = false;
  }
};

void apply_edits(Program& p, const Editor& ed, Ledger& ledger) {
  std::map<std::string, std::vector<size_t>> remap;
  for (auto& f : p.funcs) {
    std::vector<size_t> map(f.instrs.size());
    auto it = ed.blocks.find(f.name);
    if (it == ed.blocks.end()) {
      for (size_t i = 0; i < f.instrs.size(); ++i) map[i] = i;
      remap[f.name] = std::move(map);
      continue;
    }
    std::vector<Editor::Block> bl = it->second;
    std::sort(bl.begin(), bl.end(),
              [](const Editor::Block& a, const Editor::Block& b) {
                if (a.at != b.at) return a.at < b.at;
                if (a.phase != b.phase) return a.phase < b.phase;
                return a.seq < b.seq;
              });
    std::vector<Instruction> ni;
    std::vector<bool> nj, nd;
    std::vector<long> claim_pos(f.instrs.size(), -1);
    size_t b = 0;
    for (size_t i = 0; i < f.instrs.size(); ++i) {
      while (b < bl.size() && bl[b].at == i) {
        if (bl[b].claim && claim_pos[i] < 0) claim_pos[i] = long(ni.size());
        for (const auto& ins : bl[b].code) {
          ledger.injected[mnemonic_name(ins.m)]++;
          ledger.total++;
          ni.push_back(ins);
          nj.push_back(true);
          nd.push_back(false);
        }
        ++b;
      }
      map[i] = ni.size();
      ni.push_back(f.instrs[i]);
      nj.push_back(f.injected[i]);
      nd.push_back(f.is_data[i]);
    }
    std::map<std::string, size_t> nl;
    for (const auto& [name, idx] : f.labels)
      nl[name] = claim_pos[idx] >= 0 ? size_t(claim_pos[idx]) : map[idx];
    f.instrs = std::move(ni);
    f.injected = std::move(nj);
    f.is_data = std::move(nd);
    f.labels = std::move(nl);
    remap[f.name] = std::move(map);
  }
  for (auto& s : p.cfg.icalls) s.index = remap[s.func][s.index];
  for (auto& s : p.cfg.ijumps) s.index = remap[s.func][s.index];
  for (auto& s : p.cfg.setjmps) s.index = remap[s.func][s.index];
}

struct LabelAlloc {
  uint32_t max_label;
  std::set<uint32_t> used;
  uint32_t next = 1;

  explicit LabelAlloc(uint32_t maxv) : max_label(maxv) {}

  bool reserve(uint32_t v) {
    if (v == 0 || v > max_label) return false;
    return used.insert(v).second;
  }
  std::optional<uint32_t> alloc() {
    while (next <= max_label && used.count(next)) ++next;
    if (next > max_label) return std::nullopt;
    used.insert(next);
    return next++;
  }
};

struct Analysis {
  std::map<std::string, size_t> func_index;
  // (function, instruction index) -> site index in the cfg vectors
  std::map<std::pair<std::string, size_t>, size_t> icall_at;
  std::map<std::pair<std::string, size_t>, size_t> ijump_at;
  // resume label -> setjmp record index
  std::map<std::string, size_t> resume_labels;
  std::set<std::string> pure_data;
};

bool is_pure_data(const Function& f) {
  for (size_t i = 0; i < f.instrs.size(); ++i)
    if (!f.is_data[i]) return false;
  return !f.instrs.empty();
}

std::string validate_and_analyze(const Program& p, const MonitorConfig& cfg,
                                 Analysis& a) {
  for (const auto& f : p.funcs) {
    if (f.name.rfind("_tr_", 0) == 0)
      return "function name '" + f.name + "' is reserved for trampolines";
    a.func_index[f.name] = a.func_index.size();
    if (is_pure_data(f)) a.pure_data.insert(f.name);
    for (size_t i = 0; i < f.instrs.size(); ++i) {
      if (f.is_data[i]) continue;
      const Instruction& ins = f.instrs[i];
      if (is_cfi_family(ins.m))
        return "program is already instrumented (found " +
               std::string(mnemonic_name(ins.m)) + " in '" + f.name + "')";
      InstrClass c = classify(ins);
      if (c == InstrClass::CondBranch ||
          (ins.m == Mnemonic::Jal && ins.rd == kRegZero)) {
        if (!ins.sym.empty() && !f.labels.count(ins.sym))
          return "tail call or cross-function branch to '" + ins.sym +
                 "' in '" + f.name + "'";
        // A label on a call, jump or return marks the transfer itself; a
        // branch entering there would bypass the instructions the passes
        // place in front of it, so the shape is refused outright.
        if (!ins.sym.empty()) {
          size_t t = f.labels.at(ins.sym);
          if (!f.is_data[t]) {
            InstrClass tc = classify(f.instrs[t]);
            if (tc == InstrClass::DirectCall || tc == InstrClass::IndirectCall ||
                tc == InstrClass::IndirectJump || tc == InstrClass::Return)
              return "branch target '" + ins.sym + "' in '" + f.name +
                     "' lands on a control transfer";
          }
        }
      }
      if (c == InstrClass::DirectCall) {
        bool to_func = false;
        for (const auto& g : p.funcs)
          if (g.name == ins.sym) to_func = true;
        if (!to_func)
          return "direct call target '" + ins.sym + "' in '" + f.name +
                 "' is not a function";
      }
    }
  }
  for (size_t k = 0; k < p.cfg.icalls.size(); ++k)
    a.icall_at[{p.cfg.icalls[k].func, p.cfg.icalls[k].index}] = k;
  for (size_t k = 0; k < p.cfg.ijumps.size(); ++k)
    a.ijump_at[{p.cfg.ijumps[k].func, p.cfg.ijumps[k].index}] = k;
  for (const auto& f : p.funcs) {
    for (size_t i = 0; i < f.instrs.size(); ++i) {
      if (f.is_data[i]) continue;
      InstrClass c = classify(f.instrs[i]);
      if (c == InstrClass::IndirectCall && !a.icall_at.count({f.name, i}))
        return "indirect call in '" + f.name + "' has no cfg record";
      if (c == InstrClass::IndirectJump && !a.ijump_at.count({f.name, i}))
        return "indirect jump in '" + f.name + "' has no cfg record";
    }
  }
  if (p.cfg.icalls.size() > cfg.indirect_calls)
    return "indirect call sites exceed INDIRECT_CALLS capacity";
  if (p.cfg.ijumps.size() > cfg.indirect_jumps)
    return "indirect jump sites exceed INDIRECT_JUMPS capacity";
  if (indirect_call_targets(p.cfg).size() > cfg.indirectly_called)
    return "indirect call targets exceed INDIRECTLY_CALLED capacity";
  if (p.funcs.size() > cfg.num_functions)
    return "functions exceed NUM_FUNCTIONS capacity";
  for (const auto& t : indirect_call_targets(p.cfg))
    if (a.pure_data.count(t))
      return "indirect call target '" + t + "' is a data block";
  for (const auto& sj : p.cfg.setjmps) {
    if (sj.slot >= cfg.setjmp_calls)
      return "setjmp slot exceeds SETJMP_CALLS capacity";
    const Function* f = p.find(sj.func);
    if (sj.index + 1 >= f->instrs.size())
      return "setjmp call in '" + sj.func + "' has no resume point";
    for (const auto& [name, idx] : f->labels)
      if (idx == sj.index + 1) a.resume_labels[name] = &sj - &p.cfg.setjmps[0];
  }
  return "";
}

// A jump site is a longjmp if it targets setjmp resume points. Mixing
// resume and ordinary targets in one site is rejected by the callers.
enum class JumpKind { Plain, Longjmp, Mixed };

JumpKind jump_kind(const IndirectJumpSite& s, const Analysis& a) {
  size_t resume = 0;
  for (const auto& t : s.targets)
    if (a.resume_labels.count(t)) ++resume;
  if (resume == 0) return JumpKind::Plain;
  return resume == s.targets.size() ? JumpKind::Longjmp : JumpKind::Mixed;
}

uint32_t forward_label_max(const MonitorConfig& cfg) {
  uint32_t bits =
      ceil_log2(std::max(cfg.indirect_calls, cfg.indirect_jumps));
  return (1u << bits) - 1;
}

// ---------------------------------------------------------------- FIXER --

std::string pass_fixer(const Program& p, const MonitorConfig& cfg,
                       const Analysis& a, Editor& ed) {
  (void)cfg;
  if (!p.cfg.setjmps.empty())
    return "fixer cannot protect programs with setjmp/longjmp: entries "
           "skipped by longjmp go stale on the shadow stack";
  for (const auto& f : p.funcs) {
    for (size_t i = 0; i < f.instrs.size(); ++i) {
      if (f.is_data[i]) continue;
      switch (classify(f.instrs[i])) {
        case InstrClass::DirectCall:
          ed.before(f.name, i, {cfi_op(Mnemonic::FixerPush)});
          break;
        case InstrClass::IndirectCall: {
          uint32_t row = uint32_t(a.icall_at.at({f.name, i}));
          ed.before(f.name, i,
                    {cfi_op(Mnemonic::FixerPush),
                     cfi_op(Mnemonic::FixerChk, row)});
          break;
        }
        case InstrClass::Return:
          ed.before(f.name, i, {cfi_op(Mnemonic::FixerPop)});
          break;
        default:
          break;
      }
    }
  }
  return "";
}

// Decoder and matrix are laid out over the instrumented image: columns in
// first-mention order over sites, tags from the final symbol addresses.
std::string fixer_init(const Program& out, MonitorInit& init) {
  LayoutResult lr = layout(out);
  if (!lr.ok()) return "layout of instrumented program failed: " + lr.error;
  std::map<std::string, uint32_t> col_of;
  for (const auto& site : out.cfg.icalls) {
    for (const auto& t : site.targets) {
      if (col_of.count(t)) continue;
      uint32_t col = uint32_t(col_of.size());
      col_of[t] = col;
      uint32_t addr = *lr.image->symbol(t);
      init.decoder.push_back({col, (addr >> 1) & 0x3ffff, t});
    }
  }
  for (size_t row = 0; row < out.cfg.icalls.size(); ++row)
    for (const auto& t : out.cfg.icalls[row].targets)
      init.matrix.push_back({uint32_t(row), col_of[t]});
  return "";
}

// ---------------------------------------------------------------- HAFIX --

std::string pass_hafix(const Program& p, const MonitorConfig& cfg,
                       const Analysis& a, Editor& ed) {
  size_t n = p.funcs.size();
  if (n + 1 > cfg.num_functions)
    return "hafix function label space exhausted";
  // Call graph over direct calls and declared indirect targets.
  std::vector<std::set<size_t>> adj(n);
  std::vector<bool> self_rec(n, false);
  for (const auto& f : p.funcs) {
    size_t fi = a.func_index.at(f.name);
    for (size_t i = 0; i < f.instrs.size(); ++i) {
      if (f.is_data[i]) continue;
      if (classify(f.instrs[i]) == InstrClass::DirectCall) {
        size_t gi = a.func_index.at(f.instrs[i].sym);
        if (gi == fi) self_rec[fi] = true;
        else adj[fi].insert(gi);
      }
    }
  }
  for (const auto& site : p.cfg.icalls) {
    size_t fi = a.func_index.at(site.func);
    for (const auto& t : site.targets) {
      size_t gi = a.func_index.at(t);
      if (gi == fi) self_rec[fi] = true;
      else adj[fi].insert(gi);
    }
  }
  // Mutual recursion: any cycle through more than one function.
  // Iterative SCC via Tarjan.
  {
    std::vector<int> index(n, -1), low(n, 0);
    std::vector<bool> on_stack(n, false);
    std::vector<size_t> stack;
    int counter = 0;
    for (size_t root = 0; root < n; ++root) {
      if (index[root] >= 0) continue;
      std::vector<std::pair<size_t, std::set<size_t>::iterator>> work;
      index[root] = low[root] = counter++;
      stack.push_back(root);
      on_stack[root] = true;
      work.push_back({root, adj[root].begin()});
      while (!work.empty()) {
        auto& [v, it] = work.back();
        if (it != adj[v].end()) {
          size_t w = *it++;
          if (index[w] < 0) {
            index[w] = low[w] = counter++;
            stack.push_back(w);
            on_stack[w] = true;
            work.push_back({w, adj[w].begin()});
          } else if (on_stack[w]) {
            low[v] = std::min(low[v], index[w]);
          }
        } else {
          size_t v2 = v;
          work.pop_back();
          if (!work.empty())
            low[work.back().first] =
                std::min(low[work.back().first], low[v2]);
          if (low[v2] == index[v2]) {
            std::vector<size_t> comp;
            for (;;) {
              size_t w = stack.back();
              stack.pop_back();
              on_stack[w] = false;
              comp.push_back(w);
              if (w == v2) break;
            }
            if (comp.size() > 1)
              return "hafix does not support mutual recursion (between '" +
                     p.funcs[comp[0]].name + "' and '" + p.funcs[comp[1]].name +
                     "')";
          }
        }
      }
    }
  }
  // One depth counter: two live recursions cannot nest, so no
  // self-recursive function may reach another one.
  for (size_t s = 0; s < n; ++s) {
    if (!self_rec[s]) continue;
    std::vector<bool> seen(n, false);
    std::vector<size_t> q{s};
    seen[s] = true;
    while (!q.empty()) {
      size_t v = q.back();
      q.pop_back();
      for (size_t w : adj[v]) {
        if (seen[w]) continue;
        if (self_rec[w])
          return "hafix does not support nested recursion ('" +
                 p.funcs[s].name + "' reaches '" + p.funcs[w].name + "')";
        seen[w] = true;
        q.push_back(w);
      }
    }
  }
  for (const auto& f : p.funcs) {
    if (a.pure_data.count(f.name)) continue;
    size_t fi = a.func_index.at(f.name);
    uint32_t fid = uint32_t(fi) + 1;
    ed.before(f.name, 0,
              {cfi_op(self_rec[fi] ? Mnemonic::HafixRec : Mnemonic::HafixAct,
                      fid)},
              false, kPhaseLanding);
    for (size_t i = 0; i < f.instrs.size(); ++i) {
      if (f.is_data[i]) continue;
      switch (classify(f.instrs[i])) {
        case InstrClass::DirectCall:
        case InstrClass::IndirectCall:
          ed.before(f.name, i + 1, {cfi_op(Mnemonic::HafixChk, fid)}, false,
                    kPhaseLanding);
          break;
        case InstrClass::Return:
          ed.before(f.name, i, {cfi_op(Mnemonic::HafixDel, fid)});
          break;
        default:
          break;
      }
    }
  }
  return "";
}

// ----------------------------------------------------------------- HCFI --

std::string pass_hcfi(const Program& p, const MonitorConfig& cfg,
                      const Analysis& a, Editor& ed) {
  // Label classes: sites with equal target sets share one label; a target
  // reached by unequal sets has no single entry label, so that is rejected.
  std::map<std::set<std::string>, std::vector<size_t>> classes;
  for (size_t k = 0; k < p.cfg.icalls.size(); ++k) {
    std::set<std::string> tset(p.cfg.icalls[k].targets.begin(),
                               p.cfg.icalls[k].targets.end());
    classes[tset].push_back(k);
  }
  std::map<std::string, const std::set<std::string>*> set_of_target;
  for (const auto& [tset, sites] : classes) {
    for (const auto& t : tset) {
      auto it = set_of_target.find(t);
      if (it != set_of_target.end() && *it->second != tset)
        return "hcfi target sets overlap without being equal (function '" +
               t + "')";
      set_of_target[t] = &tset;
    }
  }
  LabelAlloc alloc(forward_label_max(cfg));
  std::map<const std::set<std::string>*, uint32_t> class_label;
  for (const auto& [tset, sites] : classes) {
    uint32_t pinned = 0;
    for (size_t k : sites) {
      uint32_t l = p.cfg.icalls[k].label;
      if (l == 0) continue;
      if (pinned != 0 && pinned != l)
        return "hcfi sites in one equivalence class pin different labels";
      pinned = l;
    }
    if (pinned != 0 && !alloc.reserve(pinned))
      return "hcfi pinned label out of range or reused";
    class_label[&tset] = pinned;
  }
  for (auto& [tset, sites] : classes) {
    if (class_label[&tset] != 0) continue;
    auto l = alloc.alloc();
    if (!l) return "hcfi label space exhausted";
    class_label[&tset] = *l;
  }
  auto site_label = [&](size_t k) {
    std::set<std::string> tset(p.cfg.icalls[k].targets.begin(),
                               p.cfg.icalls[k].targets.end());
    return class_label.at(&classes.find(tset)->first);
  };

  for (const auto& t : indirect_call_targets(p.cfg))
    ed.before(t, 0,
              {cfi_op(Mnemonic::HcfiCheckLabel,
                      class_label.at(set_of_target.at(t)))},
              false, kPhaseLanding);

  for (const auto& f : p.funcs) {
    for (size_t i = 0; i < f.instrs.size(); ++i) {
      if (f.is_data[i]) continue;
      switch (classify(f.instrs[i])) {
        case InstrClass::DirectCall:
          ed.before(f.name, i, {cfi_op(Mnemonic::HcfiPush)});
          break;
        case InstrClass::IndirectCall:
          ed.before(f.name, i,
                    {cfi_op(Mnemonic::HcfiPush),
                     cfi_op(Mnemonic::HcfiSetLabel,
                            site_label(a.icall_at.at({f.name, i})))});
          break;
        case InstrClass::Return:
          ed.before(f.name, i, {cfi_op(Mnemonic::HcfiPop)});
          break;
        default:
          break;
      }
    }
  }
  for (const auto& s : p.cfg.ijumps) {
    switch (jump_kind(s, a)) {
      case JumpKind::Plain:
        break;  // jumps are not protected by HCFI
      case JumpKind::Longjmp:
        ed.before(s.func, s.index, {cfi_op(Mnemonic::CfiLongjmp)});
        break;
      case JumpKind::Mixed:
        return "jump site in '" + s.func +
               "' mixes longjmp resume points with ordinary targets";
    }
  }
  // The slot save must be the landing instruction so that both the setjmp
  // return and the longjmp architecturally hit it; hence it claims the
  // resume label.
  for (const auto& sj : p.cfg.setjmps)
    ed.before(sj.func, sj.index + 1, {cfi_op(Mnemonic::CfiSetjmp, sj.slot)},
              /*claim=*/true, kPhaseLanding);
  return "";
}

// --------------------------------------------------- HECFI/CET/EXCEC ----

struct TrampolinePlan {
  // site index -> trampoline function name, for non-exclusive sites
  std::map<size_t, std::string> tramp_of;
  // targets reached through any trampoline (need vestigial entry checks)
  std::vector<std::string> covered_targets;
};

// A site keeps the direct label pair only when no other site can reach any
// of its targets; otherwise the whole site dispatches via a trampoline.
TrampolinePlan plan_trampolines(const Program& p) {
  TrampolinePlan plan;
  std::map<std::string, std::set<size_t>> sites_of;
  for (size_t k = 0; k < p.cfg.icalls.size(); ++k)
    for (const auto& t : p.cfg.icalls[k].targets) sites_of[t].insert(k);
  std::set<std::string> covered;
  size_t counter = 0;
  for (size_t k = 0; k < p.cfg.icalls.size(); ++k) {
    bool exclusive = true;
    for (const auto& t : p.cfg.icalls[k].targets)
      if (sites_of[t].size() > 1) exclusive = false;
    if (exclusive) continue;
    plan.tramp_of[k] = "_tr_" + std::to_string(counter++);
    for (const auto& t : p.cfg.icalls[k].targets)
      if (covered.insert(t).second) plan.covered_targets.push_back(t);
  }
  return plan;
}

std::string check_site_shape(const Program& p, const IndirectCallSite& s) {
  const Function* f = p.find(s.func);
  const Instruction& ins = f->instrs[s.index];
  if (ins.imm != 0)
    return "trampolined call site in '" + s.func +
           "' must use a zero jalr offset";
  if (ins.rs1 == kRegRa || ins.rs1 == kRegSp || ins.rs1 == kRegT0)
    return "trampolined call site in '" + s.func +
           "' must keep its pointer outside ra/sp/t0";
  return "";
}

// Jump-site instrumentation shared by HECFI and EXCEC: a per-site label
// announced before the jump and a claiming check on every target label.
// Targets shared between sites or aliasing a function entry have no single
// valid label and are rejected.
std::string plan_jump_targets(
    const Program& p, const Analysis& a,
    std::map<std::string, std::pair<std::string, size_t>>& target_pos) {
  std::set<std::string> seen;
  for (const auto& s : p.cfg.ijumps) {
    for (const auto& t : s.targets) {
      if (!seen.insert(t).second)
        return "jump target label '" + t + "' is shared between jump sites";
      for (const auto& f : p.funcs) {
        auto it = f.labels.find(t);
        if (it == f.labels.end()) continue;
        if (it->second == 0)
          return "jump target label '" + t + "' aliases a function entry";
        if (f.is_data[it->second])
          return "jump target label '" + t + "' points at data";
        target_pos[t] = {f.name, it->second};
      }
    }
  }
  (void)a;
  return "";
}

Function build_trampoline(const std::string& name, uint32_t site_label,
                          uint8_t rx, const std::vector<std::string>& targets,
                          Mnemonic check_op) {
  Function tr;
  tr.name = name;
  auto push = [&](Instruction i) {
    tr.instrs.push_back(std::move(i));
    tr.injected.push_back(true);
    tr.is_data.push_back(false);
  };
  push(cfi_op(check_op, site_label));
  push(lw_ri(rx, kRegSp, 0));
  push(addi_ri(kRegSp, kRegSp, 4));
  for (const auto& t : targets) {
    push(la_sym(kRegT0, t));
    push(beq_sym(rx, kRegT0, t, 4));
  }
  push(cfi_op(check_op, 0));
  push(ebreak_op());
  return tr;
}

// The one pass behind instrument_hecfi and instrument_excec; they differ in
// the check mnemonic, the return-edge companions, and setjmp support.
std::string pass_forward_edges(const Program& p, const MonitorConfig& cfg,
                               const Analysis& a, Scheme scheme, Editor& ed,
                               std::vector<Function>& trampolines) {
  const bool hecfi = scheme == Scheme::Hecfi;
  const Mnemonic check_op =
      hecfi ? Mnemonic::HecfiCheck : Mnemonic::CfiCheck;
  if (hecfi && !p.cfg.setjmps.empty())
    return "hecfi cannot protect programs with setjmp/longjmp: the label "
           "stack cannot unwind across skipped returns";
  if (hecfi && p.funcs.size() + 1 > cfg.num_functions)
    return "hecfi function label space exhausted";

  LabelAlloc alloc(forward_label_max(cfg));
  std::vector<uint32_t> icall_label(p.cfg.icalls.size(), 0);
  std::vector<uint32_t> ijump_label(p.cfg.ijumps.size(), 0);
  for (size_t k = 0; k < p.cfg.icalls.size(); ++k)
    if (p.cfg.icalls[k].label != 0) {
      if (!alloc.reserve(p.cfg.icalls[k].label))
        return "pinned site label out of range or reused";
      icall_label[k] = p.cfg.icalls[k].label;
    }
  for (size_t k = 0; k < p.cfg.ijumps.size(); ++k)
    if (p.cfg.ijumps[k].label != 0) {
      if (!alloc.reserve(p.cfg.ijumps[k].label))
        return "pinned site label out of range or reused";
      ijump_label[k] = p.cfg.ijumps[k].label;
    }
  auto fill = [&](std::vector<uint32_t>& v) -> bool {
    for (auto& l : v)
      if (l == 0) {
        auto n = alloc.alloc();
        if (!n) return false;
        l = *n;
      }
    return true;
  };
  if (!fill(icall_label) || !fill(ijump_label))
    return "site label space exhausted";

  TrampolinePlan plan = plan_trampolines(p);
  std::map<std::string, std::pair<std::string, size_t>> jump_target_pos;
  if (std::string e = plan_jump_targets(p, a, jump_target_pos); !e.empty())
    return e;

  auto hecfi_fid = [&](const std::string& fn) {
    return uint32_t(a.func_index.at(fn)) + 1;
  };

  // Forward edges at indirect call sites.
  for (size_t k = 0; k < p.cfg.icalls.size(); ++k) {
    const auto& s = p.cfg.icalls[k];
    std::vector<Instruction> pre;
    if (hecfi) pre.push_back(cfi_op(Mnemonic::HecfiPush, hecfi_fid(s.func)));
    auto tr = plan.tramp_of.find(k);
    if (tr == plan.tramp_of.end()) {
      pre.push_back(cfi_op(Mnemonic::CfiCall, icall_label[k]));
      for (const auto& t : s.targets)
        ed.before(t, 0, {cfi_op(check_op, icall_label[k])}, false,
                  kPhaseLanding);
    } else {
      if (std::string e = check_site_shape(p, s); !e.empty()) return e;
      uint8_t rx = p.find(s.func)->instrs[s.index].rs1;
      pre.push_back(addi_ri(kRegSp, kRegSp, -4));
      pre.push_back(sw_ri(rx, kRegSp, 0));
      pre.push_back(la_sym(rx, tr->second));
      pre.push_back(cfi_op(Mnemonic::CfiCall, icall_label[k]));
      trampolines.push_back(build_trampoline(tr->second, icall_label[k], rx,
                                             s.targets, check_op));
    }
    ed.before(s.func, s.index, std::move(pre));
  }
  // Vestigial entry checks for trampoline-covered targets; the table
  // branches to target+4, bypassing them.
  for (const auto& t : plan.covered_targets) {
    auto l = alloc.alloc();
    if (!l) return "entry label space exhausted";
    ed.before(t, 0, {cfi_op(check_op, *l)}, false, kPhaseLanding);
  }
  // Jump sites, including longjmp announces under EXCEC.
  for (size_t k = 0; k < p.cfg.ijumps.size(); ++k) {
    const auto& s = p.cfg.ijumps[k];
    JumpKind kind = jump_kind(s, a);
    if (kind == JumpKind::Mixed)
      return "jump site in '" + s.func +
             "' mixes longjmp resume points with ordinary targets";
    if (kind == JumpKind::Longjmp && s.targets.size() != 1)
      return "longjmp site in '" + s.func + "' has multiple resume points";
    std::vector<Instruction> pre;
    if (kind == JumpKind::Longjmp)
      pre.push_back(cfi_op(Mnemonic::CfiLongjmp));
    pre.push_back(cfi_op(Mnemonic::CfiJump, ijump_label[k]));
    ed.before(s.func, s.index, std::move(pre));
    for (const auto& t : s.targets) {
      const auto& [fn, idx] = jump_target_pos.at(t);
      ed.before(fn, idx, {cfi_op(check_op, ijump_label[k])}, /*claim=*/true,
                kPhaseLanding);
    }
  }
  // Return edges (HECFI only): push at the call, pop at the landing.
  if (hecfi) {
    for (const auto& f : p.funcs) {
      uint32_t fid = hecfi_fid(f.name);
      for (size_t i = 0; i < f.instrs.size(); ++i) {
        if (f.is_data[i]) continue;
        InstrClass c = classify(f.instrs[i]);
        if (c == InstrClass::DirectCall)
          ed.before(f.name, i, {cfi_op(Mnemonic::HecfiPush, fid)});
        if (c == InstrClass::DirectCall || c == InstrClass::IndirectCall)
          ed.before(f.name, i + 1, {cfi_op(Mnemonic::HecfiPop, fid)}, false,
                    kPhaseLanding);
      }
    }
  }
  // Setjmp landings (EXCEC only; HECFI refused above). Requested after the
  // jump-target checks so a longjmp resume point reads check-then-save.
  if (!hecfi) {
    for (const auto& sj : p.cfg.setjmps)
      ed.before(sj.func, sj.index + 1, {cfi_op(Mnemonic::CfiSetjmp, sj.slot)},
                false, kPhaseLanding);
  }
  return "";
}

std::string pass_cet(const Program& p, const MonitorConfig& cfg,
                     const Analysis& a, Editor& ed) {
  (void)cfg;
  if (!p.cfg.setjmps.empty())
    return "cet cannot protect programs with setjmp/longjmp: entries "
           "skipped by longjmp go stale on the shadow stack";
  // One endbranch per landing position, however many edges reach it.
  std::set<std::pair<std::string, size_t>> points;
  for (const auto& t : indirect_call_targets(p.cfg)) points.insert({t, 0});
  for (const auto& s : p.cfg.ijumps) {
    for (const auto& t : s.targets) {
      for (const auto& f : p.funcs) {
        auto it = f.labels.find(t);
        if (it == f.labels.end()) continue;
        if (f.is_data[it->second])
          return "jump target label '" + t + "' points at data";
        points.insert({f.name, it->second});
      }
    }
  }
  (void)a;
  for (const auto& [fn, idx] : points)
    ed.before(fn, idx, {cfi_op(Mnemonic::Endbranch)}, /*claim=*/true,
              kPhaseLanding);
  return "";
}

}  // namespace

std::string write_ledger(const Ledger& l, Scheme s) {
  std::ostringstream os;
  os << "ledger-v1\n";
  os << "scheme " << scheme_name(s) << "\n";
  for (const auto& [name, count] : l.injected)
    os << "injected " << name << " " << count << "\n";
  os << "trampolines " << l.trampolines << "\n";
  os << "total " << l.total << "\n";
  return os.str();
}

LedgerParseResult parse_ledger(const std::string& text) {
  LedgerParseResult r;
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "ledger-v1") {
    r.error = "missing ledger-v1 header";
    return r;
  }
  Ledger l;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "scheme") {
      std::string name;
      ls >> name;
      r.scheme = parse_scheme(name);
      if (!r.scheme) {
        r.error = "unknown scheme '" + name + "'";
        return r;
      }
    } else if (key == "injected") {
      std::string name;
      uint64_t count = 0;
      if (!(ls >> name >> count)) {
        r.error = "bad injected record";
        return r;
      }
      l.injected[name] = count;
    } else if (key == "trampolines") {
      if (!(ls >> l.trampolines)) {
        r.error = "bad trampolines record";
        return r;
      }
    } else if (key == "total") {
      if (!(ls >> l.total)) {
        r.error = "bad total record";
        return r;
      }
    } else {
      r.error = "unknown ledger record '" + key + "'";
      return r;
    }
  }
  r.ledger = std::move(l);
  return r;
}

InstrumentResult instrument(const Program& p, Scheme s,
                            const MonitorConfig& cfg) {
  InstrumentResult r;
  Analysis a;
  if (std::string e = validate_and_analyze(p, cfg, a); !e.empty()) {
    r.error = e;
    return r;
  }
  Editor ed;
  std::vector<Function> trampolines;
  std::string e;
  switch (s) {
    case Scheme::Fixer:
      e = pass_fixer(p, cfg, a, ed);
      break;
    case Scheme::Hafix:
      e = pass_hafix(p, cfg, a, ed);
      break;
    case Scheme::Hcfi:
      e = pass_hcfi(p, cfg, a, ed);
      break;
    case Scheme::Hecfi:
    case Scheme::Excec:
      e = pass_forward_edges(p, cfg, a, s, ed, trampolines);
      break;
    case Scheme::Cet:
      e = pass_cet(p, cfg, a, ed);
      break;
  }
  if (!e.empty()) {
    r.error = e;
    return r;
  }
  // EXCEC brackets enforcement around the program body, but stays entirely
  // out of programs it does not otherwise touch.
  if (s == Scheme::Excec && (!ed.empty || !trampolines.empty())) {
    std::string entry = "main";
    bool have_main = p.find(entry) != nullptr;
    if (!have_main && !p.funcs.empty()) entry = p.funcs[0].name;
    ed.before(entry, 0, {cfi_op(Mnemonic::CfiEnable)}, false, kPhaseLanding);
    for (const auto& f : p.funcs)
      for (size_t i = 0; i < f.instrs.size(); ++i)
        if (!f.is_data[i] && f.instrs[i].m == Mnemonic::Ecall)
          ed.before(f.name, i, {cfi_op(Mnemonic::CfiDisable)});
  }
  Program out = p;
  apply_edits(out, ed, r.ledger);
  for (auto& tr : trampolines) {
    for (const auto& ins : tr.instrs) {
      r.ledger.injected[mnemonic_name(ins.m)]++;
      r.ledger.total++;
    }
    r.ledger.trampolines++;
    out.funcs.push_back(std::move(tr));
  }
  if (s == Scheme::Fixer) {
    if (std::string fe = fixer_init(out, r.init); !fe.empty()) {
      r.error = fe;
      return r;
    }
  }
  r.prog = std::move(out);
  return r;
}

}  // namespace cfisim
