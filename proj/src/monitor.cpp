#include "cfisim/monitor.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>

namespace cfisim {
namespace {

uint32_t ceil_log2(uint64_t n) {
  uint32_t bits = 0;
  while ((uint64_t(1) << bits) < n) ++bits;
  return bits;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream is(line);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

}  // namespace

const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::Fixer: return "fixer";
    case Scheme::Hafix: return "hafix";
    case Scheme::Hcfi: return "hcfi";
    case Scheme::Hecfi: return "hecfi";
    case Scheme::Cet: return "cet";
    case Scheme::Excec: return "excec";
  }
  return "?";
}

std::optional<Scheme> parse_scheme(const std::string& name) {
  for (Scheme s : kAllSchemes)
    if (name == scheme_name(s)) return s;
  return std::nullopt;
}

std::string MonitorConfig::validate() const {
  if (shadow_stack_size == 0) return "shadow_stack_size must be positive";
  if (recursion_depth == 0) return "recursion_depth must be positive";
  if (indirect_calls == 0) return "indirect_calls must be positive";
  if (indirect_jumps == 0) return "indirect_jumps must be positive";
  if (indirectly_called == 0) return "indirectly_called must be positive";
  if (num_functions == 0) return "num_functions must be positive";
  if (setjmp_calls == 0) return "setjmp_calls must be positive";
  return "";
}

MonitorConfigResult parse_monitor_config(const std::string& text) {
  MonitorConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  auto err = [&](const std::string& msg) {
    MonitorConfigResult r;
    r.error = "line " + std::to_string(lineno) + ": " + msg;
    return r;
  };
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::string trimmed;
    for (char c : line)
      if (!isspace((unsigned char)c)) trimmed += c;
    if (trimmed.empty()) continue;
    auto eq = trimmed.find('=');
    if (eq == std::string::npos) return err("expected key=value");
    std::string key = trimmed.substr(0, eq);
    std::string val = trimmed.substr(eq + 1);
    if (key == "shadow_entry_bits") {
      if (val == "full32")
        cfg.shadow_entry_bits = MonitorConfig::EntryBits::Full32;
      else if (val == "bits18to1")
        cfg.shadow_entry_bits = MonitorConfig::EntryBits::Bits18to1;
      else
        return err("shadow_entry_bits must be full32 or bits18to1");
      continue;
    }
    if (key == "recursion_counters") {
      if (val == "on")
        cfg.recursion_counters = true;
      else if (val == "off")
        cfg.recursion_counters = false;
      else
        return err("recursion_counters must be on or off");
      continue;
    }
    uint32_t* field = nullptr;
    if (key == "shadow_stack_size") field = &cfg.shadow_stack_size;
    else if (key == "recursion_depth") field = &cfg.recursion_depth;
    else if (key == "indirect_calls") field = &cfg.indirect_calls;
    else if (key == "indirect_jumps") field = &cfg.indirect_jumps;
    else if (key == "indirectly_called") field = &cfg.indirectly_called;
    else if (key == "num_functions") field = &cfg.num_functions;
    else if (key == "setjmp_calls") field = &cfg.setjmp_calls;
    else return err("unknown key '" + key + "'");
    try {
      size_t pos = 0;
      unsigned long v = std::stoul(val, &pos, 0);
      if (pos != val.size() || v > 0xffffffffUL) return err("bad value");
      *field = uint32_t(v);
    } catch (...) {
      return err("bad value");
    }
  }
  std::string verr = cfg.validate();
  if (!verr.empty()) {
    MonitorConfigResult r;
    r.error = verr;
    return r;
  }
  MonitorConfigResult r;
  r.config = cfg;
  return r;
}

CfiEvent CfiEvent::direct_call(uint32_t pc, uint32_t ra, uint32_t target) {
  CfiEvent e;
  e.kind = EventKind::DirectCall;
  e.pc = pc;
  e.return_addr = ra;
  e.target = target;
  return e;
}

CfiEvent CfiEvent::indirect_call(uint32_t pc, uint32_t ra, uint32_t target) {
  CfiEvent e = direct_call(pc, ra, target);
  e.kind = EventKind::IndirectCall;
  return e;
}

CfiEvent CfiEvent::ret(uint32_t pc, uint32_t target) {
  CfiEvent e;
  e.kind = EventKind::Return;
  e.pc = pc;
  e.target = target;
  return e;
}

CfiEvent CfiEvent::indirect_jump(uint32_t pc, uint32_t target) {
  CfiEvent e;
  e.kind = EventKind::IndirectJump;
  e.pc = pc;
  e.target = target;
  return e;
}

CfiEvent CfiEvent::cfi(uint32_t pc, Mnemonic op, uint32_t payload) {
  CfiEvent e;
  e.kind = EventKind::Cfi;
  e.pc = pc;
  e.op = op;
  e.payload = payload;
  return e;
}

CfiEvent CfiEvent::retire(uint32_t pc) {
  CfiEvent e;
  e.kind = EventKind::Retire;
  e.pc = pc;
  return e;
}

namespace {
const std::array<std::pair<ExceptionKind, const char*>, 9> kExcNames{{
    {ExceptionKind::StackFull, "StackFull"},
    {ExceptionKind::StackEmpty, "StackEmpty"},
    {ExceptionKind::ReturnMismatch, "ReturnMismatch"},
    {ExceptionKind::LabelMismatch, "LabelMismatch"},
    {ExceptionKind::InactiveTarget, "InactiveTarget"},
    {ExceptionKind::PolicyDenied, "PolicyDenied"},
    {ExceptionKind::RecursionExceeded, "RecursionExceeded"},
    {ExceptionKind::SetjmpSlotInvalid, "SetjmpSlotInvalid"},
    {ExceptionKind::InvalidFlow, "InvalidFlow"},
}};
}  // namespace

const char* exception_name(ExceptionKind k) {
  for (const auto& [kind, name] : kExcNames)
    if (kind == k) return name;
  return "?";
}

std::optional<ExceptionKind> parse_exception(const std::string& name) {
  for (const auto& [kind, nm] : kExcNames)
    if (name == nm) return kind;
  return std::nullopt;
}

std::optional<ExceptionKind> ShadowStack::push(uint32_t value) {
  uint32_t v = mask_value(value);
  if (counters_ && !entries_.empty() && entries_.back().value == v) {
    if (entries_.back().counter == depth_ - 1)
      return ExceptionKind::RecursionExceeded;
    ++entries_.back().counter;
    return std::nullopt;
  }
  if (entries_.size() == size_) return ExceptionKind::StackFull;
  entries_.push_back({v, 0});
  max_sp_ = std::max(max_sp_, uint32_t(entries_.size()));
  return std::nullopt;
}

std::optional<ExceptionKind> ShadowStack::pop_check(uint32_t value) {
  if (entries_.empty()) return ExceptionKind::StackEmpty;
  if (entries_.back().value != mask_value(value))
    return ExceptionKind::ReturnMismatch;
  if (counters_ && entries_.back().counter > 0)
    --entries_.back().counter;
  else
    entries_.pop_back();
  return std::nullopt;
}

ShadowStack::Position ShadowStack::position() const {
  Position p;
  p.sp = sp();
  p.top_counter = entries_.empty() ? 0 : entries_.back().counter;
  return p;
}

void ShadowStack::unwind_to(const Position& pos) {
  if (pos.sp < entries_.size()) entries_.resize(pos.sp);
  if (!entries_.empty() && entries_.size() == pos.sp)
    entries_.back().counter = pos.top_counter;
}

MonitorInitResult parse_mon(const std::string& text) {
  MonitorInitResult r;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  auto err = [&](const std::string& msg) {
    MonitorInitResult out;
    out.error = "line " + std::to_string(lineno) + ": " + msg;
    return out;
  };
  if (!std::getline(is, line) || line != "mon-v1")
    return err("expected mon-v1 header");
  lineno = 1;
  MonitorInit init;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto toks = split_ws(line);
    if (toks.empty()) continue;
    try {
      if (toks[0] == "decoder") {
        if (toks.size() != 4) return err("decoder needs: col tag name");
        MonitorInit::DecoderEntry e;
        e.col = uint32_t(std::stoul(toks[1], nullptr, 0));
        e.tag = uint32_t(std::stoul(toks[2], nullptr, 0));
        e.name = toks[3];
        if (e.tag > 0x3ffff) return err("tag out of range");
        init.decoder.push_back(e);
      } else if (toks[0] == "matrix") {
        if (toks.size() != 3) return err("matrix needs: row col");
        uint32_t row = uint32_t(std::stoul(toks[1], nullptr, 0));
        uint32_t col = uint32_t(std::stoul(toks[2], nullptr, 0));
        init.matrix.emplace_back(row, col);
      } else {
        return err("unknown record '" + toks[0] + "'");
      }
    } catch (...) {
      return err("bad number");
    }
  }
  r.init = std::move(init);
  return r;
}

std::string write_mon(const MonitorInit& init) {
  std::ostringstream os;
  os << "mon-v1\n";
  for (const auto& e : init.decoder) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "0x%05x", e.tag);
    os << "decoder " << e.col << " " << buf << " " << e.name << "\n";
  }
  for (const auto& [row, col] : init.matrix)
    os << "matrix " << row << " " << col << "\n";
  return os.str();
}

namespace {

// Shared handling for the management ops. Returns a verdict when the event
// was consumed here. While disabled, only CFI_ENABLE has any effect.
class BaseMonitor : public Monitor {
 protected:
  std::optional<Verdict> manage(const CfiEvent& e, bool armed) {
    if (!enabled_) {
      if (e.kind == EventKind::Cfi && e.op == Mnemonic::CfiEnable)
        enabled_ = true;
      return Verdict::good();
    }
    if (e.kind != EventKind::Cfi) return std::nullopt;
    switch (e.op) {
      case Mnemonic::CfiEnable:
        return Verdict::good();
      case Mnemonic::CfiDisable:
        if (armed) return Verdict::bad(ExceptionKind::InvalidFlow);
        enabled_ = false;
        return Verdict::good();
      case Mnemonic::CfiReset:
        reset_state();
        enabled_ = false;
        return Verdict::good();
      default:
        return std::nullopt;
    }
  }
  virtual void reset_state() = 0;
};

class FixerMonitor : public BaseMonitor {
 public:
  FixerMonitor(const MonitorConfig& cfg, const MonitorInit& init)
      : cfg_(cfg),
        stack_(cfg.shadow_stack_size, ShadowStack::Mask::Full32, false, 0),
        matrix_(size_t(cfg.indirect_calls),
                std::vector<bool>(cfg.indirectly_called, false)) {
    for (const auto& e : init.decoder)
      if (e.col < cfg.indirectly_called) decoder_[e.tag] = e.col;
    for (const auto& [row, col] : init.matrix)
      if (row < cfg.indirect_calls && col < cfg.indirectly_called)
        matrix_[row][col] = true;
  }

  Verdict on_event(const CfiEvent& e) override {
    if (auto v = manage(e, false)) return *v;
    switch (e.kind) {
      case EventKind::Cfi:
        switch (e.op) {
          case Mnemonic::FixerPush:
            push_armed_ = true;
            return Verdict::good();
          case Mnemonic::FixerPop: {
            if (stack_.empty()) return Verdict::bad(ExceptionKind::StackEmpty);
            pop_latch_ = stack_.top_value();
            auto r = stack_.pop_check(stack_.top_value());
            (void)r;
            pop_armed_ = true;
            return Verdict::good();
          }
          case Mnemonic::FixerChk:
            if (e.payload >= cfg_.indirect_calls)
              return Verdict::bad(ExceptionKind::PolicyDenied);
            policy_armed_ = true;
            policy_row_ = e.payload;
            return Verdict::good();
          default:
            return Verdict::good();
        }
      case EventKind::DirectCall:
        return do_push(e);
      case EventKind::IndirectCall: {
        if (policy_armed_) {
          policy_armed_ = false;
          auto it = decoder_.find((e.target >> 1) & 0x3ffff);
          if (it == decoder_.end())
            return Verdict::bad(ExceptionKind::PolicyDenied);
          if (!matrix_[policy_row_][it->second])
            return Verdict::bad(ExceptionKind::PolicyDenied);
        }
        return do_push(e);
      }
      case EventKind::Return:
        if (pop_armed_) {
          pop_armed_ = false;
          if (pop_latch_ != e.target)
            return Verdict::bad(ExceptionKind::ReturnMismatch);
        }
        return Verdict::good();
      default:
        return Verdict::good();
    }
  }

 private:
  Verdict do_push(const CfiEvent& e) {
    if (push_armed_) {
      push_armed_ = false;
      if (auto exc = stack_.push(e.return_addr)) return Verdict::bad(*exc);
    }
    return Verdict::good();
  }
  void reset_state() override {
    stack_.clear();
    push_armed_ = pop_armed_ = policy_armed_ = false;
  }

  MonitorConfig cfg_;
  ShadowStack stack_;
  std::vector<std::vector<bool>> matrix_;
  std::map<uint32_t, uint32_t> decoder_;
  bool push_armed_ = false;
  bool pop_armed_ = false;
  uint32_t pop_latch_ = 0;
  bool policy_armed_ = false;
  uint32_t policy_row_ = 0;
};

class HafixMonitor : public BaseMonitor {
 public:
  explicit HafixMonitor(const MonitorConfig& cfg)
      : cfg_(cfg), active_(cfg.num_functions, false) {}

  Verdict on_event(const CfiEvent& e) override {
    if (auto v = manage(e, false)) return *v;
    if (expect_chk_) {
      expect_chk_ = false;
      if (e.kind != EventKind::Cfi || e.op != Mnemonic::HafixChk)
        return Verdict::bad(ExceptionKind::InvalidFlow);
      if (e.payload >= cfg_.num_functions || !active_[e.payload])
        return Verdict::bad(ExceptionKind::InactiveTarget);
      return Verdict::good();
    }
    switch (e.kind) {
      case EventKind::Cfi:
        switch (e.op) {
          case Mnemonic::HafixAct:
            if (e.payload >= cfg_.num_functions)
              return Verdict::bad(ExceptionKind::InvalidFlow);
            active_[e.payload] = true;
            return Verdict::good();
          case Mnemonic::HafixRec:
            if (e.payload >= cfg_.num_functions)
              return Verdict::bad(ExceptionKind::InvalidFlow);
            if (!active_[e.payload]) {
              active_[e.payload] = true;
              rec_owner_ = e.payload;
            } else {
              if (depth_ == cfg_.recursion_depth - 1)
                return Verdict::bad(ExceptionKind::RecursionExceeded);
              ++depth_;
            }
            return Verdict::good();
          case Mnemonic::HafixDel:
            if (e.payload >= cfg_.num_functions)
              return Verdict::bad(ExceptionKind::InvalidFlow);
            if (depth_ > 0 && e.payload == rec_owner_)
              --depth_;
            else
              active_[e.payload] = false;
            return Verdict::good();
          case Mnemonic::HafixChk:
            // Redundant check outside a return landing: still enforced.
            if (e.payload >= cfg_.num_functions || !active_[e.payload])
              return Verdict::bad(ExceptionKind::InactiveTarget);
            return Verdict::good();
          default:
            return Verdict::good();
        }
      case EventKind::Return:
        expect_chk_ = true;
        return Verdict::good();
      default:
        return Verdict::good();
    }
  }

 private:
  void reset_state() override {
    std::fill(active_.begin(), active_.end(), false);
    depth_ = 0;
    expect_chk_ = false;
  }

  MonitorConfig cfg_;
  std::vector<bool> active_;
  uint32_t depth_ = 0;
  uint32_t rec_owner_ = 0;
  bool expect_chk_ = false;
};

class HcfiMonitor : public BaseMonitor {
 public:
  explicit HcfiMonitor(const MonitorConfig& cfg)
      : cfg_(cfg),
        stack_(cfg.shadow_stack_size, ShadowStack::Mask::Full32,
               cfg.recursion_counters, cfg.recursion_depth),
        slots_(cfg.setjmp_calls) {}

  Verdict on_event(const CfiEvent& e) override {
    if (auto v = manage(e, fsm_ != Fsm::None)) return *v;
    if (e.kind == EventKind::Cfi) return on_cfi(e);
    switch (fsm_) {
      case Fsm::None:
        break;
      case Fsm::Announced:
        if (e.kind == EventKind::IndirectCall) {
          fsm_ = Fsm::ExpectCheck;
          return do_push(e);
        }
        fsm_ = Fsm::None;
        return Verdict::bad(ExceptionKind::InvalidFlow);
      case Fsm::ExpectCheck:
        fsm_ = Fsm::None;
        return Verdict::bad(ExceptionKind::InvalidFlow);
    }
    switch (e.kind) {
      case EventKind::DirectCall:
        return do_push(e);
      case EventKind::IndirectCall:
        // Unannounced indirect transfer.
        return Verdict::bad(ExceptionKind::InvalidFlow);
      case EventKind::Return:
        if (pop_armed_) {
          pop_armed_ = false;
          if (auto exc = stack_.pop_check(e.target)) return Verdict::bad(*exc);
        }
        return Verdict::good();
      default:
        return Verdict::good();
    }
  }

 private:
  Verdict on_cfi(const CfiEvent& e) {
    if (fsm_ == Fsm::ExpectCheck) {
      fsm_ = Fsm::None;
      if (e.op != Mnemonic::HcfiCheckLabel)
        return Verdict::bad(ExceptionKind::InvalidFlow);
      if (e.payload != label_)
        return Verdict::bad(ExceptionKind::LabelMismatch);
      return Verdict::good();
    }
    if (fsm_ == Fsm::Announced) {
      fsm_ = Fsm::None;
      return Verdict::bad(ExceptionKind::InvalidFlow);
    }
    switch (e.op) {
      case Mnemonic::HcfiPush:
        push_armed_ = true;
        return Verdict::good();
      case Mnemonic::HcfiPop:
        if (stack_.empty()) return Verdict::bad(ExceptionKind::StackEmpty);
        pop_armed_ = true;
        return Verdict::good();
      case Mnemonic::HcfiSetLabel:
        fsm_ = Fsm::Announced;
        label_ = e.payload;
        return Verdict::good();
      case Mnemonic::HcfiCheckLabel:
        // Landing reached by direct flow: a plain no-op.
        return Verdict::good();
      case Mnemonic::CfiSetjmp: {
        if (e.payload >= cfg_.setjmp_calls)
          return Verdict::bad(ExceptionKind::SetjmpSlotInvalid);
        if (longjmp_pending_) {
          longjmp_pending_ = false;
          stack_.unwind_to(slots_[e.payload]);
        } else {
          slots_[e.payload] = stack_.position();
        }
        return Verdict::good();
      }
      case Mnemonic::CfiLongjmp:
        longjmp_pending_ = true;
        return Verdict::good();
      default:
        return Verdict::good();
    }
  }

  Verdict do_push(const CfiEvent& e) {
    if (push_armed_) {
      push_armed_ = false;
      if (auto exc = stack_.push(e.return_addr)) return Verdict::bad(*exc);
    }
    return Verdict::good();
  }

  void reset_state() override {
    stack_.clear();
    fsm_ = Fsm::None;
    push_armed_ = pop_armed_ = longjmp_pending_ = false;
  }

  enum class Fsm { None, Announced, ExpectCheck };
  MonitorConfig cfg_;
  ShadowStack stack_;
  std::vector<ShadowStack::Position> slots_;
  Fsm fsm_ = Fsm::None;
  uint32_t label_ = 0;
  bool push_armed_ = false;
  bool pop_armed_ = false;
  bool longjmp_pending_ = false;
};

class HecfiMonitor : public BaseMonitor {
 public:
  explicit HecfiMonitor(const MonitorConfig& cfg)
      : stack_(cfg.shadow_stack_size, ShadowStack::Mask::Full32, false, 0) {}

  Verdict on_event(const CfiEvent& e) override {
    if (auto v = manage(e, fsm_ != Fsm::None)) return *v;
    switch (fsm_) {
      case Fsm::None:
        break;
      case Fsm::AnnCall:
        fsm_ = e.kind == EventKind::IndirectCall ? Fsm::ExpCheck : Fsm::None;
        return fsm_ == Fsm::ExpCheck
                   ? Verdict::good()
                   : Verdict::bad(ExceptionKind::InvalidFlow);
      case Fsm::AnnJump:
        fsm_ = e.kind == EventKind::IndirectJump ? Fsm::ExpCheck : Fsm::None;
        return fsm_ == Fsm::ExpCheck
                   ? Verdict::good()
                   : Verdict::bad(ExceptionKind::InvalidFlow);
      case Fsm::ExpCheck:
        fsm_ = Fsm::None;
        if (e.kind != EventKind::Cfi || e.op != Mnemonic::HecfiCheck)
          return Verdict::bad(ExceptionKind::InvalidFlow);
        if (e.payload != label_)
          return Verdict::bad(ExceptionKind::LabelMismatch);
        return Verdict::good();
      case Fsm::ExpPop:
        fsm_ = Fsm::None;
        if (e.kind != EventKind::Cfi || e.op != Mnemonic::HecfiPop)
          return Verdict::bad(ExceptionKind::InvalidFlow);
        if (stack_.empty()) return Verdict::bad(ExceptionKind::StackEmpty);
        if (stack_.top_value() != e.payload)
          return Verdict::bad(ExceptionKind::ReturnMismatch);
        {
          auto r = stack_.pop_check(stack_.top_value());
          (void)r;
        }
        return Verdict::good();
    }
    switch (e.kind) {
      case EventKind::Cfi:
        switch (e.op) {
          case Mnemonic::HecfiPush:
            if (auto exc = stack_.push(e.payload)) return Verdict::bad(*exc);
            return Verdict::good();
          case Mnemonic::HecfiPop:
            // Pop reached without a return landing on it.
            return Verdict::bad(ExceptionKind::InvalidFlow);
          case Mnemonic::HecfiCheck:
            if (e.payload == 0)
              return Verdict::bad(ExceptionKind::LabelMismatch);
            return Verdict::good();
          case Mnemonic::CfiCall:
            fsm_ = Fsm::AnnCall;
            label_ = e.payload;
            return Verdict::good();
          case Mnemonic::CfiJump:
            fsm_ = Fsm::AnnJump;
            label_ = e.payload;
            return Verdict::good();
          default:
            return Verdict::good();
        }
      case EventKind::IndirectCall:
      case EventKind::IndirectJump:
        return Verdict::bad(ExceptionKind::InvalidFlow);
      case EventKind::Return:
        fsm_ = Fsm::ExpPop;
        return Verdict::good();
      default:
        return Verdict::good();
    }
  }

 private:
  void reset_state() override {
    stack_.clear();
    fsm_ = Fsm::None;
  }

  enum class Fsm { None, AnnCall, AnnJump, ExpCheck, ExpPop };
  ShadowStack stack_;
  Fsm fsm_ = Fsm::None;
  uint32_t label_ = 0;
};

class CetMonitor : public BaseMonitor {
 public:
  explicit CetMonitor(const MonitorConfig& cfg)
      : stack_(cfg.shadow_stack_size, ShadowStack::Mask::Full32, false, 0) {}

  Verdict on_event(const CfiEvent& e) override {
    if (auto v = manage(e, expect_endbranch_)) return *v;
    if (expect_endbranch_) {
      expect_endbranch_ = false;
      if (e.kind != EventKind::Cfi || e.op != Mnemonic::Endbranch)
        return Verdict::bad(ExceptionKind::InvalidFlow);
      return Verdict::good();
    }
    switch (e.kind) {
      case EventKind::DirectCall:
        if (auto exc = stack_.push(e.return_addr)) return Verdict::bad(*exc);
        return Verdict::good();
      case EventKind::IndirectCall:
        if (auto exc = stack_.push(e.return_addr)) return Verdict::bad(*exc);
        expect_endbranch_ = true;
        return Verdict::good();
      case EventKind::IndirectJump:
        expect_endbranch_ = true;
        return Verdict::good();
      case EventKind::Return:
        if (auto exc = stack_.pop_check(e.target)) return Verdict::bad(*exc);
        return Verdict::good();
      default:
        return Verdict::good();
    }
  }

  bool interrupts_masked() const override { return expect_endbranch_; }

 private:
  void reset_state() override {
    stack_.clear();
    expect_endbranch_ = false;
  }

  ShadowStack stack_;
  bool expect_endbranch_ = false;
};

class ExcecMonitor : public BaseMonitor {
 public:
  explicit ExcecMonitor(const MonitorConfig& cfg)
      : cfg_(cfg),
        stack_(cfg.shadow_stack_size,
               cfg.shadow_entry_bits == MonitorConfig::EntryBits::Bits18to1
                   ? ShadowStack::Mask::Bits18to1
                   : ShadowStack::Mask::Full32,
               cfg.recursion_counters, cfg.recursion_depth),
        slots_(cfg.setjmp_calls) {}

  Verdict on_event(const CfiEvent& e) override {
    if (auto v = manage(e, fsm_ != Fsm::Idle)) return *v;
    switch (fsm_) {
      case Fsm::Idle:
        break;
      case Fsm::AnnCall:
        if (e.kind == EventKind::IndirectCall) {
          if (auto exc = stack_.push(e.return_addr)) {
            fsm_ = Fsm::Idle;
            return Verdict::bad(*exc);
          }
          fsm_ = Fsm::ExpCheck;
          return Verdict::good();
        }
        fsm_ = Fsm::Idle;
        return Verdict::bad(ExceptionKind::InvalidFlow);
      case Fsm::AnnJump:
        fsm_ = e.kind == EventKind::IndirectJump ? Fsm::ExpCheck : Fsm::Idle;
        return fsm_ == Fsm::ExpCheck
                   ? Verdict::good()
                   : Verdict::bad(ExceptionKind::InvalidFlow);
      case Fsm::ExpCheck:
        fsm_ = Fsm::Idle;
        if (e.kind != EventKind::Cfi || e.op != Mnemonic::CfiCheck)
          return Verdict::bad(ExceptionKind::InvalidFlow);
        if (e.payload != label_)
          return Verdict::bad(ExceptionKind::LabelMismatch);
        return Verdict::good();
    }
    switch (e.kind) {
      case EventKind::Cfi:
        switch (e.op) {
          case Mnemonic::CfiCall:
            fsm_ = Fsm::AnnCall;
            label_ = e.payload;
            return Verdict::good();
          case Mnemonic::CfiJump:
            fsm_ = Fsm::AnnJump;
            label_ = e.payload;
            return Verdict::good();
          case Mnemonic::CfiCheck:
            // Landing reached directly: a payload of zero is the poison
            // label closing a dispatch chain and always faults.
            if (e.payload == 0)
              return Verdict::bad(ExceptionKind::LabelMismatch);
            return Verdict::good();
          case Mnemonic::CfiSetjmp:
            if (e.payload >= cfg_.setjmp_calls)
              return Verdict::bad(ExceptionKind::SetjmpSlotInvalid);
            if (longjmp_pending_) {
              longjmp_pending_ = false;
              stack_.unwind_to(slots_[e.payload]);
            } else {
              slots_[e.payload] = stack_.position();
            }
            return Verdict::good();
          case Mnemonic::CfiLongjmp:
            longjmp_pending_ = true;
            return Verdict::good();
          default:
            return Verdict::good();
        }
      case EventKind::DirectCall:
        if (auto exc = stack_.push(e.return_addr)) return Verdict::bad(*exc);
        return Verdict::good();
      case EventKind::Return:
        if (auto exc = stack_.pop_check(e.target)) return Verdict::bad(*exc);
        return Verdict::good();
      case EventKind::IndirectCall:
      case EventKind::IndirectJump:
        return Verdict::bad(ExceptionKind::InvalidFlow);
      default:
        return Verdict::good();
    }
  }

  bool interrupts_masked() const override { return fsm_ != Fsm::Idle; }

 private:
  void reset_state() override {
    stack_.clear();
    fsm_ = Fsm::Idle;
    longjmp_pending_ = false;
    for (auto& s : slots_) s = {};
  }

  enum class Fsm { Idle, AnnCall, AnnJump, ExpCheck };
  MonitorConfig cfg_;
  ShadowStack stack_;
  std::vector<ShadowStack::Position> slots_;
  Fsm fsm_ = Fsm::Idle;
  uint32_t label_ = 0;
  bool longjmp_pending_ = false;
};

}  // namespace

std::unique_ptr<Monitor> make_monitor(Scheme s, const MonitorConfig& cfg,
                                      const MonitorInit& init) {
  switch (s) {
    case Scheme::Fixer: return std::make_unique<FixerMonitor>(cfg, init);
    case Scheme::Hafix: return std::make_unique<HafixMonitor>(cfg);
    case Scheme::Hcfi: return std::make_unique<HcfiMonitor>(cfg);
    case Scheme::Hecfi: return std::make_unique<HecfiMonitor>(cfg);
    case Scheme::Cet: return std::make_unique<CetMonitor>(cfg);
    case Scheme::Excec: return std::make_unique<ExcecMonitor>(cfg);
  }
  return nullptr;
}

uint64_t FfCost::item(const std::string& name) const {
  for (const auto& [n, v] : items)
    if (n == name) return v;
  return 0;
}

FfCost ff_cost(Scheme s, const MonitorConfig& cfg) {
  FfCost c;
  auto add = [&](const std::string& name, uint64_t bits) {
    c.items.emplace_back(name, bits);
    c.total += bits;
  };
  uint64_t sss = cfg.shadow_stack_size;
  uint64_t counter_bits = ceil_log2(cfg.recursion_depth);
  uint64_t sp_bits = ceil_log2(uint64_t(cfg.shadow_stack_size) + 1);
  uint64_t label_bits =
      ceil_log2(std::max(cfg.indirect_calls, cfg.indirect_jumps));
  switch (s) {
    case Scheme::Fixer:
      add("policy_matrix",
          uint64_t(cfg.indirect_calls) * cfg.indirectly_called);
      add("address_decoder", uint64_t(cfg.indirectly_called) * 18);
      add("shadow_stack", sss * 32);
      add("control", 32 + ceil_log2(cfg.indirect_calls) + 3);
      break;
    case Scheme::Hafix:
      add("active_set", cfg.num_functions);
      add("recursion_counter", counter_bits);
      add("control", ceil_log2(cfg.num_functions) + 1);
      break;
    case Scheme::Hcfi:
      add("shadow_stack", sss * 32);
      if (cfg.recursion_counters) add("recursion_counters", sss * counter_bits);
      add("setjmp_slots", uint64_t(cfg.setjmp_calls) *
                              (sp_bits + (cfg.recursion_counters
                                              ? counter_bits
                                              : 0)));
      add("control", 2 + label_bits + 3);
      break;
    case Scheme::Hecfi:
      add("shadow_stack", sss * ceil_log2(cfg.num_functions));
      add("control", 3 + label_bits);
      break;
    case Scheme::Cet:
      add("shadow_stack", sss * 32);
      add("control", 1);
      break;
    case Scheme::Excec: {
      uint64_t entry =
          cfg.shadow_entry_bits == MonitorConfig::EntryBits::Bits18to1 ? 18
                                                                      : 32;
      add("shadow_stack", sss * entry);
      if (cfg.recursion_counters) add("recursion_counters", sss * counter_bits);
      add("setjmp_slots", uint64_t(cfg.setjmp_calls) *
                              (sp_bits + (cfg.recursion_counters
                                              ? counter_bits
                                              : 0)));
      add("control", 2 + label_bits + 2);
      break;
    }
  }
  return c;
}

}  // namespace cfisim
