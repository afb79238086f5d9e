#include "stackparse/interpreter.hpp"

#include <algorithm>
#include <climits>
#include <cstdlib>
#include <sstream>

namespace stackparse {

namespace {

enum class ArgType { Beaker, Tangram, Person, Number, Amount, Color };

std::span<const ArgType> signature(ActionName a) {
  static constexpr ArgType kDrain[] = {ArgType::Beaker, ArgType::Amount};
  static constexpr ArgType kPour[] = {ArgType::Beaker, ArgType::Beaker};
  static constexpr ArgType kMix[] = {ArgType::Beaker};
  static constexpr ArgType kSwap[] = {ArgType::Tangram, ArgType::Tangram};
  static constexpr ArgType kRemove[] = {ArgType::Tangram};
  static constexpr ArgType kAdd[] = {ArgType::Number, ArgType::Tangram};
  static constexpr ArgType kCreate[] = {ArgType::Number, ArgType::Color, ArgType::Color};
  static constexpr ArgType kMove[] = {ArgType::Person, ArgType::Number};
  static constexpr ArgType kSwapHats[] = {ArgType::Person, ArgType::Person};
  static constexpr ArgType kLeave[] = {ArgType::Person};
  switch (a) {
    case ActionName::Drain: return kDrain;
    case ActionName::Pour: return kPour;
    case ActionName::Mix: return kMix;
    case ActionName::Swap: return kSwap;
    case ActionName::Remove: return kRemove;
    case ActionName::Add: return kAdd;
    case ActionName::Create: return kCreate;
    case ActionName::Move: return kMove;
    case ActionName::SwapHats: return kSwapHats;
    case ActionName::Leave: return kLeave;
  }
  return {};
}

// Resolves 1-based (negative from the end) index into a sequence of length n.
std::optional<std::size_t> resolveIndex(int i, std::size_t n) {
  const int len = static_cast<int>(n);
  if (i >= 1 && i <= len) return static_cast<std::size_t>(i - 1);
  if (i <= -1 && -i <= len) return static_cast<std::size_t>(len + i);
  return std::nullopt;
}

// Object arguments accept the object itself or a singleton list; in
// Tangrams a number also designates the piece at that stage position.
template <class Ref>
Outcome<Value> coerceRef(const Value& v, const WorldState& w) {
  if (std::holds_alternative<Ref>(v)) return v;
  if (const auto* list = std::get_if<RefList>(&v)) {
    if (list->items.size() != 1) return ErrorKind::TypeMismatch;
    if (const auto* r = std::get_if<Ref>(&list->items.front())) return Value(*r);
    return ErrorKind::TypeMismatch;
  }
  if constexpr (std::is_same_v<Ref, TangramRef>) {
    if (const auto* n = std::get_if<Number>(&v)) {
      const auto& row = w.tangrams().row;
      auto idx = resolveIndex(n->value, row.size());
      if (!idx) return ErrorKind::Range;
      return Value(TangramRef{row[*idx]});
    }
  }
  return ErrorKind::TypeMismatch;
}

Outcome<Value> coerce(const Value& v, ArgType type, const WorldState& w) {
  switch (type) {
    case ArgType::Beaker: return coerceRef<BeakerRef>(v, w);
    case ArgType::Tangram: return coerceRef<TangramRef>(v, w);
    case ArgType::Person: return coerceRef<PersonRef>(v, w);
    case ArgType::Number:
      if (std::holds_alternative<Number>(v)) return v;
      return ErrorKind::TypeMismatch;
    case ArgType::Amount:
      if (std::holds_alternative<Number>(v) || std::holds_alternative<Fraction>(v)) return v;
      return ErrorKind::TypeMismatch;
    case ArgType::Color:
      if (std::holds_alternative<Color>(v)) return v;
      return ErrorKind::TypeMismatch;
  }
  return ErrorKind::TypeMismatch;
}

Outcome<RefList> allObjects(const WorldState& w) {
  RefList out;
  switch (w.domain()) {
    case Domain::Alchemy:
      for (int i = 0; i < AlchemyWorld::kBeakers; ++i) out.items.emplace_back(BeakerRef{i});
      break;
    case Domain::Tangrams:
      for (int s : w.tangrams().row) out.items.emplace_back(TangramRef{s});
      break;
    case Domain::Scene:
      for (const auto& slot : w.scene().slots)
        if (slot) out.items.emplace_back(PersonRef{slot->id});
      break;
  }
  if (out.items.empty()) return ErrorKind::Absent;
  return out;
}

template <class Pred>
Outcome<RefList> peopleWhere(const SceneWorld& w, Pred pred) {
  RefList out;
  for (const auto& slot : w.slots)
    if (slot && pred(*slot)) out.items.emplace_back(PersonRef{slot->id});
  if (out.items.empty()) return ErrorKind::Absent;
  return out;
}

// Pops the action's arguments (bottom-to-top order), applies it and records
// the history entry. The stack must hold exactly the arguments.
std::optional<ErrorKind> performAction(MachineState& s, ActionName action) {
  if (actionDomain(action) != s.world.domain()) return ErrorKind::DomainMismatch;
  const auto sig = signature(action);
  const std::size_t arity = sig.size();
  if (s.stack.size() < arity) return ErrorKind::StackUnderflow;
  if (s.stack.size() > arity) return ErrorKind::NonEmptyStackAfterAction;
  std::vector<Value> args;
  args.reserve(arity);
  for (std::size_t k = 0; k < arity; ++k) {
    auto v = coerce(s.stack[k], sig[k], s.world);
    if (!v) return v.error();
    args.push_back(std::move(v).value());
  }
  auto next = tryApplyAction(s.world, action, args);
  if (!next) return next.error();
  s.world = std::move(next).value();
  s.stack.clear();
  s.history.push_back(HistoryEntry{action, std::move(args)});
  s.pointer += 1;
  s.tokensInUtterance = 0;
  return std::nullopt;
}

std::optional<ErrorKind> push(MachineState& s, Value v) {
  if (static_cast<int>(s.stack.size()) >= s.maxStack) return ErrorKind::StackOverflow;
  s.stack.push_back(std::move(v));
  return std::nullopt;
}

Outcome<int> popNumber(MachineState& s) {
  if (s.stack.empty()) return ErrorKind::StackUnderflow;
  const auto* n = std::get_if<Number>(&s.stack.back());
  if (!n) return ErrorKind::TypeMismatch;
  const int v = n->value;
  s.stack.pop_back();
  return v;
}

Outcome<Color> popColor(MachineState& s) {
  if (s.stack.empty()) return ErrorKind::StackUnderflow;
  const auto* c = std::get_if<Color>(&s.stack.back());
  if (!c) return ErrorKind::TypeMismatch;
  const Color v = *c;
  s.stack.pop_back();
  return v;
}

Outcome<const HistoryEntry*> historyAt(const MachineState& s, int i) {
  auto idx = resolveIndex(i, s.history.size());
  if (!idx) return ErrorKind::Range;
  return &s.history[*idx];
}

std::optional<ErrorKind> applyToken(MachineState& s, const Token& t) {
  const Domain domain = s.world.domain();
  switch (t.op) {
    case Op::PushNumber:
      return push(s, Number{t.number});
    case Op::PushFraction:
      if (domain != Domain::Alchemy) return ErrorKind::DomainMismatch;
      return push(s, Fraction{});
    case Op::PushColor:
      return push(s, t.color);
    case Op::AllObjects: {
      auto all = allObjects(s.world);
      if (!all) return all.error();
      return push(s, std::move(all).value());
    }
    case Op::Index: {
      auto i = popNumber(s);
      if (!i) return i.error();
      if (s.stack.empty()) return ErrorKind::StackUnderflow;
      const auto* list = std::get_if<RefList>(&s.stack.back());
      if (!list) return ErrorKind::TypeMismatch;
      auto idx = resolveIndex(i.value(), list->items.size());
      if (!idx) return ErrorKind::Range;
      Value picked = std::visit([](const auto& r) { return Value(r); }, list->items[*idx]);
      s.stack.back() = std::move(picked);
      return std::nullopt;
    }
    case Op::PrevArg1:
    case Op::PrevArg2: {
      const std::size_t j = t.op == Op::PrevArg1 ? 0 : 1;
      auto i = popNumber(s);
      if (!i) return i.error();
      auto entry = historyAt(s, i.value());
      if (!entry) return entry.error();
      if (entry.value()->args.size() <= j) return ErrorKind::Range;
      return push(s, entry.value()->args[j]);
    }
    case Op::HasColor: {
      if (domain != Domain::Alchemy) return ErrorKind::DomainMismatch;
      auto c = popColor(s);
      if (!c) return c.error();
      RefList out;
      const auto& beakers = s.world.alchemy().beakers;
      for (int b = 0; b < AlchemyWorld::kBeakers; ++b)
        if (beakers[b].uniformColor() == c.value()) out.items.emplace_back(BeakerRef{b});
      if (out.items.empty()) return ErrorKind::Absent;
      return push(s, std::move(out));
    }
    case Op::HasShirt:
    case Op::HasHat: {
      if (domain != Domain::Scene) return ErrorKind::DomainMismatch;
      auto c = popColor(s);
      if (!c) return c.error();
      const Color color = c.value();
      Outcome<RefList> people = ErrorKind::Absent;
      if (t.op == Op::HasShirt) {
        if (color == Color::NoHat) return ErrorKind::TypeMismatch;
        people = peopleWhere(s.world.scene(), [&](const Person& p) { return p.shirt == color; });
      } else {
        people = peopleWhere(s.world.scene(), [&](const Person& p) { return p.hat == color; });
      }
      if (!people) return people.error();
      return push(s, std::move(people).value());
    }
    case Op::HasShirtHat: {
      if (domain != Domain::Scene) return ErrorKind::DomainMismatch;
      auto hat = popColor(s);
      if (!hat) return hat.error();
      auto shirt = popColor(s);
      if (!shirt) return shirt.error();
      if (shirt.value() == Color::NoHat) return ErrorKind::TypeMismatch;
      auto people = peopleWhere(s.world.scene(), [&](const Person& p) {
        return p.shirt == shirt.value() && p.hat == hat.value();
      });
      if (!people) return people.error();
      return push(s, std::move(people).value());
    }
    case Op::LeftOf:
    case Op::RightOf: {
      if (domain != Domain::Scene) return ErrorKind::DomainMismatch;
      if (s.stack.empty()) return ErrorKind::StackUnderflow;
      auto person = coerceRef<PersonRef>(s.stack.back(), s.world);
      if (!person) return person.error();
      auto slot = s.world.scene().slotOf(std::get<PersonRef>(person.value()).id);
      if (!slot) return ErrorKind::Absent;
      const int position = *slot + 1 + (t.op == Op::LeftOf ? -1 : 1);
      if (position < 1 || position > SceneWorld::kPositions) return ErrorKind::Range;
      s.stack.back() = Number{position};
      return std::nullopt;
    }
    case Op::PrevAction: {
      auto i = popNumber(s);
      if (!i) return i.error();
      auto entry = historyAt(s, i.value());
      if (!entry) return entry.error();
      return performAction(s, entry.value()->action);
    }
    case Op::Perform:
      return performAction(s, t.action);
  }
  return ErrorKind::TypeMismatch;
}

}  // namespace

Vocabulary Vocabulary::forDomain(Domain d, const LanguageConfig& config) {
  Vocabulary v;
  v.domain_ = d;
  auto add = [&](Token t) {
    v.index_.emplace(t.name, static_cast<TokenId>(v.tokens_.size()));
    v.tokens_.push_back(std::move(t));
  };
  auto function = [&](std::string name, Op op) {
    add(Token{std::move(name), TokenKind::Function, op});
  };
  auto action = [&](ActionName a) {
    Token t{std::string(actionName(a)), TokenKind::Action, Op::Perform};
    t.action = a;
    add(std::move(t));
  };

  for (int n : config.integers) {
    Token t{std::to_string(n), TokenKind::Constant, Op::PushNumber};
    t.number = n;
    add(std::move(t));
  }
  for (Color c : domainColors(d)) {
    Token t{std::string(colorName(c)), TokenKind::Constant, Op::PushColor};
    t.color = c;
    add(std::move(t));
  }
  add(Token{"allObjects", TokenKind::Constant, Op::AllObjects});
  function("index", Op::Index);
  function("prevArg1", Op::PrevArg1);
  function("prevArg2", Op::PrevArg2);
  add(Token{"prevAction", TokenKind::Action, Op::PrevAction});

  switch (d) {
    case Domain::Alchemy:
      add(Token{"1/1", TokenKind::Constant, Op::PushFraction});
      function("hasColor", Op::HasColor);
      action(ActionName::Drain);
      action(ActionName::Pour);
      action(ActionName::Mix);
      break;
    case Domain::Tangrams:
      action(ActionName::Swap);
      action(ActionName::Remove);
      action(ActionName::Add);
      break;
    case Domain::Scene: {
      Token noHat{"noHat", TokenKind::Constant, Op::PushColor};
      noHat.color = Color::NoHat;
      add(std::move(noHat));
      function("hasShirt", Op::HasShirt);
      function("hasHat", Op::HasHat);
      function("hasShirtHat", Op::HasShirtHat);
      function("leftOf", Op::LeftOf);
      function("rightOf", Op::RightOf);
      action(ActionName::Create);
      action(ActionName::Move);
      action(ActionName::SwapHats);
      action(ActionName::Leave);
      break;
    }
  }
  return v;
}

std::optional<TokenId> Vocabulary::find(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view name) const {
  auto t = find(name);
  if (!t) throw std::out_of_range("unknown token '" + std::string(name) + "'");
  return *t;
}

std::string programToString(const Program& p, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i) out += ' ';
    out += vocab[p[i]].name;
  }
  return out;
}

Program parseProgram(std::string_view text, const Vocabulary& vocab) {
  Program p;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) p.push_back(vocab.id(word));
  return p;
}

MachineState MachineState::initial(WorldState w0, int utteranceCount, const LanguageConfig& config) {
  MachineState s;
  s.world = std::move(w0);
  s.utteranceCount = utteranceCount;
  s.budget = config.budget;
  s.maxStack = config.maxStack;
  return s;
}

Outcome<MachineState> tryStep(const MachineState& s, const Token& t) {
  if (s.terminal()) return ErrorKind::Terminal;
  if (s.tokensInUtterance + 1 > s.budget) return ErrorKind::BudgetExceeded;
  MachineState next = s;
  next.tokensInUtterance += 1;
  if (auto err = applyToken(next, t)) return *err;
  return next;
}

MachineState step(const MachineState& s, const Token& t) {
  auto out = tryStep(s, t);
  if (!out) throw ExecError(out.error(), "token '" + t.name + "'");
  return std::move(out).value();
}

MachineState stepPrevArg(const MachineState& s, int j) {
  if (j != 1 && j != 2) throw std::invalid_argument("prevArg index must be 1 or 2");
  Token t{j == 1 ? "prevArg1" : "prevArg2", TokenKind::Function, j == 1 ? Op::PrevArg1 : Op::PrevArg2};
  return step(s, t);
}

MachineState stepPrevAction(const MachineState& s) {
  return step(s, Token{"prevAction", TokenKind::Action, Op::PrevAction});
}

Outcome<WorldState> tryExecute(const Program& p, const WorldState& w0, int utteranceCount,
                               const Vocabulary& vocab, const LanguageConfig& config) {
  MachineState s = MachineState::initial(w0, utteranceCount, config);
  for (TokenId id : p) {
    auto next = tryStep(s, vocab[id]);
    if (!next) return next.error();
    s = std::move(next).value();
  }
  if (!s.terminal()) return ErrorKind::IncompleteProgram;
  return std::move(s.world);
}

WorldState execute(const Program& p, const WorldState& w0, int utteranceCount,
                   const Vocabulary& vocab, const LanguageConfig& config) {
  auto out = tryExecute(p, w0, utteranceCount, vocab, config);
  if (!out) throw ExecError(out.error(), programToString(p, vocab));
  return std::move(out).value();
}

std::vector<Continuation> expand(const MachineState& s, const Vocabulary& vocab) {
  std::vector<Continuation> out;
  if (s.terminal() || s.tokensInUtterance + 1 > s.budget) return out;
  for (TokenId id = 0; id < vocab.size(); ++id) {
    auto next = tryStep(s, vocab[id]);
    if (next) out.push_back({id, std::move(next).value()});
  }
  return out;
}

std::vector<TokenId> validContinuations(const MachineState& s, const Vocabulary& vocab) {
  std::vector<TokenId> out;
  for (auto& c : expand(s, vocab)) out.push_back(c.token);
  return out;
}

namespace {

struct Enumerator {
  const Vocabulary& vocab;
  const EnumerationLimits& limits;
  const ProgramVisitor& visit;
  EnumerationStats stats;
  Program prefix;

  bool run(const MachineState& s) {
    if (s.terminal()) {
      ++stats.programs;
      if (!visit(prefix, s)) {
        stats.exhausted = false;
        return false;
      }
      return true;
    }
    if (s.tokensInUtterance >= limits.budget) return true;
    for (TokenId id = 0; id < vocab.size(); ++id) {
      if (stats.nodes >= limits.maxNodes) {
        stats.exhausted = false;
        return false;
      }
      ++stats.nodes;
      auto next = tryStep(s, vocab[id]);
      if (!next) continue;
      prefix.push_back(id);
      const bool keepGoing = run(next.value());
      prefix.pop_back();
      if (!keepGoing) return false;
    }
    return true;
  }
};

}  // namespace

EnumerationStats enumeratePrograms(const WorldState& w0, int utteranceCount,
                                   const Vocabulary& vocab, const EnumerationLimits& limits,
                                   const ProgramVisitor& visit, const LanguageConfig& config) {
  LanguageConfig cfg = config;
  cfg.budget = limits.budget;
  Enumerator e{vocab, limits, visit, {}, {}};
  e.run(MachineState::initial(w0, utteranceCount, cfg));
  return e.stats;
}

double uniformPolicyProbability(const Program& p, const WorldState& w0, int utteranceCount,
                                const Vocabulary& vocab, const LanguageConfig& config) {
  MachineState s = MachineState::initial(w0, utteranceCount, config);
  double prob = 1.0;
  for (TokenId id : p) {
    auto conts = expand(s, vocab);
    auto it = std::find_if(conts.begin(), conts.end(),
                           [&](const Continuation& c) { return c.token == id; });
    if (it == conts.end()) return 0.0;
    prob /= static_cast<double>(conts.size());
    s = std::move(it->next);
  }
  return s.terminal() ? prob : 0.0;
}

// ---------------------------------------------------------------------------
// Completion table

namespace {

// kNumHist: too large for any world argument, still usable as a history
// index. kNumDead: usable nowhere.
enum AType : int { kNumPos, kNumNeg, kFrac, kColor, kObj, kList1, kListN, kNumHist, kNumDead, kATypes };

using AStack = std::vector<int>;

int encodeAStack(const AStack& st) {
  int code = 0;
  for (int t : st) code = code * (kATypes + 1) + (t + 1);
  return code;
}

// Largest |n| any world argument or list index can take: drain amounts stop
// at 4, tangram positions at 5 (add needs a free piece), scene positions at 10.
int numberBound(Domain d) {
  switch (d) {
    case Domain::Alchemy: return AlchemyWorld::kBeakers;
    case Domain::Tangrams: return TangramsWorld::kShapes;
    case Domain::Scene: return SceneWorld::kPositions;
  }
  return 0;
}

int abstractNumber(int n, Domain d, int historyCap) {
  if (std::abs(n) <= numberBound(d)) return n > 0 ? kNumPos : kNumNeg;
  return std::abs(n) <= historyCap ? kNumHist : kNumDead;
}

int abstractValue(const Value& v, Domain d, int historyCap) {
  if (auto* n = std::get_if<Number>(&v)) return abstractNumber(n->value, d, historyCap);
  if (std::holds_alternative<Fraction>(v)) return kFrac;
  if (std::holds_alternative<Color>(v)) return kColor;
  if (auto* l = std::get_if<RefList>(&v)) return l->items.size() == 1 ? kList1 : kListN;
  return kObj;
}

bool isNum(int t) { return t == kNumPos || t == kNumNeg; }
bool objectLike(int t) { return t == kObj || t == kList1; }
bool historyIndex(int t) { return isNum(t) || t == kNumHist; }

bool argFits(int t, ArgType type) {
  switch (type) {
    case ArgType::Beaker:
    case ArgType::Person: return objectLike(t);
    case ArgType::Tangram: return objectLike(t) || isNum(t);
    case ArgType::Number: return t == kNumPos;
    case ArgType::Amount: return t == kNumPos || t == kFrac;
    case ArgType::Color: return t == kColor;
  }
  return false;
}

bool actionFits(const AStack& st, ActionName a) {
  const auto sig = signature(a);
  if (st.size() != sig.size()) return false;
  for (std::size_t k = 0; k < sig.size(); ++k)
    if (!argFits(st[k], sig[k])) return false;
  return true;
}

// Abstract successors of one token; `done` is set if the token may finish the
// utterance.
void abstractStep(const AStack& st, const Token& t, Domain d, int maxStack, bool history, bool& done,
                  std::vector<AStack>& out) {
  auto pushAll = [&](AStack base, std::initializer_list<int> types) {
    if (static_cast<int>(base.size()) >= maxStack) return;
    for (int ty : types) {
      AStack n = base;
      n.push_back(ty);
      out.push_back(std::move(n));
    }
  };
  switch (t.op) {
    case Op::PushNumber: pushAll(st, {abstractNumber(t.number, d, INT_MAX)}); break;
    case Op::PushFraction: if (d == Domain::Alchemy) pushAll(st, {kFrac}); break;
    case Op::PushColor: pushAll(st, {kColor}); break;
    case Op::AllObjects: pushAll(st, {kList1, kListN}); break;
    case Op::Index:
      if (st.size() >= 2 && isNum(st.back()) && (st[st.size() - 2] == kList1 || st[st.size() - 2] == kListN)) {
        AStack n(st.begin(), st.end() - 2);
        n.push_back(kObj);
        out.push_back(std::move(n));
      }
      break;
    case Op::PrevArg1:
    case Op::PrevArg2:
      if (history && !st.empty() && historyIndex(st.back()))
        pushAll(AStack(st.begin(), st.end() - 1), {kNumPos, kFrac, kColor, kObj});
      break;
    case Op::HasColor:
      if (d == Domain::Alchemy && !st.empty() && st.back() == kColor)
        pushAll(AStack(st.begin(), st.end() - 1), {kList1, kListN});
      break;
    case Op::HasShirt:
    case Op::HasHat:
      if (d == Domain::Scene && !st.empty() && st.back() == kColor)
        pushAll(AStack(st.begin(), st.end() - 1), {kList1, kListN});
      break;
    case Op::HasShirtHat:
      if (d == Domain::Scene && st.size() >= 2 && st.back() == kColor && st[st.size() - 2] == kColor)
        pushAll(AStack(st.begin(), st.end() - 2), {kList1, kListN});
      break;
    case Op::LeftOf:
    case Op::RightOf:
      if (d == Domain::Scene && !st.empty() && objectLike(st.back())) {
        AStack n = st;
        n.back() = kNumPos;
        out.push_back(std::move(n));
      }
      break;
    case Op::PrevAction:
      if (history && !st.empty() && historyIndex(st.back())) {
        AStack rest(st.begin(), st.end() - 1);
        for (int a = 0; a <= static_cast<int>(ActionName::Leave); ++a) {
          auto action = static_cast<ActionName>(a);
          if (actionDomain(action) == d && actionFits(rest, action)) done = true;
        }
      }
      break;
    case Op::Perform:
      if (actionDomain(t.action) == d && actionFits(st, t.action)) done = true;
      break;
  }
}

void allAStacks(int maxStack, AStack& cur, std::vector<AStack>& out) {
  out.push_back(cur);
  if (static_cast<int>(cur.size()) == maxStack) return;
  for (int t = 0; t < kATypes; ++t) {
    cur.push_back(t);
    allAStacks(maxStack, cur, out);
    cur.pop_back();
  }
}

}  // namespace

CompletionTable::CompletionTable(const Vocabulary& vocab, const LanguageConfig& config)
    : maxStack_(config.maxStack), budget_(config.budget) {
  std::vector<AStack> stacks;
  AStack cur;
  allAStacks(maxStack_, cur, stacks);
  int codes = 1;
  for (int i = 0; i < maxStack_; ++i) codes *= kATypes + 1;
  const Domain d = vocab.domain();
  for (int h = 0; h < 2; ++h) {
    auto& table = feasible_[h];
    table.assign(static_cast<std::size_t>(budget_) + 1,
                 std::vector<bool>(static_cast<std::size_t>(codes), false));
    for (int r = 1; r <= budget_; ++r) {
      for (const auto& st : stacks) {
        bool ok = false;
        for (const auto& tok : vocab.tokens()) {
          bool done = false;
          std::vector<AStack> next;
          abstractStep(st, tok, d, maxStack_, h == 1, done, next);
          if (done) ok = true;
          for (const auto& n : next) ok = ok || table[r - 1][encodeAStack(n)];
          if (ok) break;
        }
        table[r][encodeAStack(st)] = ok;
      }
    }
  }
}

bool CompletionTable::canComplete(const MachineState& s) const {
  if (s.terminal()) return true;
  const int remaining = std::min(budget_, s.budget - s.tokensInUtterance);
  if (remaining <= 0 || static_cast<int>(s.stack.size()) > maxStack_) return false;
  // The history cannot grow before this utterance's action, so its current
  // length bounds every usable history index.
  AStack st;
  for (const auto& v : s.stack) st.push_back(abstractValue(v, s.world.domain(), static_cast<int>(s.history.size())));
  return feasible_[s.history.empty() ? 0 : 1][remaining][encodeAStack(st)];
}

std::vector<Continuation> CompletionTable::viableContinuations(const MachineState& s,
                                                               const Vocabulary& vocab) const {
  auto all = expand(s, vocab);
  std::vector<Continuation> out;
  out.reserve(all.size());
  for (auto& c : all)
    if (canComplete(c.next)) out.push_back(std::move(c));
  return out;
}

}  // namespace stackparse
