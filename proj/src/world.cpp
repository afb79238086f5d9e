#include "stackparse/world.hpp"

#include <algorithm>
#include <set>

namespace stackparse {

namespace {

constexpr std::array<Color, 6> kAlchemyColors = {Color::Red,    Color::Yellow, Color::Green,
                                                 Color::Orange, Color::Purple, Color::Brown};
constexpr std::array<Color, 6> kSceneColors = {Color::Red,    Color::Yellow, Color::Green,
                                               Color::Orange, Color::Purple, Color::Blue};

template <class T>
const T* get(const Value& v) {
  return std::get_if<T>(&v);
}

bool isSceneColor(Color c) {
  return std::find(kSceneColors.begin(), kSceneColors.end(), c) != kSceneColors.end();
}

Outcome<WorldState> applyAlchemy(AlchemyWorld w, ActionName action, std::span<const Value> args) {
  auto beakerAt = [&](std::size_t i) -> Outcome<int> {
    const auto* b = get<BeakerRef>(args[i]);
    if (!b) return ErrorKind::TypeMismatch;
    if (b->index < 0 || b->index >= AlchemyWorld::kBeakers) return ErrorKind::Range;
    return b->index;
  };
  switch (action) {
    case ActionName::Drain: {
      auto b = beakerAt(0);
      if (!b) return b.error();
      Beaker& beaker = w.beakers[b.value()];
      if (beaker.empty()) return ErrorKind::Absent;
      int amount = 0;
      if (get<Fraction>(args[1])) {
        amount = beaker.count;
      } else if (const auto* n = get<Number>(args[1])) {
        amount = n->value;
      } else {
        return ErrorKind::TypeMismatch;
      }
      if (amount < 1 || amount > beaker.count) return ErrorKind::Range;
      for (int k = 0; k < amount; ++k) beaker.units[--beaker.count] = Color{};
      return WorldState(std::move(w));
    }
    case ActionName::Pour: {
      auto from = beakerAt(0);
      if (!from) return from.error();
      auto to = beakerAt(1);
      if (!to) return to.error();
      if (from.value() == to.value()) return ErrorKind::InvalidArgument;
      Beaker& src = w.beakers[from.value()];
      Beaker& dst = w.beakers[to.value()];
      if (src.empty()) return ErrorKind::Absent;
      if (src.count + dst.count > Beaker::kCapacity) return ErrorKind::Capacity;
      for (int k = 0; k < src.count; ++k) dst.units[dst.count++] = src.units[k];
      src = Beaker{};
      return WorldState(std::move(w));
    }
    case ActionName::Mix: {
      auto b = beakerAt(0);
      if (!b) return b.error();
      Beaker& beaker = w.beakers[b.value()];
      if (beaker.empty()) return ErrorKind::Absent;
      for (int k = 0; k < beaker.count; ++k) beaker.units[k] = Color::Brown;
      return WorldState(std::move(w));
    }
    default:
      return ErrorKind::DomainMismatch;
  }
}

Outcome<WorldState> applyTangrams(TangramsWorld w, ActionName action,
                                  std::span<const Value> args) {
  auto onStage = [&](std::size_t i) -> Outcome<int> {
    const auto* t = get<TangramRef>(args[i]);
    if (!t) return ErrorKind::TypeMismatch;
    auto pos = w.positionOf(t->shape);
    if (!pos) return ErrorKind::Absent;
    return *pos;
  };
  switch (action) {
    case ActionName::Swap: {
      auto a = onStage(0);
      if (!a) return a.error();
      auto b = onStage(1);
      if (!b) return b.error();
      if (a.value() == b.value()) return ErrorKind::InvalidArgument;
      std::swap(w.row[a.value()], w.row[b.value()]);
      return WorldState(std::move(w));
    }
    case ActionName::Remove: {
      auto a = onStage(0);
      if (!a) return a.error();
      const int shape = w.row[a.value()];
      w.row.erase(w.row.begin() + a.value());
      w.removed.insert(std::lower_bound(w.removed.begin(), w.removed.end(), shape), shape);
      return WorldState(std::move(w));
    }
    case ActionName::Add: {
      const auto* pos = get<Number>(args[0]);
      const auto* t = get<TangramRef>(args[1]);
      if (!pos || !t) return ErrorKind::TypeMismatch;
      if (!w.isRemoved(t->shape)) return ErrorKind::Absent;
      if (pos->value < 1 || pos->value > static_cast<int>(w.row.size()) + 1) return ErrorKind::Range;
      w.removed.erase(std::lower_bound(w.removed.begin(), w.removed.end(), t->shape));
      w.row.insert(w.row.begin() + (pos->value - 1), t->shape);
      return WorldState(std::move(w));
    }
    default:
      return ErrorKind::DomainMismatch;
  }
}

Outcome<WorldState> applyScene(SceneWorld w, ActionName action, std::span<const Value> args) {
  auto personAt = [&](std::size_t i) -> Outcome<int> {
    const auto* p = get<PersonRef>(args[i]);
    if (!p) return ErrorKind::TypeMismatch;
    auto slot = w.slotOf(p->id);
    if (!slot) return ErrorKind::Absent;
    return *slot;
  };
  auto positionAt = [&](std::size_t i) -> Outcome<int> {
    const auto* n = get<Number>(args[i]);
    if (!n) return ErrorKind::TypeMismatch;
    if (n->value < 1 || n->value > SceneWorld::kPositions) return ErrorKind::Range;
    return n->value - 1;
  };
  switch (action) {
    case ActionName::Create: {
      auto pos = positionAt(0);
      if (!pos) return pos.error();
      const auto* shirt = get<Color>(args[1]);
      const auto* hat = get<Color>(args[2]);
      if (!shirt || !hat) return ErrorKind::TypeMismatch;
      if (!isSceneColor(*shirt)) return ErrorKind::TypeMismatch;
      if (*hat != Color::NoHat && !isSceneColor(*hat)) return ErrorKind::TypeMismatch;
      if (w.slots[pos.value()]) return ErrorKind::Occupied;
      w.slots[pos.value()] = Person{*shirt, *hat, w.nextId++};
      return WorldState(std::move(w));
    }
    case ActionName::Move: {
      auto from = personAt(0);
      if (!from) return from.error();
      auto to = positionAt(1);
      if (!to) return to.error();
      if (from.value() == to.value()) return WorldState(std::move(w));
      if (w.slots[to.value()]) return ErrorKind::Occupied;
      w.slots[to.value()] = w.slots[from.value()];
      w.slots[from.value()].reset();
      return WorldState(std::move(w));
    }
    case ActionName::SwapHats: {
      auto a = personAt(0);
      if (!a) return a.error();
      auto b = personAt(1);
      if (!b) return b.error();
      if (a.value() == b.value()) return ErrorKind::InvalidArgument;
      std::swap(w.slots[a.value()]->hat, w.slots[b.value()]->hat);
      return WorldState(std::move(w));
    }
    case ActionName::Leave: {
      auto a = personAt(0);
      if (!a) return a.error();
      w.slots[a.value()].reset();
      return WorldState(std::move(w));
    }
    default:
      return ErrorKind::DomainMismatch;
  }
}

}  // namespace

std::string_view domainName(Domain d) {
  switch (d) {
    case Domain::Alchemy: return "alchemy";
    case Domain::Tangrams: return "tangrams";
    case Domain::Scene: return "scene";
  }
  return "?";
}

std::optional<Domain> domainFromName(std::string_view name) {
  if (name == "alchemy") return Domain::Alchemy;
  if (name == "tangrams") return Domain::Tangrams;
  if (name == "scene") return Domain::Scene;
  return std::nullopt;
}

std::string_view colorName(Color c) {
  switch (c) {
    case Color::Red: return "red";
    case Color::Yellow: return "yellow";
    case Color::Green: return "green";
    case Color::Orange: return "orange";
    case Color::Purple: return "purple";
    case Color::Brown: return "brown";
    case Color::Blue: return "blue";
    case Color::NoHat: return "noHat";
  }
  return "?";
}

std::span<const Color> domainColors(Domain d) {
  switch (d) {
    case Domain::Alchemy: return kAlchemyColors;
    case Domain::Scene: return kSceneColors;
    case Domain::Tangrams: return {};
  }
  return {};
}

std::string_view errorName(ErrorKind k) {
  switch (k) {
    case ErrorKind::StackUnderflow: return "StackUnderflow";
    case ErrorKind::StackOverflow: return "StackOverflow";
    case ErrorKind::TypeMismatch: return "TypeMismatch";
    case ErrorKind::Capacity: return "CapacityError";
    case ErrorKind::Occupied: return "OccupiedError";
    case ErrorKind::Absent: return "AbsentError";
    case ErrorKind::Range: return "RangeError";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::NonEmptyStackAfterAction: return "NonEmptyStackAfterAction";
    case ErrorKind::BudgetExceeded: return "BudgetExceeded";
    case ErrorKind::Terminal: return "Terminal";
    case ErrorKind::IncompleteProgram: return "IncompleteProgram";
    case ErrorKind::DomainMismatch: return "DomainMismatch";
  }
  return "?";
}

ExecError::ExecError(ErrorKind kind, const std::string& what)
    : std::runtime_error(std::string(errorName(kind)) + (what.empty() ? "" : ": " + what)),
      kind_(kind) {}

std::optional<Color> Beaker::uniformColor() const {
  if (count == 0) return std::nullopt;
  for (int k = 1; k < count; ++k)
    if (units[k] != units[0]) return std::nullopt;
  return units[0];
}

bool Beaker::operator==(const Beaker& o) const {
  return count == o.count && std::equal(units.begin(), units.begin() + count, o.units.begin());
}

std::optional<int> TangramsWorld::positionOf(int shape) const {
  auto it = std::find(row.begin(), row.end(), shape);
  if (it == row.end()) return std::nullopt;
  return static_cast<int>(it - row.begin());
}

bool TangramsWorld::isRemoved(int shape) const {
  return std::binary_search(removed.begin(), removed.end(), shape);
}

std::optional<int> SceneWorld::slotOf(int personId) const {
  for (int i = 0; i < kPositions; ++i)
    if (slots[i] && slots[i]->id == personId) return i;
  return std::nullopt;
}

int SceneWorld::population() const {
  return static_cast<int>(std::count_if(slots.begin(), slots.end(),
                                        [](const auto& s) { return s.has_value(); }));
}

bool SceneWorld::operator==(const SceneWorld& o) const {
  for (int i = 0; i < kPositions; ++i) {
    const auto& a = slots[i];
    const auto& b = o.slots[i];
    if (a.has_value() != b.has_value()) return false;
    if (a && (a->shirt != b->shirt || a->hat != b->hat)) return false;
  }
  return true;
}

WorldState WorldState::empty(Domain d) {
  switch (d) {
    case Domain::Alchemy: return AlchemyWorld{};
    case Domain::Tangrams: return TangramsWorld{};
    case Domain::Scene: return SceneWorld{};
  }
  return {};
}

bool worldsEqual(const WorldState& a, const WorldState& b) {
  if (a.domain() != b.domain()) throw ExecError(ErrorKind::DomainMismatch, "comparing worlds");
  return a == b;
}

std::optional<std::string> checkInvariants(const WorldState& w) {
  switch (w.domain()) {
    case Domain::Alchemy:
      for (const auto& b : w.alchemy().beakers) {
        if (b.count > Beaker::kCapacity) return "beaker over capacity";
        for (Color c : b.contents())
          if (std::find(kAlchemyColors.begin(), kAlchemyColors.end(), c) == kAlchemyColors.end())
            return "color not in the alchemy palette";
      }
      return std::nullopt;
    case Domain::Tangrams: {
      const auto& t = w.tangrams();
      std::set<int> seen;
      for (int s : t.row)
        if (!seen.insert(s).second) return "duplicate shape on stage";
      for (int s : t.removed)
        if (!seen.insert(s).second) return "shape both on stage and removed";
      if (!std::is_sorted(t.removed.begin(), t.removed.end())) return "removed pool not sorted";
      return std::nullopt;
    }
    case Domain::Scene: {
      std::set<int> ids;
      for (const auto& s : w.scene().slots) {
        if (!s) continue;
        if (!isSceneColor(s->shirt)) return "invalid shirt color";
        if (s->hat != Color::NoHat && !isSceneColor(s->hat)) return "invalid hat color";
        if (!ids.insert(s->id).second) return "duplicate person id";
      }
      return std::nullopt;
    }
  }
  return std::nullopt;
}

std::string describeValue(const Value& v) {
  struct Visitor {
    std::string operator()(const Number& n) const { return std::to_string(n.value); }
    std::string operator()(const Fraction&) const { return "1/1"; }
    std::string operator()(Color c) const { return std::string(colorName(c)); }
    std::string operator()(const BeakerRef& b) const { return "beaker#" + std::to_string(b.index + 1); }
    std::string operator()(const TangramRef& t) const { return "tangram#" + std::to_string(t.shape); }
    std::string operator()(const PersonRef& p) const { return "person#" + std::to_string(p.id); }
    std::string operator()(const RefList& l) const {
      std::string s = "[";
      for (std::size_t i = 0; i < l.items.size(); ++i) {
        if (i) s += ",";
        s += std::visit([](const auto& r) { return Visitor{}(r); }, l.items[i]);
      }
      return s + "]";
    }
  };
  return std::visit(Visitor{}, v);
}

std::string_view actionName(ActionName a) {
  switch (a) {
    case ActionName::Drain: return "drain";
    case ActionName::Pour: return "pour";
    case ActionName::Mix: return "mix";
    case ActionName::Swap: return "swap";
    case ActionName::Remove: return "remove";
    case ActionName::Add: return "add";
    case ActionName::Create: return "create";
    case ActionName::Move: return "move";
    case ActionName::SwapHats: return "swapHats";
    case ActionName::Leave: return "leave";
  }
  return "?";
}

int actionArity(ActionName a) {
  switch (a) {
    case ActionName::Mix:
    case ActionName::Remove:
    case ActionName::Leave:
      return 1;
    case ActionName::Create:
      return 3;
    default:
      return 2;
  }
}

Domain actionDomain(ActionName a) {
  switch (a) {
    case ActionName::Drain:
    case ActionName::Pour:
    case ActionName::Mix:
      return Domain::Alchemy;
    case ActionName::Swap:
    case ActionName::Remove:
    case ActionName::Add:
      return Domain::Tangrams;
    default:
      return Domain::Scene;
  }
}

Outcome<WorldState> tryApplyAction(const WorldState& w, ActionName action,
                                   std::span<const Value> args) {
  if (actionDomain(action) != w.domain()) return ErrorKind::DomainMismatch;
  if (static_cast<int>(args.size()) != actionArity(action)) return ErrorKind::TypeMismatch;
  switch (w.domain()) {
    case Domain::Alchemy: return applyAlchemy(w.alchemy(), action, args);
    case Domain::Tangrams: return applyTangrams(w.tangrams(), action, args);
    case Domain::Scene: return applyScene(w.scene(), action, args);
  }
  return ErrorKind::DomainMismatch;
}

WorldState applyAction(const WorldState& w, ActionName action, std::span<const Value> args) {
  auto out = tryApplyAction(w, action, args);
  if (!out) throw ExecError(out.error(), std::string(actionName(action)));
  return std::move(out).value();
}

}  // namespace stackparse
