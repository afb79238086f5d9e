#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace stackparse {

enum class Domain { Alchemy, Tangrams, Scene };

std::string_view domainName(Domain d);
std::optional<Domain> domainFromName(std::string_view name);

enum class Color : std::uint8_t { Red, Yellow, Green, Orange, Purple, Brown, Blue, NoHat };

inline constexpr int kColorCount = 8;

std::string_view colorName(Color c);

// Colors that exist as constant tokens in a domain (Scene adds NoHat separately).
std::span<const Color> domainColors(Domain d);

// Failure categories shared by the world simulator and the interpreter.
enum class ErrorKind {
  StackUnderflow,
  StackOverflow,
  TypeMismatch,
  Capacity,
  Occupied,
  Absent,
  Range,
  InvalidArgument,
  NonEmptyStackAfterAction,
  BudgetExceeded,
  Terminal,
  IncompleteProgram,
  DomainMismatch,
};

std::string_view errorName(ErrorKind k);

class ExecError : public std::runtime_error {
 public:
  ExecError(ErrorKind kind, const std::string& what);
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

// Either a value or the ErrorKind that prevented it. Used on hot paths
// (search, enumeration) where throwing per rejected token is too slow.
template <class T>
class Outcome {
 public:
  Outcome(T value) : v_(std::move(value)) {}
  Outcome(ErrorKind error) : v_(error) {}

  bool ok() const { return v_.index() == 0; }
  explicit operator bool() const { return ok(); }
  const T& value() const& { return std::get<0>(v_); }
  T& value() & { return std::get<0>(v_); }
  T&& value() && { return std::get<0>(std::move(v_)); }
  ErrorKind error() const { return std::get<1>(v_); }

 private:
  std::variant<T, ErrorKind> v_;
};

struct Beaker {
  static constexpr int kCapacity = 4;
  // Bottom-to-top; only the first `count` entries are meaningful.
  std::array<Color, kCapacity> units{};
  std::uint8_t count = 0;

  std::span<const Color> contents() const { return {units.data(), count}; }
  bool empty() const { return count == 0; }
  // Nonempty and every unit shares one color.
  std::optional<Color> uniformColor() const;
  bool operator==(const Beaker& o) const;
};

struct AlchemyWorld {
  static constexpr int kBeakers = 7;
  std::array<Beaker, kBeakers> beakers{};
  bool operator==(const AlchemyWorld&) const = default;
};

struct TangramsWorld {
  // Number of distinct shapes; pieces not on stage are in `removed`.
  static constexpr int kShapes = 5;
  std::vector<int> row;      // shape ids left to right
  std::vector<int> removed;  // sorted shape ids
  bool operator==(const TangramsWorld&) const = default;

  std::optional<int> positionOf(int shape) const;  // 0-based
  bool isRemoved(int shape) const;
};

struct Person {
  Color shirt = Color::Red;
  Color hat = Color::NoHat;
  // Identity for references; not part of world equality.
  int id = 0;
};

struct SceneWorld {
  static constexpr int kPositions = 10;
  std::array<std::optional<Person>, kPositions> slots{};
  int nextId = 0;

  std::optional<int> slotOf(int personId) const;  // 0-based
  int population() const;
  bool operator==(const SceneWorld& o) const;
};

class WorldState {
 public:
  using Variant = std::variant<AlchemyWorld, TangramsWorld, SceneWorld>;

  WorldState() : v_(AlchemyWorld{}) {}
  WorldState(AlchemyWorld w) : v_(std::move(w)) {}
  WorldState(TangramsWorld w) : v_(std::move(w)) {}
  WorldState(SceneWorld w) : v_(std::move(w)) {}

  static WorldState empty(Domain d);

  Domain domain() const { return static_cast<Domain>(v_.index()); }
  const Variant& variant() const { return v_; }

  const AlchemyWorld& alchemy() const { return std::get<AlchemyWorld>(v_); }
  const TangramsWorld& tangrams() const { return std::get<TangramsWorld>(v_); }
  const SceneWorld& scene() const { return std::get<SceneWorld>(v_); }
  AlchemyWorld& alchemy() { return std::get<AlchemyWorld>(v_); }
  TangramsWorld& tangrams() { return std::get<TangramsWorld>(v_); }
  SceneWorld& scene() { return std::get<SceneWorld>(v_); }

  // Structural equality within a domain; false across domains.
  bool operator==(const WorldState& o) const { return v_ == o.v_; }

 private:
  Variant v_;
};

// Throws ExecError(DomainMismatch) when domains differ.
bool worldsEqual(const WorldState& a, const WorldState& b);

// Returns the violated invariant, if any.
std::optional<std::string> checkInvariants(const WorldState& w);

// ---------------------------------------------------------------------------
// Values manipulated by programs.

struct Number {
  int value = 0;
  bool operator==(const Number&) const = default;
};

// The `1/1` constant: "all of it".
struct Fraction {
  bool operator==(const Fraction&) const = default;
};

struct BeakerRef {
  int index = 0;  // 0-based
  bool operator==(const BeakerRef&) const = default;
};

struct TangramRef {
  int shape = 0;
  bool operator==(const TangramRef&) const = default;
};

struct PersonRef {
  int id = 0;
  bool operator==(const PersonRef&) const = default;
};

using ObjectRef = std::variant<BeakerRef, TangramRef, PersonRef>;

struct RefList {
  std::vector<ObjectRef> items;
  bool operator==(const RefList&) const = default;
};

using Value = std::variant<Number, Fraction, Color, BeakerRef, TangramRef, PersonRef, RefList>;

std::string describeValue(const Value& v);

enum class ActionName { Drain, Pour, Mix, Swap, Remove, Add, Create, Move, SwapHats, Leave };

std::string_view actionName(ActionName a);
int actionArity(ActionName a);
Domain actionDomain(ActionName a);

// Applies one action. Arguments are already coerced to their canonical types
// (BeakerRef, TangramRef, PersonRef, Number, Fraction, Color).
Outcome<WorldState> tryApplyAction(const WorldState& w, ActionName action,
                                   std::span<const Value> args);

// Throwing form of tryApplyAction.
WorldState applyAction(const WorldState& w, ActionName action, std::span<const Value> args);

}  // namespace stackparse
