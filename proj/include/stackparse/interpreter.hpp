#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stackparse/world.hpp"

namespace stackparse {

enum class TokenKind { Constant, Function, Action };

enum class Op {
  PushNumber,
  PushFraction,
  PushColor,
  AllObjects,
  Index,
  PrevArg1,
  PrevArg2,
  HasColor,
  HasShirt,
  HasHat,
  HasShirtHat,
  LeftOf,
  RightOf,
  PrevAction,
  Perform,
};

struct Token {
  std::string name;
  TokenKind kind = TokenKind::Constant;
  Op op = Op::PushNumber;
  int number = 0;                      // PushNumber
  Color color = Color::Red;            // PushColor
  ActionName action = ActionName::Mix;  // Perform
};

using TokenId = int;
using Program = std::vector<TokenId>;

struct LanguageConfig {
  std::vector<int> integers = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, -1, -2, -3, -4, -5};
  int budget = 10;    // tokens per utterance
  int maxStack = 3;
};

// The token table Z for one domain, in a fixed order that doubles as the
// tie-breaking order of search.
class Vocabulary {
 public:
  static Vocabulary forDomain(Domain d, const LanguageConfig& config = {});

  Domain domain() const { return domain_; }
  int size() const { return static_cast<int>(tokens_.size()); }
  const Token& operator[](TokenId id) const { return tokens_[id]; }
  const std::vector<Token>& tokens() const { return tokens_; }
  std::optional<TokenId> find(std::string_view name) const;
  TokenId id(std::string_view name) const;  // throws std::out_of_range

 private:
  Domain domain_ = Domain::Alchemy;
  std::vector<Token> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

std::string programToString(const Program& p, const Vocabulary& vocab);
Program parseProgram(std::string_view text, const Vocabulary& vocab);

struct HistoryEntry {
  ActionName action = ActionName::Mix;
  std::vector<Value> args;  // coerced values as executed
  bool operator==(const HistoryEntry&) const = default;
};

struct MachineState {
  WorldState world;
  std::vector<Value> stack;  // bottom to top
  std::vector<HistoryEntry> history;
  int pointer = 1;  // utterance pointer m, 1-based
  int tokensInUtterance = 0;
  int utteranceCount = 0;  // M
  int budget = 10;
  int maxStack = 3;

  static MachineState initial(WorldState w0, int utteranceCount, const LanguageConfig& config = {});

  bool terminal() const { return pointer > utteranceCount; }
  bool operator==(const MachineState&) const = default;
};

// One token of incremental execution.
Outcome<MachineState> tryStep(const MachineState& s, const Token& t);
MachineState step(const MachineState& s, const Token& t);  // throws ExecError

// Token-specific entry points for the history tokens (throwing).
MachineState stepPrevArg(const MachineState& s, int j);
MachineState stepPrevAction(const MachineState& s);

// Runs a whole program from w0; requires exactly M actions and no leftover tokens.
Outcome<WorldState> tryExecute(const Program& p, const WorldState& w0, int utteranceCount,
                               const Vocabulary& vocab, const LanguageConfig& config = {});
WorldState execute(const Program& p, const WorldState& w0, int utteranceCount,
                   const Vocabulary& vocab, const LanguageConfig& config = {});

struct Continuation {
  TokenId token;
  MachineState next;
};

// Every token whose step does not fail, with the resulting states, in token-table order.
std::vector<Continuation> expand(const MachineState& s, const Vocabulary& vocab);
std::vector<TokenId> validContinuations(const MachineState& s, const Vocabulary& vocab);

// Sound dead-end test for search. Abstracts the stack to value types
// (positive/negative number, fraction, color, object, singleton list, longer
// list) and precomputes which abstract stacks can still reach an action within
// the remaining token budget. A false answer is exact: no continuation of the
// state finishes the current utterance. A true answer may be optimistic.
class CompletionTable {
 public:
  CompletionTable(const Vocabulary& vocab, const LanguageConfig& config = {});

  bool canComplete(const MachineState& s) const;

  // Continuations after which canComplete still holds.
  std::vector<Continuation> viableContinuations(const MachineState& s, const Vocabulary& vocab) const;

 private:
  int maxStack_ = 3;
  int budget_ = 10;
  // [history nonempty][remaining tokens][abstract stack code]
  std::array<std::vector<std::vector<bool>>, 2> feasible_;
};

struct EnumerationLimits {
  int budget = 10;  // tokens per utterance (capH)
  std::uint64_t maxNodes = UINT64_MAX;
};

struct EnumerationStats {
  std::uint64_t nodes = 0;
  std::uint64_t programs = 0;
  bool exhausted = true;  // false if stopped by the node cap or the visitor
};

// Depth-first enumeration of all complete executable programs in token-table
// order. The visitor returns false to stop.
using ProgramVisitor = std::function<bool(const Program&, const MachineState&)>;
EnumerationStats enumeratePrograms(const WorldState& w0, int utteranceCount,
                                   const Vocabulary& vocab, const EnumerationLimits& limits,
                                   const ProgramVisitor& visit,
                                   const LanguageConfig& config = {});

// Product over the program of 1 / |validContinuations|; 0 if any step is invalid.
double uniformPolicyProbability(const Program& p, const WorldState& w0, int utteranceCount,
                                const Vocabulary& vocab, const LanguageConfig& config = {});

}  // namespace stackparse
