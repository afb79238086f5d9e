#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "stackparse/world.hpp"

namespace stackparse {

using Utterance = std::vector<std::string>;

struct RawExample {
  std::string id;
  WorldState start;
  std::vector<Utterance> utterances;
  std::vector<WorldState> worlds;  // world after each utterance
  std::string goldProgram;         // synthetic data only; diagnostics, never trained on
};

struct TrainingExample {
  std::string id;
  std::vector<Utterance> utterances;
  WorldState start;
  WorldState target;

  int utteranceCount() const { return static_cast<int>(utterances.size()); }
};

class ParseError : public std::runtime_error {
 public:
  ParseError(int line, int column, const std::string& message);
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

class InvariantError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// World text codec. `column` offsets reported positions inside a larger line.
WorldState parseWorld(Domain d, std::string_view text, int line = 0, int column = 1);
std::string serializeWorld(const WorldState& w);

// Lowercase, strip punctuation, split on whitespace.
Utterance tokenizeUtterance(std::string_view text);

// Tab-separated lines: id, w0, u1, w1, ..., uM, wM.
std::vector<RawExample> parseDataset(std::istream& in, Domain d);
std::vector<RawExample> parseDatasetFile(const std::string& path, Domain d);
void writeDataset(std::ostream& out, const std::vector<RawExample>& examples);

// All length-1 and length-2 contiguous utterance spans.
std::vector<TrainingExample> decompose(const RawExample& e);
std::vector<TrainingExample> decomposeAll(const std::vector<RawExample>& examples);

// The first `utterances` utterances of e as one example (whole example by default).
TrainingExample prefixExample(const RawExample& e, std::optional<int> utterances = std::nullopt);

struct SyntheticOptions {
  int utterances = 5;
  int maxRetries = 200;
};

std::vector<RawExample> generateSynthetic(Domain d, int count, std::uint64_t seed,
                                          const SyntheticOptions& options = {});

}  // namespace stackparse
