#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "stackparse/learning.hpp"

namespace stackparse {

enum class ThreeUttsMode { Truncate, Redecode };

struct EvalOptions {
  int beamSize = 32;
  ThreeUttsMode threeUtts = ThreeUttsMode::Truncate;
  int maxSteps = 0;
};

struct ExampleResult {
  std::string id;
  bool decoded = false;
  bool correct3 = false;
  bool correct5 = false;
  Program program;  // highest-probability complete program, if any
};

struct EvalReport {
  double accuracy3 = 0;
  double accuracy5 = 0;
  std::vector<ExampleResult> examples;
};

// Decodes each full example with classic beam search and scores the top
// program against the world after utterance 3 and after the last utterance.
EvalReport evaluate(const Policy& policy, const std::vector<RawExample>& test,
                    const EvalOptions& options = {});

// Fraction of examples whose top beam program reaches the target world.
double denotationAccuracy(const Policy& policy, const std::vector<TrainingExample>& examples,
                          int beamSize, int maxSteps = 0);

// Middle value of the sorted values; mean of the two middle values for an even count.
double median(std::vector<double> values);

struct ConsistentCount {
  std::uint64_t count = 0;  // rewarded programs found
  std::uint64_t nodes = 0;
  bool exhaustive = true;   // false: node budget hit, count is only a lower bound
};

// Number of distinct programs with at most capH tokens per utterance that
// execute from x.start to x.target. Counts paths through the distinct
// machine states reached at utterance boundaries.
ConsistentCount countConsistent(const TrainingExample& x, const Vocabulary& vocab, int capH,
                                std::uint64_t maxNodes, const LanguageConfig& language = {});

// Top-k complete programs from classic beam search, sorted by probability.
std::vector<Candidate> topPrograms(const Policy& policy, const TrainingExample& x, int k,
                                   int beamSize, int maxSteps = 0);

// Tab-separated rows: id, rank, probability, reward, program.
void dumpPredictions(const Policy& policy, const std::vector<TrainingExample>& examples, int k,
                     int beamSize, std::ostream& out);

// Entropy (nats) of the probabilities of the rewarded programs among
// `candidates`, renormalized; nullopt if none is rewarded.
std::optional<double> rewardedEntropy(const std::vector<Candidate>& candidates);

// Mean rewardedEntropy of the top-k programs over examples that have any.
double meanRewardedEntropy(const Policy& policy, const std::vector<TrainingExample>& examples,
                           int k, int beamSize);

// The gold program of a synthetic example cut after `utterances` actions.
Program goldPrefix(const RawExample& e, int utterances, const Vocabulary& vocab,
                   const LanguageConfig& language = {});

struct GradCheckOptions {
  std::uint64_t seed = 7;
  int pairs = 5;
  double threshold = 1e-4;
};

struct GradCheckReport {
  double maxRelativeError = 0;
  std::string worst;
  int pairsChecked = 0;
  bool passed = false;
};

// Finite-difference check at reduced dimensions on synthetic instances
// across the three domains and both history embedders.
GradCheckReport runGradientCheck(const GradCheckOptions& options, std::ostream* log = nullptr);

// Command-line entry point. Returns 0 on success, 1 on runtime failure and
// 2 on bad usage.
int cliMain(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace stackparse
