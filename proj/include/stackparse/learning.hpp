#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "stackparse/policy.hpp"
#include "stackparse/search.hpp"

namespace stackparse {

// R(z): 1 iff z executes on x.start to exactly x.target.
int reward(const TrainingExample& x, const Program& z, const Vocabulary& vocab,
           const LanguageConfig& language = {});

struct WeightScheme {
  enum class Kind { RL, MML, Meritocratic };
  Kind kind = Kind::MML;
  double beta = 1;

  static WeightScheme rl() { return {Kind::RL, 1}; }
  static WeightScheme mml() { return {Kind::MML, 1}; }
  static WeightScheme meritocratic(double beta) { return {Kind::Meritocratic, beta}; }
};

// Gradient weights for the members of S. RL: p(z). MML: p renormalized over
// rewarded members. Meritocratic: MML weights raised to beta, renormalized.
// MML and Meritocratic give all zeros when nothing is rewarded.
std::vector<double> computeQ(const WeightScheme& scheme, const std::vector<double>& logProbs,
                             const std::vector<int>& rewards);

struct Candidate {
  Program program;
  double logProb = 0;
  int reward = 0;
};

// Rewards read off the cached final machine states.
std::vector<Candidate> scoreHypotheses(const std::vector<Hypothesis>& s, const TrainingExample& x);
// Incomplete rollouts keep reward 0.
std::vector<Candidate> scoreRollouts(const std::vector<Rollout>& s, const TrainingExample& x);

// Sum over S of q(z) R(z) grad log p(z|x).
void accumulateNumerical(const Policy& policy, const TrainingExample& x,
                         const std::vector<Candidate>& s, const WeightScheme& scheme, ParamSet& grad);
ParamSet gradEstimateNumerical(const Policy& policy, const TrainingExample& x,
                               const std::vector<Candidate>& s, const WeightScheme& scheme);

// (1/B) sum over samples of (R(z) - c) grad log p(z|x).
void accumulateMonteCarlo(const Policy& policy, const TrainingExample& x,
                          const std::vector<Candidate>& samples, double baseline, ParamSet& grad);
ParamSet gradEstimateMonteCarlo(const Policy& policy, const TrainingExample& x,
                                const std::vector<Candidate>& samples, double baseline);

// Sum of R(z) p(z|x) over every complete program, with probabilities
// accumulated token by token during a depth-first walk. Throws
// ExecError(BudgetExceeded) past `maxNodes`.
double expectedReward(const Policy& policy, const TrainingExample& x,
                      std::uint64_t maxNodes = 5'000'000);
// The same quantity via enumeratePrograms and one programLogProb per
// consistent program.
double marginalLikelihood(const Policy& policy, const TrainingExample& x,
                          std::uint64_t maxNodes = 5'000'000);
// Every complete program with its log-probability and reward.
std::vector<Candidate> enumerateCandidates(const Policy& policy, const TrainingExample& x,
                                           std::uint64_t maxNodes = 5'000'000);

enum class Algorithm { Reinforce, BsMml, RandoMer };

std::string_view algorithmName(Algorithm a);
std::optional<Algorithm> algorithmFromName(std::string_view name);

struct TrainConfig {
  Algorithm algo = Algorithm::RandoMer;
  int beamSize = 32;     // beam size, or sample count for REINFORCE
  double epsilon = 0.15;
  double beta = 0;
  double baseline = 0.01;  // REINFORCE only
  double lr = 0.001;
  int batchSize = 8;
  int maxIters = 3000;
  std::uint64_t seed = 1;
  int evalEvery = 250;
  int patience = 10;  // evaluations without improvement before stopping
  int maxSteps = 0;   // search step limit, 0: default
};

// Candidate set for one example under the configured explorer.
std::vector<Candidate> explore(const Policy& policy, const TrainingExample& x,
                               const TrainConfig& cfg, std::uint64_t seed);

// Adds the configured gradient estimate for one explored example.
void accumulateExampleGradient(const Policy& policy, const TrainingExample& x,
                               const std::vector<Candidate>& s, const TrainConfig& cfg,
                               ParamSet& grad);

struct TrainHooks {
  // Validation metric (higher is better), evaluated every cfg.evalEvery iterations.
  std::function<double(const PolicyParams&)> validate;
  // Called after each evaluation, with `best` true when the metric improved.
  std::function<void(int iter, const PolicyParams&, const AdamState&, bool best)> checkpoint;
  std::ostream* metrics = nullptr;  // CSV rows iter,split,metric,value
};

struct TrainResult {
  int iterations = 0;
  bool stoppedEarly = false;
  double bestValidation = -1;
  int bestIteration = 0;
  double discoveryRate = 0;  // fraction of explored examples with a rewarded program
  std::vector<double> batchDiscovery;
};

void writeMetricsHeader(std::ostream& out);
void writeMetric(std::ostream& out, int iter, std::string_view split, std::string_view metric,
                 double value);

// Minibatch training with one Adam step per iteration. Rethrows
// NonFiniteGradient after writing a diagnostic row to the metrics log.
TrainResult trainLoop(const TrainConfig& cfg, const std::vector<TrainingExample>& data,
                      PolicyParams& params, AdamState& adam, const WordTable& words,
                      const Vocabulary& vocab, const LanguageConfig& language,
                      const TrainHooks& hooks = {});

}  // namespace stackparse
