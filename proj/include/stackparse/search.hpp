#pragma once

#include <cstdint>
#include <vector>

#include "stackparse/policy.hpp"
#include "stackparse/random.hpp"

namespace stackparse {

struct Hypothesis {
  Program tokens;
  MachineState state;
  double logProb = 0;  // unmasked policy log-probability of `tokens`
  bool terminal = false;
};

struct BeamConfig {
  int beamSize = 32;
  double epsilon = 0;
  int maxSteps = 0;  // 0: utterances * per-utterance budget
  std::uint64_t seed = 0;
};

// Pool ordering: higher logProb first; ties by lexicographic token ids.
bool hypothesisBefore(const Hypothesis& a, const Hypothesis& b);

// Every valid one-token extension of every beam member, in pool order.
std::vector<Hypothesis> expandBeam(const Policy& policy, const EncodedInput& input,
                                   const std::vector<Hypothesis>& beam);

// B draws without replacement from a pool of `poolSize` ranked items: with
// probability epsilon a uniform pick among the remaining items, otherwise the
// best remaining one. Returns ranks in draw order.
std::vector<int> epsilonGreedySelect(int poolSize, int beamSize, double epsilon, Rng& rng);

// Complete programs found during search, in discovery order.
std::vector<Hypothesis> classicBeamSearch(const Policy& policy, const TrainingExample& x,
                                          const BeamConfig& cfg);
std::vector<Hypothesis> randomizedBeamSearch(const Policy& policy, const TrainingExample& x,
                                             const BeamConfig& cfg);

struct Rollout {
  Program tokens;
  MachineState state;
  double logProb = 0;     // unmasked
  bool complete = false;  // false: dead end or step limit
};

// One rollout: at each step a uniform valid token with probability epsilon,
// else a draw from the policy renormalized over valid tokens.
Rollout sampleRollout(const Policy& policy, const TrainingExample& x, const EncodedInput& input,
                      double epsilon, Rng& rng, int maxSteps = 0);

std::vector<Rollout> sampleEpsGreedy(const Policy& policy, const TrainingExample& x, int samples,
                                     double epsilon, std::uint64_t seed, int maxSteps = 0);

}  // namespace stackparse
