#include "stackparse/search.hpp"

#include <algorithm>
#include <cmath>

namespace stackparse {

namespace {

int stepLimit(const Policy& policy, const TrainingExample& x, int maxSteps) {
  return maxSteps > 0 ? maxSteps : x.utteranceCount() * policy.language().budget;
}

std::vector<Hypothesis> beamSearch(const Policy& policy, const TrainingExample& x,
                                   const BeamConfig& cfg, bool randomized) {
  if (cfg.beamSize < 1) throw std::invalid_argument("beam size must be at least 1");
  if (cfg.epsilon < 0 || cfg.epsilon > 1) throw std::invalid_argument("epsilon must be in [0, 1]");
  const EncodedInput input = policy.encode(x.utterances);
  Rng rng(cfg.seed);
  std::vector<Hypothesis> found;
  std::vector<Hypothesis> beam{
      Hypothesis{{}, MachineState::initial(x.start, x.utteranceCount(), policy.language()), 0, false}};
  if (beam[0].state.terminal()) return found;
  const int limit = stepLimit(policy, x, cfg.maxSteps);
  for (int t = 0; t < limit && !beam.empty(); ++t) {
    std::vector<Hypothesis> pool = expandBeam(policy, input, beam);
    std::vector<int> picks;
    if (randomized) {
      picks = epsilonGreedySelect(static_cast<int>(pool.size()), cfg.beamSize, cfg.epsilon, rng);
    } else {
      const int n = std::min<int>(cfg.beamSize, static_cast<int>(pool.size()));
      for (int i = 0; i < n; ++i) picks.push_back(i);
    }
    beam.clear();
    for (int i : picks) {
      if (pool[i].terminal) {
        found.push_back(std::move(pool[i]));
      } else {
        beam.push_back(std::move(pool[i]));
      }
    }
  }
  return found;
}

}  // namespace

bool hypothesisBefore(const Hypothesis& a, const Hypothesis& b) {
  if (a.logProb != b.logProb) return a.logProb > b.logProb;
  return a.tokens < b.tokens;
}

std::vector<Hypothesis> expandBeam(const Policy& policy, const EncodedInput& input,
                                   const std::vector<Hypothesis>& beam) {
  std::vector<Hypothesis> pool;
  for (const auto& h : beam) {
    if (h.terminal) continue;
    auto next = policy.completion().viableContinuations(h.state, policy.vocab());
    if (next.empty()) continue;
    const Eigen::VectorXd probs = policy.nextTokenDistribution(input, h.tokens, h.state);
    for (auto& c : next) {
      Hypothesis e;
      e.tokens = h.tokens;
      e.tokens.push_back(c.token);
      e.logProb = h.logProb + std::log(probs[c.token]);
      e.terminal = c.next.terminal();
      e.state = std::move(c.next);
      pool.push_back(std::move(e));
    }
  }
  std::sort(pool.begin(), pool.end(), hypothesisBefore);
  return pool;
}

std::vector<int> epsilonGreedySelect(int poolSize, int beamSize, double epsilon, Rng& rng) {
  std::vector<int> remaining(static_cast<std::size_t>(std::max(poolSize, 0)));
  for (int i = 0; i < poolSize; ++i) remaining[i] = i;
  std::vector<int> picks;
  while (static_cast<int>(picks.size()) < beamSize && !remaining.empty()) {
    std::size_t at = 0;
    if (epsilon > 0 && rng.bernoulli(epsilon)) at = rng.uniformInt(remaining.size());
    picks.push_back(remaining[at]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(at));
  }
  return picks;
}

std::vector<Hypothesis> classicBeamSearch(const Policy& policy, const TrainingExample& x,
                                          const BeamConfig& cfg) {
  return beamSearch(policy, x, cfg, false);
}

std::vector<Hypothesis> randomizedBeamSearch(const Policy& policy, const TrainingExample& x,
                                             const BeamConfig& cfg) {
  return beamSearch(policy, x, cfg, true);
}

Rollout sampleRollout(const Policy& policy, const TrainingExample& x, const EncodedInput& input,
                      double epsilon, Rng& rng, int maxSteps) {
  Rollout r;
  r.state = MachineState::initial(x.start, x.utteranceCount(), policy.language());
  const int limit = stepLimit(policy, x, maxSteps);
  for (int t = 0; t < limit && !r.state.terminal(); ++t) {
    auto next = policy.completion().viableContinuations(r.state, policy.vocab());
    if (next.empty()) return r;
    const Eigen::VectorXd probs = policy.nextTokenDistribution(input, r.tokens, r.state);
    std::size_t pick;
    if (epsilon > 0 && rng.bernoulli(epsilon)) {
      pick = rng.uniformInt(next.size());
    } else {
      double total = 0;
      for (const auto& c : next) total += probs[c.token];
      double u = rng.uniform01() * total;
      pick = next.size() - 1;
      for (std::size_t i = 0; i < next.size(); ++i) {
        u -= probs[next[i].token];
        if (u < 0) {
          pick = i;
          break;
        }
      }
    }
    r.tokens.push_back(next[pick].token);
    r.logProb += std::log(probs[next[pick].token]);
    r.state = std::move(next[pick].next);
  }
  r.complete = r.state.terminal();
  return r;
}

std::vector<Rollout> sampleEpsGreedy(const Policy& policy, const TrainingExample& x, int samples,
                                     double epsilon, std::uint64_t seed, int maxSteps) {
  const EncodedInput input = policy.encode(x.utterances);
  Rng rng(seed);
  std::vector<Rollout> out;
  out.reserve(static_cast<std::size_t>(std::max(samples, 0)));
  for (int b = 0; b < samples; ++b) out.push_back(sampleRollout(policy, x, input, epsilon, rng, maxSteps));
  return out;
}

}  // namespace stackparse
