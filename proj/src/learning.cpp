#include "stackparse/learning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

namespace stackparse {

int reward(const TrainingExample& x, const Program& z, const Vocabulary& vocab,
           const LanguageConfig& language) {
  auto out = tryExecute(z, x.start, x.utteranceCount(), vocab, language);
  return out.ok() && out.value() == x.target ? 1 : 0;
}

std::vector<double> computeQ(const WeightScheme& scheme, const std::vector<double>& logProbs,
                             const std::vector<int>& rewards) {
  if (logProbs.size() != rewards.size()) throw std::invalid_argument("computeQ: size mismatch");
  const std::size_t n = logProbs.size();
  std::vector<double> q(n, 0.0);
  if (scheme.kind == WeightScheme::Kind::RL) {
    for (std::size_t i = 0; i < n; ++i) q[i] = std::exp(logProbs[i]);
    return q;
  }
  if (scheme.kind == WeightScheme::Kind::Meritocratic && scheme.beta < 0) {
    throw std::invalid_argument("beta must be nonnegative");
  }
  const double beta = scheme.kind == WeightScheme::Kind::MML ? 1.0 : scheme.beta;
  // q_MML^beta renormalized is p^beta renormalized over the rewarded set.
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    if (rewards[i] != 0) top = std::max(top, beta * logProbs[i]);
  }
  if (top == -std::numeric_limits<double>::infinity()) return q;
  double z = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (rewards[i] != 0) {
      q[i] = std::exp(beta * logProbs[i] - top);
      z += q[i];
    }
  }
  for (auto& v : q) v /= z;
  return q;
}

std::vector<Candidate> scoreHypotheses(const std::vector<Hypothesis>& s, const TrainingExample& x) {
  std::vector<Candidate> out;
  out.reserve(s.size());
  for (const auto& h : s) {
    const int r = h.terminal && h.state.world == x.target ? 1 : 0;
    out.push_back({h.tokens, h.logProb, r});
  }
  return out;
}

std::vector<Candidate> scoreRollouts(const std::vector<Rollout>& s, const TrainingExample& x) {
  std::vector<Candidate> out;
  out.reserve(s.size());
  for (const auto& r : s) {
    out.push_back({r.tokens, r.logProb, r.complete && r.state.world == x.target ? 1 : 0});
  }
  return out;
}

void accumulateNumerical(const Policy& policy, const TrainingExample& x,
                         const std::vector<Candidate>& s, const WeightScheme& scheme, ParamSet& grad) {
  std::vector<double> lps;
  std::vector<int> rs;
  for (const auto& c : s) {
    lps.push_back(c.logProb);
    rs.push_back(c.reward);
  }
  const auto q = computeQ(scheme, lps, rs);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double w = q[i] * s[i].reward;
    if (w != 0) policy.accumulateGradLogProb(x, s[i].program, w, grad);
  }
}

ParamSet gradEstimateNumerical(const Policy& policy, const TrainingExample& x,
                               const std::vector<Candidate>& s, const WeightScheme& scheme) {
  ParamSet g = policy.params().tensors.zerosLike();
  accumulateNumerical(policy, x, s, scheme, g);
  return g;
}

void accumulateMonteCarlo(const Policy& policy, const TrainingExample& x,
                          const std::vector<Candidate>& samples, double baseline, ParamSet& grad) {
  if (samples.empty()) return;
  const double inv = 1.0 / static_cast<double>(samples.size());
  for (const auto& c : samples) {
    const double w = (c.reward - baseline) * inv;
    if (w != 0) policy.accumulateGradLogProb(x, c.program, w, grad);
  }
}

ParamSet gradEstimateMonteCarlo(const Policy& policy, const TrainingExample& x,
                                const std::vector<Candidate>& samples, double baseline) {
  ParamSet g = policy.params().tensors.zerosLike();
  accumulateMonteCarlo(policy, x, samples, baseline, g);
  return g;
}

namespace {

struct ProbabilityWalk {
  const Policy& policy;
  const TrainingExample& x;
  const EncodedInput& input;
  std::uint64_t maxNodes;
  std::uint64_t nodes = 0;
  double total = 0;
  std::vector<Candidate>* collect = nullptr;

  void run(const MachineState& s, Program& prefix, double logProb) {
    if (++nodes > maxNodes) throw ExecError(ErrorKind::BudgetExceeded, "enumeration node budget exhausted");
    if (s.terminal()) {
      const int r = s.world == x.target ? 1 : 0;
      if (r) total += std::exp(logProb);
      if (collect) collect->push_back({prefix, logProb, r});
      return;
    }
    auto next = expand(s, policy.vocab());
    if (next.empty()) return;
    const Eigen::VectorXd probs = policy.nextTokenDistribution(input, prefix, s);
    for (const auto& c : next) {
      prefix.push_back(c.token);
      run(c.next, prefix, logProb + std::log(probs[c.token]));
      prefix.pop_back();
    }
  }
};

}  // namespace

double expectedReward(const Policy& policy, const TrainingExample& x, std::uint64_t maxNodes) {
  const EncodedInput input = policy.encode(x.utterances);
  ProbabilityWalk walk{policy, x, input, maxNodes};
  Program prefix;
  walk.run(MachineState::initial(x.start, x.utteranceCount(), policy.language()), prefix, 0.0);
  return walk.total;
}

std::vector<Candidate> enumerateCandidates(const Policy& policy, const TrainingExample& x,
                                           std::uint64_t maxNodes) {
  const EncodedInput input = policy.encode(x.utterances);
  std::vector<Candidate> out;
  ProbabilityWalk walk{policy, x, input, maxNodes};
  walk.collect = &out;
  Program prefix;
  walk.run(MachineState::initial(x.start, x.utteranceCount(), policy.language()), prefix, 0.0);
  return out;
}

double marginalLikelihood(const Policy& policy, const TrainingExample& x, std::uint64_t maxNodes) {
  EnumerationLimits limits;
  limits.budget = policy.language().budget;
  limits.maxNodes = maxNodes;
  double total = 0;
  auto stats = enumeratePrograms(
      x.start, x.utteranceCount(), policy.vocab(), limits,
      [&](const Program& z, const MachineState& s) {
        if (s.world == x.target) total += std::exp(policy.programLogProb(x, z));
        return true;
      },
      policy.language());
  if (!stats.exhausted) throw ExecError(ErrorKind::BudgetExceeded, "enumeration node budget exhausted");
  return total;
}

std::string_view algorithmName(Algorithm a) {
  switch (a) {
    case Algorithm::Reinforce: return "reinforce";
    case Algorithm::BsMml: return "bsmml";
    case Algorithm::RandoMer: return "randomer";
  }
  return "?";
}

std::optional<Algorithm> algorithmFromName(std::string_view name) {
  if (name == "reinforce") return Algorithm::Reinforce;
  if (name == "bsmml") return Algorithm::BsMml;
  if (name == "randomer") return Algorithm::RandoMer;
  return std::nullopt;
}

std::vector<Candidate> explore(const Policy& policy, const TrainingExample& x,
                               const TrainConfig& cfg, std::uint64_t seed) {
  switch (cfg.algo) {
    case Algorithm::Reinforce:
      return scoreRollouts(sampleEpsGreedy(policy, x, cfg.beamSize, cfg.epsilon, seed, cfg.maxSteps),
                           x);
    case Algorithm::BsMml:
      return scoreHypotheses(classicBeamSearch(policy, x, {cfg.beamSize, 0.0, cfg.maxSteps, seed}), x);
    case Algorithm::RandoMer:
      return scoreHypotheses(
          randomizedBeamSearch(policy, x, {cfg.beamSize, cfg.epsilon, cfg.maxSteps, seed}), x);
  }
  return {};
}

void accumulateExampleGradient(const Policy& policy, const TrainingExample& x,
                               const std::vector<Candidate>& s, const TrainConfig& cfg,
                               ParamSet& grad) {
  switch (cfg.algo) {
    case Algorithm::Reinforce:
      accumulateMonteCarlo(policy, x, s, cfg.baseline, grad);
      break;
    case Algorithm::BsMml:
      accumulateNumerical(policy, x, s, WeightScheme::mml(), grad);
      break;
    case Algorithm::RandoMer:
      accumulateNumerical(policy, x, s, WeightScheme::meritocratic(cfg.beta), grad);
      break;
  }
}

void writeMetricsHeader(std::ostream& out) { out << "iter,split,metric,value\n"; }

void writeMetric(std::ostream& out, int iter, std::string_view split, std::string_view metric,
                 double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9f", value);
  out << iter << ',' << split << ',' << metric << ',' << buf << '\n';
}

TrainResult trainLoop(const TrainConfig& cfg, const std::vector<TrainingExample>& data,
                      PolicyParams& params, AdamState& adam, const WordTable& words,
                      const Vocabulary& vocab, const LanguageConfig& language,
                      const TrainHooks& hooks) {
  if (data.empty()) throw std::invalid_argument("no training examples");
  if (cfg.batchSize < 1) throw std::invalid_argument("batch size must be at least 1");
  TrainResult result;
  const Policy policy(params, words, vocab, language);
  ParamSet grad = params.tensors.zerosLike();

  std::vector<std::size_t> order(data.size());
  std::size_t cursor = order.size();
  std::uint64_t epoch = 0;
  std::uint64_t explored = 0, discovered = 0;
  int sinceBest = 0;

  for (int iter = 1; iter <= cfg.maxIters; ++iter) {
    grad.setZero();
    int found = 0;
    for (int slot = 0; slot < cfg.batchSize; ++slot) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle(deriveSeed(cfg.seed, 0x5eedULL, ++epoch));
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.uniformInt(i)]);
        cursor = 0;
      }
      const TrainingExample& x = data[order[cursor++]];
      const auto s = explore(policy, x, cfg, deriveSeed(cfg.seed, static_cast<std::uint64_t>(iter),
                                                        static_cast<std::uint64_t>(slot) + 1));
      const bool any = std::any_of(s.begin(), s.end(), [](const Candidate& c) { return c.reward != 0; });
      found += any ? 1 : 0;
      accumulateExampleGradient(policy, x, s, cfg, grad);
    }
    explored += static_cast<std::uint64_t>(cfg.batchSize);
    discovered += static_cast<std::uint64_t>(found);
    const double batchRate = static_cast<double>(found) / cfg.batchSize;
    result.batchDiscovery.push_back(batchRate);
    if (hooks.metrics) writeMetric(*hooks.metrics, iter, "train", "discovery", batchRate);

    // An all-zero gradient leaves the parameters untouched (Adam momentum
    // would otherwise keep moving them).
    if (grad.maxAbs() > 0 || !grad.allFinite()) {
      try {
        adamStep(params, adam, grad, cfg.lr);
      } catch (const NonFiniteGradient& e) {
        if (hooks.metrics) {
          writeMetric(*hooks.metrics, iter, "train", "nonfinite_gradient", 1);
          hooks.metrics->flush();
        }
        throw NonFiniteGradient(std::string(e.what()) + " at iteration " + std::to_string(iter));
      }
    }
    result.iterations = iter;

    if (cfg.evalEvery > 0 && iter % cfg.evalEvery == 0) {
      double v = 0;
      if (hooks.validate) v = hooks.validate(params);
      const bool improved = v > result.bestValidation;
      if (improved) {
        result.bestValidation = v;
        result.bestIteration = iter;
        sinceBest = 0;
      } else {
        ++sinceBest;
      }
      if (hooks.metrics) {
        writeMetric(*hooks.metrics, iter, "train", "cumulative_discovery",
                    static_cast<double>(discovered) / static_cast<double>(explored));
        if (hooks.validate) writeMetric(*hooks.metrics, iter, "valid", "accuracy", v);
      }
      if (hooks.checkpoint) hooks.checkpoint(iter, params, adam, improved);
      if (hooks.validate && sinceBest >= cfg.patience) {
        result.stoppedEarly = true;
        break;
      }
    }
  }
  result.discoveryRate = static_cast<double>(discovered) / static_cast<double>(explored);
  return result;
}

}  // namespace stackparse
