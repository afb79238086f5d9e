#include <doctest.h>

#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "stackparse/dataset.hpp"
#include "stackparse/learning.hpp"

using namespace stackparse;

namespace {

// One utterance, a short token budget, and a target picked among the worlds
// reachable within that budget.
struct Micro {
  Vocabulary vocab;
  WordTable words;
  PolicyParams params;
  LanguageConfig lang;
  TrainingExample x;

  Micro(Domain d, std::uint64_t seed, int capH = 3, HistoryKind history = HistoryKind::Tokens)
      : vocab(Vocabulary::forDomain(d)),
        words(WordTable::random(6, seed)),
        params(initParams(seed, ModelDims{6, 5, 4, 4, history}, vocab.size())) {
    lang.budget = capH;
    x = prefixExample(generateSynthetic(d, 1, seed + 100)[0], 1);
    std::vector<WorldState> reachable;
    EnumerationLimits limits;
    limits.budget = capH;
    enumeratePrograms(
        x.start, 1, vocab, limits,
        [&](const Program&, const MachineState& s) {
          if (std::find(reachable.begin(), reachable.end(), s.world) == reachable.end())
            reachable.push_back(s.world);
          return true;
        },
        lang);
    REQUIRE_FALSE(reachable.empty());
    Rng rng(seed);
    x.target = reachable[rng.uniformInt(reachable.size())];
  }
};

double dot(const ParamSet& a, const ParamSet& b) {
  double s = 0;
  for (int i = 0; i < a.size(); ++i) s += (a[i].array() * b[i].array()).sum();
  return s;
}

ParamSet randomDirection(const ParamSet& like, std::uint64_t seed) {
  ParamSet d = like.zerosLike();
  Rng rng(seed);
  for (int i = 0; i < d.size(); ++i)
    for (Eigen::Index r = 0; r < d[i].rows(); ++r)
      for (Eigen::Index c = 0; c < d[i].cols(); ++c) d[i](r, c) = rng.uniform01() - 0.5;
  return d;
}

bool sameParams(const ParamSet& a, const ParamSet& b) {
  for (int i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

// Exact expectations under the rollout sampler at epsilon 0: each step draws
// from the policy renormalized over the viable continuations.
struct SamplerOracle {
  const Policy& policy;
  const TrainingExample& x;
  EncodedInput input;
  ParamSet rewarded;  // sum of q(z) R(z) grad log p(z)
  ParamSet all;       // sum of q(z) grad log p(z), dead ends included

  SamplerOracle(const Policy& p, const TrainingExample& ex)
      : policy(p), x(ex), input(p.encode(ex.utterances)),
        rewarded(p.params().tensors.zerosLike()), all(p.params().tensors.zerosLike()) {
    Program prefix;
    walk(MachineState::initial(x.start, x.utteranceCount(), policy.language()), prefix, 1.0);
  }

  void walk(const MachineState& s, Program& prefix, double q) {
    if (s.terminal()) {
      const ParamSet g = policy.gradLogProb(x, prefix);
      all.addScaled(g, q);
      if (s.world == x.target) rewarded.addScaled(g, q);
      return;
    }
    const auto next = policy.completion().viableContinuations(s, policy.vocab());
    if (next.empty()) {
      all.addScaled(policy.gradLogProb(x, prefix), q);
      return;
    }
    const Eigen::VectorXd p = policy.nextTokenDistribution(input, prefix, s);
    double mass = 0;
    for (const auto& c : next) mass += p[c.token];
    for (const auto& c : next) {
      prefix.push_back(c.token);
      walk(c.next, prefix, q * p[c.token] / mass);
      prefix.pop_back();
    }
  }
};

}  // namespace

TEST_CASE("reward is the exact-match indicator") {
  const auto e = generateSynthetic(Domain::Alchemy, 1, 4)[0];
  const auto vocab = Vocabulary::forDomain(Domain::Alchemy);
  const TrainingExample x = prefixExample(e, 5);
  const Program gold = parseProgram(e.goldProgram, vocab);
  CHECK(reward(x, gold, vocab) == 1);
  CHECK(reward(x, {}, vocab) == 0);
  Program cut(gold.begin(), gold.end() - 1);
  CHECK(reward(x, cut, vocab) == 0);
  TrainingExample other = x;
  other.target = x.start;
  CHECK(reward(other, gold, vocab) == (execute(gold, x.start, 5, vocab) == x.start ? 1 : 0));
}

TEST_CASE("computeQ worked examples") {
  const std::vector<double> two{std::log(0.8), std::log(0.2)};
  const std::vector<int> both{1, 1};

  auto q = computeQ(WeightScheme::meritocratic(0.5), two, both);
  CHECK(q[0] == doctest::Approx(2.0 / 3).epsilon(1e-12));
  CHECK(q[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  const std::vector<double> four{std::log(0.5), std::log(0.3), std::log(0.15), std::log(0.05)};
  const std::vector<int> mixed{1, 0, 1, 1};
  q = computeQ(WeightScheme::meritocratic(0), four, mixed);
  CHECK(q == std::vector<double>{1.0 / 3, 0, 1.0 / 3, 1.0 / 3});

  const auto mml = computeQ(WeightScheme::mml(), four, mixed);
  const auto b1 = computeQ(WeightScheme::meritocratic(1), four, mixed);
  for (int i = 0; i < 4; ++i) CHECK(b1[i] == doctest::Approx(mml[i]).epsilon(1e-15));
  CHECK(mml[0] == doctest::Approx(0.5 / 0.7).epsilon(1e-12));
  CHECK(mml[1] == 0);
  CHECK(mml[3] == doctest::Approx(0.05 / 0.7).epsilon(1e-12));

  q = computeQ(WeightScheme::mml(), {std::log(0.01), std::log(0.99)}, both);
  CHECK(q[0] == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(q[1] == doctest::Approx(0.99).epsilon(1e-12));

  // RL weights are the raw probabilities; rewards enter the gradient later.
  q = computeQ(WeightScheme::rl(), four, mixed);
  CHECK(q[1] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(q[3] == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("computeQ without rewards and bad input") {
  const std::vector<double> lp{-1.0, -2.0};
  CHECK(computeQ(WeightScheme::mml(), lp, {0, 0}) == std::vector<double>{0, 0});
  CHECK(computeQ(WeightScheme::meritocratic(0), lp, {0, 0}) == std::vector<double>{0, 0});
  CHECK(computeQ(WeightScheme::mml(), {}, {}).empty());
  CHECK_THROWS_AS(computeQ(WeightScheme::mml(), lp, {1}), std::invalid_argument);
  CHECK_THROWS_AS(computeQ(WeightScheme::meritocratic(-0.5), lp, {1, 1}), std::invalid_argument);
  // Tiny probabilities do not underflow to a zero normalizer.
  const auto q = computeQ(WeightScheme::mml(), {-900.0, -901.0}, {1, 1});
  CHECK(q[0] + q[1] == doctest::Approx(1.0));
  CHECK(q[0] == doctest::Approx(1 / (1 + std::exp(-1.0))));
}

TEST_CASE("meritocratic weights flatten as beta decreases") {
  Rng rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = rng.uniformInt(1, 8);
    std::vector<double> lp(n);
    std::vector<int> r(n);
    for (int i = 0; i < n; ++i) {
      lp[i] = -10 * rng.uniform01();
      r[i] = rng.bernoulli(0.6) ? 1 : 0;
    }
    r[0] = 1;
    double prev = INFINITY;
    for (int k = 10; k >= 0; --k) {
      const auto q = computeQ(WeightScheme::meritocratic(k / 10.0), lp, r);
      double hi = 0, lo = INFINITY, sum = 0;
      for (int i = 0; i < n; ++i) {
        if (!r[i]) {
          CHECK(q[i] == 0);
          continue;
        }
        hi = std::max(hi, q[i]);
        lo = std::min(lo, q[i]);
        sum += q[i];
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(hi / lo <= prev * (1 + 1e-12));
      prev = hi / lo;
      if (k == 0) CHECK(hi / lo == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("numerical gradient estimate on small sets") {
  Micro m(Domain::Tangrams, 3);
  const Policy policy(m.params, m.words, m.vocab, m.lang);
  auto all = enumerateCandidates(policy, m.x);
  REQUIRE(all.size() > 2);

  std::vector<Candidate> none;
  for (const auto& c : all)
    if (!c.reward) none.push_back(c);
  CHECK(gradEstimateNumerical(policy, m.x, none, WeightScheme::mml()).maxAbs() == 0);
  CHECK(gradEstimateNumerical(policy, m.x, {}, WeightScheme::meritocratic(0)).maxAbs() == 0);

  Candidate hit;
  for (const auto& c : all)
    if (c.reward) hit = c;
  REQUIRE(hit.reward == 1);
  const ParamSet g = policy.gradLogProb(m.x, hit.program);
  for (auto scheme : {WeightScheme::mml(), WeightScheme::meritocratic(0.3)}) {
    const ParamSet single = gradEstimateNumerical(policy, m.x, {hit}, scheme);
    for (int i = 0; i < g.size(); ++i) CHECK(single[i].isApprox(g[i], 1e-14));
  }
  const ParamSet rl = gradEstimateNumerical(policy, m.x, {hit}, WeightScheme::rl());
  const double p = std::exp(hit.logProb);
  for (int i = 0; i < g.size(); ++i) CHECK(rl[i].isApprox(p * g[i], 1e-12));
}

TEST_CASE("expected reward equals the enumerated marginal likelihood") {
  int instances = 0;
  for (Domain d : {Domain::Alchemy, Domain::Tangrams, Domain::Scene}) {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      Micro m(d, seed, 3,
              seed % 2 ? HistoryKind::Tokens : HistoryKind::Stack);
      const Policy policy(m.params, m.words, m.vocab, m.lang);
      const double g = expectedReward(policy, m.x);
      const double ml = marginalLikelihood(policy, m.x);
      CHECK(g > 0);
      CHECK(g <= 1);
      CHECK(std::abs(g - ml) < 1e-12);
      ++instances;
    }
  }
  CHECK(instances >= 10);
}

TEST_CASE("MML gradient over every program is the gradient of the log marginal") {
  for (std::uint64_t seed : {5, 6}) {
    Micro m(Domain::Tangrams, seed, 3, seed == 5 ? HistoryKind::Tokens : HistoryKind::Stack);
    const Policy policy(m.params, m.words, m.vocab, m.lang);
    const ParamSet g = gradEstimateNumerical(policy, m.x, enumerateCandidates(policy, m.x), WeightScheme::mml());

    const double h = 1e-4;
    Rng rng(seed);
    double worst = 0;
    for (int t = 0; t < m.params.tensors.size(); ++t) {
      Eigen::MatrixXd& w = m.params.tensors[t];
      for (int k = 0; k < 4; ++k) {
        const Eigen::Index r = rng.uniformInt(w.rows()), c = rng.uniformInt(w.cols());
        const double keep = w(r, c);
        w(r, c) = keep + h;
        const double up = std::log(marginalLikelihood(policy, m.x));
        w(r, c) = keep - h;
        const double down = std::log(marginalLikelihood(policy, m.x));
        w(r, c) = keep;
        const double fd = (up - down) / (2 * h);
        const double a = g[t](r, c);
        worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6}));
      }
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("expected reward under a uniform policy counts consistent programs") {
  // W_s = 0 makes every step uniform over the full vocabulary, so
  // G = sum over consistent z of |Z|^-len(z). Count them over raw strings.
  Micro m(Domain::Tangrams, 8, 3);
  m.params.tensors[m.params.ws].setZero();
  const Policy policy(m.params, m.words, m.vocab, m.lang);
  const int n = m.vocab.size();
  std::map<int, int> byLength;
  Program z;
  for (int len = 1; len <= 3; ++len) {
    z.assign(len, 0);
    while (true) {
      auto out = tryExecute(z, m.x.start, 1, m.vocab, m.lang);
      if (out.ok() && out.value() == m.x.target) byLength[len]++;
      int i = len - 1;
      while (i >= 0 && ++z[i] == n) z[i--] = 0;
      if (i < 0) break;
    }
  }
  double hand = 0;
  for (auto [len, count] : byLength) hand += count * std::pow(1.0 / n, len);
  REQUIRE(hand > 0);
  CHECK(expectedReward(policy, m.x) == doctest::Approx(hand).epsilon(1e-12));
}

TEST_CASE("expected reward of an unreachable target is zero") {
  Micro m(Domain::Tangrams, 9, 3);
  // Emptying a full row takes more than one action.
  TangramsWorld empty;
  empty.removed = {0, 1, 2, 3, 4};
  m.x.target = empty;
  const Policy policy(m.params, m.words, m.vocab, m.lang);
  CHECK(expectedReward(policy, m.x) == 0);
  CHECK(marginalLikelihood(policy, m.x) == 0);
  CHECK_THROWS_AS(expectedReward(policy, m.x, 10), ExecError);
  CHECK_THROWS_AS(marginalLikelihood(policy, m.x, 10), ExecError);
}

TEST_CASE("Monte Carlo estimate without rewards is zero at c = 0") {
  Micro m(Domain::Tangrams, 9, 3);
  TangramsWorld empty;
  empty.removed = {0, 1, 2, 3, 4};
  m.x.target = empty;
  const Policy policy(m.params, m.words, m.vocab, m.lang);
  const auto samples = scoreRollouts(sampleEpsGreedy(policy, m.x, 32, 0.0, 1), m.x);
  CHECK(gradEstimateMonteCarlo(policy, m.x, samples, 0.0).maxAbs() == 0);
  CHECK(gradEstimateMonteCarlo(policy, m.x, {}, 0.5).maxAbs() == 0);
  CHECK(gradEstimateMonteCarlo(policy, m.x, samples, 0.01).maxAbs() > 0);
}

TEST_CASE("Monte Carlo estimate matches the sampler expectation") {
  // Oracle: exact sum over every rollout outcome with the masked-and-
  // renormalized sampling probabilities. Compared along random directions.
  Micro m(Domain::Tangrams, 11, 3);
  const Policy policy(m.params, m.words, m.vocab, m.lang);
  const SamplerOracle oracle(policy, m.x);
  const int n = 10000;
  const auto samples = scoreRollouts(sampleEpsGreedy(policy, m.x, n, 0.0, 21), m.x);
  const double c = 0.5;
  const ParamSet est0 = gradEstimateMonteCarlo(policy, m.x, samples, 0.0);
  const ParamSet estC = gradEstimateMonteCarlo(policy, m.x, samples, c);

  std::map<Program, ParamSet> cache;
  for (std::uint64_t dir = 1; dir <= 3; ++dir) {
    const ParamSet v = randomDirection(est0, 100 + dir);
    double s0 = 0, ss0 = 0, sd = 0, ssd = 0;
    for (const auto& smp : samples) {
      auto it = cache.find(smp.program);
      if (it == cache.end()) it = cache.emplace(smp.program, policy.gradLogProb(m.x, smp.program)).first;
      const double proj = dot(it->second, v);
      const double a = smp.reward * proj;
      const double diff = -c * proj;  // per-sample change from the baseline
      s0 += a;
      ss0 += a * a;
      sd += diff;
      ssd += diff * diff;
    }
    const double mean0 = s0 / n, se0 = std::sqrt((ss0 / n - mean0 * mean0) / n);
    const double meanD = sd / n, seD = std::sqrt((ssd / n - meanD * meanD) / n);
    CHECK(dot(est0, v) == doctest::Approx(mean0).epsilon(1e-9));
    CHECK(dot(estC, v) - dot(est0, v) == doctest::Approx(meanD).epsilon(1e-9));
    CHECK(se0 > 0);
    CHECK(std::abs(mean0 - dot(oracle.rewarded, v)) < 3 * se0);
    CHECK(std::abs(meanD + c * dot(oracle.all, v)) < 3 * seD);
  }
}

TEST_CASE("algorithm names") {
  for (Algorithm a : {Algorithm::Reinforce, Algorithm::BsMml, Algorithm::RandoMer})
    CHECK(algorithmFromName(algorithmName(a)) == a);
  CHECK_FALSE(algorithmFromName("mml").has_value());
}

TEST_CASE("training on examples with no reachable target leaves parameters alone") {
  Micro m(Domain::Tangrams, 9, 3);
  TangramsWorld empty;
  empty.removed = {0, 1, 2, 3, 4};
  m.x.target = empty;
  const ParamSet before = m.params.tensors;
  AdamState adam = AdamState::forParams(m.params);
  TrainConfig cfg;
  cfg.algo = Algorithm::BsMml;
  cfg.beamSize = 4;
  cfg.maxIters = 5;
  cfg.batchSize = 2;
  const auto r = trainLoop(cfg, {m.x}, m.params, adam, m.words, m.vocab, m.lang);
  CHECK(r.iterations == 5);
  CHECK(r.discoveryRate == 0);
  CHECK(adam.step == 0);
  CHECK(sameParams(before, m.params.tensors));
}

TEST_CASE("training is deterministic and writes metrics") {
  std::vector<TrainingExample> data;
  for (const auto& e : generateSynthetic(Domain::Scene, 6, 3))
    for (const auto& x : decompose(e)) data.push_back(x);
  const auto vocab = Vocabulary::forDomain(Domain::Scene);
  const WordTable words = WordTable::random(6, 1);
  const LanguageConfig lang;

  auto run = [&](Algorithm algo, std::string& csv, ParamSet& out) {
    PolicyParams p = initParams(4, ModelDims{6, 5, 4, 4, HistoryKind::Stack}, vocab.size());
    AdamState adam = AdamState::forParams(p);
    TrainConfig cfg;
    cfg.algo = algo;
    cfg.beamSize = 6;
    cfg.maxIters = 6;
    cfg.evalEvery = 3;
    cfg.epsilon = algo == Algorithm::BsMml ? 0 : 0.2;
    std::ostringstream metrics;
    writeMetricsHeader(metrics);
    TrainHooks hooks;
    hooks.metrics = &metrics;
    const auto r = trainLoop(cfg, data, p, adam, words, vocab, lang, hooks);
    CHECK(r.batchDiscovery.size() == 6);
    csv = metrics.str();
    out = p.tensors;
    return r;
  };
  for (Algorithm algo : {Algorithm::Reinforce, Algorithm::BsMml, Algorithm::RandoMer}) {
    std::string a, b;
    ParamSet pa, pb;
    const auto ra = run(algo, a, pa);
    run(algo, b, pb);
    CHECK(a == b);
    CHECK(sameParams(pa, pb));
    CHECK(a.rfind("iter,split,metric,value\n1,train,discovery,", 0) == 0);
    CHECK(a.find("3,train,cumulative_discovery,") != std::string::npos);
    double mean = 0;
    for (double v : ra.batchDiscovery) mean += v;
    CHECK(ra.discoveryRate == doctest::Approx(mean / ra.batchDiscovery.size()));
  }
}

TEST_CASE("training stops after the patience runs out") {
  Micro m(Domain::Tangrams, 3, 3);
  AdamState adam = AdamState::forParams(m.params);
  TrainConfig cfg;
  cfg.algo = Algorithm::RandoMer;
  cfg.beamSize = 4;
  cfg.maxIters = 100;
  cfg.evalEvery = 2;
  cfg.patience = 3;
  std::vector<std::pair<int, bool>> saved;
  TrainHooks hooks;
  hooks.validate = [](const PolicyParams&) { return 0.25; };
  hooks.checkpoint = [&](int iter, const PolicyParams&, const AdamState&, bool best) {
    saved.push_back({iter, best});
  };
  const auto r = trainLoop(cfg, {m.x}, m.params, adam, m.words, m.vocab, m.lang, hooks);
  CHECK(r.stoppedEarly);
  CHECK(r.iterations == 8);
  CHECK(r.bestIteration == 2);
  CHECK(r.bestValidation == 0.25);
  CHECK(saved == std::vector<std::pair<int, bool>>{{2, true}, {4, false}, {6, false}, {8, false}});

  CHECK_THROWS_AS(trainLoop(cfg, {}, m.params, adam, m.words, m.vocab, m.lang), std::invalid_argument);
}
