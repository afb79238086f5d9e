#include "stackparse/harness.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace stackparse {

namespace {

Hypothesis const* bestHypothesis(const std::vector<Hypothesis>& s) {
  const Hypothesis* best = nullptr;
  for (const auto& h : s) {
    if (!best || hypothesisBefore(h, *best)) best = &h;
  }
  return best;
}

// World after the first `actions` actions of program z, if it gets that far.
std::optional<WorldState> worldAfterActions(const Program& z, const WorldState& w0, int totalUtterances,
                                            int actions, const Vocabulary& vocab,
                                            const LanguageConfig& language) {
  MachineState s = MachineState::initial(w0, totalUtterances, language);
  for (TokenId tok : z) {
    if (s.pointer > actions) break;
    auto next = tryStep(s, vocab[tok]);
    if (!next) return std::nullopt;
    s = std::move(next).value();
  }
  if (s.pointer <= actions) return std::nullopt;
  return s.world;
}

}  // namespace

EvalReport evaluate(const Policy& policy, const std::vector<RawExample>& test,
                    const EvalOptions& options) {
  EvalReport report;
  const BeamConfig beam{options.beamSize, 0.0, options.maxSteps, 0};
  int right3 = 0, right5 = 0;
  for (const auto& e : test) {
    ExampleResult r;
    r.id = e.id;
    const int m = static_cast<int>(e.utterances.size());
    const int k3 = std::min(3, m);
    const TrainingExample full = prefixExample(e);
    const auto found = classicBeamSearch(policy, full, beam);
    if (const Hypothesis* best = bestHypothesis(found)) {
      r.decoded = true;
      r.program = best->tokens;
      r.correct5 = best->state.world == full.target;
      if (options.threeUtts == ThreeUttsMode::Truncate) {
        auto w3 = worldAfterActions(best->tokens, e.start, m, k3, policy.vocab(), policy.language());
        r.correct3 = w3 && *w3 == e.worlds[k3 - 1];
      }
    }
    if (options.threeUtts == ThreeUttsMode::Redecode) {
      const TrainingExample head = prefixExample(e, k3);
      const auto found3 = classicBeamSearch(policy, head, beam);
      const Hypothesis* best3 = bestHypothesis(found3);
      r.correct3 = best3 && best3->state.world == head.target;
    }
    right3 += r.correct3;
    right5 += r.correct5;
    report.examples.push_back(std::move(r));
  }
  if (!test.empty()) {
    report.accuracy3 = static_cast<double>(right3) / test.size();
    report.accuracy5 = static_cast<double>(right5) / test.size();
  }
  return report;
}

double denotationAccuracy(const Policy& policy, const std::vector<TrainingExample>& examples,
                          int beamSize, int maxSteps) {
  if (examples.empty()) return 0;
  int right = 0;
  for (const auto& x : examples) {
    const auto found = classicBeamSearch(policy, x, {beamSize, 0.0, maxSteps, 0});
    const Hypothesis* best = bestHypothesis(found);
    right += best && best->state.world == x.target;
  }
  return static_cast<double>(right) / examples.size();
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of no values");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// ---------------------------------------------------------------------------
// Spurious-program counting

namespace {

std::string boundaryKey(const MachineState& s) {
  std::string key = serializeWorld(s.world);
  if (s.world.domain() == Domain::Scene) {
    const auto& w = s.world.scene();
    key += "|ids";
    for (const auto& p : w.slots) key += ' ' + (p ? std::to_string(p->id) : std::string("-"));
    key += " next " + std::to_string(w.nextId);
  }
  for (const auto& h : s.history) {
    key += '|';
    key += actionName(h.action);
    for (const auto& a : h.args) key += ' ' + describeValue(a);
  }
  return key;
}

// Units (beakers, stage slots) in which two worlds differ; every action
// changes at most two. Tangrams rows shift on add and remove, so no bound
// is used there.
std::optional<int> unitDistance(const WorldState& a, const WorldState& b) {
  switch (a.domain()) {
    case Domain::Alchemy: {
      int n = 0;
      for (int i = 0; i < AlchemyWorld::kBeakers; ++i) n += !(a.alchemy().beakers[i] == b.alchemy().beakers[i]);
      return n;
    }
    case Domain::Scene: {
      int n = 0;
      for (int i = 0; i < SceneWorld::kPositions; ++i) {
        const auto& p = a.scene().slots[i];
        const auto& q = b.scene().slots[i];
        n += p.has_value() != q.has_value() || (p && (p->shirt != q->shirt || p->hat != q->hat));
      }
      return n;
    }
    case Domain::Tangrams: return std::nullopt;
  }
  return std::nullopt;
}

struct SegmentWalk {
  const Vocabulary& vocab;
  std::uint64_t maxNodes;
  std::uint64_t& nodes;
  bool& exhausted;

  // Calls emit(state) for every way of finishing the current utterance.
  template <class F>
  void run(const MachineState& s, int pointer, F& emit) {
    if (!exhausted) return;
    if (++nodes > maxNodes) {
      exhausted = false;
      return;
    }
    for (auto& c : expand(s, vocab)) {
      if (c.next.pointer != pointer) {
        emit(c.next);
      } else {
        run(c.next, pointer, emit);
      }
      if (!exhausted) return;
    }
  }
};

}  // namespace

ConsistentCount countConsistent(const TrainingExample& x, const Vocabulary& vocab, int capH,
                                std::uint64_t maxNodes, const LanguageConfig& language) {
  LanguageConfig cfg = language;
  cfg.budget = capH;
  ConsistentCount result;
  bool exhausted = true;
  SegmentWalk walk{vocab, maxNodes, result.nodes, exhausted};

  std::map<std::string, std::pair<MachineState, std::uint64_t>> layer;
  MachineState s0 = MachineState::initial(x.start, x.utteranceCount(), cfg);
  layer.emplace(boundaryKey(s0), std::make_pair(s0, std::uint64_t{1}));
  for (int m = 1; m <= x.utteranceCount() && exhausted; ++m) {
    std::map<std::string, std::pair<MachineState, std::uint64_t>> next;
    const bool last = m == x.utteranceCount();
    for (const auto& [key, entry] : layer) {
      const std::uint64_t ways = entry.second;
      auto emit = [&](const MachineState& s) {
        // On the last utterance only the target world matters.
        if (last) {
          if (s.world == x.target) result.count += ways;
          return;
        }
        // Too far from the target for the actions that remain.
        const auto dist = unitDistance(s.world, x.target);
        if (dist && *dist > 2 * (x.utteranceCount() - m)) return;
        auto [it, fresh] = next.try_emplace(boundaryKey(s), s, 0);
        it->second.second += ways;
      };
      walk.run(entry.first, m, emit);
      if (!exhausted) break;
    }
    layer = std::move(next);
  }
  result.exhaustive = exhausted;
  return result;
}

// ---------------------------------------------------------------------------
// Predictions

std::vector<Candidate> topPrograms(const Policy& policy, const TrainingExample& x, int k,
                                   int beamSize, int maxSteps) {
  auto found = classicBeamSearch(policy, x, {beamSize, 0.0, maxSteps, 0});
  std::sort(found.begin(), found.end(), hypothesisBefore);
  if (static_cast<int>(found.size()) > k) found.resize(static_cast<std::size_t>(k));
  return scoreHypotheses(found, x);
}

void dumpPredictions(const Policy& policy, const std::vector<TrainingExample>& examples, int k,
                     int beamSize, std::ostream& out) {
  for (const auto& x : examples) {
    const auto top = topPrograms(policy, x, k, beamSize);
    for (std::size_t i = 0; i < top.size(); ++i) {
      char prob[32];
      std::snprintf(prob, sizeof prob, "%.6e", std::exp(top[i].logProb));
      out << x.id << '\t' << i + 1 << '\t' << prob << '\t' << top[i].reward << '\t'
          << programToString(top[i].program, policy.vocab()) << '\n';
    }
  }
}

std::optional<double> rewardedEntropy(const std::vector<Candidate>& candidates) {
  double top = -INFINITY;
  for (const auto& c : candidates) {
    if (c.reward) top = std::max(top, c.logProb);
  }
  if (top == -INFINITY) return std::nullopt;
  double z = 0;
  for (const auto& c : candidates) {
    if (c.reward) z += std::exp(c.logProb - top);
  }
  double h = 0;
  for (const auto& c : candidates) {
    if (!c.reward) continue;
    const double p = std::exp(c.logProb - top) / z;
    if (p > 0) h -= p * std::log(p);
  }
  return h;
}

double meanRewardedEntropy(const Policy& policy, const std::vector<TrainingExample>& examples,
                           int k, int beamSize) {
  double sum = 0;
  int n = 0;
  for (const auto& x : examples) {
    if (auto h = rewardedEntropy(topPrograms(policy, x, k, beamSize))) {
      sum += *h;
      ++n;
    }
  }
  return n ? sum / n : 0.0;
}

Program goldPrefix(const RawExample& e, int utterances, const Vocabulary& vocab,
                   const LanguageConfig& language) {
  const Program gold = parseProgram(e.goldProgram, vocab);
  MachineState s = MachineState::initial(e.start, static_cast<int>(e.utterances.size()), language);
  Program out;
  for (TokenId tok : gold) {
    if (s.pointer > utterances) break;
    s = step(s, vocab[tok]);
    out.push_back(tok);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gradient check

GradCheckReport runGradientCheck(const GradCheckOptions& options, std::ostream* log) {
  GradCheckReport report;
  const Domain domains[] = {Domain::Alchemy, Domain::Tangrams, Domain::Scene};
  for (HistoryKind kind : {HistoryKind::Tokens, HistoryKind::Stack}) {
    for (int i = 0; i < options.pairs; ++i) {
      const Domain d = domains[i % 3];
      const Vocabulary vocab = Vocabulary::forDomain(d);
      SyntheticOptions so;
      so.utterances = 2;
      const auto raw = generateSynthetic(d, 1, deriveSeed(options.seed, 1, static_cast<std::uint64_t>(i)), so)[0];
      const TrainingExample x = prefixExample(raw);
      const Program z = goldPrefix(raw, 2, vocab);
      ModelDims dims{6, 5, 4, 4, kind};
      const PolicyParams params =
          initParams(deriveSeed(options.seed, 2, static_cast<std::uint64_t>(i) * 2 + (kind == HistoryKind::Stack)),
                     dims, vocab.size());
      const WordTable words = WordTable::random(dims.wordDim, deriveSeed(options.seed, 3));
      const auto r = gradientCheck(params, words, vocab, {}, x, z);
      ++report.pairsChecked;
      if (log) {
        *log << historyKindName(kind) << ' ' << domainName(d) << " pair " << i + 1 << ": max rel err "
             << r.maxRelativeError << " over " << r.checkedEntries << " entries (" << r.worstTensor << ")\n";
      }
      if (r.maxRelativeError >= report.maxRelativeError) {
        report.maxRelativeError = r.maxRelativeError;
        report.worst = std::string(historyKindName(kind)) + "/" + std::string(domainName(d)) + "/" + r.worstTensor;
      }
    }
  }
  report.passed = report.maxRelativeError < options.threshold;
  return report;
}

// ---------------------------------------------------------------------------
// CLI

namespace {

struct CommonFlags {
  std::string domain;
  std::uint64_t seed = 1;
  std::string embeddings;
  bool randomEmbeddings = false;
  int beam = 32;
  std::string data;
  int synthetic = 0;
  int utterances = 5;
};

Domain parseDomainFlag(const std::string& s) {
  auto d = domainFromName(s);
  if (!d) throw CLI::ValidationError("--domain", "unknown domain " + s);
  return *d;
}

std::vector<RawExample> loadOrGenerate(const std::string& path, Domain d, int synthetic,
                                       std::uint64_t seed, int utterances) {
  if (!path.empty()) return parseDatasetFile(path, d);
  SyntheticOptions so;
  so.utterances = utterances;
  return generateSynthetic(d, synthetic, seed, so);
}

WordTable wordsFor(const std::string& path, bool random, int dim, std::uint64_t seed) {
  if (!path.empty() && !random) return WordTable::load(path, std::nullopt);
  return WordTable::random(dim, seed);
}

struct LoadedModel {
  Checkpoint checkpoint;
  Domain domain;
  WordTable words;
};

LoadedModel loadModel(const std::string& path, const std::string& domainFlag,
                      const std::string& embeddingsFlag) {
  Checkpoint ck = loadCheckpoint(path);
  std::string dname = domainFlag.empty() ? ck.metadata["domain"] : domainFlag;
  auto d = domainFromName(dname);
  if (!d) throw std::runtime_error("checkpoint " + path + " names no known domain; pass --domain");
  std::string embPath = embeddingsFlag.empty() ? ck.metadata["embeddings.path"] : embeddingsFlag;
  WordTable words = !embPath.empty()
                        ? WordTable::load(embPath, ck.params.dims.wordDim)
                        : WordTable::random(ck.params.dims.wordDim,
                                            std::stoull(ck.metadata.count("embeddings.seed")
                                                            ? ck.metadata["embeddings.seed"]
                                                            : std::string("0")));
  return {std::move(ck), *d, std::move(words)};
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

int cliMain(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"stackparse: semantic parsing from denotations over simulated worlds"};
  app.set_config("--config", "", "Read flags from an INI/TOML file");
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "Train a parser");
  CommonFlags tf;
  std::string algo = "randomer", history = "tokens", outDir = "run", valid;
  std::optional<double> epsilon;
  double beta = 0, baseline = 0.01, lr = 0.001;
  int iters = 3000, batch = 8, evalEvery = 250, patience = 10, validCount = 50;
  ModelDims dims;
  tf.synthetic = 200;
  train->add_option("--domain", tf.domain, "alchemy, tangrams or scene")
      ->required()
      ->check(CLI::IsMember({"alchemy", "tangrams", "scene"}));
  train->add_option("--algo", algo, "reinforce, bsmml or randomer")
      ->check(CLI::IsMember({"reinforce", "bsmml", "randomer"}));
  train->add_option("--beam", tf.beam, "Beam size (sample count for reinforce)")->check(CLI::PositiveNumber);
  train->add_option("--epsilon", epsilon, "Exploration rate (default 0.15 for randomer, else 0)")
      ->check(CLI::Range(0.0, 1.0));
  train->add_option("--beta", beta, "Meritocratic exponent")->check(CLI::NonNegativeNumber);
  train->add_option("--baseline", baseline, "Constant baseline for reinforce");
  train->add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber);
  train->add_option("--seed", tf.seed, "Random seed");
  train->add_option("--history", history, "tokens or stack")->check(CLI::IsMember({"tokens", "stack"}));
  auto* embOpt = train->add_option("--embeddings", tf.embeddings, "Word vector file (word v1 ... vd)");
  train->add_flag("--random-embeddings", tf.randomEmbeddings, "Seeded random word vectors")->excludes(embOpt);
  train->add_option("--out", outDir, "Output directory");
  train->add_option("--iters", iters, "Maximum iterations")->check(CLI::PositiveNumber);
  train->add_option("--batch", batch, "Minibatch size")->check(CLI::PositiveNumber);
  train->add_option("--eval-every", evalEvery, "Iterations between validations")->check(CLI::PositiveNumber);
  train->add_option("--patience", patience, "Validations without improvement before stopping")
      ->check(CLI::PositiveNumber);
  train->add_option("--data", tf.data, "Training TSV (default: synthetic data)");
  train->add_option("--valid", valid, "Validation TSV (default: synthetic data)");
  train->add_option("--synthetic", tf.synthetic, "Synthetic training examples when --data is absent")
      ->check(CLI::PositiveNumber);
  train->add_option("--valid-count", validCount, "Synthetic validation examples")->check(CLI::PositiveNumber);
  train->add_option("--word-dim", dims.wordDim, "Word vector size for random embeddings")->check(CLI::PositiveNumber);
  train->add_option("--hidden", dims.hidden, "Encoder hidden size per direction")->check(CLI::PositiveNumber);
  train->add_option("--token-dim", dims.tokenDim, "Token embedding size")->check(CLI::PositiveNumber);
  train->add_option("--attn-dim", dims.attnDim, "Query size")->check(CLI::PositiveNumber);

  // eval
  auto* evalCmd = app.add_subcommand("eval", "Evaluate checkpoints (median over several)");
  CommonFlags ef;
  std::vector<std::string> checkpoints;
  std::string threeMode = "truncate";
  ef.synthetic = 100;
  evalCmd->add_option("--checkpoint", checkpoints, "Checkpoint file(s)")->required();
  evalCmd->add_option("--domain", ef.domain, "Domain (default: from checkpoint)")
      ->check(CLI::IsMember({"alchemy", "tangrams", "scene"}));
  evalCmd->add_option("--data", ef.data, "Test TSV (default: synthetic data)");
  evalCmd->add_option("--synthetic", ef.synthetic, "Synthetic test examples")->check(CLI::PositiveNumber);
  evalCmd->add_option("--seed", ef.seed, "Seed for synthetic test data");
  evalCmd->add_option("--beam", ef.beam, "Beam size")->check(CLI::PositiveNumber);
  evalCmd->add_option("--embeddings", ef.embeddings, "Word vector file (default: as trained)");
  evalCmd->add_option("--eval-3utts-mode", threeMode, "truncate or redecode")
      ->check(CLI::IsMember({"truncate", "redecode"}));

  // enumerate
  auto* enumCmd = app.add_subcommand("enumerate", "Count programs consistent with each example");
  CommonFlags nf;
  int capH = 7;
  std::uint64_t budget = 20'000'000;
  nf.synthetic = 20;
  nf.utterances = 2;
  enumCmd->add_option("--domain", nf.domain, "Domain")->required()->check(
      CLI::IsMember({"alchemy", "tangrams", "scene"}));
  enumCmd->add_option("--data", nf.data, "Dataset TSV (default: synthetic data)");
  enumCmd->add_option("--count", nf.synthetic, "Synthetic examples")->check(CLI::PositiveNumber);
  enumCmd->add_option("--seed", nf.seed, "Seed for synthetic data");
  enumCmd->add_option("--utterances", nf.utterances, "Utterances per example (prefix length)")
      ->check(CLI::PositiveNumber);
  enumCmd->add_option("--cap-h", capH, "Tokens per utterance")->check(CLI::PositiveNumber);
  enumCmd->add_option("--budget", budget, "Search node budget per example")->check(CLI::PositiveNumber);

  // dump
  auto* dumpCmd = app.add_subcommand("dump", "Write top-k predictions");
  CommonFlags df;
  std::string checkpoint, dumpOut;
  int k = 5;
  df.synthetic = 20;
  dumpCmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  dumpCmd->add_option("--domain", df.domain, "Domain (default: from checkpoint)")
      ->check(CLI::IsMember({"alchemy", "tangrams", "scene"}));
  dumpCmd->add_option("--data", df.data, "Dataset TSV (default: synthetic data)");
  dumpCmd->add_option("--synthetic", df.synthetic, "Synthetic examples")->check(CLI::PositiveNumber);
  dumpCmd->add_option("--seed", df.seed, "Seed for synthetic data");
  dumpCmd->add_option("--utterances", df.utterances, "Utterances per example (prefix length)")
      ->check(CLI::PositiveNumber);
  dumpCmd->add_option("--beam", df.beam, "Beam size")->check(CLI::PositiveNumber);
  dumpCmd->add_option("--embeddings", df.embeddings, "Word vector file (default: as trained)");
  dumpCmd->add_option("-k,--top", k, "Programs per example")->check(CLI::PositiveNumber);
  dumpCmd->add_option("--out", dumpOut, "Output file (default: stdout)");

  // gen-synthetic
  auto* genCmd = app.add_subcommand("gen-synthetic", "Write a synthetic dataset as TSV");
  CommonFlags gf;
  std::string genOut;
  gf.synthetic = 100;
  genCmd->add_option("--domain", gf.domain, "Domain")->required()->check(
      CLI::IsMember({"alchemy", "tangrams", "scene"}));
  genCmd->add_option("--count", gf.synthetic, "Examples")->check(CLI::PositiveNumber);
  genCmd->add_option("--seed", gf.seed, "Random seed");
  genCmd->add_option("--utterances", gf.utterances, "Utterances per example")->check(CLI::PositiveNumber);
  genCmd->add_option("--out", genOut, "Output file (default: stdout)");

  // gradcheck
  auto* gradCmd = app.add_subcommand("gradcheck", "Compare analytic and numerical gradients");
  GradCheckOptions gc;
  bool verbose = false;
  gradCmd->add_option("--seed", gc.seed, "Random seed");
  gradCmd->add_option("--pairs", gc.pairs, "Instances per history embedder")->check(CLI::PositiveNumber);
  gradCmd->add_flag("-v,--verbose", verbose, "Print each instance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const CLI::App* failed = &app;
    for (auto* sub : app.get_subcommands()) failed = sub;
    err << failed->help();
    return 2;
  }

  try {
    if (*train) {
      const Domain d = parseDomainFlag(tf.domain);
      const Vocabulary vocab = Vocabulary::forDomain(d);
      const LanguageConfig language;
      TrainConfig cfg;
      cfg.algo = *algorithmFromName(algo);
      cfg.beamSize = tf.beam;
      cfg.epsilon = epsilon.value_or(cfg.algo == Algorithm::RandoMer ? 0.15 : 0.0);
      cfg.beta = beta;
      cfg.baseline = baseline;
      cfg.lr = lr;
      cfg.batchSize = batch;
      cfg.maxIters = iters;
      cfg.seed = tf.seed;
      cfg.evalEvery = evalEvery;
      cfg.patience = patience;
      dims.history = *historyKindFromName(history);

      const auto trainRaw = loadOrGenerate(tf.data, d, tf.synthetic, deriveSeed(tf.seed, 11), 5);
      const auto validRaw = loadOrGenerate(valid, d, validCount, deriveSeed(tf.seed, 12), 5);
      const auto trainSet = decomposeAll(trainRaw);
      std::vector<TrainingExample> validSet;
      for (const auto& e : validRaw) validSet.push_back(prefixExample(e));

      const std::uint64_t embSeed = deriveSeed(tf.seed, 13);
      const WordTable words = wordsFor(tf.embeddings, tf.randomEmbeddings, dims.wordDim, embSeed);
      dims.wordDim = words.dim();
      PolicyParams params = initParams(deriveSeed(tf.seed, 14), dims, vocab.size());
      AdamState adam = AdamState::forParams(params);

      std::filesystem::create_directories(outDir);
      const std::filesystem::path dir(outDir);
      std::map<std::string, std::string> meta{{"domain", std::string(domainName(d))},
                                              {"algo", algo},
                                              {"seed", std::to_string(tf.seed)}};
      if (tf.embeddings.empty() || tf.randomEmbeddings) {
        meta["embeddings.seed"] = std::to_string(embSeed);
      } else {
        meta["embeddings.path"] = std::filesystem::absolute(tf.embeddings).string();
      }
      std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
      if (!metrics) throw std::runtime_error("cannot write " + (dir / "metrics.csv").string());
      writeMetricsHeader(metrics);

      TrainHooks hooks;
      hooks.metrics = &metrics;
      hooks.validate = [&](const PolicyParams& p) {
        return denotationAccuracy(Policy(p, words, vocab, language), validSet, cfg.beamSize);
      };
      hooks.checkpoint = [&](int iter, const PolicyParams& p, const AdamState& a, bool best) {
        auto m = meta;
        m["iter"] = std::to_string(iter);
        saveCheckpoint((dir / ("checkpoint-" + std::to_string(iter) + ".bin")).string(), p, &a, m);
        if (best) saveCheckpoint((dir / "best.bin").string(), p, &a, m);
      };
      out << "training " << algo << " on " << trainSet.size() << " examples (" << domainName(d)
          << "), " << validSet.size() << " validation examples\n";
      const TrainResult r = trainLoop(cfg, trainSet, params, adam, words, vocab, language, hooks);
      auto m = meta;
      m["iter"] = std::to_string(r.iterations);
      saveCheckpoint((dir / "final.bin").string(), params, &adam, m);
      out << "iterations " << r.iterations << (r.stoppedEarly ? " (early stop)" : "")
          << ", best validation accuracy " << fixed(std::max(r.bestValidation, 0.0)) << " at iteration "
          << r.bestIteration << ", discovery rate " << fixed(r.discoveryRate) << "\n";
      return 0;
    }

    if (*evalCmd) {
      std::vector<double> acc3, acc5;
      EvalOptions opts;
      opts.beamSize = ef.beam;
      opts.threeUtts = threeMode == "redecode" ? ThreeUttsMode::Redecode : ThreeUttsMode::Truncate;
      for (const auto& path : checkpoints) {
        LoadedModel model = loadModel(path, ef.domain, ef.embeddings);
        const Vocabulary vocab = Vocabulary::forDomain(model.domain);
        const auto test = loadOrGenerate(ef.data, model.domain, ef.synthetic, deriveSeed(ef.seed, 21), 5);
        const Policy policy(model.checkpoint.params, model.words, vocab);
        const EvalReport r = evaluate(policy, test, opts);
        acc3.push_back(r.accuracy3);
        acc5.push_back(r.accuracy5);
        out << path << "\t3utts " << fixed(r.accuracy3) << "\t5utts " << fixed(r.accuracy5) << "\n";
      }
      out << "median\t3utts " << fixed(median(acc3)) << "\t5utts " << fixed(median(acc5)) << "\n";
      return 0;
    }

    if (*enumCmd) {
      const Domain d = parseDomainFlag(nf.domain);
      const Vocabulary vocab = Vocabulary::forDomain(d);
      const auto raw = loadOrGenerate(nf.data, d, nf.synthetic, nf.seed, std::max(nf.utterances, 1));
      double sum = 0;
      bool lower = false;
      for (const auto& e : raw) {
        const int m = std::min<int>(nf.utterances, static_cast<int>(e.utterances.size()));
        const ConsistentCount c = countConsistent(prefixExample(e, m), vocab, capH, budget);
        lower = lower || !c.exhaustive;
        sum += static_cast<double>(c.count);
        out << e.id << '\t' << c.count << (c.exhaustive ? "" : " (lower bound)") << '\t' << c.nodes
            << " nodes\n";
      }
      out << "mean " << fixed(raw.empty() ? 0 : sum / raw.size(), 2) << (lower ? " (lower bound)" : "")
          << " over " << raw.size() << " examples, capH " << capH << ", budget " << budget << "\n";
      return 0;
    }

    if (*dumpCmd) {
      LoadedModel model = loadModel(checkpoint, df.domain, df.embeddings);
      const Vocabulary vocab = Vocabulary::forDomain(model.domain);
      const auto raw = loadOrGenerate(df.data, model.domain, df.synthetic, df.seed, std::max(df.utterances, 1));
      std::vector<TrainingExample> xs;
      for (const auto& e : raw) {
        xs.push_back(prefixExample(e, std::min<int>(df.utterances, static_cast<int>(e.utterances.size()))));
      }
      const Policy policy(model.checkpoint.params, model.words, vocab);
      if (dumpOut.empty()) {
        dumpPredictions(policy, xs, k, df.beam, out);
      } else {
        std::ofstream f(dumpOut);
        if (!f) throw std::runtime_error("cannot write " + dumpOut);
        dumpPredictions(policy, xs, k, df.beam, f);
      }
      return 0;
    }

    if (*genCmd) {
      const Domain d = parseDomainFlag(gf.domain);
      SyntheticOptions so;
      so.utterances = gf.utterances;
      const auto raw = generateSynthetic(d, gf.synthetic, gf.seed, so);
      if (genOut.empty()) {
        writeDataset(out, raw);
      } else {
        std::ofstream f(genOut);
        if (!f) throw std::runtime_error("cannot write " + genOut);
        writeDataset(f, raw);
      }
      return 0;
    }

    if (*gradCmd) {
      const GradCheckReport r = runGradientCheck(gc, verbose ? &out : nullptr);
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.3e", r.maxRelativeError);
      out << "max relative error " << buf << " over " << r.pairsChecked << " instances (worst "
          << r.worst << "): " << (r.passed ? "ok" : "FAILED") << "\n";
      return r.passed ? 0 : 1;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace stackparse
