#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "stackparse/harness.hpp"

using namespace stackparse;
namespace fs = std::filesystem;

namespace {

struct Cli {
  int code = 0;
  std::string out, err;
};

Cli run(std::vector<std::string> args) {
  args.insert(args.begin(), "stackparse");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Cli r;
  r.code = cliMain(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("stackparse_harness_" + name);
  fs::remove_all(p);
  return p;
}

struct Model {
  Vocabulary vocab;
  WordTable words;
  PolicyParams params;

  explicit Model(Domain d, std::uint64_t seed = 1)
      : vocab(Vocabulary::forDomain(d)),
        words(WordTable::random(6, seed)),
        params(initParams(seed, ModelDims{6, 5, 4, 4, HistoryKind::Tokens}, vocab.size())) {}
};

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> fields(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  for (std::string f; std::getline(in, f, '\t');) out.push_back(f);
  return out;
}

const std::vector<std::string> kTiny{"--iters",   "4", "--synthetic", "3", "--valid-count", "2",
                                     "--eval-every", "2", "--beam", "4", "--word-dim", "6",
                                     "--hidden", "5", "--token-dim", "4", "--attn-dim", "4",
                                     "--random-embeddings"};

}  // namespace

TEST_CASE("median") {
  CHECK(median({3, 1, 2}) == 2);
  CHECK(median({4, 1, 3, 2}) == 2.5);
  CHECK(median({7}) == 7);
  CHECK_THROWS_AS(median({}), std::invalid_argument);
}

TEST_CASE("rewarded entropy") {
  CHECK_FALSE(rewardedEntropy({}).has_value());
  CHECK_FALSE(rewardedEntropy({{{}, -1, 0}}).has_value());
  CHECK(*rewardedEntropy({{{}, -3, 1}}) == 0);
  CHECK(*rewardedEntropy({{{}, std::log(0.2), 1}, {{}, std::log(0.2), 1}, {{}, std::log(0.6), 0}}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // 0.3 and 0.1 renormalize to 3/4 and 1/4.
  const double h = -(0.75 * std::log(0.75) + 0.25 * std::log(0.25));
  CHECK(*rewardedEntropy({{{}, std::log(0.3), 1}, {{}, std::log(0.1), 1}}) ==
        doctest::Approx(h).epsilon(1e-12));
}

TEST_CASE("gold program prefixes") {
  for (Domain d : {Domain::Alchemy, Domain::Tangrams, Domain::Scene}) {
    const auto vocab = Vocabulary::forDomain(d);
    for (const auto& e : generateSynthetic(d, 5, 31)) {
      for (int m = 1; m <= 5; ++m) {
        const Program z = goldPrefix(e, m, vocab);
        CHECK(execute(z, e.start, m, vocab) == e.worlds[m - 1]);
      }
      CHECK(goldPrefix(e, 5, vocab) == parseProgram(e.goldProgram, vocab));
    }
  }
}

TEST_CASE("countConsistent on one utterance matches brute force over token strings") {
  // Two pieces on the stage, target has them swapped.
  const auto vocab = Vocabulary::forDomain(Domain::Tangrams);
  TangramsWorld start;
  start.row = {3, 1};
  start.removed = {0, 2, 4};
  TangramsWorld target = start;
  target.row = {1, 3};
  TrainingExample x{"t", {{"swap", "them"}}, start, target};

  LanguageConfig lang;
  lang.budget = 3;
  std::uint64_t brute = 0;
  const int n = vocab.size();
  for (int len = 1; len <= 3; ++len) {
    Program z(len, 0);
    while (true) {
      auto w = tryExecute(z, start, 1, vocab, lang);
      if (w.ok() && w.value() == WorldState(target)) ++brute;
      int i = len - 1;
      while (i >= 0 && ++z[i] == n) z[i--] = 0;
      if (i < 0) break;
    }
  }
  const auto c = countConsistent(x, vocab, 3, 1'000'000);
  CHECK(c.exhaustive);
  CHECK(brute > 1);
  CHECK(c.count == brute);

  TrainingExample unreachable = x;
  TangramsWorld empty;
  empty.removed = {0, 1, 2, 3, 4};
  unreachable.target = empty;
  CHECK(countConsistent(unreachable, vocab, 3, 1'000'000).count == 0);
}

TEST_CASE("countConsistent across utterances matches program enumeration") {
  for (Domain d : {Domain::Alchemy, Domain::Tangrams, Domain::Scene}) {
    const auto vocab = Vocabulary::forDomain(d);
    for (const auto& e : generateSynthetic(d, 3, 41)) {
      const TrainingExample x = prefixExample(e, 2);
      LanguageConfig lang;
      lang.budget = 3;
      EnumerationLimits limits;
      limits.budget = 3;
      std::uint64_t expected = 0;
      enumeratePrograms(
          x.start, 2, vocab, limits,
          [&](const Program&, const MachineState& s) {
            if (s.world == x.target) ++expected;
            return true;
          },
          lang);
      const auto c = countConsistent(x, vocab, 3, 50'000'000);
      CHECK(c.exhaustive);
      CHECK(c.count == expected);
    }
  }
}

TEST_CASE("countConsistent reports an exhausted budget") {
  const auto vocab = Vocabulary::forDomain(Domain::Scene);
  const TrainingExample x = prefixExample(generateSynthetic(Domain::Scene, 1, 2)[0], 2);
  const auto c = countConsistent(x, vocab, 5, 100);
  CHECK_FALSE(c.exhaustive);
  CHECK(c.nodes > 100);
}

TEST_CASE("evaluation scores the top program at both depths") {
  Model m(Domain::Tangrams, 3);
  const Policy policy(m.params, m.words, m.vocab);
  const auto test = generateSynthetic(Domain::Tangrams, 6, 5);
  const auto report = evaluate(policy, test, {8});
  REQUIRE(report.examples.size() == test.size());
  int right3 = 0, right5 = 0, decoded = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& r = report.examples[i];
    const auto& e = test[i];
    CHECK(r.id == e.id);
    const auto beam = classicBeamSearch(policy, prefixExample(e), {8, 0, 0, 0});
    CHECK(r.decoded == !beam.empty());
    if (!r.decoded) {
      CHECK_FALSE(r.correct3);
      CHECK_FALSE(r.correct5);
      continue;
    }
    ++decoded;
    double best = -INFINITY;
    for (const auto& h : beam) best = std::max(best, h.logProb);
    CHECK(policy.programLogProb(prefixExample(e), r.program) == doctest::Approx(best).epsilon(1e-12));
    CHECK(r.correct5 == (execute(r.program, e.start, 5, m.vocab) == e.worlds[4]));
    // The first three actions of the program, replayed by hand.
    MachineState s = MachineState::initial(e.start, 5);
    for (TokenId t : r.program) {
      if (s.pointer > 3) break;
      s = step(s, m.vocab[t]);
    }
    CHECK(r.correct3 == (s.world == e.worlds[2]));
    right3 += r.correct3;
    right5 += r.correct5;
  }
  CHECK(decoded > 0);
  CHECK(report.accuracy3 == doctest::Approx(right3 / 6.0));
  CHECK(report.accuracy5 == doctest::Approx(right5 / 6.0));

  const auto redo = evaluate(policy, test, {8, ThreeUttsMode::Redecode});
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto head = prefixExample(test[i], 3);
    const auto beam = classicBeamSearch(policy, head, {8, 0, 0, 0});
    const Hypothesis* best = nullptr;
    for (const auto& h : beam)
      if (!best || hypothesisBefore(h, *best)) best = &h;
    CHECK(redo.examples[i].correct3 == (best && best->state.world == head.target));
  }
}

TEST_CASE("an empty beam counts as wrong") {
  Model m(Domain::Scene);
  LanguageConfig lang;
  lang.budget = 1;  // no Scene action fits in one token
  const Policy policy(m.params, m.words, m.vocab, lang);
  const auto test = generateSynthetic(Domain::Scene, 3, 5);
  const auto report = evaluate(policy, test, {4});
  for (const auto& r : report.examples) {
    CHECK_FALSE(r.decoded);
    CHECK_FALSE(r.correct3);
    CHECK_FALSE(r.correct5);
  }
  CHECK(report.accuracy5 == 0);
  std::vector<TrainingExample> xs;
  for (const auto& e : test) xs.push_back(prefixExample(e));
  CHECK(denotationAccuracy(policy, xs, 4) == 0);
}

TEST_CASE("prediction dumps") {
  Model m(Domain::Tangrams, 2);
  const Policy policy(m.params, m.words, m.vocab);
  std::vector<TrainingExample> xs;
  for (const auto& e : generateSynthetic(Domain::Tangrams, 4, 9)) xs.push_back(prefixExample(e, 1));

  std::ostringstream one;
  dumpPredictions(policy, xs, 1, 8, one);
  const auto rows = lines(one.str());
  REQUIRE(rows.size() == xs.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto f = fields(rows[i]);
    REQUIRE(f.size() == 5);
    CHECK(f[0] == xs[i].id);
    CHECK(f[1] == "1");
    const Program z = parseProgram(f[4], m.vocab);
    CHECK(std::stoi(f[3]) == reward(xs[i], z, m.vocab));
  }

  std::ostringstream three;
  dumpPredictions(policy, xs, 3, 8, three);
  std::string lastId;
  double lastP = 0;
  int rank = 0;
  for (const auto& row : lines(three.str())) {
    const auto f = fields(row);
    const double p = std::stod(f[2]);
    if (f[0] != lastId) {
      lastId = f[0];
      rank = 0;
      lastP = 1;
    }
    CHECK(std::stoi(f[1]) == ++rank);
    CHECK(p <= lastP);
    lastP = p;
    for (const auto& x : xs)
      if (x.id == f[0])
        CHECK(p == doctest::Approx(std::exp(policy.programLogProb(x, parseProgram(f[4], m.vocab)))).epsilon(1e-5));
  }
}

TEST_CASE("rewarded entropy over the top programs") {
  Model m(Domain::Tangrams, 4);
  const Policy policy(m.params, m.words, m.vocab);
  std::vector<TrainingExample> xs;
  for (const auto& e : generateSynthetic(Domain::Tangrams, 5, 9)) xs.push_back(prefixExample(e, 1));
  double sum = 0;
  int n = 0;
  for (const auto& x : xs) {
    const auto top = topPrograms(policy, x, 10, 16);
    CHECK(top.size() <= 10);
    for (std::size_t i = 1; i < top.size(); ++i) CHECK(top[i - 1].logProb >= top[i].logProb);
    if (auto h = rewardedEntropy(top)) {
      CHECK(*h >= 0);
      sum += *h;
      ++n;
    }
  }
  CHECK(meanRewardedEntropy(policy, xs, 10, 16) == doctest::Approx(n ? sum / n : 0.0));
}

TEST_CASE("command line usage errors exit with status 2") {
  CHECK(run({}).code == 2);
  const auto missing = run({"train"});
  CHECK(missing.code == 2);
  CHECK(missing.err.find("--domain") != std::string::npos);
  CHECK(run({"train", "--domain", "chess"}).code == 2);
  CHECK(run({"train", "--domain", "scene", "--bogus"}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"train", "--domain", "scene", "--epsilon", "1.5"}).code == 2);
  CHECK(run({"eval"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("runtime failures exit with status 1") {
  const auto r = run({"eval", "--checkpoint", "/nonexistent/model.bin"});
  CHECK(r.code == 1);
  CHECK(r.err.rfind("error: ", 0) == 0);
  CHECK(run({"train", "--domain", "scene", "--data", "/nonexistent/train.tsv"}).code == 1);
}

TEST_CASE("gen-synthetic writes the generated dataset") {
  const auto r = run({"gen-synthetic", "--domain", "alchemy", "--count", "4", "--seed", "8"});
  REQUIRE(r.code == 0);
  std::ostringstream expected;
  writeDataset(expected, generateSynthetic(Domain::Alchemy, 4, 8));
  CHECK(r.out == expected.str());
}

TEST_CASE("gradcheck subcommand") {
  const auto r = run({"gradcheck", "--seed", "7", "--pairs", "1"});
  CHECK(r.code == 0);
  CHECK(r.out.find(": ok") != std::string::npos);
  const auto report = runGradientCheck({7, 2, 1e-4});
  CHECK(report.pairsChecked == 4);
  CHECK(report.passed);
  CHECK(report.maxRelativeError < 1e-4);
}

TEST_CASE("enumerate subcommand") {
  const auto r = run({"enumerate", "--domain", "tangrams", "--count", "2", "--utterances", "1",
                      "--cap-h", "3", "--seed", "4"});
  REQUIRE(r.code == 0);
  const auto rows = lines(r.out);
  REQUIRE(rows.size() == 3);
  CHECK(rows[2].rfind("mean ", 0) == 0);
  CHECK(rows[2].find("capH 3") != std::string::npos);
}

TEST_CASE("train, eval and dump through the command line") {
  const fs::path a = scratch("a"), b = scratch("b");
  auto args = [&](const fs::path& dir) {
    std::vector<std::string> v{"train", "--domain", "tangrams", "--algo", "randomer", "--seed", "3",
                               "--out", dir.string()};
    v.insert(v.end(), kTiny.begin(), kTiny.end());
    return v;
  };
  const auto ra = run(args(a));
  REQUIRE(ra.code == 0);
  REQUIRE(run(args(b)).code == 0);
  const std::string csv = slurp(a / "metrics.csv");
  CHECK(csv == slurp(b / "metrics.csv"));
  CHECK(csv.rfind("iter,split,metric,value\n", 0) == 0);
  CHECK(csv.find("2,valid,accuracy,") != std::string::npos);
  CHECK(slurp(a / "final.bin") == slurp(b / "final.bin"));
  for (const char* f : {"checkpoint-2.bin", "checkpoint-4.bin", "best.bin", "final.bin"})
    CHECK(fs::exists(a / f));

  const auto ck = loadCheckpoint((a / "final.bin").string());
  CHECK(ck.metadata.at("domain") == "tangrams");
  CHECK(ck.metadata.at("iter") == "4");
  CHECK(ck.params.dims.hidden == 5);

  const auto ev = run({"eval", "--checkpoint", (a / "final.bin").string(), "--checkpoint",
                       (b / "final.bin").string(), "--synthetic", "3", "--beam", "4"});
  REQUIRE(ev.code == 0);
  const auto evRows = lines(ev.out);
  REQUIRE(evRows.size() == 3);
  CHECK(fields(evRows[0])[1] == fields(evRows[1])[1]);
  CHECK(evRows[2].rfind("median\t", 0) == 0);

  const auto dump = run({"dump", "--checkpoint", (a / "final.bin").string(), "--synthetic", "3",
                         "--utterances", "1", "-k", "1", "--beam", "4"});
  REQUIRE(dump.code == 0);
  CHECK(lines(dump.out).size() == 3);

  fs::remove_all(a);
  fs::remove_all(b);
}
