#include <doctest.h>

#include <cmath>
#include <sstream>

#include "stackparse/dataset.hpp"
#include "stackparse/policy.hpp"

using namespace stackparse;

namespace {

ModelDims small(HistoryKind h) { return ModelDims{6, 5, 4, 4, h}; }

TrainingExample sceneExample(const std::string& program, int utterances, const Vocabulary& v) {
  SceneWorld w;
  w.slots[1] = Person{Color::Red, Color::Blue, w.nextId++};
  w.slots[4] = Person{Color::Green, Color::NoHat, w.nextId++};
  w.slots[7] = Person{Color::Red, Color::Yellow, w.nextId++};
  TrainingExample x;
  x.start = w;
  const std::vector<Utterance> words = {{"move", "the", "green", "one", "left"}, {"then", "remove", "her"}};
  x.utterances.assign(words.begin(), words.begin() + utterances);
  x.target = execute(parseProgram(program, v), w, utterances, v);
  return x;
}

bool sameVector(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.size() == b.size() && (a - b).cwiseAbs().maxCoeff() == 0.0;
}

bool closeVector(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double tol = 1e-14) {
  return a.size() == b.size() && (a - b).cwiseAbs().maxCoeff() <= tol;
}

}  // namespace

TEST_CASE("initParams is seeded and bounded") {
  const auto v = Vocabulary::forDomain(Domain::Scene);
  for (HistoryKind h : {HistoryKind::Tokens, HistoryKind::Stack}) {
    const auto a = initParams(3, small(h), v.size());
    const auto b = initParams(3, small(h), v.size());
    const auto c = initParams(4, small(h), v.size());
    bool differs = false;
    for (int i = 0; i < a.tensors.size(); ++i) {
      const auto& m = a.tensors[i];
      CHECK((m - b.tensors[i]).cwiseAbs().maxCoeff() == 0.0);
      if ((m - c.tensors[i]).cwiseAbs().maxCoeff() > 0) differs = true;
      const std::string& name = a.tensors.name(i);
      if (name == "enc_fwd_b" || name == "enc_bwd_b") {
        CHECK(m.cwiseAbs().maxCoeff() == 0.0);
      } else {
        const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
        CHECK(m.cwiseAbs().maxCoeff() <= bound);
        CHECK(m.cwiseAbs().maxCoeff() > 0.0);
      }
      CHECK(name.find("word") == std::string::npos);
    }
    CHECK(differs);
  }
}

TEST_CASE("tensor shapes") {
  const auto v = Vocabulary::forDomain(Domain::Alchemy);
  const ModelDims d{7, 5, 4, 3, HistoryKind::Tokens};
  const auto p = PolicyParams::shaped(d, v.size());
  CHECK(p.tensors[p.tokenEmb].rows() == v.size());
  CHECK(p.tensors[p.tokenEmb].cols() == 4);
  CHECK(p.tensors[p.encFwdW].rows() == 20);
  CHECK(p.tensors[p.encFwdW].cols() == 12);
  CHECK(p.tensors[p.wq].rows() == 3);
  CHECK(p.tensors[p.wq].cols() == 10 + 16);
  CHECK(p.tensors[p.wa].cols() == 10);
  CHECK(p.tensors[p.ws].rows() == 4);
  CHECK(p.tensors[p.ws].cols() == 3 + 10);
  CHECK(p.valueTag == -1);
  const auto s = PolicyParams::shaped(ModelDims{7, 5, 4, 3, HistoryKind::Stack}, v.size());
  CHECK(s.tensors[s.wq].cols() == 10 + 12);
  CHECK(s.stackPad >= 0);
}

TEST_CASE("encoder") {
  const auto v = Vocabulary::forDomain(Domain::Tangrams);
  const auto p = initParams(1, small(HistoryKind::Tokens), v.size());
  const auto words = WordTable::random(6, 9);
  const auto one = encodeUtterance(p, words, {"swap"});
  REQUIRE(one.hidden.rows() == 1);
  CHECK(one.hidden.cols() == 10);
  CHECK(sameVector(one.embedding, one.hidden.row(0).transpose()));

  const auto a = encodeUtterance(p, words, {"swap", "the", "first", "two"});
  const auto b = encodeUtterance(p, words, {"swap", "the", "first", "two"});
  CHECK(sameVector(a.embedding, b.embedding));
  Eigen::VectorXd expected(10);
  expected << a.hidden.row(3).head(5).transpose(), a.hidden.row(0).tail(5).transpose();
  CHECK(sameVector(a.embedding, expected));

  // Empty input is a single UNK.
  std::istringstream text("a 1 2 3 4 5 6\nb 3 2 1 0 1 2\n");
  const WordTable table = WordTable::parse(text);
  const auto empty = encodeUtterance(p, table, {});
  const auto unk = encodeUtterance(p, table, {"never-seen"});
  CHECK(sameVector(empty.embedding, unk.embedding));
}

TEST_CASE("word tables") {
  std::istringstream in("red 1 2 3\nblue 3 4 5\n");
  const auto t = WordTable::parse(in);
  CHECK(t.dim() == 3);
  CHECK(t.contains("red"));
  CHECK(sameVector(t.lookup("blue"), Eigen::Vector3d(3, 4, 5)));
  CHECK(sameVector(t.lookup("green"), Eigen::Vector3d(2, 3, 4)));
  CHECK(sameVector(t.unk(), Eigen::Vector3d(2, 3, 4)));

  std::istringstream ragged("red 1 2 3\nblue 3 4\n");
  CHECK_THROWS(WordTable::parse(ragged));
  std::istringstream wrongDim("red 1 2 3\n");
  CHECK_THROWS(WordTable::parse(wrongDim, 50));
  std::istringstream junk("red 1 x 3\n");
  CHECK_THROWS(WordTable::parse(junk));

  const auto r1 = WordTable::random(8, 4);
  const auto r2 = WordTable::random(8, 4);
  const auto r3 = WordTable::random(8, 5);
  CHECK(sameVector(r1.lookup("beaker"), r2.lookup("beaker")));
  CHECK_FALSE(sameVector(r1.lookup("beaker"), r3.lookup("beaker")));
  CHECK_FALSE(sameVector(r1.lookup("beaker"), r1.lookup("pour")));
}

TEST_CASE("decoder distribution") {
  const auto v = Vocabulary::forDomain(Domain::Scene);
  auto p = initParams(2, small(HistoryKind::Tokens), v.size());
  const auto words = WordTable::random(6, 1);
  const auto enc = encodeUtterance(p, words, {"move", "the", "man"});
  const Eigen::VectorXd f = historyEmbedTokens(p, {});
  const Eigen::VectorXd probs = decodeStep(p, enc, f);
  CHECK(probs.size() == v.size());
  CHECK(probs.minCoeff() >= 0.0);
  CHECK(std::abs(probs.sum() - 1.0) < 1e-12);

  // Single-word input: attention has one choice.
  const auto single = encodeUtterance(p, words, {"move"});
  const auto trace = decodeForward(p, single, f);
  CHECK(trace.alpha.size() == 1);
  CHECK(trace.alpha[0] == 1.0);
  CHECK(sameVector(trace.context, single.hidden.row(0).transpose()));

  p.tensors[p.ws].setZero();
  const Eigen::VectorXd flat = decodeStep(p, enc, f);
  CHECK((flat.array() - 1.0 / v.size()).abs().maxCoeff() < 1e-15);
}

TEST_CASE("token history embedding") {
  const auto v = Vocabulary::forDomain(Domain::Scene);
  const auto p = initParams(2, small(HistoryKind::Tokens), v.size());
  const int k = p.dims.tokenDim;
  const Eigen::VectorXd pad = p.tensors[p.tokenPad].row(0).transpose();
  const Eigen::VectorXd none = historyEmbedTokens(p, {});
  CHECK(none.size() == 4 * k);
  for (int j = 0; j < 4; ++j) CHECK(sameVector(none.segment(j * k, k), pad));

  const Program two = parseProgram("red hasShirt", v);
  const Eigen::VectorXd f = historyEmbedTokens(p, two);
  CHECK(sameVector(f.segment(0, k), pad));
  CHECK(sameVector(f.segment(k, k), pad));
  CHECK(sameVector(f.segment(2 * k, k), p.tensors[p.tokenEmb].row(two[0]).transpose()));
  CHECK(sameVector(f.segment(3 * k, k), p.tensors[p.tokenEmb].row(two[1]).transpose()));

  const Program six = parseProgram("red hasShirt leave 1 2 3", v);
  const Eigen::VectorXd g = historyEmbedTokens(p, six);
  CHECK(g.size() == 4 * k);
  CHECK(sameVector(g.segment(0, k), p.tensors[p.tokenEmb].row(six[2]).transpose()));
}

TEST_CASE("stack history embedding") {
  const auto v = Vocabulary::forDomain(Domain::Scene);
  const auto p = initParams(2, small(HistoryKind::Stack), v.size());
  const int k = p.dims.tokenDim;
  const Eigen::VectorXd pad = p.tensors[p.stackPad].row(0).transpose();

  SceneWorld w;
  w.slots[2] = Person{Color::Red, Color::Blue, w.nextId++};
  w.slots[5] = Person{Color::Green, Color::NoHat, w.nextId++};
  const auto s0 = MachineState::initial(w, 1);
  const Eigen::VectorXd empty = historyEmbedStack(p, s0);
  CHECK(empty.size() == 3 * k);
  for (int j = 0; j < 3; ++j) CHECK(sameVector(empty.segment(j * k, k), pad));

  MachineState twice = step(step(s0, v[v.id("4")]), v[v.id("4")]);
  const Eigen::VectorXd f = historyEmbedStack(p, twice);
  CHECK(sameVector(f.segment(0, k), f.segment(k, k)));
  CHECK(sameVector(f.segment(2 * k, k), pad));

  // Same person reached two ways.
  MachineState viaShirt = step(step(s0, v[v.id("red")]), v[v.id("hasShirt")]);
  MachineState viaIndex = step(step(step(s0, v[v.id("allObjects")]), v[v.id("1")]), v[v.id("index")]);
  CHECK(sameVector(historyEmbedStack(p, viaShirt), historyEmbedStack(p, viaIndex)));

  // Lists: mean of elements, order-free.
  const RefList ab{{PersonRef{0}, PersonRef{1}}};
  const RefList ba{{PersonRef{1}, PersonRef{0}}};
  CHECK(closeVector(embedValue(p, ab, w), embedValue(p, ba, w)));
  const Eigen::VectorXd single = embedValue(p, RefList{{PersonRef{0}}}, w);
  CHECK(sameVector(single, embedValue(p, PersonRef{0}, w)));

  // Identical attributes in different worlds, different ids.
  SceneWorld other;
  other.nextId = 7;
  other.slots[2] = Person{Color::Red, Color::Blue, other.nextId++};
  CHECK(sameVector(embedValue(p, PersonRef{0}, w), embedValue(p, PersonRef{7}, other)));
  CHECK_FALSE(sameVector(embedValue(p, PersonRef{0}, w), embedValue(p, PersonRef{1}, w)));
}

TEST_CASE("program log-probability") {
  const auto v = Vocabulary::forDomain(Domain::Scene);
  const auto words = WordTable::random(6, 3);
  for (HistoryKind h : {HistoryKind::Tokens, HistoryKind::Stack}) {
    const auto p = initParams(5, small(h), v.size());
    const Policy policy(p, words, v);
    // green person at slot 5 moves to 4 then leaves: two utterances.
    const std::string gold = "green hasShirt 4 move 1 prevArg1 leave";
    const auto x = sceneExample(gold, 2, v);
    const Program z = parseProgram(gold, v);
    const double logp = policy.programLogProb(x, z);
    CHECK(logp < 0);

    // Sum of per-step log-probabilities, prefixes strictly decreasing.
    const auto input = policy.encode(x.utterances);
    MachineState s = MachineState::initial(x.start, 2);
    double total = 0, previous = 0;
    Program prefix;
    for (TokenId t : z) {
      const Eigen::VectorXd probs = policy.nextTokenDistribution(input, prefix, s);
      CHECK(std::abs(probs.sum() - 1.0) < 1e-12);
      total += std::log(probs[t]);
      CHECK(total < previous);
      previous = total;
      prefix.push_back(t);
      s = step(s, v[t]);
    }
    CHECK(total == doctest::Approx(logp).epsilon(1e-12));
    CHECK_THROWS_AS(policy.nextTokenDistribution(input, prefix, s), ExecError);
    CHECK_THROWS_AS(policy.programLogProb(x, parseProgram("leave", v)), ExecError);
  }
}

TEST_CASE("gradients match finite differences") {
  const auto v = Vocabulary::forDomain(Domain::Scene);
  const auto words = WordTable::random(6, 3);
  const auto x = sceneExample("green hasShirt 4 move 1 prevArg1 leave", 2, v);
  const Program z = parseProgram("green hasShirt 4 move 1 prevArg1 leave", v);
  for (HistoryKind h : {HistoryKind::Tokens, HistoryKind::Stack}) {
    const auto p = initParams(11, small(h), v.size());
    const auto r = gradientCheck(p, words, v, LanguageConfig{}, x, z);
    CHECK(r.checkedEntries == static_cast<int>(p.tensors.scalarCount()));
    CHECK(r.maxRelativeError < 1e-4);
  }
}

TEST_CASE("gradient accumulation is additive") {
  const auto v = Vocabulary::forDomain(Domain::Scene);
  const auto words = WordTable::random(6, 3);
  const auto x = sceneExample("green hasShirt 4 move", 1, v);
  const Program z = parseProgram("green hasShirt 4 move", v);
  const auto p = initParams(2, small(HistoryKind::Stack), v.size());
  const Policy policy(p, words, v);
  const ParamSet once = policy.gradLogProb(x, z);
  ParamSet twice = p.tensors.zerosLike();
  const double a = policy.accumulateGradLogProb(x, z, 1.0, twice);
  const double b = policy.accumulateGradLogProb(x, z, 1.0, twice);
  CHECK(a == b);
  CHECK(a == policy.programLogProb(x, z));
  for (int i = 0; i < once.size(); ++i) CHECK(((2.0 * once[i]) - twice[i]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("adam") {
  const auto v = Vocabulary::forDomain(Domain::Tangrams);
  const auto init = initParams(1, small(HistoryKind::Tokens), v.size());
  const double lr = 0.001;

  SUBCASE("zero gradient leaves parameters unchanged") {
    auto p = init;
    auto adam = AdamState::forParams(p);
    adamStep(p, adam, p.tensors.zerosLike(), lr);
    for (int i = 0; i < p.tensors.size(); ++i) CHECK((p.tensors[i] - init.tensors[i]).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("constant gradient: direct evaluation of the recurrences") {
    auto p = init;
    auto adam = AdamState::forParams(p);
    ParamSet g = p.tensors.zerosLike();
    for (int i = 0; i < g.size(); ++i) g[i].setConstant(i % 2 == 0 ? 0.3 : -2.0);
    double m = 0, s = 0;
    for (int t = 1; t <= 2; ++t) {
      const auto before = p;
      adamStep(p, adam, g, lr);
      for (int i = 0; i < g.size(); ++i) {
        const double gi = g[i](0, 0);
        if (i == 0) {
          m = 0.9 * m + 0.1 * gi;
          s = 0.999 * s + 0.001 * gi * gi;
          const double step = lr * (m / (1 - std::pow(0.9, t))) / (std::sqrt(s / (1 - std::pow(0.999, t))) + 1e-8);
          CHECK((p.tensors[i] - before.tensors[i]).array().abs().maxCoeff() == doctest::Approx(step).epsilon(1e-12));
        }
        const Eigen::ArrayXXd delta = (p.tensors[i] - before.tensors[i]).array();
        CHECK(delta.abs().maxCoeff() <= lr * (1 + 1e-6));
        if (t == 1) CHECK((delta * std::copysign(1.0, gi) - lr).abs().maxCoeff() < 1e-7);
      }
    }
    CHECK(adam.step == 2);
  }

  SUBCASE("non-finite gradients are rejected") {
    auto p = init;
    auto adam = AdamState::forParams(p);
    ParamSet g = p.tensors.zerosLike();
    g[0](0, 0) = std::nan("");
    CHECK_THROWS_AS(adamStep(p, adam, g, lr), NonFiniteGradient);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto v = Vocabulary::forDomain(Domain::Scene);
  auto p = initParams(9, small(HistoryKind::Stack), v.size());
  auto adam = AdamState::forParams(p);
  ParamSet g = p.tensors.zerosLike();
  for (int i = 0; i < g.size(); ++i) g[i].setConstant(0.25);
  adamStep(p, adam, g, 0.01);

  std::stringstream buf;
  writeCheckpoint(buf, p, &adam, {{"domain", "scene"}});
  const Checkpoint c = readCheckpoint(buf);
  CHECK(c.metadata.at("domain") == "scene");
  CHECK(c.params.dims.history == HistoryKind::Stack);
  CHECK(c.params.vocabSize == v.size());
  REQUIRE(c.params.tensors.sameLayout(p.tensors));
  for (int i = 0; i < p.tensors.size(); ++i) CHECK((c.params.tensors[i] - p.tensors[i]).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(c.adam.has_value());
  CHECK(c.adam->step == 1);
  for (int i = 0; i < p.tensors.size(); ++i)
    CHECK((c.adam->secondMoment[i] - adam.secondMoment[i]).cwiseAbs().maxCoeff() == 0.0);

  std::stringstream noAdam;
  writeCheckpoint(noAdam, p, nullptr);
  CHECK_FALSE(readCheckpoint(noAdam).adam.has_value());

  std::stringstream junk("NOTACKPT....");
  CHECK_THROWS(readCheckpoint(junk));
  std::string bytes = buf.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS(readCheckpoint(truncated));
}
