#include "stackparse/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "stackparse/random.hpp"

namespace stackparse {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string_view historyKindName(HistoryKind k) {
  return k == HistoryKind::Tokens ? "tokens" : "stack";
}

std::optional<HistoryKind> historyKindFromName(std::string_view name) {
  if (name == "tokens") return HistoryKind::Tokens;
  if (name == "stack") return HistoryKind::Stack;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Word vectors

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

VectorXd seededVector(int dim, std::uint64_t seed, std::string_view word) {
  Rng rng(deriveSeed(seed, fnv1a(word)));
  VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = rng.uniform(-0.5, 0.5);
  return v;
}

}  // namespace

WordTable WordTable::load(const std::string& path, std::optional<int> dim) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embeddings file: " + path);
  return parse(in, dim);
}

WordTable WordTable::parse(std::istream& in, std::optional<int> dim) {
  WordTable t;
  t.dim_ = dim.value_or(0);
  std::string line;
  int lineNo = 0;
  VectorXd sum;
  while (std::getline(in, line)) {
    ++lineNo;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    std::vector<double> xs;
    double x;
    while (ls >> x) xs.push_back(x);
    if (!ls.eof()) {
      throw std::runtime_error("embeddings line " + std::to_string(lineNo) + ": bad number");
    }
    if (t.dim_ == 0) t.dim_ = static_cast<int>(xs.size());
    if (static_cast<int>(xs.size()) != t.dim_ || t.dim_ == 0) {
      throw std::runtime_error("embeddings line " + std::to_string(lineNo) + ": expected " +
                               std::to_string(t.dim_) + " components, got " +
                               std::to_string(xs.size()));
    }
    VectorXd v = Eigen::Map<VectorXd>(xs.data(), t.dim_);
    if (sum.size() == 0) sum = VectorXd::Zero(t.dim_);
    sum += v;
    t.vectors_[word] = std::move(v);
  }
  if (t.vectors_.empty()) throw std::runtime_error("embeddings file has no vectors");
  t.unk_ = sum / static_cast<double>(t.vectors_.size());
  return t;
}

WordTable WordTable::random(int dim, std::uint64_t seed) {
  WordTable t;
  t.dim_ = dim;
  t.randomSeed_ = seed;
  t.unk_ = seededVector(dim, seed, "<unk>");
  return t;
}

bool WordTable::contains(const std::string& word) const {
  return randomSeed_ || vectors_.count(word) > 0;
}

VectorXd WordTable::lookup(const std::string& word) const {
  if (randomSeed_) return seededVector(dim_, *randomSeed_, word);
  auto it = vectors_.find(word);
  return it == vectors_.end() ? unk_ : it->second;
}

// ---------------------------------------------------------------------------
// ParamSet

int ParamSet::add(std::string name, MatrixXd value) {
  tensors_.push_back({std::move(name), std::move(value)});
  return size() - 1;
}

std::optional<int> ParamSet::find(const std::string& name) const {
  for (int i = 0; i < size(); ++i) {
    if (tensors_[i].name == name) return i;
  }
  return std::nullopt;
}

ParamSet ParamSet::zerosLike() const {
  ParamSet p;
  for (const auto& t : tensors_) p.add(t.name, MatrixXd::Zero(t.value.rows(), t.value.cols()));
  return p;
}

void ParamSet::setZero() {
  for (auto& t : tensors_) t.value.setZero();
}

void ParamSet::addScaled(const ParamSet& other, double scale) {
  for (int i = 0; i < size(); ++i) tensors_[i].value += scale * other[i];
}

bool ParamSet::allFinite() const {
  for (const auto& t : tensors_) {
    if (!t.value.allFinite()) return false;
  }
  return true;
}

double ParamSet::maxAbs() const {
  double m = 0;
  for (const auto& t : tensors_) {
    if (t.value.size() > 0) m = std::max(m, t.value.cwiseAbs().maxCoeff());
  }
  return m;
}

std::size_t ParamSet::scalarCount() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
  return n;
}

bool ParamSet::sameLayout(const ParamSet& other) const {
  if (size() != other.size()) return false;
  for (int i = 0; i < size(); ++i) {
    if (name(i) != other.name(i) || tensors_[i].value.rows() != other[i].rows() ||
        tensors_[i].value.cols() != other[i].cols()) {
      return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Parameter layout

namespace {

constexpr int kTagNumber = 0, kTagFraction = 1, kTagColor = 2, kTagBeaker = 3, kTagTangram = 4,
              kTagPerson = 5;
constexpr int kTagCount = 6;
constexpr int kNumberMin = -10, kNumberMax = 11;
constexpr int kPositionRows = 12;  // 0..10, 11 = not on stage
constexpr int kPositionAbsent = 11;
constexpr int kShapeRows = 10;
constexpr int kAmountRows = Beaker::kCapacity + 1;
constexpr int kLengthRows = 11;

}  // namespace

PolicyParams PolicyParams::shaped(const ModelDims& dims, int vocabSize) {
  if (dims.wordDim <= 0 || dims.hidden <= 0 || dims.tokenDim <= 0 || dims.attnDim <= 0 ||
      vocabSize <= 0) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  PolicyParams p;
  p.dims = dims;
  p.vocabSize = vocabSize;
  const int h = dims.hidden, d = dims.wordDim, k = dims.tokenDim, a = dims.attnDim;
  auto& t = p.tensors;
  p.tokenEmb = t.add("token_emb", MatrixXd::Zero(vocabSize, k));
  p.tokenPad = t.add("token_pad", MatrixXd::Zero(1, k));
  p.encFwdW = t.add("enc_fwd_W", MatrixXd::Zero(4 * h, d + h));
  p.encFwdB = t.add("enc_fwd_b", MatrixXd::Zero(4 * h, 1));
  p.encBwdW = t.add("enc_bwd_W", MatrixXd::Zero(4 * h, d + h));
  p.encBwdB = t.add("enc_bwd_b", MatrixXd::Zero(4 * h, 1));
  p.wq = t.add("W_q", MatrixXd::Zero(a, 2 * h + dims.historyWidth()));
  p.wa = t.add("W_a", MatrixXd::Zero(a, 2 * h));
  p.ws = t.add("W_s", MatrixXd::Zero(k, a + 2 * h));
  if (dims.history == HistoryKind::Stack) {
    p.valueTag = t.add("value_tag", MatrixXd::Zero(kTagCount, k));
    p.valueNumber = t.add("value_number", MatrixXd::Zero(kNumberMax - kNumberMin + 1, k));
    p.valueColor = t.add("value_color", MatrixXd::Zero(kColorCount, k));
    p.valuePosition = t.add("value_position", MatrixXd::Zero(kPositionRows, k));
    p.valueShape = t.add("value_shape", MatrixXd::Zero(kShapeRows, k));
    p.valueAmount = t.add("value_amount", MatrixXd::Zero(kAmountRows, k));
    p.valueLength = t.add("value_length", MatrixXd::Zero(kLengthRows, k));
    p.stackPad = t.add("stack_pad", MatrixXd::Zero(1, k));
  }
  return p;
}

PolicyParams initParams(std::uint64_t seed, const ModelDims& dims, int vocabSize) {
  PolicyParams p = PolicyParams::shaped(dims, vocabSize);
  Rng rng(seed);
  for (int i = 0; i < p.tensors.size(); ++i) {
    if (i == p.encFwdB || i == p.encBwdB) continue;
    MatrixXd& m = p.tensors[i];
    const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-bound, bound);
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Adam

AdamState AdamState::forParams(const PolicyParams& p) {
  AdamState s;
  s.firstMoment = p.tensors.zerosLike();
  s.secondMoment = p.tensors.zerosLike();
  return s;
}

void adamStep(PolicyParams& params, AdamState& state, const ParamSet& grad, double lr) {
  if (!grad.sameLayout(params.tensors) || !state.firstMoment.sameLayout(params.tensors)) {
    throw std::invalid_argument("adamStep: layout mismatch");
  }
  for (int i = 0; i < grad.size(); ++i) {
    if (!grad[i].allFinite()) throw NonFiniteGradient("non-finite gradient in " + grad.name(i));
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, state.step);
  const double c2 = 1.0 - std::pow(state.beta2, state.step);
  for (int i = 0; i < grad.size(); ++i) {
    MatrixXd& m = state.firstMoment[i];
    MatrixXd& v = state.secondMoment[i];
    m = state.beta1 * m + (1.0 - state.beta1) * grad[i];
    v = state.beta2 * v + (1.0 - state.beta2) * grad[i].cwiseProduct(grad[i]);
    params.tensors[i].array() +=
        lr * (m.array() / c1) / ((v.array() / c2).sqrt() + state.epsilon);
  }
}

// ---------------------------------------------------------------------------
// Encoder

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void lstmStep(const MatrixXd& w, const MatrixXd& b, const VectorXd& x, const VectorXd& hPrev,
              const VectorXd& cPrev, LstmTrace& trace) {
  const int h = static_cast<int>(hPrev.size());
  VectorXd z(x.size() + h);
  z << x, hPrev;
  VectorXd a = w * z + b.col(0);
  VectorXd gates(4 * h);
  for (int j = 0; j < 3 * h; ++j) gates[j] = sigmoid(a[j]);
  for (int j = 3 * h; j < 4 * h; ++j) gates[j] = std::tanh(a[j]);
  VectorXd c = gates.segment(h, h).cwiseProduct(cPrev) +
               gates.segment(0, h).cwiseProduct(gates.segment(3 * h, h));
  VectorXd hid = gates.segment(2 * h, h).cwiseProduct(c.array().tanh().matrix());
  trace.input.push_back(std::move(z));
  trace.gates.push_back(std::move(gates));
  trace.cell.push_back(std::move(c));
  trace.hidden.push_back(std::move(hid));
}

// dh[t] is the external gradient on the hidden output of processing step t.
void lstmBackward(const MatrixXd& w, const LstmTrace& trace, const std::vector<VectorXd>& dh,
                  MatrixXd& dW, MatrixXd& db) {
  const int steps = static_cast<int>(trace.hidden.size());
  if (steps == 0) return;
  const int h = static_cast<int>(trace.hidden[0].size());
  VectorXd dhNext = VectorXd::Zero(h), dcNext = VectorXd::Zero(h);
  VectorXd da(4 * h);
  for (int t = steps - 1; t >= 0; --t) {
    const VectorXd& g = trace.gates[t];
    const VectorXd& c = trace.cell[t];
    VectorXd cPrev = t > 0 ? trace.cell[t - 1] : VectorXd::Zero(h);
    VectorXd dhT = dh[t] + dhNext;
    auto gi = g.segment(0, h).array(), gf = g.segment(h, h).array(), go = g.segment(2 * h, h).array(),
         gg = g.segment(3 * h, h).array();
    Eigen::ArrayXd tc = c.array().tanh();
    Eigen::ArrayXd dc = dhT.array() * go * (1.0 - tc * tc) + dcNext.array();
    da.segment(0, h) = (dc * gg * gi * (1.0 - gi)).matrix();
    da.segment(h, h) = (dc * cPrev.array() * gf * (1.0 - gf)).matrix();
    da.segment(2 * h, h) = (dhT.array() * tc * go * (1.0 - go)).matrix();
    da.segment(3 * h, h) = (dc * gi * (1.0 - gg * gg)).matrix();
    dcNext = (dc * gf).matrix();
    dW.noalias() += da * trace.input[t].transpose();
    db.col(0) += da;
    dhNext = w.rightCols(h).transpose() * da;
  }
}

}  // namespace

Encoding encodeUtterance(const PolicyParams& params, const WordTable& words, const Utterance& u) {
  const int h = params.dims.hidden;
  if (words.dim() != params.dims.wordDim) {
    throw std::invalid_argument("word vector dimension " + std::to_string(words.dim()) +
                                " does not match model dimension " +
                                std::to_string(params.dims.wordDim));
  }
  std::vector<VectorXd> xs;
  for (const auto& w : u) xs.push_back(words.lookup(w));
  if (xs.empty()) xs.push_back(words.unk());
  const int n = static_cast<int>(xs.size());

  Encoding enc;
  VectorXd hF = VectorXd::Zero(h), cF = VectorXd::Zero(h);
  for (int i = 0; i < n; ++i) {
    lstmStep(params.tensors[params.encFwdW], params.tensors[params.encFwdB], xs[i], hF, cF,
             enc.forward);
    hF = enc.forward.hidden.back();
    cF = enc.forward.cell.back();
  }
  VectorXd hB = VectorXd::Zero(h), cB = VectorXd::Zero(h);
  for (int i = n - 1; i >= 0; --i) {
    lstmStep(params.tensors[params.encBwdW], params.tensors[params.encBwdB], xs[i], hB, cB,
             enc.backward);
    hB = enc.backward.hidden.back();
    cB = enc.backward.cell.back();
  }
  enc.hidden.resize(n, 2 * h);
  for (int i = 0; i < n; ++i) {
    enc.hidden.row(i).head(h) = enc.forward.hidden[i].transpose();
    enc.hidden.row(i).tail(h) = enc.backward.hidden[n - 1 - i].transpose();
  }
  enc.embedding.resize(2 * h);
  enc.embedding << enc.forward.hidden.back(), enc.backward.hidden.back();
  return enc;
}

namespace {

void encoderBackward(const PolicyParams& params, const Encoding& enc, const MatrixXd& dHidden,
                     const VectorXd& dEmbedding, ParamSet& grad) {
  const int h = params.dims.hidden;
  const int n = static_cast<int>(enc.hidden.rows());
  std::vector<VectorXd> dF(n), dB(n);
  for (int i = 0; i < n; ++i) {
    dF[i] = dHidden.row(i).head(h).transpose();
    dB[n - 1 - i] = dHidden.row(i).tail(h).transpose();
  }
  dF[n - 1] += dEmbedding.head(h);
  dB[n - 1] += dEmbedding.tail(h);
  lstmBackward(params.tensors[params.encFwdW], enc.forward, dF, grad[params.encFwdW],
               grad[params.encFwdB]);
  lstmBackward(params.tensors[params.encBwdW], enc.backward, dB, grad[params.encBwdW],
               grad[params.encBwdB]);
}

}  // namespace

// ---------------------------------------------------------------------------
// History embeddings

std::vector<SlotEmbedding> tokenHistorySlots(const PolicyParams& params, const Program& prefix) {
  std::vector<SlotEmbedding> slots;
  const int n = static_cast<int>(prefix.size());
  // Oldest first; missing positions on the left are padding.
  for (int j = kTokenWindow; j >= 1; --j) {
    const int pos = n - j;
    if (pos < 0) {
      slots.push_back({{params.tokenPad, 0, 1.0}});
    } else {
      slots.push_back({{params.tokenEmb, prefix[pos], 1.0}});
    }
  }
  return slots;
}

namespace {

// Attribute rows of one referenced object (without tag/length).
void objectAttributes(const PolicyParams& p, const ObjectRef& ref, const WorldState& world,
                      SlotEmbedding& attrs) {
  if (auto* b = std::get_if<BeakerRef>(&ref)) {
    attrs.push_back({p.valuePosition, std::clamp(b->index + 1, 0, 10), 1});
    if (world.domain() == Domain::Alchemy && b->index >= 0 && b->index < AlchemyWorld::kBeakers) {
      const Beaker& bk = world.alchemy().beakers[b->index];
      attrs.push_back({p.valueAmount, bk.count, 1});
      if (!bk.empty()) attrs.push_back({p.valueColor, static_cast<int>(bk.units[bk.count - 1]), 1});
    }
  } else if (auto* t = std::get_if<TangramRef>(&ref)) {
    attrs.push_back({p.valueShape, std::clamp(t->shape, 0, kShapeRows - 1), 1});
    std::optional<int> pos;
    if (world.domain() == Domain::Tangrams) pos = world.tangrams().positionOf(t->shape);
    attrs.push_back({p.valuePosition, pos ? std::min(*pos + 1, 10) : kPositionAbsent, 1});
  } else {
    const auto& pr = std::get<PersonRef>(ref);
    std::optional<int> slot;
    if (world.domain() == Domain::Scene) slot = world.scene().slotOf(pr.id);
    if (slot) {
      const Person& person = *world.scene().slots[*slot];
      attrs.push_back({p.valuePosition, *slot + 1, 1});
      attrs.push_back({p.valueColor, static_cast<int>(person.shirt), 1});
      attrs.push_back({p.valueColor, static_cast<int>(person.hat), 1});
    } else {
      attrs.push_back({p.valuePosition, kPositionAbsent, 1});
    }
  }
}

int objectTag(const ObjectRef& ref) {
  if (std::holds_alternative<BeakerRef>(ref)) return kTagBeaker;
  if (std::holds_alternative<TangramRef>(ref)) return kTagTangram;
  return kTagPerson;
}

// tag + mean(attributes), scaled by `weight`.
void appendRef(const PolicyParams& p, const ObjectRef& ref, const WorldState& world, double weight,
               SlotEmbedding& out) {
  out.push_back({p.valueTag, objectTag(ref), weight});
  SlotEmbedding attrs;
  objectAttributes(p, ref, world, attrs);
  for (auto& a : attrs) out.push_back({a.tensor, a.row, weight / static_cast<double>(attrs.size())});
}

}  // namespace

SlotEmbedding valueSlot(const PolicyParams& p, const Value& v, const WorldState& world) {
  if (p.dims.history != HistoryKind::Stack) throw std::logic_error("value embedding needs stack history");
  SlotEmbedding out;
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Number>) {
          out.push_back({p.valueTag, kTagNumber, 1});
          out.push_back({p.valueNumber, std::clamp(x.value, kNumberMin, kNumberMax) - kNumberMin, 1});
        } else if constexpr (std::is_same_v<T, Fraction>) {
          out.push_back({p.valueTag, kTagFraction, 1});
        } else if constexpr (std::is_same_v<T, Color>) {
          out.push_back({p.valueTag, kTagColor, 1});
          out.push_back({p.valueColor, static_cast<int>(x), 1});
        } else if constexpr (std::is_same_v<T, RefList>) {
          const int n = static_cast<int>(x.items.size());
          for (const auto& r : x.items) appendRef(p, r, world, 1.0 / n, out);
          out.push_back({p.valueLength, std::min(n, kLengthRows - 1), 1});
        } else {
          appendRef(p, ObjectRef{x}, world, 1.0, out);
          out.push_back({p.valueLength, 1, 1});
        }
      },
      v);
  return out;
}

std::vector<SlotEmbedding> stackHistorySlots(const PolicyParams& p, const MachineState& state) {
  std::vector<SlotEmbedding> slots;
  for (int j = 0; j < kStackSlots; ++j) {
    if (j < static_cast<int>(state.stack.size())) {
      slots.push_back(valueSlot(p, state.stack[j], state.world));
    } else {
      slots.push_back({{p.stackPad, 0, 1.0}});
    }
  }
  return slots;
}

VectorXd realizeSlots(const PolicyParams& p, const std::vector<SlotEmbedding>& slots) {
  const int k = p.dims.tokenDim;
  VectorXd f = VectorXd::Zero(k * static_cast<int>(slots.size()));
  for (std::size_t j = 0; j < slots.size(); ++j) {
    for (const auto& term : slots[j]) {
      f.segment(static_cast<Eigen::Index>(j) * k, k) +=
          term.weight * p.tensors[term.tensor].row(term.row).transpose();
    }
  }
  return f;
}

VectorXd historyEmbedTokens(const PolicyParams& p, const Program& prefix) {
  return realizeSlots(p, tokenHistorySlots(p, prefix));
}

VectorXd historyEmbedStack(const PolicyParams& p, const MachineState& state) {
  return realizeSlots(p, stackHistorySlots(p, state));
}

VectorXd embedValue(const PolicyParams& p, const Value& v, const WorldState& world) {
  return realizeSlots(p, {valueSlot(p, v, world)});
}

// ---------------------------------------------------------------------------
// Decoder

DecodeTrace decodeForward(const PolicyParams& p, const Encoding& enc, const VectorXd& f) {
  const auto& T = p.tensors;
  DecodeTrace tr;
  tr.input.resize(enc.embedding.size() + f.size());
  tr.input << enc.embedding, f;
  tr.pre = T[p.wq] * tr.input;
  tr.query = tr.pre.cwiseMax(0.0);
  tr.keys = T[p.wa].transpose() * tr.query;
  VectorXd scores = enc.hidden * tr.keys;
  scores.array() -= scores.maxCoeff();
  tr.alpha = scores.array().exp();
  tr.alpha /= tr.alpha.sum();
  tr.context = enc.hidden.transpose() * tr.alpha;
  tr.joined.resize(tr.query.size() + tr.context.size());
  tr.joined << tr.query, tr.context;
  tr.projected = T[p.ws] * tr.joined;
  VectorXd logits = T[p.tokenEmb] * tr.projected;
  logits.array() -= logits.maxCoeff();
  tr.probs = logits.array().exp();
  tr.probs /= tr.probs.sum();
  return tr;
}

VectorXd decodeStep(const PolicyParams& p, const Encoding& enc, const VectorXd& f) {
  return decodeForward(p, enc, f).probs;
}

// ---------------------------------------------------------------------------
// Policy

Policy::Policy(const PolicyParams& params, const WordTable& words, const Vocabulary& vocab,
               LanguageConfig language)
    : params_(params), words_(words), vocab_(vocab), language_(std::move(language)), completion_(vocab, language_) {
  if (params.vocabSize != vocab.size()) {
    throw std::invalid_argument("parameter vocabulary size does not match the token table");
  }
}

EncodedInput Policy::encode(const std::vector<Utterance>& utterances) const {
  EncodedInput in;
  for (const auto& u : utterances) in.utterances.push_back(encodeUtterance(params_, words_, u));
  return in;
}

std::vector<SlotEmbedding> Policy::historySlots(const Program& prefix, const MachineState& state) const {
  return params_.dims.history == HistoryKind::Tokens ? tokenHistorySlots(params_, prefix)
                                                     : stackHistorySlots(params_, state);
}

VectorXd Policy::nextTokenDistribution(const EncodedInput& input, const Program& prefix,
                                       const MachineState& state) const {
  if (state.terminal()) throw ExecError(ErrorKind::Terminal, "no utterance left to decode");
  const auto& enc = input.utterances.at(state.pointer - 1);
  return decodeStep(params_, enc, realizeSlots(params_, historySlots(prefix, state)));
}

double Policy::programLogProb(const TrainingExample& x, const Program& z) const {
  EncodedInput in = encode(x.utterances);
  MachineState s = MachineState::initial(x.start, x.utteranceCount(), language_);
  Program prefix;
  double lp = 0;
  for (TokenId tok : z) {
    VectorXd probs = nextTokenDistribution(in, prefix, s);
    lp += std::log(probs[tok]);
    s = step(s, vocab_[tok]);
    prefix.push_back(tok);
  }
  return lp;
}

double Policy::accumulateGradLogProb(const TrainingExample& x, const Program& z, double scale,
                                     ParamSet& grad) const {
  const auto& T = params_.tensors;
  const int h2 = 2 * params_.dims.hidden;
  const int k = params_.dims.tokenDim;
  EncodedInput in = encode(x.utterances);
  std::vector<MatrixXd> dHidden;
  std::vector<VectorXd> dEmbed;
  for (const auto& e : in.utterances) {
    dHidden.push_back(MatrixXd::Zero(e.hidden.rows(), h2));
    dEmbed.push_back(VectorXd::Zero(h2));
  }

  MachineState s = MachineState::initial(x.start, x.utteranceCount(), language_);
  Program prefix;
  double lp = 0;
  for (TokenId tok : z) {
    if (s.terminal()) throw ExecError(ErrorKind::Terminal, "program longer than its utterances");
    const int m = s.pointer - 1;
    const Encoding& enc = in.utterances[m];
    auto slots = historySlots(prefix, s);
    DecodeTrace tr = decodeForward(params_, enc, realizeSlots(params_, slots));
    lp += std::log(tr.probs[tok]);

    // d(scale * log p[tok]) / d logits
    VectorXd dLogits = -scale * tr.probs;
    dLogits[tok] += scale;
    grad[params_.tokenEmb].noalias() += dLogits * tr.projected.transpose();
    VectorXd dProj = T[params_.tokenEmb].transpose() * dLogits;
    grad[params_.ws].noalias() += dProj * tr.joined.transpose();
    VectorXd dJoined = T[params_.ws].transpose() * dProj;
    const int a = static_cast<int>(tr.query.size());
    VectorXd dQuery = dJoined.head(a);
    VectorXd dContext = dJoined.tail(h2);
    // c = H^T alpha
    VectorXd dAlpha = enc.hidden * dContext;
    dHidden[m].noalias() += tr.alpha * dContext.transpose();
    VectorXd dScores = tr.alpha.cwiseProduct(dAlpha.array().matrix() -
                                             VectorXd::Constant(dAlpha.size(), tr.alpha.dot(dAlpha)));
    // scores = H (W_a^T q)
    VectorXd dKeys = enc.hidden.transpose() * dScores;
    dHidden[m].noalias() += dScores * tr.keys.transpose();
    grad[params_.wa].noalias() += tr.query * dKeys.transpose();
    dQuery += T[params_.wa] * dKeys;
    VectorXd dPre = dQuery.cwiseProduct((tr.pre.array() > 0).cast<double>().matrix());
    grad[params_.wq].noalias() += dPre * tr.input.transpose();
    VectorXd dInput = T[params_.wq].transpose() * dPre;
    dEmbed[m] += dInput.head(h2);
    for (std::size_t j = 0; j < slots.size(); ++j) {
      auto seg = dInput.segment(h2 + static_cast<Eigen::Index>(j) * k, k);
      for (const auto& term : slots[j]) grad[term.tensor].row(term.row) += term.weight * seg.transpose();
    }

    s = step(s, vocab_[tok]);
    prefix.push_back(tok);
  }
  for (std::size_t m = 0; m < in.utterances.size(); ++m) {
    encoderBackward(params_, in.utterances[m], dHidden[m], dEmbed[m], grad);
  }
  return lp;
}

ParamSet Policy::gradLogProb(const TrainingExample& x, const Program& z) const {
  ParamSet g = params_.tensors.zerosLike();
  accumulateGradLogProb(x, z, 1.0, g);
  return g;
}

GradCheckResult gradientCheck(const PolicyParams& params, const WordTable& words,
                              const Vocabulary& vocab, const LanguageConfig& language,
                              const TrainingExample& x, const Program& z, double h, double floor) {
  PolicyParams work = params;
  Policy policy(work, words, vocab, language);
  const ParamSet analytic = policy.gradLogProb(x, z);
  GradCheckResult res;
  for (int t = 0; t < work.tensors.size(); ++t) {
    MatrixXd& m = work.tensors[t];
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double saved = m.data()[i];
      m.data()[i] = saved + h;
      const double up = policy.programLogProb(x, z);
      m.data()[i] = saved - h;
      const double down = policy.programLogProb(x, z);
      m.data()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[t].data()[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++res.checkedEntries;
      if (rel > res.maxRelativeError) {
        res.maxRelativeError = rel;
        res.worstTensor = work.tensors.name(t) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'S', 'T', 'K', 'P', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void putU32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

void putU64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

void putString(std::ostream& out, const std::string& s) {
  putU32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void putMatrix(std::ostream& out, const std::string& name, const MatrixXd& m) {
  putString(out, name);
  putU32(out, static_cast<std::uint32_t>(m.rows()));
  putU32(out, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) putU64(out, std::bit_cast<std::uint64_t>(m(r, c)));
  }
}

void need(std::istream& in, const char* what) {
  if (!in) throw std::runtime_error(std::string("truncated checkpoint while reading ") + what);
}

std::uint32_t getU32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  need(in, "integer");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t getU64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  need(in, "value");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

std::string getString(std::istream& in) {
  const std::uint32_t n = getU32(in);
  if (n > (1u << 20)) throw std::runtime_error("corrupt checkpoint: string too long");
  std::string s(n, '\0');
  in.read(s.data(), n);
  need(in, "string");
  return s;
}

int metaInt(const std::map<std::string, std::string>& meta, const std::string& key) {
  auto it = meta.find(key);
  if (it == meta.end()) throw std::runtime_error("checkpoint metadata lacks " + key);
  return std::stoi(it->second);
}

}  // namespace

void writeCheckpoint(std::ostream& out, const PolicyParams& params, const AdamState* adam,
                     const std::map<std::string, std::string>& metadata) {
  std::map<std::string, std::string> meta = metadata;
  meta["dims.word"] = std::to_string(params.dims.wordDim);
  meta["dims.hidden"] = std::to_string(params.dims.hidden);
  meta["dims.token"] = std::to_string(params.dims.tokenDim);
  meta["dims.attn"] = std::to_string(params.dims.attnDim);
  meta["dims.history"] = std::string(historyKindName(params.dims.history));
  meta["vocab.size"] = std::to_string(params.vocabSize);
  if (adam) {
    std::ostringstream b;
    b.precision(17);
    b << adam->beta1 << ' ' << adam->beta2 << ' ' << adam->epsilon;
    meta["adam.step"] = std::to_string(adam->step);
    meta["adam.hyper"] = b.str();
  }
  out.write(kMagic, sizeof kMagic);
  putU32(out, kVersion);
  putU32(out, static_cast<std::uint32_t>(meta.size()));
  for (const auto& [key, value] : meta) {
    putString(out, key);
    putString(out, value);
  }
  const int n = params.tensors.size();
  putU32(out, static_cast<std::uint32_t>(adam ? 3 * n : n));
  for (int i = 0; i < n; ++i) putMatrix(out, params.tensors.name(i), params.tensors[i]);
  if (adam) {
    for (int i = 0; i < n; ++i) putMatrix(out, "adam.m/" + params.tensors.name(i), adam->firstMoment[i]);
    for (int i = 0; i < n; ++i) putMatrix(out, "adam.v/" + params.tensors.name(i), adam->secondMoment[i]);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint");
}

void saveCheckpoint(const std::string& path, const PolicyParams& params, const AdamState* adam,
                    const std::map<std::string, std::string>& metadata) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  writeCheckpoint(out, params, adam, metadata);
}

Checkpoint readCheckpoint(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("not a checkpoint file");
  const std::uint32_t version = getU32(in);
  if (version != kVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const std::uint32_t metaCount = getU32(in);
  for (std::uint32_t i = 0; i < metaCount; ++i) {
    std::string key = getString(in);
    ck.metadata[key] = getString(in);
  }
  ModelDims dims;
  dims.wordDim = metaInt(ck.metadata, "dims.word");
  dims.hidden = metaInt(ck.metadata, "dims.hidden");
  dims.tokenDim = metaInt(ck.metadata, "dims.token");
  dims.attnDim = metaInt(ck.metadata, "dims.attn");
  auto hk = historyKindFromName(ck.metadata["dims.history"]);
  if (!hk) throw std::runtime_error("checkpoint has unknown history kind");
  dims.history = *hk;
  ck.params = PolicyParams::shaped(dims, metaInt(ck.metadata, "vocab.size"));
  const bool hasAdam = ck.metadata.count("adam.step") > 0;
  if (hasAdam) {
    ck.adam = AdamState::forParams(ck.params);
    ck.adam->step = metaInt(ck.metadata, "adam.step");
    std::istringstream hyper(ck.metadata["adam.hyper"]);
    hyper >> ck.adam->beta1 >> ck.adam->beta2 >> ck.adam->epsilon;
  }
  const std::uint32_t tensorCount = getU32(in);
  std::vector<bool> seen(static_cast<std::size_t>(ck.params.tensors.size()) * 3, false);
  for (std::uint32_t i = 0; i < tensorCount; ++i) {
    std::string name = getString(in);
    const std::uint32_t rows = getU32(in), cols = getU32(in);
    ParamSet* target = &ck.params.tensors;
    int group = 0;
    std::string base = name;
    if (hasAdam && name.rfind("adam.m/", 0) == 0) {
      target = &ck.adam->firstMoment;
      base = name.substr(7);
      group = 1;
    } else if (hasAdam && name.rfind("adam.v/", 0) == 0) {
      target = &ck.adam->secondMoment;
      base = name.substr(7);
      group = 2;
    }
    auto idx = target->find(base);
    if (!idx) throw std::runtime_error("checkpoint has unexpected tensor " + name);
    MatrixXd& m = (*target)[*idx];
    if (m.rows() != rows || m.cols() != cols) {
      throw std::runtime_error("checkpoint tensor " + name + " has the wrong shape");
    }
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = std::bit_cast<double>(getU64(in));
    }
    seen[static_cast<std::size_t>(group * ck.params.tensors.size() + *idx)] = true;
  }
  const int groups = hasAdam ? 3 : 1;
  for (int g = 0; g < groups; ++g) {
    for (int i = 0; i < ck.params.tensors.size(); ++i) {
      if (!seen[static_cast<std::size_t>(g * ck.params.tensors.size() + i)]) {
        throw std::runtime_error("checkpoint lacks tensor " + ck.params.tensors.name(i));
      }
    }
  }
  return ck;
}

Checkpoint loadCheckpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  return readCheckpoint(in);
}

}  // namespace stackparse
