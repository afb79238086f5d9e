#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "stackparse/dataset.hpp"
#include "stackparse/interpreter.hpp"

namespace stackparse {

enum class HistoryKind { Tokens, Stack };

std::string_view historyKindName(HistoryKind k);
std::optional<HistoryKind> historyKindFromName(std::string_view name);

inline constexpr int kTokenWindow = 4;
inline constexpr int kStackSlots = 3;

struct ModelDims {
  int wordDim = 50;
  int hidden = 50;  // per direction
  int tokenDim = 50;
  int attnDim = 50;
  HistoryKind history = HistoryKind::Tokens;

  int historyWidth() const { return (history == HistoryKind::Tokens ? kTokenWindow : kStackSlots) * tokenDim; }
};

// Fixed word vectors (never trained). Unknown words map to the mean vector.
class WordTable {
 public:
  static WordTable load(const std::string& path, std::optional<int> dim = std::nullopt);
  static WordTable parse(std::istream& in, std::optional<int> dim = std::nullopt);
  // Every word gets a vector derived from (seed, word); no file needed.
  static WordTable random(int dim, std::uint64_t seed);

  int dim() const { return dim_; }
  bool contains(const std::string& word) const;
  Eigen::VectorXd lookup(const std::string& word) const;
  const Eigen::VectorXd& unk() const { return unk_; }

 private:
  int dim_ = 0;
  std::unordered_map<std::string, Eigen::VectorXd> vectors_;
  Eigen::VectorXd unk_;
  std::optional<std::uint64_t> randomSeed_;
};

struct NamedTensor {
  std::string name;
  Eigen::MatrixXd value;
};

// Ordered collection of named real tensors; gradients and Adam moments share
// the layout of the parameters they belong to.
class ParamSet {
 public:
  int add(std::string name, Eigen::MatrixXd value);
  int size() const { return static_cast<int>(tensors_.size()); }
  Eigen::MatrixXd& operator[](int i) { return tensors_[i].value; }
  const Eigen::MatrixXd& operator[](int i) const { return tensors_[i].value; }
  const std::string& name(int i) const { return tensors_[i].name; }
  std::optional<int> find(const std::string& name) const;
  const std::vector<NamedTensor>& tensors() const { return tensors_; }

  ParamSet zerosLike() const;
  void setZero();
  void addScaled(const ParamSet& other, double scale);
  bool allFinite() const;
  double maxAbs() const;
  std::size_t scalarCount() const;
  bool sameLayout(const ParamSet& other) const;

 private:
  std::vector<NamedTensor> tensors_;
};

class NonFiniteGradient : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// All learned tensors of the encoder/decoder. Tensor indices are fixed by
// the dims and vocabulary size.
struct PolicyParams {
  ModelDims dims;
  int vocabSize = 0;
  ParamSet tensors;

  int tokenEmb = -1, tokenPad = -1;
  int encFwdW = -1, encFwdB = -1, encBwdW = -1, encBwdB = -1;
  int wq = -1, wa = -1, ws = -1;
  // Stack history only.
  int valueTag = -1, valueNumber = -1, valueColor = -1, valuePosition = -1, valueShape = -1,
      valueAmount = -1, valueLength = -1, stackPad = -1;

  // Zero-valued tensors with the right names and shapes.
  static PolicyParams shaped(const ModelDims& dims, int vocabSize);
};

// Glorot-uniform matrices, zero biases.
PolicyParams initParams(std::uint64_t seed, const ModelDims& dims, int vocabSize);

struct AdamState {
  ParamSet firstMoment, secondMoment;
  int step = 0;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;

  static AdamState forParams(const PolicyParams& p);
};

// Gradient ascent step on the objective; throws NonFiniteGradient.
void adamStep(PolicyParams& params, AdamState& state, const ParamSet& grad, double lr);

// ---------------------------------------------------------------------------
// Forward/backward machinery.

struct LstmTrace {
  std::vector<Eigen::VectorXd> input;  // [x; h_prev]
  std::vector<Eigen::VectorXd> gates;  // [i; f; o; g] after nonlinearity
  std::vector<Eigen::VectorXd> cell;
  std::vector<Eigen::VectorXd> hidden;
};

struct Encoding {
  Eigen::MatrixXd hidden;     // row i = [h^F_i; h^B_i]
  Eigen::VectorXd embedding;  // e_m = [h^F_last; h^B_first]
  LstmTrace forward;          // positions 0..n-1
  LstmTrace backward;         // positions n-1..0 (processing order)
};

Encoding encodeUtterance(const PolicyParams& params, const WordTable& words, const Utterance& u);

// A history-embedding slot as a weighted sum of embedding-table rows.
struct EmbeddingTerm {
  int tensor;
  int row;
  double weight;
};
using SlotEmbedding = std::vector<EmbeddingTerm>;

std::vector<SlotEmbedding> tokenHistorySlots(const PolicyParams& params, const Program& prefix);
std::vector<SlotEmbedding> stackHistorySlots(const PolicyParams& params, const MachineState& state);
SlotEmbedding valueSlot(const PolicyParams& params, const Value& v, const WorldState& world);
Eigen::VectorXd realizeSlots(const PolicyParams& params, const std::vector<SlotEmbedding>& slots);

Eigen::VectorXd historyEmbedTokens(const PolicyParams& params, const Program& prefix);
Eigen::VectorXd historyEmbedStack(const PolicyParams& params, const MachineState& state);
Eigen::VectorXd embedValue(const PolicyParams& params, const Value& v, const WorldState& world);

struct DecodeTrace {
  Eigen::VectorXd input;    // [e_m; f]
  Eigen::VectorXd pre;      // W_q input
  Eigen::VectorXd query;    // q_t
  Eigen::VectorXd keys;     // W_a^T q_t
  Eigen::VectorXd alpha;
  Eigen::VectorXd context;  // c_t
  Eigen::VectorXd joined;   // [q_t; c_t]
  Eigen::VectorXd projected;  // W_s [q_t; c_t]
  Eigen::VectorXd probs;
};

DecodeTrace decodeForward(const PolicyParams& params, const Encoding& enc, const Eigen::VectorXd& f);
// Distribution over the full vocabulary.
Eigen::VectorXd decodeStep(const PolicyParams& params, const Encoding& enc, const Eigen::VectorXd& f);

struct EncodedInput {
  std::vector<Encoding> utterances;
};

// The policy p(z_t | x, z_{1:t-1}) bound to its vocabulary and word vectors.
class Policy {
 public:
  Policy(const PolicyParams& params, const WordTable& words, const Vocabulary& vocab,
         LanguageConfig language = {});

  const PolicyParams& params() const { return params_; }
  const Vocabulary& vocab() const { return vocab_; }
  const LanguageConfig& language() const { return language_; }
  const WordTable& words() const { return words_; }
  const CompletionTable& completion() const { return completion_; }

  EncodedInput encode(const std::vector<Utterance>& utterances) const;
  std::vector<SlotEmbedding> historySlots(const Program& prefix, const MachineState& state) const;
  Eigen::VectorXd nextTokenDistribution(const EncodedInput& input, const Program& prefix,
                                        const MachineState& state) const;

  // Throws ExecError if the program does not execute.
  double programLogProb(const TrainingExample& x, const Program& z) const;
  // Adds scale * grad log p(z|x) into grad; returns log p(z|x).
  double accumulateGradLogProb(const TrainingExample& x, const Program& z, double scale,
                               ParamSet& grad) const;
  ParamSet gradLogProb(const TrainingExample& x, const Program& z) const;

 private:
  const PolicyParams& params_;
  const WordTable& words_;
  const Vocabulary& vocab_;
  LanguageConfig language_;
  CompletionTable completion_;
};

struct GradCheckResult {
  double maxRelativeError = 0;
  std::string worstTensor;
  int checkedEntries = 0;
};

// Compares gradLogProb with central differences over every learned scalar.
// Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult gradientCheck(const PolicyParams& params, const WordTable& words,
                              const Vocabulary& vocab, const LanguageConfig& language,
                              const TrainingExample& x, const Program& z, double h = 1e-4,
                              double floor = 1e-6);

// ---------------------------------------------------------------------------
// Checkpoints: "STKPCKPT", u32 version, metadata pairs, then named tensors
// (u32 rows, u32 cols, row-major little-endian float64).

struct Checkpoint {
  PolicyParams params;
  std::optional<AdamState> adam;
  std::map<std::string, std::string> metadata;
};

void saveCheckpoint(const std::string& path, const PolicyParams& params, const AdamState* adam,
                    const std::map<std::string, std::string>& metadata = {});
void writeCheckpoint(std::ostream& out, const PolicyParams& params, const AdamState* adam,
                     const std::map<std::string, std::string>& metadata = {});
Checkpoint loadCheckpoint(const std::string& path);
Checkpoint readCheckpoint(std::istream& in);

}  // namespace stackparse
