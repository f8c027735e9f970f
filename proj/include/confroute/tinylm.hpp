#pragma once

#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "confroute/annotator.hpp"
#include "confroute/core.hpp"

namespace confroute::tinylm {

inline constexpr const char* kEndToken = "<END>";

struct OutOfVocabError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TokensPresentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Token table. After add_confidence_tokens the two confidence tokens occupy
/// the last two ids (un_id then cn_id).
class Vocab {
 public:
  Vocab() = default;
  static Vocab from_tokens(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const { return tokens_.at(id); }

  int un_id() const { return un_id_; }
  int cn_id() const { return cn_id_; }
  int end_id() const { return end_id_; }
  bool has_confidence_tokens() const { return un_id_ >= 0; }

  std::optional<int> find(const std::string& token) const;
  int id_of(const std::string& token) const;  // throws OutOfVocabError

  /// Whitespace tokenization followed by id lookup.
  std::vector<int> encode(const std::string& text) const;
  std::vector<int> encode_tokens(std::span<const std::string> tokens) const;

  /// Appends <UN> and <CN> as the last two ids.
  Vocab with_confidence_tokens() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int un_id_{-1};
  int cn_id_{-1};
  int end_id_{-1};
};

/// Flat-parameter offsets for the causal blocks. Each block is a single-head
/// causal self-attention of width d followed by a two-layer tanh MLP of
/// hidden width 4d, both with residual connections; the output projection is
/// weight-tied to the embedding table.
struct Layout {
  int vocab_size;
  int width;
  int max_seq_len;
  int hidden;
  int n_blocks;

  std::size_t embed() const { return 0; }
  std::size_t pos() const { return static_cast<std::size_t>(vocab_size) * width; }
  std::size_t blocks_base() const {
    return pos() + static_cast<std::size_t>(max_seq_len) * width;
  }
  std::size_t block_size() const {
    const auto d = static_cast<std::size_t>(width);
    const auto h = static_cast<std::size_t>(hidden);
    return 4 * d * d + 2 * d * h + h + d;
  }
  std::size_t wq(int b) const { return blocks_base() + b * block_size(); }
  std::size_t wk(int b) const { return wq(b) + static_cast<std::size_t>(width) * width; }
  std::size_t wv(int b) const { return wk(b) + static_cast<std::size_t>(width) * width; }
  std::size_t wo(int b) const { return wv(b) + static_cast<std::size_t>(width) * width; }
  std::size_t w1(int b) const { return wo(b) + static_cast<std::size_t>(width) * width; }
  std::size_t b1(int b) const { return w1(b) + static_cast<std::size_t>(hidden) * width; }
  std::size_t w2(int b) const { return b1(b) + static_cast<std::size_t>(hidden); }
  std::size_t b2(int b) const { return w2(b) + static_cast<std::size_t>(width) * hidden; }
  std::size_t total() const { return blocks_base() + static_cast<std::size_t>(n_blocks) * block_size(); }
};

struct TinyModel {
  Vocab vocab;
  int width{32};
  int max_seq_len{64};
  int n_blocks{1};
  std::vector<double> params;

  Layout layout() const {
    return {vocab.size(), width, max_seq_len, 4 * width, n_blocks};
  }

  static TinyModel init(Vocab vocab, int width, int max_seq_len, int n_blocks,
                        RngSeed seed, double init_std = 0.08);
};

struct TrainConfig {
  double learning_rate{0.1};
  int epochs{1};
  int batch_size{32};
  RngSeed seed{};
  std::optional<int> grad_check_every{};
};

/// Token sequence with per-target loss weights: weights[i] applies to
/// predicting tokens[i+1] from the prefix ending at i, so its size is
/// tokens.size() - 1.
struct MaskedSequence {
  std::vector<int> tokens;
  std::vector<double> weights;
};

/// Prompt positions get weight zero; completion positions carry the
/// example's 0/1 weights.
MaskedSequence to_masked_sequence(const Vocab& vocab,
                                  const annotator::AugmentedExample& example);

struct LossResult {
  double loss{0.0};
  std::vector<double> gradients;  // same layout as TinyModel::params
};

/// Returns a copy of the model with <UN>/<CN> appended to the vocabulary,
/// their embedding rows initialized to the arithmetic mean of the existing
/// rows, and every other parameter unchanged.
TinyModel add_confidence_tokens(const TinyModel& model);

/// Weighted completion cross-entropy normalized by the weight sum, and its
/// gradient for every parameter. Positions with weight zero contribute
/// exactly nothing.
LossResult masked_loss(const TinyModel& model, const MaskedSequence& sequence);
LossResult masked_loss(const TinyModel& model,
                       const annotator::AugmentedExample& example);
double masked_loss_value(const TinyModel& model, const MaskedSequence& sequence);

/// Loss recomputed from explicit logit rows (row i predicts targets[i]);
/// lets tests probe sensitivity to individual logits directly.
double masked_loss_from_logits(const std::vector<std::vector<double>>& logit_rows,
                               std::span<const int> targets,
                               std::span<const double> weights);

/// Mean masked loss SGD with a seeded shuffle every epoch. Throws
/// DivergenceError when the loss stops being finite.
TinyModel train(TinyModel model, std::span<const annotator::AugmentedExample> examples,
                const TrainConfig& config);
TinyModel train_sequences(TinyModel model, std::span<const MaskedSequence> sequences,
                          const TrainConfig& config);

enum class StopReason { end_marker, confidence_token, length };

struct GreedyResult {
  std::vector<int> tokens;          // emitted answer tokens (stop token excluded)
  StopReason stop{StopReason::length};
  std::vector<double> token_probs;  // softmax probability of each emitted token
};

/// Argmax decoding (ties to the lowest token id) until an end marker, a
/// confidence token, or max_len tokens.
GreedyResult predict_greedy(const TinyModel& model, std::span<const int> prompt,
                            int max_len);

struct ConfidencePair {
  double p_un{0.0};
  double p_cn{0.0};
};

/// Softmax probabilities of <UN> and <CN> at the position immediately after
/// the final answer token. Not normalized against each other.
ConfidencePair confidence_probs(const TinyModel& model, std::span<const int> prompt,
                                std::span<const int> answer);

/// Central finite differences over every parameter; returns the max relative
/// error against the analytic gradient (absolute error where the analytic
/// gradient is below 1e-8).
double grad_check(const TinyModel& model, const MaskedSequence& sequence,
                  double epsilon);
double grad_check(const TinyModel& model, const annotator::AugmentedExample& example,
                  double epsilon);

/// Next-token logits after the given prefix.
std::vector<double> next_token_logits(const TinyModel& model, std::span<const int> ids);

/// Softmax rows for every position of the sequence.
std::vector<std::vector<double>> sequence_probs(const TinyModel& model,
                                                std::span<const int> ids);

void save_checkpoint(const TinyModel& model, const std::string& path);
TinyModel load_checkpoint(const std::string& path);

}  // namespace confroute::tinylm
