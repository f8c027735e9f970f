#include "confroute/tinylm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace confroute::tinylm {

// ---------------------------------------------------------------------------
// Vocab

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab vocab;
  vocab.tokens_ = std::move(tokens);
  for (int i = 0; i < vocab.size(); ++i) {
    const std::string& token = vocab.tokens_[i];
    if (!vocab.index_.emplace(token, i).second) {
      throw std::invalid_argument("vocab: duplicate token '" + token + "'");
    }
    if (token == annotator::kUnconfidentToken) vocab.un_id_ = i;
    if (token == annotator::kConfidentToken) vocab.cn_id_ = i;
    if (token == kEndToken) vocab.end_id_ = i;
  }
  if ((vocab.un_id_ >= 0) != (vocab.cn_id_ >= 0)) {
    throw std::invalid_argument("vocab: confidence tokens must appear as a pair");
  }
  return vocab;
}

std::optional<int> Vocab::find(const std::string& token) const {
  const auto it = index_.find(token);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocab::id_of(const std::string& token) const {
  const auto id = find(token);
  if (!id.has_value()) {
    throw OutOfVocabError("token '" + token + "' is not in the vocabulary");
  }
  return *id;
}

std::vector<int> Vocab::encode(const std::string& text) const {
  std::istringstream stream(text);
  std::vector<int> ids;
  std::string token;
  while (stream >> token) {
    ids.push_back(id_of(token));
  }
  return ids;
}

std::vector<int> Vocab::encode_tokens(std::span<const std::string> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& token : tokens) {
    ids.push_back(id_of(token));
  }
  return ids;
}

Vocab Vocab::with_confidence_tokens() const {
  if (has_confidence_tokens()) {
    throw TokensPresentError("vocabulary already contains confidence tokens");
  }
  std::vector<std::string> tokens = tokens_;
  tokens.push_back(annotator::kUnconfidentToken);
  tokens.push_back(annotator::kConfidentToken);
  return from_tokens(std::move(tokens));
}

// ---------------------------------------------------------------------------
// Model init / confidence-token surgery

TinyModel TinyModel::init(Vocab vocab, int width, int max_seq_len, int n_blocks,
                          RngSeed seed, double init_std) {
  if (vocab.size() == 0 || width <= 0 || max_seq_len <= 0 || n_blocks <= 0) {
    throw std::invalid_argument("TinyModel::init: dimensions must be positive");
  }
  TinyModel model;
  model.vocab = std::move(vocab);
  model.width = width;
  model.max_seq_len = max_seq_len;
  model.n_blocks = n_blocks;
  const Layout layout = model.layout();
  model.params.assign(layout.total(), 0.0);

  Rng rng(seed);
  for (double& p : model.params) {
    p = rng.next_normal() * init_std;
  }
  // Biases start at zero.
  for (int b = 0; b < n_blocks; ++b) {
    std::fill_n(model.params.begin() + layout.b1(b), layout.hidden, 0.0);
    std::fill_n(model.params.begin() + layout.b2(b), layout.width, 0.0);
  }
  return model;
}

TinyModel add_confidence_tokens(const TinyModel& model) {
  const Layout old_layout = model.layout();
  const int old_vocab = old_layout.vocab_size;
  const int d = model.width;

  TinyModel grown;
  grown.vocab = model.vocab.with_confidence_tokens();
  grown.width = model.width;
  grown.max_seq_len = model.max_seq_len;
  grown.n_blocks = model.n_blocks;
  const Layout new_layout = grown.layout();
  grown.params.assign(new_layout.total(), 0.0);

  // Existing embedding rows copy bit-exactly; the two new rows take the
  // column means of the original table.
  std::copy_n(model.params.begin(), static_cast<std::size_t>(old_vocab) * d,
              grown.params.begin());
  std::vector<double> mean(d, 0.0);
  for (int v = 0; v < old_vocab; ++v) {
    for (int c = 0; c < d; ++c) {
      mean[c] += model.params[static_cast<std::size_t>(v) * d + c];
    }
  }
  for (int c = 0; c < d; ++c) {
    mean[c] /= static_cast<double>(old_vocab);
  }
  for (int row = old_vocab; row < old_vocab + 2; ++row) {
    std::copy(mean.begin(), mean.end(),
              grown.params.begin() + static_cast<std::size_t>(row) * d);
  }
  // Positions and block parameters are unchanged.
  std::copy(model.params.begin() + old_layout.pos(), model.params.end(),
            grown.params.begin() + new_layout.pos());
  return grown;
}

// ---------------------------------------------------------------------------
// Forward pass

namespace {

struct BlockCache {
  std::vector<double> x_in;  // n*d, block input
  std::vector<double> q, k, v;
  std::vector<double> attn;  // n*n, row i holds weights over j <= i
  std::vector<double> u;     // n*d, attention mixture
  std::vector<double> p;     // n*d, post-attention residual
  std::vector<double> h;     // n*H, tanh activations
  std::vector<double> x_out; // n*d
};

struct ForwardCache {
  int n{0};
  std::vector<double> x0;  // n*d, embedding + position
  std::vector<BlockCache> blocks;
  const std::vector<double>& final_x() const {
    return blocks.empty() ? x0 : blocks.back().x_out;
  }
};

void check_tokens(const TinyModel& model, std::span<const int> ids) {
  const int vocab = model.vocab.size();
  for (int id : ids) {
    if (id < 0 || id >= vocab) {
      throw OutOfVocabError("token id " + std::to_string(id) +
                            " outside vocabulary of size " + std::to_string(vocab));
    }
  }
  if (static_cast<int>(ids.size()) > model.max_seq_len) {
    throw std::invalid_argument("sequence length " + std::to_string(ids.size()) +
                                " exceeds max_seq_len " +
                                std::to_string(model.max_seq_len));
  }
}

// y[r] = sum_c W[r*cols + c] * x[c]
void mat_vec(const double* w, const double* x, double* y, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    double acc = 0.0;
    const double* row = w + static_cast<std::size_t>(r) * cols;
    for (int c = 0; c < cols; ++c) {
      acc += row[c] * x[c];
    }
    y[r] = acc;
  }
}

ForwardCache forward(const TinyModel& model, std::span<const int> ids) {
  check_tokens(model, ids);
  const Layout layout = model.layout();
  const int n = static_cast<int>(ids.size());
  const int d = layout.width;
  const int H = layout.hidden;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const double* params = model.params.data();

  ForwardCache cache;
  cache.n = n;
  cache.x0.resize(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    const double* embed = params + layout.embed() + static_cast<std::size_t>(ids[i]) * d;
    const double* pos = params + layout.pos() + static_cast<std::size_t>(i) * d;
    double* out = cache.x0.data() + static_cast<std::size_t>(i) * d;
    for (int c = 0; c < d; ++c) {
      out[c] = embed[c] + pos[c];
    }
  }

  const std::vector<double>* x_prev = &cache.x0;
  cache.blocks.resize(model.n_blocks);
  for (int b = 0; b < model.n_blocks; ++b) {
    BlockCache& block = cache.blocks[b];
    block.x_in = *x_prev;
    block.q.resize(static_cast<std::size_t>(n) * d);
    block.k.resize(static_cast<std::size_t>(n) * d);
    block.v.resize(static_cast<std::size_t>(n) * d);
    block.attn.assign(static_cast<std::size_t>(n) * n, 0.0);
    block.u.resize(static_cast<std::size_t>(n) * d);
    block.p.resize(static_cast<std::size_t>(n) * d);
    block.h.resize(static_cast<std::size_t>(n) * H);
    block.x_out.resize(static_cast<std::size_t>(n) * d);

    const double* wq = params + layout.wq(b);
    const double* wk = params + layout.wk(b);
    const double* wv = params + layout.wv(b);
    const double* wo = params + layout.wo(b);
    const double* w1 = params + layout.w1(b);
    const double* b1 = params + layout.b1(b);
    const double* w2 = params + layout.w2(b);
    const double* b2 = params + layout.b2(b);

    for (int i = 0; i < n; ++i) {
      const double* x = block.x_in.data() + static_cast<std::size_t>(i) * d;
      mat_vec(wq, x, block.q.data() + static_cast<std::size_t>(i) * d, d, d);
      mat_vec(wk, x, block.k.data() + static_cast<std::size_t>(i) * d, d, d);
      mat_vec(wv, x, block.v.data() + static_cast<std::size_t>(i) * d, d, d);
    }

    std::vector<double> scores;
    for (int i = 0; i < n; ++i) {
      const double* q = block.q.data() + static_cast<std::size_t>(i) * d;
      scores.assign(i + 1, 0.0);
      double max_score = -std::numeric_limits<double>::infinity();
      for (int j = 0; j <= i; ++j) {
        const double* k = block.k.data() + static_cast<std::size_t>(j) * d;
        double dot = 0.0;
        for (int c = 0; c < d; ++c) {
          dot += q[c] * k[c];
        }
        scores[j] = dot * scale;
        max_score = std::max(max_score, scores[j]);
      }
      double denom = 0.0;
      for (int j = 0; j <= i; ++j) {
        scores[j] = std::exp(scores[j] - max_score);
        denom += scores[j];
      }
      double* attn_row = block.attn.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j <= i; ++j) {
        attn_row[j] = scores[j] / denom;
      }
      double* u = block.u.data() + static_cast<std::size_t>(i) * d;
      std::fill_n(u, d, 0.0);
      for (int j = 0; j <= i; ++j) {
        const double* v = block.v.data() + static_cast<std::size_t>(j) * d;
        const double a = attn_row[j];
        for (int c = 0; c < d; ++c) {
          u[c] += a * v[c];
        }
      }
    }

    std::vector<double> tmp(std::max(d, H));
    for (int i = 0; i < n; ++i) {
      const double* x = block.x_in.data() + static_cast<std::size_t>(i) * d;
      const double* u = block.u.data() + static_cast<std::size_t>(i) * d;
      double* p = block.p.data() + static_cast<std::size_t>(i) * d;
      mat_vec(wo, u, tmp.data(), d, d);
      for (int c = 0; c < d; ++c) {
        p[c] = x[c] + tmp[c];
      }

      double* h = block.h.data() + static_cast<std::size_t>(i) * H;
      mat_vec(w1, p, h, H, d);
      for (int c = 0; c < H; ++c) {
        h[c] = std::tanh(h[c] + b1[c]);
      }
      double* out = block.x_out.data() + static_cast<std::size_t>(i) * d;
      mat_vec(w2, h, out, d, H);
      for (int c = 0; c < d; ++c) {
        out[c] += b2[c] + p[c];
      }
    }
    x_prev = &block.x_out;
  }
  return cache;
}

std::vector<double> logits_at(const TinyModel& model, const ForwardCache& cache,
                              int position) {
  const Layout layout = model.layout();
  const int d = layout.width;
  const int vocab = layout.vocab_size;
  const double* x = cache.final_x().data() + static_cast<std::size_t>(position) * d;
  const double* embed = model.params.data() + layout.embed();
  std::vector<double> logits(vocab);
  for (int t = 0; t < vocab; ++t) {
    const double* row = embed + static_cast<std::size_t>(t) * d;
    double acc = 0.0;
    for (int c = 0; c < d; ++c) {
      acc += x[c] * row[c];
    }
    logits[t] = acc;
  }
  return logits;
}

void softmax_in_place(std::vector<double>& values) {
  const double max_value = *std::max_element(values.begin(), values.end());
  double denom = 0.0;
  for (double& value : values) {
    value = std::exp(value - max_value);
    denom += value;
  }
  for (double& value : values) {
    value /= denom;
  }
}

int argmax_lowest(std::span<const double> values) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(values.size()); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

void check_sequence(const TinyModel& model, const MaskedSequence& sequence) {
  if (sequence.tokens.size() < 2) {
    throw std::invalid_argument("masked sequence needs at least two tokens");
  }
  if (sequence.weights.size() != sequence.tokens.size() - 1) {
    throw std::invalid_argument("masked sequence weights must cover every target");
  }
  check_tokens(model, sequence.tokens);
  double sum = 0.0;
  for (double w : sequence.weights) {
    if (w < 0.0) {
      throw std::invalid_argument("masked sequence weights must be nonnegative");
    }
    sum += w;
  }
  if (sum == 0.0) {
    throw std::invalid_argument("masked sequence has all-zero weights");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Loss and gradients

MaskedSequence to_masked_sequence(const Vocab& vocab,
                                  const annotator::AugmentedExample& example) {
  annotator::validate(example);
  MaskedSequence sequence;
  sequence.tokens = vocab.encode(example.prompt);
  if (sequence.tokens.empty()) {
    throw std::invalid_argument("augmented example '" + example.query_id +
                                "' has an empty prompt");
  }
  const std::size_t prompt_len = sequence.tokens.size();
  const auto completion = vocab.encode_tokens(example.completion_tokens);
  sequence.tokens.insert(sequence.tokens.end(), completion.begin(), completion.end());
  sequence.weights.assign(sequence.tokens.size() - 1, 0.0);
  for (std::size_t j = 0; j < completion.size(); ++j) {
    sequence.weights[prompt_len - 1 + j] = static_cast<double>(example.loss_weights[j]);
  }
  return sequence;
}

double masked_loss_from_logits(const std::vector<std::vector<double>>& logit_rows,
                               std::span<const int> targets,
                               std::span<const double> weights) {
  if (logit_rows.size() != targets.size() || targets.size() != weights.size()) {
    throw std::invalid_argument("masked_loss_from_logits: length mismatch");
  }
  double loss = 0.0;
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < logit_rows.size(); ++i) {
    weight_sum += weights[i];
    if (weights[i] == 0.0) continue;
    std::vector<double> probs = logit_rows[i];
    softmax_in_place(probs);
    loss += weights[i] * -std::log(probs[targets[i]]);
  }
  if (weight_sum == 0.0) {
    throw std::invalid_argument("masked_loss_from_logits: all-zero weights");
  }
  return loss / weight_sum;
}

namespace {

// Shared by masked_loss and masked_loss_value; gradients are optional.
double loss_impl(const TinyModel& model, const MaskedSequence& sequence,
                 std::vector<double>* gradients) {
  check_sequence(model, sequence);
  const Layout layout = model.layout();
  const int n = static_cast<int>(sequence.tokens.size());
  const int d = layout.width;
  const int H = layout.hidden;
  const int vocab = layout.vocab_size;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  const double* params = model.params.data();

  const ForwardCache cache = forward(model, sequence.tokens);

  double weight_sum = 0.0;
  for (double w : sequence.weights) weight_sum += w;

  double loss = 0.0;
  // dx holds the gradient w.r.t. the final representation rows.
  std::vector<double> dx;
  if (gradients != nullptr) {
    gradients->assign(layout.total(), 0.0);
    dx.assign(static_cast<std::size_t>(n) * d, 0.0);
  }
  const double* embed = params + layout.embed();
  for (int i = 0; i + 1 < n; ++i) {
    const double w = sequence.weights[i];
    if (w == 0.0) continue;
    const int target = sequence.tokens[i + 1];
    std::vector<double> probs = logits_at(model, cache, i);
    softmax_in_place(probs);
    loss += w * -std::log(probs[target]);
    if (gradients == nullptr) continue;

    const double* x = cache.final_x().data() + static_cast<std::size_t>(i) * d;
    double* dxi = dx.data() + static_cast<std::size_t>(i) * d;
    double* dembed = gradients->data() + layout.embed();
    for (int t = 0; t < vocab; ++t) {
      const double g = (probs[t] - (t == target ? 1.0 : 0.0)) * w / weight_sum;
      if (g == 0.0) continue;
      const double* row = embed + static_cast<std::size_t>(t) * d;
      double* drow = dembed + static_cast<std::size_t>(t) * d;
      for (int c = 0; c < d; ++c) {
        dxi[c] += g * row[c];
        drow[c] += g * x[c];
      }
    }
  }
  loss /= weight_sum;
  if (gradients == nullptr) {
    return loss;
  }

  // Backward through the blocks in reverse order.
  std::vector<double> dp(static_cast<std::size_t>(n) * d);
  std::vector<double> du(static_cast<std::size_t>(n) * d);
  std::vector<double> dq(static_cast<std::size_t>(n) * d);
  std::vector<double> dk(static_cast<std::size_t>(n) * d);
  std::vector<double> dv(static_cast<std::size_t>(n) * d);
  std::vector<double> dz(H);
  std::vector<double> da(n);
  for (int b = model.n_blocks - 1; b >= 0; --b) {
    const BlockCache& block = cache.blocks[b];
    const double* wo = params + layout.wo(b);
    const double* w1 = params + layout.w1(b);
    const double* w2 = params + layout.w2(b);
    double* dwq = gradients->data() + layout.wq(b);
    double* dwk = gradients->data() + layout.wk(b);
    double* dwv = gradients->data() + layout.wv(b);
    double* dwo = gradients->data() + layout.wo(b);
    double* dw1 = gradients->data() + layout.w1(b);
    double* db1 = gradients->data() + layout.b1(b);
    double* dw2 = gradients->data() + layout.w2(b);
    double* db2 = gradients->data() + layout.b2(b);

    // MLP: x_out = p + W2 tanh(W1 p + b1) + b2
    std::fill(dp.begin(), dp.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      const double* dxi = dx.data() + static_cast<std::size_t>(i) * d;
      const double* h = block.h.data() + static_cast<std::size_t>(i) * H;
      const double* p = block.p.data() + static_cast<std::size_t>(i) * d;
      double* dpi = dp.data() + static_cast<std::size_t>(i) * d;

      for (int c = 0; c < d; ++c) {
        dpi[c] += dxi[c];  // residual
        db2[c] += dxi[c];
      }
      std::fill(dz.begin(), dz.end(), 0.0);
      for (int r = 0; r < d; ++r) {
        const double g = dxi[r];
        if (g == 0.0) continue;
        const double* w2_row = w2 + static_cast<std::size_t>(r) * H;
        double* dw2_row = dw2 + static_cast<std::size_t>(r) * H;
        for (int c = 0; c < H; ++c) {
          dw2_row[c] += g * h[c];
          dz[c] += g * w2_row[c];
        }
      }
      for (int c = 0; c < H; ++c) {
        dz[c] *= 1.0 - h[c] * h[c];
        db1[c] += dz[c];
      }
      for (int r = 0; r < H; ++r) {
        const double g = dz[r];
        if (g == 0.0) continue;
        const double* w1_row = w1 + static_cast<std::size_t>(r) * d;
        double* dw1_row = dw1 + static_cast<std::size_t>(r) * d;
        for (int c = 0; c < d; ++c) {
          dw1_row[c] += g * p[c];
          dpi[c] += g * w1_row[c];
        }
      }
    }

    // Attention: p = x_in + Wo u
    std::fill(du.begin(), du.end(), 0.0);
    std::fill(dx.begin(), dx.end(), 0.0);  // becomes d(x_in)
    for (int i = 0; i < n; ++i) {
      const double* dpi = dp.data() + static_cast<std::size_t>(i) * d;
      const double* u = block.u.data() + static_cast<std::size_t>(i) * d;
      double* dxi = dx.data() + static_cast<std::size_t>(i) * d;
      double* dui = du.data() + static_cast<std::size_t>(i) * d;
      for (int c = 0; c < d; ++c) {
        dxi[c] += dpi[c];  // residual
      }
      for (int r = 0; r < d; ++r) {
        const double g = dpi[r];
        if (g == 0.0) continue;
        const double* wo_row = wo + static_cast<std::size_t>(r) * d;
        double* dwo_row = dwo + static_cast<std::size_t>(r) * d;
        for (int c = 0; c < d; ++c) {
          dwo_row[c] += g * u[c];
          dui[c] += g * wo_row[c];
        }
      }
    }

    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      const double* attn_row = block.attn.data() + static_cast<std::size_t>(i) * n;
      const double* dui = du.data() + static_cast<std::size_t>(i) * d;
      // da_ij = du_i . v_j ; dv_j += a_ij du_i
      double inner = 0.0;
      for (int j = 0; j <= i; ++j) {
        const double* v = block.v.data() + static_cast<std::size_t>(j) * d;
        double* dvj = dv.data() + static_cast<std::size_t>(j) * d;
        double dot = 0.0;
        const double a = attn_row[j];
        for (int c = 0; c < d; ++c) {
          dot += dui[c] * v[c];
          dvj[c] += a * dui[c];
        }
        da[j] = dot;
        inner += a * dot;
      }
      // softmax backward, then the 1/sqrt(d) score scale
      const double* q = block.q.data() + static_cast<std::size_t>(i) * d;
      double* dqi = dq.data() + static_cast<std::size_t>(i) * d;
      for (int j = 0; j <= i; ++j) {
        const double ds = attn_row[j] * (da[j] - inner) * scale;
        if (ds == 0.0) continue;
        const double* k = block.k.data() + static_cast<std::size_t>(j) * d;
        double* dkj = dk.data() + static_cast<std::size_t>(j) * d;
        for (int c = 0; c < d; ++c) {
          dqi[c] += ds * k[c];
          dkj[c] += ds * q[c];
        }
      }
    }

    // Projections back to x_in.
    const double* wq = params + layout.wq(b);
    const double* wk = params + layout.wk(b);
    const double* wv = params + layout.wv(b);
    for (int i = 0; i < n; ++i) {
      const double* x = block.x_in.data() + static_cast<std::size_t>(i) * d;
      double* dxi = dx.data() + static_cast<std::size_t>(i) * d;
      const double* dqi = dq.data() + static_cast<std::size_t>(i) * d;
      const double* dki = dk.data() + static_cast<std::size_t>(i) * d;
      const double* dvi = dv.data() + static_cast<std::size_t>(i) * d;
      for (int r = 0; r < d; ++r) {
        const double gq = dqi[r];
        const double gk = dki[r];
        const double gv = dvi[r];
        const double* wq_row = wq + static_cast<std::size_t>(r) * d;
        const double* wk_row = wk + static_cast<std::size_t>(r) * d;
        const double* wv_row = wv + static_cast<std::size_t>(r) * d;
        double* dwq_row = dwq + static_cast<std::size_t>(r) * d;
        double* dwk_row = dwk + static_cast<std::size_t>(r) * d;
        double* dwv_row = dwv + static_cast<std::size_t>(r) * d;
        for (int c = 0; c < d; ++c) {
          dwq_row[c] += gq * x[c];
          dwk_row[c] += gk * x[c];
          dwv_row[c] += gv * x[c];
          dxi[c] += gq * wq_row[c] + gk * wk_row[c] + gv * wv_row[c];
        }
      }
    }
  }

  // Embedding and position gradients from x0.
  double* dembed = gradients->data() + layout.embed();
  double* dpos = gradients->data() + layout.pos();
  for (int i = 0; i < n; ++i) {
    const double* dxi = dx.data() + static_cast<std::size_t>(i) * d;
    double* drow = dembed + static_cast<std::size_t>(sequence.tokens[i]) * d;
    double* dposi = dpos + static_cast<std::size_t>(i) * d;
    for (int c = 0; c < d; ++c) {
      drow[c] += dxi[c];
      dposi[c] += dxi[c];
    }
  }
  return loss;
}

}  // namespace

LossResult masked_loss(const TinyModel& model, const MaskedSequence& sequence) {
  LossResult result;
  result.loss = loss_impl(model, sequence, &result.gradients);
  return result;
}

LossResult masked_loss(const TinyModel& model,
                       const annotator::AugmentedExample& example) {
  return masked_loss(model, to_masked_sequence(model.vocab, example));
}

double masked_loss_value(const TinyModel& model, const MaskedSequence& sequence) {
  return loss_impl(model, sequence, nullptr);
}

// ---------------------------------------------------------------------------
// Training

TinyModel train_sequences(TinyModel model, std::span<const MaskedSequence> sequences,
                          const TrainConfig& config) {
  if (sequences.empty()) {
    throw std::invalid_argument("train: no examples");
  }
  if (config.epochs < 1 || config.batch_size < 1) {
    throw std::invalid_argument("train: epochs and batch_size must be >= 1");
  }
  if (!std::isfinite(config.learning_rate) || config.learning_rate < 0.0) {
    throw std::invalid_argument("train: learning rate must be finite and nonnegative");
  }
  if (config.grad_check_every.has_value() && *config.grad_check_every < 1) {
    throw std::invalid_argument("train: grad_check_every must be >= 1");
  }
  for (const auto& sequence : sequences) {
    check_sequence(model, sequence);
  }

  const Layout layout = model.layout();
  Rng rng(config.seed);
  std::vector<std::size_t> order(sequences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  // Adam on the mean masked loss. Plain SGD cannot form the attention
  // circuits these models need at this scale.
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.99;
  constexpr double kAdamEps = 1e-8;
  std::vector<double> first_moment(layout.total(), 0.0);
  std::vector<double> second_moment(layout.total(), 0.0);

  std::vector<double> batch_grad(layout.total());
  std::vector<double> example_grad;
  std::size_t step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const auto batch_n = static_cast<double>(stop - start);
      std::fill(batch_grad.begin(), batch_grad.end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t pos = start; pos < stop; ++pos) {
        const MaskedSequence& sequence = sequences[order[pos]];
        const double loss = loss_impl(model, sequence, &example_grad);
        batch_loss += loss;
        for (std::size_t p = 0; p < batch_grad.size(); ++p) {
          batch_grad[p] += example_grad[p] / batch_n;
        }
      }
      batch_loss /= batch_n;
      if (!std::isfinite(batch_loss)) {
        throw DivergenceError("training diverged: non-finite loss at epoch " +
                              std::to_string(epoch) + ", step " + std::to_string(step));
      }
      ++step;
      const double bias1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double bias2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (std::size_t p = 0; p < model.params.size(); ++p) {
        const double g = batch_grad[p];
        first_moment[p] = kBeta1 * first_moment[p] + (1.0 - kBeta1) * g;
        second_moment[p] = kBeta2 * second_moment[p] + (1.0 - kBeta2) * g * g;
        const double m_hat = first_moment[p] / bias1;
        const double v_hat = second_moment[p] / bias2;
        model.params[p] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + kAdamEps);
      }
      if (config.grad_check_every.has_value() &&
          step % static_cast<std::size_t>(*config.grad_check_every) == 0) {
        const double err = grad_check(model, sequences[order[start]], 1e-4);
        if (err > 1e-3) {
          throw DivergenceError("training gradient check failed at step " +
                                std::to_string(step) + ": max relative error " +
                                std::to_string(err));
        }
      }
    }
  }
  return model;
}

TinyModel train(TinyModel model, std::span<const annotator::AugmentedExample> examples,
                const TrainConfig& config) {
  std::vector<MaskedSequence> sequences;
  sequences.reserve(examples.size());
  for (const auto& example : examples) {
    sequences.push_back(to_masked_sequence(model.vocab, example));
  }
  return train_sequences(std::move(model), sequences, config);
}

// ---------------------------------------------------------------------------
// Decoding and confidence readout

std::vector<double> next_token_logits(const TinyModel& model,
                                      std::span<const int> ids) {
  if (ids.empty()) {
    throw std::invalid_argument("next_token_logits: empty prefix");
  }
  const ForwardCache cache = forward(model, ids);
  return logits_at(model, cache, cache.n - 1);
}

std::vector<std::vector<double>> sequence_probs(const TinyModel& model,
                                                std::span<const int> ids) {
  const ForwardCache cache = forward(model, ids);
  std::vector<std::vector<double>> rows;
  rows.reserve(cache.n);
  for (int i = 0; i < cache.n; ++i) {
    std::vector<double> probs = logits_at(model, cache, i);
    softmax_in_place(probs);
    rows.push_back(std::move(probs));
  }
  return rows;
}

GreedyResult predict_greedy(const TinyModel& model, std::span<const int> prompt,
                            int max_len) {
  if (prompt.empty()) {
    throw std::invalid_argument("predict_greedy: empty prompt");
  }
  check_tokens(model, prompt);
  if (max_len < 0) {
    throw std::invalid_argument("predict_greedy: max_len must be nonnegative");
  }
  GreedyResult result;
  std::vector<int> ids(prompt.begin(), prompt.end());
  while (static_cast<int>(result.tokens.size()) < max_len &&
         static_cast<int>(ids.size()) < model.max_seq_len) {
    std::vector<double> probs = next_token_logits(model, ids);
    softmax_in_place(probs);
    const int next = argmax_lowest(probs);
    if (next == model.vocab.end_id()) {
      result.stop = StopReason::end_marker;
      return result;
    }
    if (next == model.vocab.un_id() || next == model.vocab.cn_id()) {
      result.stop = StopReason::confidence_token;
      return result;
    }
    result.tokens.push_back(next);
    result.token_probs.push_back(probs[next]);
    ids.push_back(next);
  }
  result.stop = StopReason::length;
  return result;
}

ConfidencePair confidence_probs(const TinyModel& model, std::span<const int> prompt,
                                std::span<const int> answer) {
  if (!model.vocab.has_confidence_tokens()) {
    throw OutOfVocabError("confidence_probs: vocabulary lacks confidence tokens");
  }
  if (prompt.empty()) {
    throw std::invalid_argument("confidence_probs: empty prompt");
  }
  std::vector<int> ids(prompt.begin(), prompt.end());
  ids.insert(ids.end(), answer.begin(), answer.end());
  std::vector<double> probs = next_token_logits(model, ids);
  softmax_in_place(probs);
  return {probs[model.vocab.un_id()], probs[model.vocab.cn_id()]};
}

// ---------------------------------------------------------------------------
// Gradient check

namespace {

// Value-only forward in a configurable scalar type. The finite-difference
// probe runs it in long double: with double evaluations the subtraction
// noise (~1e-16/eps) swamps gradients near the absolute-comparison cutoff.
template <typename Scalar>
Scalar loss_value_precise(const std::vector<Scalar>& params, const Layout& layout,
                          const MaskedSequence& sequence) {
  const int n = static_cast<int>(sequence.tokens.size());
  const int d = layout.width;
  const int H = layout.hidden;
  const int vocab = layout.vocab_size;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(d));

  std::vector<Scalar> x(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    const Scalar* embed =
        params.data() + layout.embed() + static_cast<std::size_t>(sequence.tokens[i]) * d;
    const Scalar* pos = params.data() + layout.pos() + static_cast<std::size_t>(i) * d;
    for (int c = 0; c < d; ++c) {
      x[static_cast<std::size_t>(i) * d + c] = embed[c] + pos[c];
    }
  }

  std::vector<Scalar> q(x.size()), k(x.size()), v(x.size()), u(x.size());
  std::vector<Scalar> h(static_cast<std::size_t>(n) * H);
  std::vector<Scalar> scores;
  for (int b = 0; b < layout.n_blocks; ++b) {
    const Scalar* wq = params.data() + layout.wq(b);
    const Scalar* wk = params.data() + layout.wk(b);
    const Scalar* wv = params.data() + layout.wv(b);
    const Scalar* wo = params.data() + layout.wo(b);
    const Scalar* w1 = params.data() + layout.w1(b);
    const Scalar* b1 = params.data() + layout.b1(b);
    const Scalar* w2 = params.data() + layout.w2(b);
    const Scalar* b2 = params.data() + layout.b2(b);

    for (int i = 0; i < n; ++i) {
      const Scalar* xi = x.data() + static_cast<std::size_t>(i) * d;
      for (int r = 0; r < d; ++r) {
        Scalar aq = 0, ak = 0, av = 0;
        for (int c = 0; c < d; ++c) {
          aq += wq[static_cast<std::size_t>(r) * d + c] * xi[c];
          ak += wk[static_cast<std::size_t>(r) * d + c] * xi[c];
          av += wv[static_cast<std::size_t>(r) * d + c] * xi[c];
        }
        q[static_cast<std::size_t>(i) * d + r] = aq;
        k[static_cast<std::size_t>(i) * d + r] = ak;
        v[static_cast<std::size_t>(i) * d + r] = av;
      }
    }
    for (int i = 0; i < n; ++i) {
      const Scalar* qi = q.data() + static_cast<std::size_t>(i) * d;
      scores.assign(i + 1, Scalar(0));
      Scalar max_score = -std::numeric_limits<Scalar>::infinity();
      for (int j = 0; j <= i; ++j) {
        const Scalar* kj = k.data() + static_cast<std::size_t>(j) * d;
        Scalar dot = 0;
        for (int c = 0; c < d; ++c) dot += qi[c] * kj[c];
        scores[j] = dot * scale;
        max_score = std::max(max_score, scores[j]);
      }
      Scalar denom = 0;
      for (int j = 0; j <= i; ++j) {
        scores[j] = std::exp(scores[j] - max_score);
        denom += scores[j];
      }
      Scalar* ui = u.data() + static_cast<std::size_t>(i) * d;
      std::fill_n(ui, d, Scalar(0));
      for (int j = 0; j <= i; ++j) {
        const Scalar a = scores[j] / denom;
        const Scalar* vj = v.data() + static_cast<std::size_t>(j) * d;
        for (int c = 0; c < d; ++c) ui[c] += a * vj[c];
      }
    }
    for (int i = 0; i < n; ++i) {
      Scalar* xi = x.data() + static_cast<std::size_t>(i) * d;
      const Scalar* ui = u.data() + static_cast<std::size_t>(i) * d;
      std::vector<Scalar> p(d);
      for (int r = 0; r < d; ++r) {
        Scalar acc = 0;
        for (int c = 0; c < d; ++c) acc += wo[static_cast<std::size_t>(r) * d + c] * ui[c];
        p[r] = xi[r] + acc;
      }
      Scalar* hi = h.data() + static_cast<std::size_t>(i) * H;
      for (int r = 0; r < H; ++r) {
        Scalar acc = b1[r];
        for (int c = 0; c < d; ++c) acc += w1[static_cast<std::size_t>(r) * d + c] * p[c];
        hi[r] = std::tanh(acc);
      }
      for (int r = 0; r < d; ++r) {
        Scalar acc = b2[r];
        for (int c = 0; c < H; ++c) acc += w2[static_cast<std::size_t>(r) * H + c] * hi[c];
        xi[r] = p[r] + acc;
      }
    }
  }

  Scalar loss = 0;
  Scalar weight_sum = 0;
  std::vector<Scalar> logits(vocab);
  for (int i = 0; i + 1 < n; ++i) {
    weight_sum += Scalar(sequence.weights[i]);
    if (sequence.weights[i] == 0.0) continue;
    const Scalar* xi = x.data() + static_cast<std::size_t>(i) * d;
    Scalar max_logit = -std::numeric_limits<Scalar>::infinity();
    for (int t = 0; t < vocab; ++t) {
      const Scalar* row = params.data() + layout.embed() + static_cast<std::size_t>(t) * d;
      Scalar acc = 0;
      for (int c = 0; c < d; ++c) acc += xi[c] * row[c];
      logits[t] = acc;
      max_logit = std::max(max_logit, acc);
    }
    Scalar denom = 0;
    for (int t = 0; t < vocab; ++t) denom += std::exp(logits[t] - max_logit);
    const Scalar log_prob =
        logits[sequence.tokens[i + 1]] - max_logit - std::log(denom);
    loss += Scalar(sequence.weights[i]) * -log_prob;
  }
  return loss / weight_sum;
}

}  // namespace

double grad_check(const TinyModel& model, const MaskedSequence& sequence,
                  double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2)) {
    throw std::invalid_argument("grad_check: epsilon must lie in (0, 1e-2]");
  }
  const LossResult analytic = masked_loss(model, sequence);
  const Layout layout = model.layout();
  std::vector<long double> probe(model.params.begin(), model.params.end());
  const long double eps = epsilon;
  double max_error = 0.0;
  for (std::size_t p = 0; p < probe.size(); ++p) {
    const long double saved = probe[p];
    probe[p] = saved + eps;
    const long double up = loss_value_precise(probe, layout, sequence);
    probe[p] = saved - eps;
    const long double down = loss_value_precise(probe, layout, sequence);
    probe[p] = saved;
    const double fd = static_cast<double>((up - down) / (2.0L * eps));
    const double g = analytic.gradients[p];
    const double err =
        std::abs(g) < 1e-8 ? std::abs(fd - g) : std::abs(fd - g) / std::abs(g);
    max_error = std::max(max_error, err);
  }
  return max_error;
}

double grad_check(const TinyModel& model, const annotator::AugmentedExample& example,
                  double epsilon) {
  return grad_check(model, to_masked_sequence(model.vocab, example), epsilon);
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const TinyModel& model, const std::string& path) {
  nlohmann::ordered_json obj;
  obj["format_version"] = 1;
  obj["width"] = model.width;
  obj["max_seq_len"] = model.max_seq_len;
  obj["n_blocks"] = model.n_blocks;
  obj["vocab"] = {{"tokens", model.vocab.tokens()},
                  {"un_id", model.vocab.un_id()},
                  {"cn_id", model.vocab.cn_id()}};
  obj["params"] = model.params;
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot write " + path);
  }
  out << obj.dump() << '\n';
}

TinyModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path);
  }
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& err) {
    throw SchemaError(0, std::string("bad checkpoint: ") + err.what());
  }
  if (!obj.contains("format_version") || obj["format_version"].get<int>() != 1) {
    throw SchemaError(0, "bad checkpoint: unsupported format_version");
  }
  TinyModel model;
  try {
    model.width = obj.at("width").get<int>();
    model.max_seq_len = obj.at("max_seq_len").get<int>();
    model.n_blocks = obj.at("n_blocks").get<int>();
    model.vocab =
        Vocab::from_tokens(obj.at("vocab").at("tokens").get<std::vector<std::string>>());
    model.params = obj.at("params").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& err) {
    throw SchemaError(0, std::string("bad checkpoint: ") + err.what());
  }
  const auto expected_un = obj.at("vocab").at("un_id").get<int>();
  const auto expected_cn = obj.at("vocab").at("cn_id").get<int>();
  if (model.vocab.un_id() != expected_un || model.vocab.cn_id() != expected_cn) {
    throw SchemaError(0, "bad checkpoint: confidence token ids do not match tokens");
  }
  if (model.params.size() != model.layout().total()) {
    throw SchemaError(0, "bad checkpoint: parameter count does not match dimensions");
  }
  return model;
}

}  // namespace confroute::tinylm
