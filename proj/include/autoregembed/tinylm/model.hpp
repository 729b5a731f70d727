#pragma once

// Small decoder-only causal transformer (pre-LN, learned absolute positions,
// GELU MLP, untied output head) that accepts a soft prefix of input vectors.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "autoregembed/numerics/ops.hpp"
#include "autoregembed/numerics/tensor.hpp"

namespace are {

struct CapacityError : std::length_error {
  using std::length_error::length_error;
};

struct VocabularyError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct LmConfig {
  int vocab_size = 64;
  int dim = 64;
  int n_layers = 2;
  int n_heads = 4;
  int max_seq = 48;
  std::uint64_t seed = 0;
  /// Rows of the compressed-token table; 0 for a model that never compresses.
  int n_compressed = 5;
  double init_std = 0.02;

  void validate() const {
    if (vocab_size < 2) throw ConfigurationError("vocab_size must be >= 2");
    if (dim <= 0 || n_layers < 1 || n_heads < 1) throw ConfigurationError("dim, n_layers, n_heads must be positive");
    if (dim % n_heads != 0) {
      throw ConfigurationError("n_heads (" + std::to_string(n_heads) + ") must divide dim (" +
                               std::to_string(dim) + ")");
    }
    if (max_seq < 2) throw ConfigurationError("max_seq must be >= 2");
    if (n_compressed < 0) throw ConfigurationError("n_compressed must be >= 0");
    if (!(init_std > 0)) throw ConfigurationError("init_std must be positive");
  }

  bool operator==(const LmConfig&) const = default;
};

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
class LmModel {
 public:
  using Scalar = T;

  explicit LmModel(LmConfig config) : config_(std::move(config)) {
    config_.validate();
    std::mt19937_64 rng(config_.seed);
    std::normal_distribution<double> normal(0.0, config_.init_std);
    const int d = config_.dim;
    auto gaussian = [&](const std::string& name, int rows, int cols) {
      Matrix<T> m(rows, cols);
      for (std::ptrdiff_t i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(normal(rng));
      add_param(name, std::move(m));
    };
    auto constant = [&](const std::string& name, int cols, T v) {
      add_param(name, Matrix<T>::Constant(1, cols, v));
    };

    gaussian("tok_emb", config_.vocab_size, d);
    gaussian("pos_emb", config_.max_seq, d);
    if (config_.n_compressed > 0) gaussian("compressed", config_.n_compressed, d);
    for (int l = 0; l < config_.n_layers; ++l) {
      const std::string p = "h" + std::to_string(l) + ".";
      constant(p + "ln1.g", d, T(1));
      constant(p + "ln1.b", d, T(0));
      for (const char* w : {"q", "k", "v", "o"}) {
        gaussian(p + "attn.w" + w, d, d);
        constant(p + "attn.b" + w, d, T(0));
      }
      constant(p + "ln2.g", d, T(1));
      constant(p + "ln2.b", d, T(0));
      gaussian(p + "mlp.w1", d, 4 * d);
      constant(p + "mlp.b1", 4 * d, T(0));
      gaussian(p + "mlp.w2", 4 * d, d);
      constant(p + "mlp.b2", d, T(0));
    }
    constant("ln_f.g", d, T(1));
    constant("ln_f.b", d, T(0));
    gaussian("head.w", d, config_.vocab_size);
  }

  const LmConfig& config() const { return config_; }
  bool frozen() const { return frozen_; }

  /// Stops gradients into every parameter. Irreversible for this instance.
  void freeze() {
    frozen_ = true;
    for (auto& p : params_) p.tensor.set_requires_grad(false);
  }

  std::vector<NamedParameter<T>>& named_parameters() { return params_; }
  const std::vector<NamedParameter<T>>& named_parameters() const { return params_; }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p.tensor);
    return out;
  }

  const Tensor<T>& param(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.tensor;
    throw ArgumentError("no parameter named '" + name + "'");
  }

  /// Independent deep copy with fresh graph leaves. Frozen state is kept.
  LmModel clone() const { return cast<T>(); }

  /// Deep copy converted to another scalar type.
  template <typename U>
  LmModel<U> cast() const {
    LmModel<U> out(config_, typename LmModel<U>::NoInit{});
    for (const auto& p : params_) {
      Matrix<U> m = p.tensor.value().template cast<U>();
      out.add_param(p.name, std::move(m));
    }
    if (frozen_) out.freeze();
    return out;
  }

  /// Token-embedding lookup (no positions).
  Tensor<T> embed_tokens(std::span<const int> tokens) const {
    for (int id : tokens) {
      if (id < 0 || id >= config_.vocab_size) {
        throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(config_.vocab_size));
      }
    }
    return gather_rows(param("tok_emb"), tokens);
  }

  /// Final-layer (post final-norm) hidden states for a sequence of input
  /// vectors, one per position starting at position 0.
  Tensor<T> hidden_states(const Tensor<T>& inputs) const {
    const auto len = inputs.rows();
    if (len > config_.max_seq) {
      throw CapacityError("sequence of " + std::to_string(len) + " positions exceeds max_seq " +
                          std::to_string(config_.max_seq));
    }
    if (inputs.cols() != config_.dim) {
      throw DimensionError("input width " + std::to_string(inputs.cols()) + " != model dim " +
                           std::to_string(config_.dim));
    }
    Tensor<T> x = add(inputs, slice_rows(param("pos_emb"), 0, len));
    std::size_t at = first_block_index();
    for (int l = 0; l < config_.n_layers; ++l) {
      const auto* b = &params_[at];
      Tensor<T> h = layer_norm(x, b[0].tensor, b[1].tensor);
      Tensor<T> q = linear(h, b[2].tensor, b[3].tensor);
      Tensor<T> k = linear(h, b[4].tensor, b[5].tensor);
      Tensor<T> v = linear(h, b[6].tensor, b[7].tensor);
      Tensor<T> a = causal_attention(q, k, v, config_.n_heads);
      x = add(x, linear(a, b[8].tensor, b[9].tensor));
      h = layer_norm(x, b[10].tensor, b[11].tensor);
      h = gelu(linear(h, b[12].tensor, b[13].tensor));
      x = add(x, linear(h, b[14].tensor, b[15].tensor));
      at += kParamsPerBlock;
    }
    return layer_norm(x, params_[at].tensor, params_[at + 1].tensor);
  }

  /// Input rows for an optional soft prefix followed by tokens.
  Tensor<T> input_rows(const std::optional<Tensor<T>>& prefix, std::span<const int> tokens) const {
    std::vector<Tensor<T>> parts;
    if (prefix) {
      if (prefix->rows() < 1 || prefix->cols() != config_.dim) {
        throw DimensionError("soft prefix must be k x " + std::to_string(config_.dim) + ", got " +
                             shape_str(prefix->rows(), prefix->cols()));
      }
      parts.push_back(*prefix);
    }
    if (!tokens.empty()) parts.push_back(embed_tokens(tokens));
    if (parts.empty()) throw ArgumentError("forward: empty input");
    const std::ptrdiff_t len = (prefix ? prefix->rows() : 0) + static_cast<std::ptrdiff_t>(tokens.size());
    if (len > config_.max_seq) {
      throw CapacityError("prefix + tokens = " + std::to_string(len) + " positions exceeds max_seq " +
                          std::to_string(config_.max_seq));
    }
    return parts.size() == 1 ? parts.front() : concat_rows(parts);
  }

  Tensor<T> project(const Tensor<T>& hidden) const { return matmul(hidden, param("head.w")); }

  /// Next-token logits, one row per input position: (k + len) × vocab.
  Tensor<T> forward(const std::optional<Tensor<T>>& prefix, std::span<const int> tokens) const {
    return project(hidden_states(input_rows(prefix, tokens)));
  }

 private:
  template <typename U>
  friend class LmModel;

  struct NoInit {};
  static constexpr std::size_t kParamsPerBlock = 16;

  LmModel(LmConfig config, NoInit) : config_(std::move(config)) {}

  std::size_t first_block_index() const { return config_.n_compressed > 0 ? 3 : 2; }

  void add_param(const std::string& name, Matrix<T> value) {
    params_.push_back({name, Tensor<T>(std::move(value), !frozen_)});
  }

  LmConfig config_;
  bool frozen_ = false;
  std::vector<NamedParameter<T>> params_;
};

/// Per-step log-distributions for teacher-forced scoring of `target` after
/// the prefix: row t is log p(· | target[<t], prefix). Shape |target| × vocab.
template <typename T>
Tensor<T> step_log_probs(const LmModel<T>& model, const Tensor<T>& prefix, std::span<const int> target) {
  if (target.empty()) throw ArgumentError("step_log_probs: empty target sequence");
  if (prefix.rows() < 1) throw ArgumentError("step_log_probs: prefix must have at least one row");
  const auto k = prefix.rows();
  const auto n = static_cast<std::ptrdiff_t>(target.size());
  Tensor<T> inputs = model.input_rows(prefix, target.first(target.size() - 1));
  Tensor<T> hidden = model.hidden_states(inputs);
  return log_softmax(model.project(slice_rows(hidden, k - 1, n)));
}

/// log p(target | prefix) = Σ_t log p(target_t | target_<t, prefix), teacher forced.
template <typename T>
Tensor<T> sequence_log_prob(const LmModel<T>& model, const Tensor<T>& prefix, std::span<const int> target) {
  for (int id : target) {
    if (id < 0 || id >= model.config().vocab_size) throw VocabularyError("target token outside vocabulary");
  }
  return pick_sum(step_log_probs(model, prefix, target), target);
}

}  // namespace are
