#pragma once

// Information compression: the encoder reads (q, t, c_1..c_k) and its final
// hidden states at the k compressed positions become e_c; a frozen decoder
// must reconstruct the target from e_c alone.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "autoregembed/numerics/adam.hpp"
#include "autoregembed/numerics/ops.hpp"
#include "autoregembed/tinylm/model.hpp"

namespace are {

template <typename T>
struct CompressedEmbedding {
  Tensor<T> matrix;  // k × dim
  std::vector<int> source;
  std::vector<int> instruction;
};

template <typename T>
CompressedEmbedding<T> compress(const LmModel<T>& encoder, std::span<const int> text, std::span<const int> instruction) {
  const int k = encoder.config().n_compressed;
  if (k < 1) throw ConfigurationError("compress: encoder has no compressed-token table");
  const auto len = static_cast<int>(text.size() + instruction.size()) + k;
  if (len > encoder.config().max_seq) {
    throw CapacityError("compress: n + m + k = " + std::to_string(len) + " exceeds max_seq " +
                        std::to_string(encoder.config().max_seq));
  }
  std::vector<int> context(text.begin(), text.end());
  context.insert(context.end(), instruction.begin(), instruction.end());
  std::vector<Tensor<T>> parts;
  if (!context.empty()) parts.push_back(encoder.embed_tokens(context));
  parts.push_back(encoder.param("compressed"));
  Tensor<T> inputs = parts.size() == 1 ? parts.front() : concat_rows(parts);
  Tensor<T> hidden = encoder.hidden_states(inputs);
  return {slice_rows(hidden, hidden.rows() - k, k), std::vector<int>(text.begin(), text.end()),
          std::vector<int>(instruction.begin(), instruction.end())};
}

/// One compression training unit: text q, instruction t, target d.
struct IcSample {
  std::vector<int> text;
  std::vector<int> instruction;
  std::vector<int> target;
};

namespace detail {

template <typename T>
void require_frozen_decoder(const LmModel<T>& decoder) {
  if (!decoder.frozen()) {
    throw ConfigurationError("decoder must be frozen: reconstruction has to go through e_c alone");
  }
}

}  // namespace detail

/// Mean over samples of the per-token reconstruction NLL of the target under
/// the frozen decoder, conditioned only on the compressed embedding.
template <typename T>
Tensor<T> ic_loss(const LmModel<T>& encoder, const LmModel<T>& decoder, std::span<const IcSample> batch) {
  detail::require_frozen_decoder(decoder);
  if (batch.empty()) throw ArgumentError("ic_loss: empty batch");
  std::vector<Tensor<T>> terms;
  terms.reserve(batch.size());
  for (const auto& s : batch) {
    if (s.target.empty()) throw ArgumentError("ic_loss: empty target");
    auto ec = compress(encoder, s.text, s.instruction);
    Tensor<T> lp = sequence_log_prob(decoder, ec.matrix, s.target);
    terms.push_back(scale(lp, T(-1) / static_cast<T>(s.target.size())));
  }
  return mean(concat_rows(terms));
}

struct IcTrainConfig {
  double lr = 2e-5;
  int epochs = 2;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double clip_norm = 1.0;  // <= 0 disables clipping
};

struct LossCurve {
  std::vector<double> loss;  // one entry per optimizer step
};

/// Adam over ic_loss. The decoder is read-only; sample order is reshuffled
/// every epoch from `seed`.
template <typename T>
LossCurve train_ic(LmModel<T>& encoder, const LmModel<T>& decoder, std::span<const IcSample> data,
                   const IcTrainConfig& cfg, const std::function<void(int step, double loss)>& on_step = {}) {
  detail::require_frozen_decoder(decoder);
  if (data.empty()) throw ArgumentError("train_ic: empty dataset");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw ArgumentError("train_ic: epochs and batch_size must be >= 1");
  if (encoder.frozen()) throw ConfigurationError("train_ic: encoder is frozen");

  std::vector<Tensor<T>> params = encoder.parameters();
  AdamState<T> opt;
  opt.lr = cfg.lr;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  LossCurve curve;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<IcSample> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
      Tensor<T> loss = ic_loss(encoder, decoder, std::span<const IcSample>(batch));
      loss.backward();
      if (cfg.clip_norm > 0) clip_grad_norm(params, static_cast<T>(cfg.clip_norm));
      adam_step(params, opt);
      curve.loss.push_back(static_cast<double>(loss.item()));
      if (on_step) on_step(static_cast<int>(curve.loss.size()), curve.loss.back());
    }
  }
  return curve;
}

}  // namespace are
