#pragma once

// Plain next-token pretraining of the backbone. The frozen decoder has to be
// a working language model before it can be steered by a soft prefix.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "autoregembed/numerics/adam.hpp"
#include "autoregembed/tinylm/model.hpp"

namespace are {

/// Mean over sequences of the per-token next-token NLL (no prefix).
template <typename T>
Tensor<T> lm_loss(const LmModel<T>& model, std::span<const std::vector<int>> sequences) {
  if (sequences.empty()) throw ArgumentError("lm_loss: empty batch");
  std::vector<Tensor<T>> terms;
  terms.reserve(sequences.size());
  for (const auto& s : sequences) {
    if (s.size() < 2) throw ArgumentError("lm_loss: sequences need at least 2 tokens");
    std::span<const int> seq(s);
    Tensor<T> lp = log_softmax(model.forward(std::nullopt, seq.first(seq.size() - 1)));
    terms.push_back(scale(pick_sum(lp, seq.subspan(1)), T(-1) / static_cast<T>(seq.size() - 1)));
  }
  return mean(concat_rows(terms));
}

struct PretrainConfig {
  double lr = 3e-3;
  int epochs = 15;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double clip_norm = 1.0;
};

/// Returns the mean loss of each epoch.
template <typename T>
std::vector<double> pretrain_lm(LmModel<T>& model, std::span<const std::vector<int>> sequences, const PretrainConfig& cfg,
                                const std::function<void(int epoch, double loss)>& on_epoch = {}) {
  if (sequences.empty()) throw ArgumentError("pretrain_lm: empty corpus");
  if (model.frozen()) throw ConfigurationError("pretrain_lm: model is frozen");
  std::vector<Tensor<T>> params = model.parameters();
  AdamState<T> opt;
  opt.lr = cfg.lr;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(sequences.size());
  std::vector<double> history;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::vector<int>> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(sequences[order[i]]);
      Tensor<T> loss = lm_loss(model, std::span<const std::vector<int>>(batch));
      loss.backward();
      if (cfg.clip_norm > 0) clip_grad_norm(params, static_cast<T>(cfg.clip_norm));
      adam_step(params, opt);
      total += static_cast<double>(loss.item());
      ++steps;
    }
    history.push_back(total / steps);
    if (on_epoch) on_epoch(epoch + 1, history.back());
  }
  return history;
}

}  // namespace are
