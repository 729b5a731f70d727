#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "autoregembed/cda/losses.hpp"
#include "autoregembed/compressor/compressor.hpp"
#include "autoregembed/corpus/records.hpp"
#include "autoregembed/evalkit/sts.hpp"
#include "autoregembed/numerics/adam.hpp"

namespace are {

/// Frozen snapshot of the encoder taken when alignment starts, paired with
/// the frozen decoder. Supplies p_ref.
template <typename T>
class ReferenceModel {
 public:
  ReferenceModel(const LmModel<T>& encoder, const LmModel<T>& decoder)
      : encoder_(encoder.clone()), decoder_(decoder.clone()) {
    encoder_.freeze();
    decoder_.freeze();
  }

  const LmModel<T>& encoder() const { return encoder_; }
  const LmModel<T>& decoder() const { return decoder_; }

  /// (log p_ref(d+ | e_{q,I_next}), [log p_ref(d-_i | e_{q,I_next})]).
  std::pair<T, std::vector<T>> score(const TripletRecord& r, std::size_t n_neg) const {
    auto eq = compress(encoder_, r.anchor, r.instr_next);
    std::vector<T> negs;
    for (std::size_t i = 0; i < n_neg; ++i) negs.push_back(sequence_log_prob(decoder_, eq.matrix, r.negatives[i]).item());
    return {sequence_log_prob(decoder_, eq.matrix, r.positive).item(), std::move(negs)};
  }

 private:
  LmModel<T> encoder_;
  LmModel<T> decoder_;
};

namespace detail {

inline std::size_t negatives_used(const TripletRecord& r, int requested) {
  if (r.negatives.empty()) throw ArgumentError("alignment record has no negatives");
  return std::min(r.negatives.size(), static_cast<std::size_t>(requested));
}

}  // namespace detail

/// Assembles the operands of S1/S2 for one record. Gradients reach the
/// encoder only through the compressed embeddings.
template <typename T>
ScoredTriplet<T> score_triplet(const LmModel<T>& encoder, const LmModel<T>& decoder, const ReferenceModel<T>* reference,
                               const TripletRecord& r, int negatives_per_anchor = 1) {
  detail::require_frozen_decoder(decoder);
  const std::size_t n_neg = detail::negatives_used(r, negatives_per_anchor);
  auto eq = compress(encoder, r.anchor, r.instr_next);
  auto ep = compress(encoder, r.positive, r.instr_self);
  ScoredTriplet<T> s;
  s.logp_pos_from_q = sequence_log_prob(decoder, eq.matrix, r.positive);
  s.logp_pos_from_pos = sequence_log_prob(decoder, ep.matrix, r.positive);
  for (std::size_t i = 0; i < n_neg; ++i) s.logp_neg_from_q.push_back(sequence_log_prob(decoder, eq.matrix, r.negatives[i]));
  if (reference) {
    auto [pos, negs] = reference->score(r, n_neg);
    s.ref_logp_pos_from_q = pos;
    s.ref_logp_neg_from_q = std::move(negs);
  }
  return s;
}

template <typename T>
DistributionTriplet<T> distribution_triplet(const LmModel<T>& encoder, const LmModel<T>& decoder,
                                            const TripletRecord& r, int negatives_per_anchor = 1) {
  detail::require_frozen_decoder(decoder);
  const std::size_t n_neg = detail::negatives_used(r, negatives_per_anchor);
  auto eq = compress(encoder, r.anchor, r.instr_next);
  auto ep = compress(encoder, r.positive, r.instr_self);
  DistributionTriplet<T> d;
  d.self_pos = step_log_probs(decoder, ep.matrix, r.positive);
  d.q_pos = step_log_probs(decoder, eq.matrix, r.positive);
  for (std::size_t i = 0; i < n_neg; ++i) {
    auto en = compress(encoder, r.negatives[i], r.instr_self);
    d.self_neg.push_back(step_log_probs(decoder, en.matrix, r.negatives[i]));
  }
  return d;
}

/// InfoNCE over pooled embeddings, all sides embedded with I_self so training
/// optimizes the same cosine that evaluation reads.
template <typename T>
Tensor<T> infonce_batch_loss(const LmModel<T>& encoder, std::span<const TripletRecord> batch, const CdaConfig& cfg,
                             Pooling pooling = Pooling::mean_compressed) {
  std::vector<Tensor<T>> anchors, positives, negatives;
  for (const auto& r : batch) {
    const std::size_t n_neg = detail::negatives_used(r, cfg.negatives_per_anchor);
    anchors.push_back(pooled_embedding(encoder, r.anchor, r.instr_self, pooling));
    positives.push_back(pooled_embedding(encoder, r.positive, r.instr_self, pooling));
    std::vector<Tensor<T>> negs;
    for (std::size_t i = 0; i < n_neg; ++i) negs.push_back(pooled_embedding(encoder, r.negatives[i], r.instr_self, pooling));
    negatives.push_back(concat_rows(negs));
  }
  return infonce_loss(concat_rows(anchors), concat_rows(positives), negatives, cfg.tau, cfg.in_batch);
}

/// Loss of the configured variant for one batch.
template <typename T>
Tensor<T> cda_batch_loss(const LmModel<T>& encoder, const LmModel<T>& decoder, const ReferenceModel<T>& reference,
                         std::span<const TripletRecord> batch, const CdaConfig& cfg) {
  switch (cfg.variant) {
    case Variant::sigmoid:
    case Variant::log_sigmoid: {
      std::vector<ScoredTriplet<T>> scored;
      for (const auto& r : batch) scored.push_back(score_triplet(encoder, decoder, &reference, r, cfg.negatives_per_anchor));
      return cda_loss(std::span<const ScoredTriplet<T>>(scored), cfg);
    }
    case Variant::kl:
    case Variant::js: {
      std::vector<DistributionTriplet<T>> dist;
      for (const auto& r : batch) dist.push_back(distribution_triplet(encoder, decoder, r, cfg.negatives_per_anchor));
      return divergence_loss(std::span<const DistributionTriplet<T>>(dist), cfg, cfg.variant);
    }
    case Variant::infonce:
      return infonce_batch_loss(encoder, batch, cfg);
  }
  throw ArgumentError("unknown variant");
}

struct CdaTrainConfig {
  CdaConfig loss;
  double lr = 5e-6;
  int epochs = 4;
  int batch_size = 32;
  std::uint64_t seed = 0;
  double clip_norm = 1.0;
};

struct CdaHooks {
  std::function<void(int step, double loss)> on_step;
  /// Called after each epoch with the number of records consumed so far.
  std::function<void(int epoch, std::size_t samples_seen)> on_epoch;
  /// Called every `checkpoint_every` records (0 disables).
  std::size_t checkpoint_every = 0;
  std::function<void(std::size_t samples_seen, int epoch)> on_samples;
};

/// Adam over the selected variant. The reference snapshot is taken on entry;
/// decoder and reference stay untouched.
template <typename T>
LossCurve train_cda(LmModel<T>& encoder, const LmModel<T>& decoder, std::span<const TripletRecord> data,
                    const CdaTrainConfig& cfg, const CdaHooks& hooks = {}) {
  cfg.loss.validate();
  detail::require_frozen_decoder(decoder);
  if (data.empty()) throw ArgumentError("train_cda: empty dataset");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw ArgumentError("train_cda: epochs and batch_size must be >= 1");
  if (encoder.frozen()) throw ConfigurationError("train_cda: encoder is frozen");

  const ReferenceModel<T> reference(encoder, decoder);
  std::vector<Tensor<T>> params = encoder.parameters();
  AdamState<T> opt;
  opt.lr = cfg.lr;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  LossCurve curve;
  std::size_t seen = 0;
  std::size_t next_mark = hooks.checkpoint_every;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<TripletRecord> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
      Tensor<T> loss = cda_batch_loss(encoder, decoder, reference, std::span<const TripletRecord>(batch), cfg.loss);
      loss.backward();
      if (cfg.clip_norm > 0) clip_grad_norm(params, static_cast<T>(cfg.clip_norm));
      adam_step(params, opt);
      curve.loss.push_back(static_cast<double>(loss.item()));
      seen += batch.size();
      if (hooks.on_step) hooks.on_step(static_cast<int>(curve.loss.size()), curve.loss.back());
      while (hooks.checkpoint_every > 0 && seen >= next_mark) {
        if (hooks.on_samples) hooks.on_samples(next_mark, epoch + 1);
        next_mark += hooks.checkpoint_every;
      }
    }
    if (hooks.on_epoch) hooks.on_epoch(epoch + 1, seen);
  }
  return curve;
}

}  // namespace are
