#pragma once

// Conditional distribution alignment losses. Similarities are built from
// sequence log-probabilities of the frozen decoder conditioned on compressed
// embeddings, then fed to an InfoNCE-shaped outer softmax with temperature tau.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "autoregembed/numerics/ops.hpp"

namespace are {

enum class Variant { sigmoid, log_sigmoid, kl, js, infonce };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::sigmoid: return "sigmoid";
    case Variant::log_sigmoid: return "log_sigmoid";
    case Variant::kl: return "kl";
    case Variant::js: return "js";
    case Variant::infonce: return "infonce";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::sigmoid, Variant::log_sigmoid, Variant::kl, Variant::js, Variant::infonce}) {
    if (to_string(v) == s) return v;
  }
  throw ArgumentError("unknown loss variant '" + s + "'");
}

struct CdaConfig {
  double tau = 0.1;
  double beta = 0.1;
  Variant variant = Variant::sigmoid;
  int negatives_per_anchor = 1;
  bool in_batch = false;  // InfoNCE only: also use other records of the batch as negatives

  void validate() const {
    if (!(tau > 0) || !(beta > 0)) throw ConfigurationError("tau and beta must be strictly positive");
    if (negatives_per_anchor < 1) throw ConfigurationError("negatives_per_anchor must be >= 1");
  }
};

/// Log-probabilities entering S1/S2 for one anchor. Trainable-path terms are
/// tensors; reference terms are constants from the frozen snapshot.
template <typename T>
struct ScoredTriplet {
  Tensor<T> logp_pos_from_q;    // log p(d+ | e_{q, I_next})
  Tensor<T> logp_pos_from_pos;  // log p(d+ | e_{d+, I_self})
  std::vector<Tensor<T>> logp_neg_from_q;  // log p(d-_i | e_{q, I_next})
  std::optional<T> ref_logp_pos_from_q;
  std::vector<T> ref_logp_neg_from_q;
};

/// Builds a triplet from plain numbers (no graph); convenient for checks.
template <typename T>
ScoredTriplet<T> make_scored(T pos_q, T pos_pos, std::vector<T> neg_q, std::optional<T> ref_pos = std::nullopt,
                             std::vector<T> ref_neg = {}) {
  ScoredTriplet<T> s;
  s.logp_pos_from_q = Tensor<T>::scalar(pos_q);
  s.logp_pos_from_pos = Tensor<T>::scalar(pos_pos);
  for (T v : neg_q) s.logp_neg_from_q.push_back(Tensor<T>::scalar(v));
  s.ref_logp_pos_from_q = ref_pos;
  s.ref_logp_neg_from_q = std::move(ref_neg);
  return s;
}

namespace detail {

template <typename T>
Tensor<T> squash(const Tensor<T>& x, Variant v) {
  // sigmoid variant: -σ(x); log-sigmoid variant: -log σ(x)
  return v == Variant::log_sigmoid ? neg(log_sigmoid(x)) : neg(sigmoid(x));
}

}  // namespace detail

/// S1 = -σ(β |log p(d+|e_q) - log p(d+|e_{d+})|)  (or -log σ for the log-sigmoid variant).
template <typename T>
Tensor<T> s1(const ScoredTriplet<T>& s, double beta, Variant v = Variant::sigmoid) {
  if (!(beta > 0)) throw ConfigurationError("beta must be > 0");
  return detail::squash(scale(abs(sub(s.logp_pos_from_q, s.logp_pos_from_pos)), static_cast<T>(beta)), v);
}

/// S2_i = -σ(β (log p(d+|e_q) - log p_ref(d+|e_q)) - β (log p(d-_i|e_q) - log p_ref(d-_i|e_q))).
template <typename T>
Tensor<T> s2(const ScoredTriplet<T>& s, std::size_t i, double beta, Variant v = Variant::sigmoid) {
  if (!(beta > 0)) throw ConfigurationError("beta must be > 0");
  if (!s.ref_logp_pos_from_q || s.ref_logp_neg_from_q.size() <= i) {
    throw ConfigurationError("s2: reference log-probabilities missing");
  }
  if (i >= s.logp_neg_from_q.size()) throw ArgumentError("s2: negative index out of range");
  Tensor<T> pos_adv = add_scalar(s.logp_pos_from_q, -*s.ref_logp_pos_from_q);
  Tensor<T> neg_adv = add_scalar(s.logp_neg_from_q[i], -s.ref_logp_neg_from_q[i]);
  return detail::squash(scale(sub(pos_adv, neg_adv), static_cast<T>(beta)), v);
}

/// -log( e^{S1/τ} / (e^{S1/τ} + Σ_i e^{S2_i/τ}) ), log-sum-exp stabilized.
template <typename T>
Tensor<T> contrastive_term(const Tensor<T>& s1_value, const std::vector<Tensor<T>>& s2_values, double tau) {
  if (!(tau > 0)) throw ConfigurationError("tau must be > 0");
  if (s2_values.empty()) throw ArgumentError("contrastive loss needs at least one negative");
  const T inv = static_cast<T>(1.0 / tau);
  std::vector<Tensor<T>> logits;
  logits.reserve(1 + s2_values.size());
  logits.push_back(scale(s1_value, inv));
  for (const auto& s : s2_values) logits.push_back(scale(s, inv));
  return sub(logsumexp(concat_cols(logits)), logits.front());
}

template <typename T>
Tensor<T> batch_mean(const std::vector<Tensor<T>>& terms) {
  if (terms.empty()) throw ArgumentError("loss over an empty batch");
  return mean(concat_rows(terms));
}

/// Sigmoid (default) or log-sigmoid CDA loss over a batch, selected by cfg.variant.
template <typename T>
Tensor<T> cda_loss(std::span<const ScoredTriplet<T>> batch, const CdaConfig& cfg) {
  cfg.validate();
  if (cfg.variant != Variant::sigmoid && cfg.variant != Variant::log_sigmoid) {
    throw ConfigurationError("cda_loss: variant " + to_string(cfg.variant) + " needs per-step distributions");
  }
  std::vector<Tensor<T>> terms;
  for (const auto& s : batch) {
    if (s.logp_neg_from_q.empty()) throw ArgumentError("cda_loss: record without negatives");
    std::vector<Tensor<T>> s2s;
    for (std::size_t i = 0; i < s.logp_neg_from_q.size(); ++i) s2s.push_back(s2(s, i, cfg.beta, cfg.variant));
    terms.push_back(contrastive_term(s1(s, cfg.beta, cfg.variant), s2s, cfg.tau));
  }
  return batch_mean(terms);
}

template <typename T>
Tensor<T> cda_loss_logsigmoid(std::span<const ScoredTriplet<T>> batch, CdaConfig cfg) {
  cfg.variant = Variant::log_sigmoid;
  return cda_loss(batch, cfg);
}

// ---------------------------------------------------------------------------
// Divergence variants

/// Per-step log-distributions (rows over the vocabulary) for one anchor.
template <typename T>
struct DistributionTriplet {
  Tensor<T> self_pos;                // p(· | d+_<t, e_{d+, I_self})
  Tensor<T> q_pos;                   // p(· | d+_<t, e_{q, I_next})
  std::vector<Tensor<T>> self_neg;   // p(· | d-_<t, e_{d-_i, I_self})
};

/// Mean over steps of D(P_t, Q_t); steps beyond the shorter sequence are dropped.
template <typename T>
Tensor<T> mean_divergence(const Tensor<T>& log_p, const Tensor<T>& log_q, Variant v) {
  const auto steps = std::min(log_p.rows(), log_q.rows());
  Tensor<T> lp = log_p.rows() == steps ? log_p : slice_rows(log_p, 0, steps);
  Tensor<T> lq = log_q.rows() == steps ? log_q : slice_rows(log_q, 0, steps);
  return mean(v == Variant::js ? js_rows(lp, lq) : kl_rows(lp, lq));
}

template <typename T>
Tensor<T> divergence_loss(std::span<const DistributionTriplet<T>> batch, const CdaConfig& cfg, Variant v) {
  cfg.validate();
  std::vector<Tensor<T>> terms;
  for (const auto& d : batch) {
    if (d.self_neg.empty()) throw ArgumentError("divergence loss: record without negatives");
    Tensor<T> s1v = neg(sigmoid(mean_divergence(d.self_pos, d.q_pos, v)));
    std::vector<Tensor<T>> s2s;
    for (const auto& n : d.self_neg) s2s.push_back(neg(sigmoid(mean_divergence(n, d.q_pos, v))));
    terms.push_back(contrastive_term(s1v, s2s, cfg.tau));
  }
  return batch_mean(terms);
}

template <typename T>
Tensor<T> cda_loss_kl(std::span<const DistributionTriplet<T>> batch, const CdaConfig& cfg) {
  return divergence_loss(batch, cfg, Variant::kl);
}

template <typename T>
Tensor<T> cda_loss_js(std::span<const DistributionTriplet<T>> batch, const CdaConfig& cfg) {
  return divergence_loss(batch, cfg, Variant::js);
}

/// KL(p‖q) for probability vectors, with 0·log 0 = 0.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("kl_divergence: unequal lengths");
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0) continue;
    if (q[i] == 0) return std::numeric_limits<double>::infinity();
    s += p[i] * std::log(p[i] / q[i]);
  }
  return s;
}

inline double js_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("js_divergence: unequal lengths");
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  return 0.5 * kl_divergence(p, m) + 0.5 * kl_divergence(q, m);
}

// ---------------------------------------------------------------------------
// InfoNCE baseline over pooled embeddings (cosine similarity).

/// anchors, positives: n × d. negatives: one (N_i × d) block per anchor.
/// With in_batch, every other anchor's positive and negatives join the
/// candidate set of each anchor.
template <typename T>
Tensor<T> infonce_loss(const Tensor<T>& anchors, const Tensor<T>& positives, const std::vector<Tensor<T>>& negatives,
                       double tau, bool in_batch = false) {
  if (!(tau > 0)) throw ConfigurationError("tau must be > 0");
  if (anchors.rows() != positives.rows() || anchors.cols() != positives.cols()) {
    throw DimensionError("infonce: anchors " + shape_str(anchors.rows(), anchors.cols()) + " vs positives " +
                         shape_str(positives.rows(), positives.cols()));
  }
  if (static_cast<std::ptrdiff_t>(negatives.size()) != anchors.rows()) {
    throw DimensionError("infonce: one negative block per anchor required");
  }
  Tensor<T> a = normalize_rows(anchors);
  Tensor<T> p = normalize_rows(positives);
  std::vector<Tensor<T>> n;
  for (const auto& blk : negatives) {
    if (blk.cols() != anchors.cols()) throw DimensionError("infonce: negative width mismatch");
    n.push_back(normalize_rows(blk));
  }
  const T inv = static_cast<T>(1.0 / tau);
  std::vector<Tensor<T>> terms;
  for (std::ptrdiff_t i = 0; i < anchors.rows(); ++i) {
    std::vector<Tensor<T>> cands = {slice_rows(p, i, 1)};
    cands.push_back(n[static_cast<std::size_t>(i)]);
    if (in_batch) {
      for (std::ptrdiff_t j = 0; j < anchors.rows(); ++j) {
        if (j == i) continue;
        cands.push_back(slice_rows(p, j, 1));
        cands.push_back(n[static_cast<std::size_t>(j)]);
      }
    }
    Tensor<T> logits = scale(matmul_nt(slice_rows(a, i, 1), concat_rows(cands)), inv);
    terms.push_back(sub(logsumexp(logits), slice_cols(logits, 0, 1)));
  }
  return batch_mean(terms);
}

}  // namespace are
