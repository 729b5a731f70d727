#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "autoregembed/compressor/compressor.hpp"
#include "autoregembed/corpus/records.hpp"
#include "autoregembed/evalkit/metrics.hpp"

namespace are {

enum class Pooling {
  mean_compressed,    // row mean of e_c (default)
  last_compressed,    // last row of e_c
  concat_compressed,  // all k rows flattened
  last_token,         // final hidden state of (q, t) without compressed tokens
  mean_tokens,        // mean hidden state of (q, t) without compressed tokens
};

inline std::string to_string(Pooling p) {
  switch (p) {
    case Pooling::mean_compressed: return "mean_compressed";
    case Pooling::last_compressed: return "last_compressed";
    case Pooling::concat_compressed: return "concat_compressed";
    case Pooling::last_token: return "last_token";
    case Pooling::mean_tokens: return "mean_tokens";
  }
  return "?";
}

inline Pooling parse_pooling(const std::string& s) {
  for (Pooling p : {Pooling::mean_compressed, Pooling::last_compressed, Pooling::concat_compressed,
                    Pooling::last_token, Pooling::mean_tokens}) {
    if (to_string(p) == s) return p;
  }
  throw ArgumentError("unknown pooling '" + s + "'");
}

/// Differentiable pooled embedding as a 1×width tensor.
template <typename T>
Tensor<T> pooled_embedding(const LmModel<T>& encoder, std::span<const int> text, std::span<const int> instruction,
                           Pooling pooling) {
  switch (pooling) {
    case Pooling::mean_compressed:
      return mean_rows(compress(encoder, text, instruction).matrix);
    case Pooling::last_compressed: {
      auto ec = compress(encoder, text, instruction).matrix;
      return slice_rows(ec, ec.rows() - 1, 1);
    }
    case Pooling::concat_compressed: {
      auto ec = compress(encoder, text, instruction).matrix;
      std::vector<Tensor<T>> rows;
      for (std::ptrdiff_t r = 0; r < ec.rows(); ++r) rows.push_back(slice_rows(ec, r, 1));
      return concat_cols(rows);
    }
    case Pooling::last_token:
    case Pooling::mean_tokens: {
      std::vector<int> ctx(text.begin(), text.end());
      ctx.insert(ctx.end(), instruction.begin(), instruction.end());
      Tensor<T> h = encoder.hidden_states(encoder.input_rows(std::nullopt, ctx));
      return pooling == Pooling::last_token ? slice_rows(h, h.rows() - 1, 1) : mean_rows(h);
    }
  }
  throw ArgumentError("unknown pooling mode");
}

struct PooledEmbedding {
  Vector vector;
  Pooling pooling = Pooling::mean_compressed;
};

template <typename T>
PooledEmbedding embed(const LmModel<T>& encoder, std::span<const int> text, std::span<const int> instruction,
                      Pooling pooling = Pooling::mean_compressed) {
  Tensor<T> e = pooled_embedding(encoder, text, instruction, pooling);
  PooledEmbedding out;
  out.pooling = pooling;
  out.vector.assign(e.value().data(), e.value().data() + e.size());
  return out;
}

struct MetricsReport {
  double spearman = 0;
  double alignment = 0;
  double uniformity = 0;
  std::size_t n_pairs = 0;
  Pooling pooling = Pooling::mean_compressed;

  nlohmann::json to_json() const {
    return {{"spearman", spearman}, {"alignment", alignment}, {"uniformity", uniformity},
            {"n_pairs", n_pairs},   {"pooling", to_string(pooling)}};
  }
};

/// Scores precomputed embedding pairs against gold similarities.
/// Alignment uses the pairs whose gold lies in the top quartile; uniformity
/// uses every embedding. Both are measured on unit-normalized vectors.
inline MetricsReport score_pairs(std::span<const Vector> left, std::span<const Vector> right,
                                 std::span<const double> gold, Pooling pooling, const MetricConfig& mc = {}) {
  mc.validate();
  if (left.size() != right.size() || left.size() != gold.size()) throw DimensionError("score_pairs: unequal inputs");
  if (left.size() < 2) throw ArgumentError("sts evaluation needs at least 2 pairs");
  Vector pred;
  pred.reserve(left.size());
  for (std::size_t i = 0; i < left.size(); ++i) pred.push_back(cosine(left[i], right[i]));

  Vector sorted(gold.begin(), gold.end());
  std::sort(sorted.begin(), sorted.end());
  const double q3 = sorted[(sorted.size() * 3) / 4];
  std::vector<Vector> top_l, top_r, all;
  for (std::size_t i = 0; i < left.size(); ++i) {
    Vector l = normalized(left[i]);
    Vector r = normalized(right[i]);
    if (gold[i] >= q3) {
      top_l.push_back(l);
      top_r.push_back(r);
    }
    all.push_back(std::move(l));
    all.push_back(std::move(r));
  }
  MetricsReport rep;
  rep.spearman = spearman(pred, gold);
  rep.alignment = alignment_metric(top_l, top_r, mc.alpha);
  rep.uniformity = uniformity_metric(all, mc.t_unif);
  rep.n_pairs = left.size();
  rep.pooling = pooling;
  return rep;
}

/// Symmetric STS: both sides embedded with their I_self instruction; the
/// predicted score is the cosine of the pooled embeddings.
template <typename T>
MetricsReport sts_eval(const LmModel<T>& encoder, std::span<const TripletRecord> pairs,
                       Pooling pooling = Pooling::mean_compressed, const MetricConfig& mc = {}) {
  if (pairs.size() < 2) throw ArgumentError("sts_eval: need at least 2 pairs");
  std::vector<Vector> left, right;
  Vector gold;
  for (const auto& p : pairs) {
    if (!p.gold) throw ArgumentError("sts_eval: evaluation record without gold score");
    left.push_back(embed(encoder, p.anchor, p.instr_self, pooling).vector);
    right.push_back(embed(encoder, p.positive, p.instr_self, pooling).vector);
    gold.push_back(*p.gold);
  }
  return score_pairs(left, right, gold, pooling, mc);
}

}  // namespace are
