#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "autoregembed/numerics/tensor.hpp"

namespace are {

using Vector = std::vector<double>;

struct MetricConfig {
  double alpha = 2.0;   // alignment exponent
  double t_unif = 2.0;  // uniformity temperature

  void validate() const {
    if (!(alpha > 0) || !(t_unif > 0)) throw ArgumentError("alpha and t_unif must be strictly positive");
  }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0 || nb == 0) throw NumericError("cosine: zero vector");
  return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

inline Vector normalized(std::span<const double> a) {
  const double n = norm(a);
  if (n == 0) throw NumericError("normalize: zero vector");
  Vector out(a.begin(), a.end());
  for (auto& x : out) x /= n;
  return out;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("distance: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

/// Fractional ranks starting at 1; ties share the average of their positions.
inline Vector average_ranks(std::span<const double> x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  Vector ranks(x.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("pearson: unequal lengths");
  if (a.size() < 2) throw ArgumentError("pearson: need at least 2 observations");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0 || sbb == 0) throw NumericError("correlation undefined for constant input");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

/// Spearman's rho: Pearson correlation of average-tied ranks.
inline double spearman(std::span<const double> pred, std::span<const double> gold) {
  if (pred.size() != gold.size()) {
    throw DimensionError("spearman: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(gold.size()) + " gold scores");
  }
  if (pred.size() < 2) throw ArgumentError("spearman: need at least 2 pairs");
  const Vector rp = average_ranks(pred);
  const Vector rg = average_ranks(gold);
  return pearson(rp, rg);
}

/// Mean over pairs of ||x - y||^alpha.
inline double alignment_metric(std::span<const Vector> x, std::span<const Vector> y, double alpha) {
  if (!(alpha > 0)) throw ArgumentError("alignment: alpha must be > 0");
  if (x.size() != y.size()) throw DimensionError("alignment: unpaired inputs");
  if (x.empty()) throw ArgumentError("alignment: no pairs");
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += std::pow(std::sqrt(squared_distance(x[i], y[i])), alpha);
  return s / static_cast<double>(x.size());
}

/// log of the mean of exp(-t ||a - b||^2) over all unordered distinct pairs.
inline double uniformity_metric(std::span<const Vector> points, double t) {
  if (!(t > 0)) throw ArgumentError("uniformity: t must be > 0");
  if (points.size() < 2) throw ArgumentError("uniformity: need at least 2 points");
  std::vector<double> terms;
  terms.reserve(points.size() * (points.size() - 1) / 2);
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = i + 1; j < points.size(); ++j) terms.push_back(-t * squared_distance(points[i], points[j]));
  const double m = *std::max_element(terms.begin(), terms.end());
  double s = 0;
  for (double v : terms) s += std::exp(v - m);
  return m + std::log(s / static_cast<double>(terms.size()));
}

}  // namespace are
