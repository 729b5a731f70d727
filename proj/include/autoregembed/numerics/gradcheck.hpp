#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <utility>
#include <vector>

#include "autoregembed/numerics/tensor.hpp"

namespace are {

/// A coordinate in a list of parameter tensors: (tensor index, flat index).
using Coordinate = std::pair<std::size_t, std::ptrdiff_t>;

struct GradcheckResult {
  double max_rel_error = 0.0;
  Coordinate worst{0, 0};
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients of a scalar function with central finite
/// differences. Error per coordinate is |analytic - numeric| / max(1, |analytic|).
///
/// `f` must rebuild its graph from the current parameter values on every call.
/// When `coords` is empty every coordinate of every parameter is checked.
inline GradcheckResult gradcheck(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>>& params,
                                 std::vector<Coordinate> coords = {}, double h = 1e-5) {
  for (auto& p : params) p.zero_grad();
  Tensor<double> out = f();
  if (out.size() != 1) throw DimensionError("gradcheck: function is not scalar-valued");
  if (!std::isfinite(out.item())) throw NumericError("gradcheck: non-finite value at the base point");
  out.backward();
  std::vector<Matrix<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.grad());
  for (auto& p : params) p.zero_grad();

  if (coords.empty()) {
    for (std::size_t t = 0; t < params.size(); ++t)
      for (std::ptrdiff_t i = 0; i < params[t].size(); ++i) coords.emplace_back(t, i);
  }

  GradcheckResult res;
  for (const auto& [t, i] : coords) {
    double& x = params[t].mutable_value().data()[i];
    const double saved = x;
    x = saved + h;
    const double up = f().item();
    x = saved - h;
    const double down = f().item();
    x = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("gradcheck: non-finite value at a perturbed point");
    }
    const double numeric = (up - down) / (2 * h);
    const double a = analytic[t].data()[i];
    const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
    if (res.checked == 0 || err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst = {t, i};
    }
    ++res.checked;
  }
  return res;
}

/// Draws `count` coordinates uniformly over all parameter entries.
inline std::vector<Coordinate> sample_coordinates(const std::vector<Tensor<double>>& params, std::size_t count,
                                                  std::mt19937_64& rng) {
  std::size_t total = 0;
  for (const auto& p : params) total += static_cast<std::size_t>(p.size());
  std::vector<Coordinate> out;
  if (total == 0) return out;
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  for (std::size_t n = 0; n < count; ++n) {
    std::size_t flat = pick(rng);
    std::size_t t = 0;
    while (flat >= static_cast<std::size_t>(params[t].size())) {
      flat -= static_cast<std::size_t>(params[t].size());
      ++t;
    }
    out.emplace_back(t, static_cast<std::ptrdiff_t>(flat));
  }
  return out;
}

}  // namespace are
