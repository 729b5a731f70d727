#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "autoregembed/numerics/tensor.hpp"

namespace are {

/// Adam moments and hyperparameters. Moment arrays are created lazily on the
/// first step to match the parameter shapes.
template <typename T>
struct AdamState {
  std::uint64_t step_count = 0;
  std::vector<Matrix<T>> first_moment;
  std::vector<Matrix<T>> second_moment;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// One bias-corrected Adam update, in place.
template <typename T>
void adam_step(std::span<Matrix<T>* const> params, std::span<const Matrix<T>> grads, AdamState<T>& state) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  }
  if (state.first_moment.empty()) {
    for (const auto* p : params) {
      state.first_moment.push_back(Matrix<T>::Zero(p->rows(), p->cols()));
      state.second_moment.push_back(Matrix<T>::Zero(p->rows(), p->cols()));
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state tracks a different parameter count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->rows() != grads[i].rows() || params[i]->cols() != grads[i].cols() ||
        state.first_moment[i].rows() != grads[i].rows() || state.first_moment[i].cols() != grads[i].cols()) {
      throw DimensionError("adam_step: gradient " + shape_str(grads[i].rows(), grads[i].cols()) +
                           " does not match parameter " + shape_str(params[i]->rows(), params[i]->cols()));
    }
  }

  ++state.step_count;
  const T b1 = static_cast<T>(state.beta1);
  const T b2 = static_cast<T>(state.beta2);
  const T c1 = T(1) - static_cast<T>(std::pow(state.beta1, static_cast<double>(state.step_count)));
  const T c2 = T(1) - static_cast<T>(std::pow(state.beta2, static_cast<double>(state.step_count)));
  const T lr = static_cast<T>(state.lr);
  const T eps = static_cast<T>(state.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    m = b1 * m + (T(1) - b1) * grads[i];
    v = b2 * v + (T(1) - b2) * grads[i].cwiseProduct(grads[i]);
    auto m_hat = m.array() / c1;
    auto v_hat = v.array() / c2;
    params[i]->array() -= lr * m_hat / (v_hat.sqrt() + eps);
  }
}

/// Steps every tensor from its accumulated gradient (zero when none flowed)
/// and clears the gradients afterwards.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state) {
  std::vector<Matrix<T>*> values;
  std::vector<Matrix<T>> grads;
  values.reserve(params.size());
  grads.reserve(params.size());
  for (auto& p : params) {
    values.push_back(&p.mutable_value());
    grads.push_back(p.grad());
  }
  adam_step<T>(std::span<Matrix<T>* const>(values), std::span<const Matrix<T>>(grads), state);
  for (auto& p : params) p.zero_grad();
}

/// Rescales accumulated gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <typename T>
T clip_grad_norm(std::vector<Tensor<T>>& params, T max_norm) {
  T total = 0;
  for (const auto& p : params)
    if (p.has_grad()) total += p.node()->grad.squaredNorm();
  total = std::sqrt(total);
  if (max_norm > 0 && total > max_norm) {
    const T s = max_norm / total;
    for (auto& p : params)
      if (p.has_grad()) p.node()->grad *= s;
  }
  return total;
}

}  // namespace are
