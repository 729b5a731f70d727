#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "autoregembed/numerics/tensor.hpp"

namespace are {

namespace detail {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) +
                         " vs " + shape_str(b.rows(), b.cols()));
  }
}

template <typename T>
Node<T>& parent(Node<T>& n, std::size_t i) {
  return *n.parents[i];
}

/// Numerically stable logistic function.
template <typename T>
T sigmoid(T x) {
  if (x >= 0) {
    T z = std::exp(-x);
    return T(1) / (T(1) + z);
  }
  T z = std::exp(x);
  return z / (T(1) + z);
}

/// log(sigmoid(x)) without overflow.
template <typename T>
T log_sigmoid(T x) {
  if (x >= 0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_str(a.rows(), a.cols()) +
                         " and " + shape_str(b.rows(), b.cols()));
  }
  Matrix<T> out = a.value() * b.value();
  return Tensor<T>::make_result(std::move(out), {a, b}, [](detail::Node<T>& n) {
    auto& pa = detail::parent(n, 0);
    auto& pb = detail::parent(n, 1);
    if (pa.requires_grad) pa.accumulate(n.grad * pb.value.transpose());
    if (pb.requires_grad) pb.accumulate(pa.value.transpose() * n.grad);
  });
}

/// x·W + b with b a 1×n row broadcast over rows.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw DimensionError("linear: incompatible shapes " + shape_str(x.rows(), x.cols()) + ", " +
                         shape_str(w.rows(), w.cols()) + ", " + shape_str(b.rows(), b.cols()));
  }
  Matrix<T> out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return Tensor<T>::make_result(std::move(out), {x, w, b}, [](detail::Node<T>& n) {
    auto& px = detail::parent(n, 0);
    auto& pw = detail::parent(n, 1);
    auto& pb = detail::parent(n, 2);
    if (px.requires_grad) px.accumulate(n.grad * pw.value.transpose());
    if (pw.requires_grad) pw.accumulate(px.value.transpose() * n.grad);
    if (pb.requires_grad) pb.accumulate(n.grad.colwise().sum());
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("add", a, b);
  return Tensor<T>::make_result(a.value() + b.value(), {a, b}, [](detail::Node<T>& n) {
    for (std::size_t i = 0; i < 2; ++i) {
      auto& p = detail::parent(n, i);
      if (p.requires_grad) p.accumulate(n.grad);
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("sub", a, b);
  return Tensor<T>::make_result(a.value() - b.value(), {a, b}, [](detail::Node<T>& n) {
    auto& pa = detail::parent(n, 0);
    auto& pb = detail::parent(n, 1);
    if (pa.requires_grad) pa.accumulate(n.grad);
    if (pb.requires_grad) pb.accumulate(-n.grad);
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape("mul", a, b);
  Matrix<T> out = a.value().cwiseProduct(b.value());
  return Tensor<T>::make_result(std::move(out), {a, b}, [](detail::Node<T>& n) {
    auto& pa = detail::parent(n, 0);
    auto& pb = detail::parent(n, 1);
    if (pa.requires_grad) pa.accumulate(n.grad.cwiseProduct(pb.value));
    if (pb.requires_grad) pb.accumulate(n.grad.cwiseProduct(pa.value));
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return Tensor<T>::make_result(a.value() * s, {a}, [s](detail::Node<T>& n) {
    detail::parent(n, 0).accumulate(n.grad * s);
  });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  Matrix<T> out = a.value().array() + s;
  return Tensor<T>::make_result(std::move(out), {a}, [](detail::Node<T>& n) {
    detail::parent(n, 0).accumulate(n.grad);
  });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, T s) { return scale(a, s); }
template <typename T>
Tensor<T> operator*(T s, const Tensor<T>& a) { return scale(a, s); }

/// Adds a 1×n row to every row of a.
template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row: row " + shape_str(row.rows(), row.cols()) + " vs " +
                         shape_str(a.rows(), a.cols()));
  }
  Matrix<T> out = a.value();
  out.rowwise() += row.value().row(0);
  return Tensor<T>::make_result(std::move(out), {a, row}, [](detail::Node<T>& n) {
    auto& pa = detail::parent(n, 0);
    auto& pr = detail::parent(n, 1);
    if (pa.requires_grad) pa.accumulate(n.grad);
    if (pr.requires_grad) pr.accumulate(n.grad.colwise().sum());
  });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  Matrix<T> out = a.value().array().exp();
  return Tensor<T>::make_result(out, {a}, [out](detail::Node<T>& n) {
    detail::parent(n, 0).accumulate(n.grad.cwiseProduct(out));
  });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  if ((a.value().array() <= T(0)).any()) throw NumericError("log: non-positive input");
  return Tensor<T>::make_result(a.value().array().log().matrix(), {a}, [](detail::Node<T>& n) {
    auto& p = detail::parent(n, 0);
    p.accumulate(n.grad.cwiseQuotient(p.value));
  });
}

/// |x| with subgradient 0 at the kink.
template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return Tensor<T>::make_result(a.value().cwiseAbs(), {a}, [](detail::Node<T>& n) {
    auto& p = detail::parent(n, 0);
    Matrix<T> sign = p.value.unaryExpr([](T v) { return T((v > 0) - (v < 0)); });
    p.accumulate(n.grad.cwiseProduct(sign));
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  Matrix<T> out = a.value().unaryExpr([](T v) { return detail::sigmoid(v); });
  return Tensor<T>::make_result(out, {a}, [out](detail::Node<T>& n) {
    Matrix<T> d = out.array() * (T(1) - out.array());
    detail::parent(n, 0).accumulate(n.grad.cwiseProduct(d));
  });
}

template <typename T>
Tensor<T> log_sigmoid(const Tensor<T>& a) {
  Matrix<T> out = a.value().unaryExpr([](T v) { return detail::log_sigmoid(v); });
  return Tensor<T>::make_result(std::move(out), {a}, [](detail::Node<T>& n) {
    auto& p = detail::parent(n, 0);
    // d/dx log σ(x) = σ(−x)
    Matrix<T> d = p.value.unaryExpr([](T v) { return detail::sigmoid(-v); });
    p.accumulate(n.grad.cwiseProduct(d));
  });
}

/// tanh-approximated GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr T c = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T k = T(0.044715);
  Matrix<T> out = a.value().unaryExpr([](T x) {
    return T(0.5) * x * (T(1) + std::tanh(c * (x + k * x * x * x)));
  });
  return Tensor<T>::make_result(std::move(out), {a}, [](detail::Node<T>& n) {
    auto& p = detail::parent(n, 0);
    Matrix<T> d = p.value.unaryExpr([](T x) {
      T u = c * (x + k * x * x * x);
      T th = std::tanh(u);
      T du = c * (T(1) + T(3) * k * x * x);
      return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * du;
    });
    p.accumulate(n.grad.cwiseProduct(d));
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  return Tensor<T>::make_result(Matrix<T>::Constant(1, 1, a.value().sum()), {a}, [](detail::Node<T>& n) {
    auto& p = detail::parent(n, 0);
    p.accumulate(Matrix<T>::Constant(p.value.rows(), p.value.cols(), n.grad(0, 0)));
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

/// Column means: r×c → 1×c.
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a) {
  const T inv = T(1) / static_cast<T>(a.rows());
  Matrix<T> out = a.value().colwise().sum() * inv;
  return Tensor<T>::make_result(std::move(out), {a}, [inv](detail::Node<T>& n) {
    auto& p = detail::parent(n, 0);
    Matrix<T> g(p.value.rows(), p.value.cols());
    g.rowwise() = n.grad.row(0) * inv;
    p.accumulate(g);
  });
}

/// log Σ exp over every element, max-shifted.
template <typename T>
Tensor<T> logsumexp(const Tensor<T>& a) {
  const T m = a.value().maxCoeff();
  if (!std::isfinite(m)) throw NumericError("logsumexp: non-finite input");
  Matrix<T> w = (a.value().array() - m).exp();
  const T s = w.sum();
  w /= s;
  return Tensor<T>::make_result(Matrix<T>::Constant(1, 1, m + std::log(s)), {a}, [w](detail::Node<T>& n) {
    detail::parent(n, 0).accumulate(w * n.grad(0, 0));
  });
}

/// Row-wise log-softmax over the last dimension.
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& logits) {
  if (logits.cols() < 2) throw DimensionError("log_softmax: vocabulary size must be >= 2");
  if (!logits.value().allFinite()) throw NumericError("log_softmax: non-finite input");
  Matrix<T> out(logits.rows(), logits.cols());
  for (std::ptrdiff_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.value().row(r);
    const T m = row.maxCoeff();
    const auto shifted = (row.array() - m).eval();
    out.row(r) = shifted - std::log(shifted.exp().sum());
  }
  return Tensor<T>::make_result(out, {logits}, [out](detail::Node<T>& n) {
    Matrix<T> g = n.grad;
    Matrix<T> soft = out.array().exp();
    for (std::ptrdiff_t r = 0; r < g.rows(); ++r) {
      const T s = n.grad.row(r).sum();
      g.row(r) -= soft.row(r) * s;
    }
    detail::parent(n, 0).accumulate(g);
  });
}

/// Σ_r a(r, cols[r]); the teacher-forced pick of target log-probabilities.
template <typename T>
Tensor<T> pick_sum(const Tensor<T>& a, std::span<const int> cols) {
  if (static_cast<std::ptrdiff_t>(cols.size()) != a.rows()) {
    throw DimensionError("pick_sum: " + std::to_string(cols.size()) + " indices for " +
                         shape_str(a.rows(), a.cols()));
  }
  T total = 0;
  for (std::size_t r = 0; r < cols.size(); ++r) {
    if (cols[r] < 0 || cols[r] >= a.cols()) throw DimensionError("pick_sum: index out of range");
    total += a.value()(static_cast<std::ptrdiff_t>(r), cols[r]);
  }
  std::vector<int> idx(cols.begin(), cols.end());
  return Tensor<T>::make_result(Matrix<T>::Constant(1, 1, total), {a}, [idx](detail::Node<T>& n) {
    auto& p = detail::parent(n, 0);
    Matrix<T> g = Matrix<T>::Zero(p.value.rows(), p.value.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) g(static_cast<std::ptrdiff_t>(r), idx[r]) = n.grad(0, 0);
    p.accumulate(g);
  });
}

// ---------------------------------------------------------------------------
// Structural

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ArgumentError("concat_rows: no inputs");
  const auto cols = parts.front().cols();
  std::ptrdiff_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts.front().rows(), cols) +
                           " vs " + shape_str(p.rows(), p.cols()));
    }
    rows += p.rows();
  }
  Matrix<T> out(rows, cols);
  std::vector<std::ptrdiff_t> offsets;
  std::ptrdiff_t at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return Tensor<T>::make_result(std::move(out), parts, [offsets](detail::Node<T>& n) {
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      auto& p = *n.parents[i];
      if (p.requires_grad) p.accumulate(n.grad.middleRows(offsets[i], p.value.rows()));
    }
  });
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no inputs");
  const auto rows = parts.front().rows();
  std::ptrdiff_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row mismatch");
    cols += p.cols();
  }
  Matrix<T> out(rows, cols);
  std::vector<std::ptrdiff_t> offsets;
  std::ptrdiff_t at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return Tensor<T>::make_result(std::move(out), parts, [offsets](detail::Node<T>& n) {
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      auto& p = *n.parents[i];
      if (p.requires_grad) p.accumulate(n.grad.middleCols(offsets[i], p.value.cols()));
    }
  });
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::ptrdiff_t begin, std::ptrdiff_t count) {
  if (begin < 0 || count <= 0 || begin + count > a.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                         ") outside " + shape_str(a.rows(), a.cols()));
  }
  return Tensor<T>::make_result(a.value().middleRows(begin, count), {a}, [begin](detail::Node<T>& n) {
    auto& p = detail::parent(n, 0);
    Matrix<T> g = Matrix<T>::Zero(p.value.rows(), p.value.cols());
    g.middleRows(begin, n.grad.rows()) = n.grad;
    p.accumulate(g);
  });
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::ptrdiff_t begin, std::ptrdiff_t count) {
  if (begin < 0 || count <= 0 || begin + count > a.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                         ") outside " + shape_str(a.rows(), a.cols()));
  }
  return Tensor<T>::make_result(a.value().middleCols(begin, count), {a}, [begin](detail::Node<T>& n) {
    auto& p = detail::parent(n, 0);
    Matrix<T> g = Matrix<T>::Zero(p.value.rows(), p.value.cols());
    g.middleCols(begin, n.grad.cols()) = n.grad;
    p.accumulate(g);
  });
}

/// Row lookup table[ids[i]]; backward scatter-adds in index order.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& table, std::span<const int> ids) {
  if (ids.empty()) throw ArgumentError("gather_rows: no indices");
  Matrix<T> out(static_cast<std::ptrdiff_t>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table.rows()) {
      throw DimensionError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                           std::to_string(table.rows()) + " rows");
    }
    out.row(static_cast<std::ptrdiff_t>(i)) = table.value().row(ids[i]);
  }
  std::vector<int> idx(ids.begin(), ids.end());
  return Tensor<T>::make_result(std::move(out), {table}, [idx](detail::Node<T>& n) {
    auto& p = detail::parent(n, 0);
    Matrix<T> g = Matrix<T>::Zero(p.value.rows(), p.value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += n.grad.row(static_cast<std::ptrdiff_t>(i));
    p.accumulate(g);
  });
}

// ---------------------------------------------------------------------------
// Fused transformer pieces

/// Row-wise layer normalization with affine gain/shift rows.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& shift, T eps = T(1e-5)) {
  if (gain.rows() != 1 || gain.cols() != x.cols() || shift.rows() != 1 || shift.cols() != x.cols()) {
    throw DimensionError("layer_norm: affine rows must be 1x" + std::to_string(x.cols()));
  }
  const auto rows = x.rows();
  const auto cols = x.cols();
  Matrix<T> xhat(rows, cols);
  Matrix<T> inv_std(rows, 1);
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    auto row = x.value().row(r);
    const T mu = row.mean();
    const T var = (row.array() - mu).square().mean();
    const T is = T(1) / std::sqrt(var + eps);
    inv_std(r, 0) = is;
    xhat.row(r) = (row.array() - mu) * is;
  }
  Matrix<T> out = xhat.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += shift.value().row(0);
  return Tensor<T>::make_result(std::move(out), {x, gain, shift}, [xhat, inv_std](detail::Node<T>& n) {
    auto& px = detail::parent(n, 0);
    auto& pg = detail::parent(n, 1);
    auto& pb = detail::parent(n, 2);
    if (pg.requires_grad) pg.accumulate((n.grad.cwiseProduct(xhat)).colwise().sum());
    if (pb.requires_grad) pb.accumulate(n.grad.colwise().sum());
    if (px.requires_grad) {
      const auto cols = xhat.cols();
      Matrix<T> dxhat = n.grad.array().rowwise() * pg.value.row(0).array();
      Matrix<T> dx(xhat.rows(), cols);
      for (std::ptrdiff_t r = 0; r < xhat.rows(); ++r) {
        const T m1 = dxhat.row(r).mean();
        const T m2 = dxhat.row(r).dot(xhat.row(r)) / static_cast<T>(cols);
        dx.row(r) = (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r, 0);
      }
      px.accumulate(dx);
    }
  });
}

/// Multi-head causal self-attention on packed projections q, k, v (L×d each).
/// Position i attends to positions 0..i only.
template <typename T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int n_heads) {
  detail::require_same_shape("causal_attention", q, k);
  detail::require_same_shape("causal_attention", q, v);
  const auto len = q.rows();
  const auto dim = q.cols();
  if (n_heads <= 0 || dim % n_heads != 0) throw DimensionError("causal_attention: heads must divide width");
  const auto hd = dim / n_heads;
  const T scale_f = T(1) / std::sqrt(static_cast<T>(hd));

  std::vector<Matrix<T>> probs(static_cast<std::size_t>(n_heads));
  Matrix<T> out(len, dim);
  for (int h = 0; h < n_heads; ++h) {
    auto qh = q.value().middleCols(h * hd, hd);
    auto kh = k.value().middleCols(h * hd, hd);
    auto vh = v.value().middleCols(h * hd, hd);
    Matrix<T> s = (qh * kh.transpose()) * scale_f;
    Matrix<T>& p = probs[static_cast<std::size_t>(h)];
    p = Matrix<T>::Zero(len, len);
    for (std::ptrdiff_t i = 0; i < len; ++i) {
      const T m = s.row(i).head(i + 1).maxCoeff();
      T z = 0;
      for (std::ptrdiff_t j = 0; j <= i; ++j) {
        p(i, j) = std::exp(s(i, j) - m);
        z += p(i, j);
      }
      p.row(i).head(i + 1) /= z;
    }
    out.middleCols(h * hd, hd) = p * vh;
  }
  return Tensor<T>::make_result(std::move(out), {q, k, v}, [probs, n_heads, hd, scale_f](detail::Node<T>& n) {
    auto& pq = detail::parent(n, 0);
    auto& pk = detail::parent(n, 1);
    auto& pv = detail::parent(n, 2);
    const auto len = pq.value.rows();
    const auto dim = pq.value.cols();
    Matrix<T> dq = Matrix<T>::Zero(len, dim);
    Matrix<T> dk = Matrix<T>::Zero(len, dim);
    Matrix<T> dv = Matrix<T>::Zero(len, dim);
    for (int h = 0; h < n_heads; ++h) {
      const Matrix<T>& p = probs[static_cast<std::size_t>(h)];
      auto go = n.grad.middleCols(h * hd, hd);
      dv.middleCols(h * hd, hd) = p.transpose() * go;
      Matrix<T> dp = go * pv.value.middleCols(h * hd, hd).transpose();
      Matrix<T> ds = Matrix<T>::Zero(len, len);
      for (std::ptrdiff_t i = 0; i < len; ++i) {
        const T dot = p.row(i).head(i + 1).dot(dp.row(i).head(i + 1));
        for (std::ptrdiff_t j = 0; j <= i; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * scale_f;
      }
      dq.middleCols(h * hd, hd) = ds * pk.value.middleCols(h * hd, hd);
      dk.middleCols(h * hd, hd) = ds.transpose() * pq.value.middleCols(h * hd, hd);
    }
    if (pq.requires_grad) pq.accumulate(dq);
    if (pk.requires_grad) pk.accumulate(dk);
    if (pv.requires_grad) pv.accumulate(dv);
  });
}

/// Row-wise unit normalization; zero rows are a numeric error.
template <typename T>
Tensor<T> normalize_rows(const Tensor<T>& a) {
  Matrix<T> norms = a.value().rowwise().norm();
  if ((norms.array() <= T(0)).any()) throw NumericError("normalize_rows: zero-norm vector");
  Matrix<T> out = a.value().array().colwise() / norms.col(0).array();
  return Tensor<T>::make_result(out, {a}, [out, norms](detail::Node<T>& n) {
    Matrix<T> g(out.rows(), out.cols());
    for (std::ptrdiff_t r = 0; r < out.rows(); ++r) {
      const T d = n.grad.row(r).dot(out.row(r));
      g.row(r) = (n.grad.row(r) - out.row(r) * d) / norms(r, 0);
    }
    detail::parent(n, 0).accumulate(g);
  });
}

/// a·bᵀ for row blocks: (m×d, n×d) → m×n.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: width mismatch " + shape_str(a.rows(), a.cols()) + " vs " +
                         shape_str(b.rows(), b.cols()));
  }
  return Tensor<T>::make_result(a.value() * b.value().transpose(), {a, b}, [](detail::Node<T>& n) {
    auto& pa = detail::parent(n, 0);
    auto& pb = detail::parent(n, 1);
    if (pa.requires_grad) pa.accumulate(n.grad * pb.value);
    if (pb.requires_grad) pb.accumulate(n.grad.transpose() * pa.value);
  });
}

// ---------------------------------------------------------------------------
// Divergences between per-row distributions given as log-probabilities.

namespace detail {

template <typename T>
void require_normalized(const char* op, const Matrix<T>& logp) {
  for (std::ptrdiff_t r = 0; r < logp.rows(); ++r) {
    const T s = logp.row(r).array().exp().sum();
    const T tol = sizeof(T) >= 8 ? T(1e-6) : T(1e-4);
    if (!(std::abs(s - T(1)) <= tol)) {
      throw NumericError(std::string(op) + ": row " + std::to_string(r) + " sums to " + std::to_string(s));
    }
  }
}

}  // namespace detail

/// Per-row KL(P‖Q) from log-probability rows; returns r×1.
template <typename T>
Tensor<T> kl_rows(const Tensor<T>& log_p, const Tensor<T>& log_q) {
  detail::require_same_shape("kl_rows", log_p, log_q);
  detail::require_normalized("kl_rows", log_p.value());
  detail::require_normalized("kl_rows", log_q.value());
  Matrix<T> p = log_p.value().array().exp();
  Matrix<T> diff = log_p.value() - log_q.value();
  Matrix<T> out = p.cwiseProduct(diff).rowwise().sum();
  return Tensor<T>::make_result(std::move(out), {log_p, log_q}, [p, diff](detail::Node<T>& n) {
    auto& pp = detail::parent(n, 0);
    auto& pq = detail::parent(n, 1);
    if (pp.requires_grad) {
      Matrix<T> g = p.cwiseProduct(diff + Matrix<T>::Ones(p.rows(), p.cols()));
      pp.accumulate(g.array().colwise() * n.grad.col(0).array());
    }
    if (pq.requires_grad) {
      Matrix<T> g = -p;
      pq.accumulate(g.array().colwise() * n.grad.col(0).array());
    }
  });
}

/// Per-row Jensen-Shannon divergence (natural log, so bounded by ln 2).
template <typename T>
Tensor<T> js_rows(const Tensor<T>& log_p, const Tensor<T>& log_q) {
  detail::require_same_shape("js_rows", log_p, log_q);
  detail::require_normalized("js_rows", log_p.value());
  detail::require_normalized("js_rows", log_q.value());
  const Matrix<T>& a = log_p.value();
  const Matrix<T>& b = log_q.value();
  // log m = log((e^a + e^b) / 2), stable
  Matrix<T> log_m = a.binaryExpr(b, [](T x, T y) {
    const T hi = std::max(x, y);
    if (hi == -std::numeric_limits<T>::infinity()) return hi;
    return hi + std::log1p(std::exp(std::min(x, y) - hi)) - std::log(T(2));
  });
  Matrix<T> p = a.array().exp();
  Matrix<T> q = b.array().exp();
  Matrix<T> out = (T(0.5) * (p.cwiseProduct(a - log_m) + q.cwiseProduct(b - log_m))).rowwise().sum();
  return Tensor<T>::make_result(std::move(out), {log_p, log_q}, [a, b, p, q, log_m](detail::Node<T>& n) {
    auto& pp = detail::parent(n, 0);
    auto& pq = detail::parent(n, 1);
    // ∂JS/∂a_j = ½ p_j (a_j − log m_j); symmetric for b.
    if (pp.requires_grad) {
      Matrix<T> g = T(0.5) * p.cwiseProduct(a - log_m);
      pp.accumulate(g.array().colwise() * n.grad.col(0).array());
    }
    if (pq.requires_grad) {
      Matrix<T> g = T(0.5) * q.cwiseProduct(b - log_m);
      pq.accumulate(g.array().colwise() * n.grad.col(0).array());
    }
  });
}

}  // namespace are
