#pragma once

// Dense 2-D tensors with reverse-mode differentiation.
//
// Every operation creates a node that remembers its parents and a closure
// that pushes the output gradient back into them. The graph lives exactly as
// long as the handles that reference it; parameters are parent-less leaves
// and survive across passes, intermediates are released once the loss goes
// out of scope.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace are {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigurationError : std::logic_error {
  using std::logic_error::logic_error;
};

inline std::string shape_str(std::ptrdiff_t rows, std::ptrdiff_t cols) {
  std::ostringstream os;
  os << "[" << rows << "x" << cols << "]";
  return os.str();
}

template <typename T>
class Tensor;

namespace detail {

template <typename T>
struct Node {
  Matrix<T> value;
  Matrix<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix<T>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

}  // namespace detail

/// Handle to a node in the differentiation graph. Copies share the node.
template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  explicit Tensor(Matrix<T> value, bool requires_grad = false)
      : node_(std::make_shared<detail::Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(std::ptrdiff_t rows, std::ptrdiff_t cols, bool requires_grad = false) {
    return Tensor(Matrix<T>::Zero(rows, cols), requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    Matrix<T> m(1, 1);
    m(0, 0) = v;
    return Tensor(std::move(m), requires_grad);
  }

  static Tensor from_rows(std::ptrdiff_t rows, std::ptrdiff_t cols, const std::vector<T>& data,
                          bool requires_grad = false) {
    if (rows <= 0 || cols <= 0 || static_cast<std::size_t>(rows * cols) != data.size()) {
      throw DimensionError("tensor data of length " + std::to_string(data.size()) +
                           " does not fill shape " + shape_str(rows, cols));
    }
    Matrix<T> m(rows, cols);
    for (std::ptrdiff_t i = 0; i < rows * cols; ++i) m.data()[i] = data[static_cast<std::size_t>(i)];
    return Tensor(std::move(m), requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Matrix<T>& value() const { return node_->value; }
  Matrix<T>& mutable_value() { return node_->value; }
  std::ptrdiff_t rows() const { return node_->value.rows(); }
  std::ptrdiff_t cols() const { return node_->value.cols(); }
  std::ptrdiff_t size() const { return node_->value.size(); }
  std::vector<std::size_t> shape() const {
    return {static_cast<std::size_t>(rows()), static_cast<std::size_t>(cols())};
  }
  T item() const {
    if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(rows(), cols()));
    return node_->value(0, 0);
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  bool has_grad() const { return node_->grad.size() != 0; }
  /// Accumulated gradient; zeros of the value's shape if nothing has flowed in yet.
  Matrix<T> grad() const {
    if (!has_grad()) return Matrix<T>::Zero(rows(), cols());
    return node_->grad;
  }
  void zero_grad() { node_->grad.resize(0, 0); }

  const NodePtr& node() const { return node_; }

  /// Result of an operation: attaches parents and backward closure when any
  /// parent needs a gradient.
  static Tensor make_result(Matrix<T> value, std::vector<Tensor> parents,
                            std::function<void(detail::Node<T>&)> backward) {
    Tensor out(std::move(value));
    bool needs = false;
    for (const auto& p : parents) needs = needs || p.requires_grad();
    if (needs) {
      out.node_->requires_grad = true;
      out.node_->parents.reserve(parents.size());
      for (auto& p : parents) out.node_->parents.push_back(p.node_);
      out.node_->backward = std::move(backward);
    }
    return out;
  }

  /// Reverse sweep from this scalar. Intermediate gradients are dropped
  /// afterwards; leaves keep theirs.
  void backward() const {
    if (size() != 1) throw DimensionError("backward() needs a scalar, got " + shape_str(rows(), cols()));
    backward(Matrix<T>::Ones(1, 1));
  }

  void backward(const Matrix<T>& seed) const {
    if (!requires_grad()) return;
    if (seed.rows() != rows() || seed.cols() != cols()) {
      throw DimensionError("backward seed " + shape_str(seed.rows(), seed.cols()) +
                           " does not match " + shape_str(rows(), cols()));
    }
    // Iterative post-order DFS; parents are visited in insertion order so the
    // resulting order, and therefore the accumulation order, is fixed.
    std::vector<detail::Node<T>*> order;
    std::vector<std::pair<detail::Node<T>*, std::size_t>> stack;
    std::unordered_set<detail::Node<T>*> visited;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        detail::Node<T>* p = n->parents[idx++].get();
        if (p->requires_grad && visited.insert(p).second) {
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->accumulate(seed);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node<T>* n = *it;
      if (n->backward && n->grad.size() != 0) n->backward(*n);
    }
    for (auto* n : order) {
      if (!n->parents.empty()) n->grad.resize(0, 0);
    }
  }

 private:
  NodePtr node_;
};

template <typename T>
bool all_finite(const Matrix<T>& m) {
  return m.allFinite();
}

}  // namespace are
