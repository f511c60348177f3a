#pragma once

#include <Eigen/Core>
#include <array>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tsgan/common.hpp"

namespace tsgan {

using Scalar = double;
using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<MatrixRM>;
using MapConstMat = Eigen::Map<const MatrixRM>;

// Dense shape, rank 0..4. Rank-4 tensors are NCHW; storage is flat row-major
// (n outermost, w innermost).
struct Shape {
  std::array<Eigen::Index, 4> d{1, 1, 1, 1};
  int rank = 0;

  Shape() = default;
  Shape(std::initializer_list<Eigen::Index> dims) {
    TSGAN_CHECK(dims.size() <= 4, Data, "Shape: rank > 4");
    rank = static_cast<int>(dims.size());
    int i = 0;
    for (auto v : dims) d[static_cast<std::size_t>(i++)] = v;
  }
  static Shape scalar() { return Shape{}; }

  Eigen::Index count() const {
    Eigen::Index n = 1;
    for (int i = 0; i < rank; ++i) n *= d[static_cast<std::size_t>(i)];
    return n;
  }
  Eigen::Index operator[](int i) const { return d[static_cast<std::size_t>(i)]; }
  bool operator==(const Shape& o) const { return rank == o.rank && d == o.d; }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::string s = "[";
    for (int i = 0; i < rank; ++i) {
      if (i) s += "x";
      s += std::to_string(d[static_cast<std::size_t>(i)]);
    }
    return s + "]";
  }
};

namespace detail {

struct TensorNode {
  Array value;
  Array grad;  // allocated on first accumulation
  Shape shape;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backprop;  // accumulates this->grad into parents

  void accumulate(const Array& g) {
    if (grad.size() == 0) grad = Array::Zero(value.size());
    grad += g;
  }
};

// Thread-local switch: while disabled, ops build no graph (teacher passes,
// detached feature-map recomputes).
bool grad_enabled();
void set_grad_enabled(bool on);

}  // namespace detail

struct NoGradGuard {
  NoGradGuard() : prev_(detail::grad_enabled()) { detail::set_grad_enabled(false); }
  ~NoGradGuard() { detail::set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Value-semantics handle to a graph node. Copies share the node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& s, bool requires_grad = false) {
    return from_array(s, Array::Zero(s.count()), requires_grad);
  }
  static Tensor constant(const Shape& s, Scalar v) {
    return from_array(s, Array::Constant(s.count(), v), false);
  }
  static Tensor scalar(Scalar v) { return constant(Shape::scalar(), v); }
  static Tensor from_array(const Shape& s, Array a, bool requires_grad = false) {
    TSGAN_CHECK(a.size() == s.count(), Data,
                "Tensor: storage size " + std::to_string(a.size()) + " != shape " + s.str());
    auto n = std::make_shared<detail::TensorNode>();
    n->value = std::move(a);
    n->shape = s;
    n->requires_grad = requires_grad;
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  Eigen::Index size() const { return node_->value.size(); }
  const Array& value() const { return node_->value; }
  Array& value() { return node_->value; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  // Gradient of the last backward() w.r.t. this tensor (zeros if untouched).
  Array grad() const {
    if (node_->grad.size() == 0) return Array::Zero(node_->value.size());
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.size() != 0; }
  void zero_grad() { node_->grad.resize(0); }

  Scalar item() const {
    TSGAN_CHECK(node_->value.size() == 1, Data, "item: tensor is not scalar");
    return node_->value[0];
  }

  // Same values, no history, no gradient.
  Tensor detach() const { return from_array(node_->shape, node_->value, false); }

  // Reverse-mode sweep from this scalar node.
  void backward() const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }

  static Tensor make_op(const Shape& s, Array value,
                        std::vector<std::shared_ptr<detail::TensorNode>> parents,
                        std::function<void(detail::TensorNode&)> backprop);

 private:
  std::shared_ptr<detail::TensorNode> node_;
};

}  // namespace tsgan
