#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass. Nodes are appended in
// creation order, so walking the tape backwards is a valid topological order.
// Parameters live outside the tape; their gradients are collected on the
// tape and flushed into the Param objects by Tape::backward.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rgbtcc {

template <typename Scalar>
using MatrixRM = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Mat = MatrixRM<double>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;

struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Eigen::Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Ordered, name-addressable collection of parameters. Addresses of the
/// stored Param objects are stable for the lifetime of the set.
class ParamSet {
 public:
  Param& add(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Param* find(const std::string& name);
  const Param* find(const std::string& name) const;
  Param& at(const std::string& name);

  std::size_t size() const { return params_.size(); }
  Eigen::Index scalar_count() const;
  Eigen::Index scalar_count_with_prefix(const std::string& prefix) const;

  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.cbegin(); }
  auto end() const { return params_.cend(); }

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

class Tape;

struct Node {
  Mat own;
  const Mat* external = nullptr;
  Mat grad;
  Param* param = nullptr;
  std::function<void()> backward;

  const Mat& value() const { return external != nullptr ? *external : own; }
  bool has_grad() const { return grad.size() != 0; }
  Mat& grad_ref() {
    if (grad.size() == 0) grad.setZero(value().rows(), value().cols());
    return grad;
  }
};

/// Handle to a tape node. Cheap to copy.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, Node* node) : tape_(tape), node_(node) {}

  const Mat& value() const { return node_->value(); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }

  /// Gradient after Tape::backward; zeros if nothing reached this node.
  Mat grad() const;

  Tape* tape() const { return tape_; }
  Node* node() const { return node_; }
  bool valid() const { return node_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  Node* node_ = nullptr;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  /// Leaf that reads `value` in place; it must outlive the tape.
  Var view(const Mat& value);
  Var param(Param& p);

  /// Creates a node with `value`; `backward` is invoked with the node's
  /// gradient already populated.
  Var record(Mat value, std::function<void(const Mat& grad)> backward);

  /// Seeds d(out)/d(out) = 1 for a 1x1 output, runs the reverse sweep and
  /// adds parameter gradients into Param::grad.
  void backward(const Var& out);

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::unique_ptr<Node>> nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. All operands must belong to the same tape.

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var cwise_mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
/// a[L,C] + row[1,C] broadcast over rows.
Var add_row(const Var& a, const Var& row);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
/// x[L,in] * W[in,out] + b[1,out].
Var linear(const Var& x, const Var& weight, const Var& bias);

Var gelu(const Var& a);
Var relu(const Var& a);
Var abs(const Var& a);

Var sum(const Var& a);
Var softmax_rows(const Var& a);
/// Normalizes every row over its columns, then applies per-column gamma/beta.
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
/// Normalizes every column over its rows (spatial positions), then applies
/// per-column gamma/beta.
Var norm_columns(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
/// Row-major reinterpretation of the same data.
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);

/// Token grid [h*w, c] (row-major positions) -> [(h/s)*(w/s), s*s*c]; each
/// output row concatenates the s x s patch in (dy, dx, c) order.
Var space_to_depth(const Var& a, Eigen::Index h, Eigen::Index w, Eigen::Index s);
/// Token grid [h*w, c] -> [h*w, k*k*c] zero-padded neighborhoods, (dy, dx, c)
/// order. With a [k*k*c, out] weight this is a same-padded k x k convolution.
Var im2col(const Var& a, Eigen::Index h, Eigen::Index w, Eigen::Index k);

double gelu_value(double x);

}  // namespace rgbtcc
