#include "rgbtcc/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace rgbtcc {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

void require_same_shape(const Var& a, const Var& b, const char* what) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), what);
}

Tape& tape_of(const Var& a) { return *a.tape(); }

}  // namespace

// ---------------------------------------------------------------------------
// ParamSet

Param& ParamSet::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter: " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value.setZero(rows, cols);
  p->grad.setZero(rows, cols);
  params_.push_back(std::move(p));
  return *params_.back();
}

Param* ParamSet::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Param* ParamSet::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

Param& ParamSet::at(const std::string& name) {
  Param* p = find(name);
  if (p == nullptr) throw std::out_of_range("unknown parameter: " + name);
  return *p;
}

Eigen::Index ParamSet::scalar_count() const {
  Eigen::Index n = 0;
  for (const auto& p : params_) n += p->size();
  return n;
}

Eigen::Index ParamSet::scalar_count_with_prefix(const std::string& prefix) const {
  Eigen::Index n = 0;
  for (const auto& p : params_)
    if (p->name.starts_with(prefix)) n += p->size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

// ---------------------------------------------------------------------------
// Tape

Mat Var::grad() const {
  if (node_->has_grad()) return node_->grad;
  return Mat::Zero(rows(), cols());
}

Var Tape::constant(Mat value) {
  auto n = std::make_unique<Node>();
  n->own = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.back().get()};
}

Var Tape::view(const Mat& value) {
  auto n = std::make_unique<Node>();
  n->external = &value;
  nodes_.push_back(std::move(n));
  return {this, nodes_.back().get()};
}

Var Tape::param(Param& p) {
  auto n = std::make_unique<Node>();
  n->external = &p.value;
  n->param = &p;
  nodes_.push_back(std::move(n));
  return {this, nodes_.back().get()};
}

Var Tape::record(Mat value, std::function<void(const Mat&)> backward) {
  auto n = std::make_unique<Node>();
  n->own = std::move(value);
  Node* raw = n.get();
  n->backward = [raw, fn = std::move(backward)]() { fn(raw->grad); };
  nodes_.push_back(std::move(n));
  return {this, raw};
}

void Tape::backward(const Var& out) {
  require(out.rows() == 1 && out.cols() == 1, "backward requires a scalar output");
  out.node()->grad_ref()(0, 0) += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (!n.has_grad()) continue;
    if (n.backward) n.backward();
    if (n.param != nullptr) {
      if (n.param->grad.size() == 0) n.param->zero_grad();
      n.param->grad += n.grad;
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise and linear algebra

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add: shape mismatch");
  Node* na = a.node();
  Node* nb = b.node();
  return tape_of(a).record(a.value() + b.value(), [na, nb](const Mat& g) {
    na->grad_ref() += g;
    nb->grad_ref() += g;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub: shape mismatch");
  Node* na = a.node();
  Node* nb = b.node();
  return tape_of(a).record(a.value() - b.value(), [na, nb](const Mat& g) {
    na->grad_ref() += g;
    nb->grad_ref() -= g;
  });
}

Var cwise_mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "cwise_mul: shape mismatch");
  Node* na = a.node();
  Node* nb = b.node();
  return tape_of(a).record(a.value().cwiseProduct(b.value()), [na, nb](const Mat& g) {
    na->grad_ref() += g.cwiseProduct(nb->value());
    nb->grad_ref() += g.cwiseProduct(na->value());
  });
}

Var scale(const Var& a, double s) {
  Node* na = a.node();
  return tape_of(a).record(a.value() * s, [na, s](const Mat& g) { na->grad_ref() += g * s; });
}

Var add_scalar(const Var& a, double s) {
  Node* na = a.node();
  return tape_of(a).record(a.value().array() + s, [na](const Mat& g) { na->grad_ref() += g; });
}

Var add_row(const Var& a, const Var& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: bias shape mismatch");
  Node* na = a.node();
  Node* nr = row.node();
  Mat out = a.value();
  out.rowwise() += row.value().row(0);
  return tape_of(a).record(std::move(out), [na, nr](const Mat& g) {
    na->grad_ref() += g;
    nr->grad_ref() += g.colwise().sum();
  });
}

Var matmul(const Var& a, const Var& b) {
  require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Node* na = a.node();
  Node* nb = b.node();
  Mat out = a.value() * b.value();
  return tape_of(a).record(std::move(out), [na, nb](const Mat& g) {
    na->grad_ref().noalias() += g * nb->value().transpose();
    nb->grad_ref().noalias() += na->value().transpose() * g;
  });
}

Var transpose(const Var& a) {
  Node* na = a.node();
  return tape_of(a).record(a.value().transpose(),
                           [na](const Mat& g) { na->grad_ref() += g.transpose(); });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require(x.cols() == weight.rows(), "linear: input width mismatch");
  require(bias.rows() == 1 && bias.cols() == weight.cols(), "linear: bias shape mismatch");
  Node* nx = x.node();
  Node* nw = weight.node();
  Node* nb = bias.node();
  Mat out = x.value() * weight.value();
  out.rowwise() += bias.value().row(0);
  return tape_of(x).record(std::move(out), [nx, nw, nb](const Mat& g) {
    nx->grad_ref().noalias() += g * nw->value().transpose();
    nw->grad_ref().noalias() += nx->value().transpose() * g;
    nb->grad_ref() += g.colwise().sum();
  });
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

Var gelu(const Var& a) {
  Node* na = a.node();
  Mat out = a.value().unaryExpr([](double x) { return gelu_value(x); });
  return tape_of(a).record(std::move(out), [na](const Mat& g) {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    Mat d = na->value().unaryExpr([inv_sqrt_2pi](double x) {
      return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
    });
    na->grad_ref() += g.cwiseProduct(d);
  });
}

Var relu(const Var& a) {
  Node* na = a.node();
  return tape_of(a).record(a.value().cwiseMax(0.0), [na](const Mat& g) {
    na->grad_ref() += (na->value().array() > 0.0).select(g, 0.0);
  });
}

Var abs(const Var& a) {
  Node* na = a.node();
  return tape_of(a).record(a.value().cwiseAbs(), [na](const Mat& g) {
    na->grad_ref() += g.cwiseProduct(na->value().unaryExpr([](double x) {
      return static_cast<double>((x > 0.0) - (x < 0.0));
    }));
  });
}

Var sum(const Var& a) {
  Node* na = a.node();
  Mat out(1, 1);
  out(0, 0) = a.value().sum();
  return tape_of(a).record(std::move(out), [na](const Mat& g) { na->grad_ref().array() += g(0, 0); });
}

Var softmax_rows(const Var& a) {
  Node* na = a.node();
  Mat out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double m = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - m).exp();
    out.row(r) /= out.row(r).sum();
  }
  auto result = tape_of(a).record(std::move(out), nullptr);
  Node* ns = result.node();
  ns->backward = [na, ns]() {
    const Mat& y = ns->value();
    const Mat& g = ns->grad;
    Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    Mat d = y.cwiseProduct(g);
    d -= (y.array().colwise() * dot.array()).matrix();
    na->grad_ref() += d;
  };
  return result;
}

Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index c = x.cols();
  require(gamma.rows() == 1 && gamma.cols() == c, "layer_norm: gamma shape mismatch");
  require(beta.rows() == 1 && beta.cols() == c, "layer_norm: beta shape mismatch");
  const Mat& xv = x.value();
  Eigen::VectorXd mean = xv.rowwise().mean();
  Mat centered = xv.colwise() - mean;
  Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(c)) + eps).rsqrt();
  Mat xhat = centered.array().colwise() * inv_std.array();
  Mat out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);

  Node* nx = x.node();
  Node* ng = gamma.node();
  Node* nb = beta.node();
  return tape_of(x).record(std::move(out), [nx, ng, nb, xhat, inv_std, c](const Mat& g) {
    ng->grad_ref() += g.cwiseProduct(xhat).colwise().sum();
    nb->grad_ref() += g.colwise().sum();
    Mat gx = g.array().rowwise() * ng->value().row(0).array();
    Eigen::VectorXd mean_g = gx.rowwise().mean();
    Eigen::VectorXd mean_gx = gx.cwiseProduct(xhat).rowwise().sum() / static_cast<double>(c);
    Mat d = gx.colwise() - mean_g;
    d -= (xhat.array().colwise() * mean_gx.array()).matrix();
    d = d.array().colwise() * inv_std.array();
    nx->grad_ref() += d;
  });
}

Var norm_columns(const Var& x, const Var& gamma, const Var& beta, double eps) {
  const Eigen::Index n = x.rows();
  require(gamma.rows() == 1 && gamma.cols() == x.cols(), "norm_columns: gamma shape mismatch");
  require(beta.rows() == 1 && beta.cols() == x.cols(), "norm_columns: beta shape mismatch");
  const Mat& xv = x.value();
  RowVec mean = xv.colwise().mean();
  Mat centered = xv.rowwise() - mean;
  RowVec inv_std = ((centered.array().square().colwise().sum() / static_cast<double>(n)) + eps).rsqrt();
  Mat xhat = centered.array().rowwise() * inv_std.array();
  Mat out = xhat.array().rowwise() * gamma.value().row(0).array();
  out.rowwise() += beta.value().row(0);

  Node* nx = x.node();
  Node* ng = gamma.node();
  Node* nb = beta.node();
  return tape_of(x).record(std::move(out), [nx, ng, nb, xhat, inv_std, n](const Mat& g) {
    ng->grad_ref() += g.cwiseProduct(xhat).colwise().sum();
    nb->grad_ref() += g.colwise().sum();
    Mat gx = g.array().rowwise() * ng->value().row(0).array();
    RowVec mean_g = gx.colwise().mean();
    RowVec mean_gx = gx.cwiseProduct(xhat).colwise().sum() / static_cast<double>(n);
    Mat d = gx.rowwise() - mean_g;
    d -= (xhat.array().rowwise() * mean_gx.array()).matrix();
    d = d.array().rowwise() * inv_std.array();
    nx->grad_ref() += d;
  });
}

// ---------------------------------------------------------------------------
// Structural

Var concat_rows(std::span<const Var> parts) {
  require(!parts.empty(), "concat_rows: no inputs");
  const Eigen::Index cols = parts[0].cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    require(p.cols() == cols, "concat_rows: width mismatch");
    rows += p.rows();
  }
  Mat out(rows, cols);
  std::vector<Node*> nodes;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
    nodes.push_back(p.node());
  }
  return tape_of(parts[0]).record(std::move(out), [nodes](const Mat& g) {
    Eigen::Index r = 0;
    for (Node* n : nodes) {
      const Eigen::Index k = n->value().rows();
      n->grad_ref() += g.middleRows(r, k);
      r += k;
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const Eigen::Index rows = parts[0].rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: length mismatch");
    cols += p.cols();
  }
  Mat out(rows, cols);
  std::vector<Node*> nodes;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
    nodes.push_back(p.node());
  }
  return tape_of(parts[0]).record(std::move(out), [nodes](const Mat& g) {
    Eigen::Index c = 0;
    for (Node* n : nodes) {
      const Eigen::Index k = n->value().cols();
      n->grad_ref() += g.middleCols(c, k);
      c += k;
    }
  });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
  Node* na = a.node();
  return tape_of(a).record(a.value().middleRows(start, count), [na, start, count](const Mat& g) {
    na->grad_ref().middleRows(start, count) += g;
  });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
  Node* na = a.node();
  return tape_of(a).record(a.value().middleCols(start, count), [na, start, count](const Mat& g) {
    na->grad_ref().middleCols(start, count) += g;
  });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
  require(rows * cols == a.value().size(), "reshape: element count mismatch");
  Node* na = a.node();
  Mat out = Eigen::Map<const Mat>(a.value().data(), rows, cols);
  return tape_of(a).record(std::move(out), [na](const Mat& g) {
    Mat& ga = na->grad_ref();
    Eigen::Map<Mat>(ga.data(), g.rows(), g.cols()) += g;
  });
}

Var space_to_depth(const Var& a, Eigen::Index h, Eigen::Index w, Eigen::Index s) {
  require(a.rows() == h * w, "space_to_depth: grid size mismatch");
  require(s >= 1 && h % s == 0 && w % s == 0, "space_to_depth: grid not divisible by stride");
  const Eigen::Index c = a.cols();
  const Eigen::Index oh = h / s;
  const Eigen::Index ow = w / s;
  const Mat& x = a.value();
  Mat out(oh * ow, s * s * c);
  for (Eigen::Index oy = 0; oy < oh; ++oy)
    for (Eigen::Index ox = 0; ox < ow; ++ox)
      for (Eigen::Index dy = 0; dy < s; ++dy)
        for (Eigen::Index dx = 0; dx < s; ++dx)
          out.row(oy * ow + ox).segment((dy * s + dx) * c, c) = x.row((oy * s + dy) * w + ox * s + dx);
  Node* na = a.node();
  return tape_of(a).record(std::move(out), [na, oh, ow, s, w, c](const Mat& g) {
    Mat& ga = na->grad_ref();
    for (Eigen::Index oy = 0; oy < oh; ++oy)
      for (Eigen::Index ox = 0; ox < ow; ++ox)
        for (Eigen::Index dy = 0; dy < s; ++dy)
          for (Eigen::Index dx = 0; dx < s; ++dx)
            ga.row((oy * s + dy) * w + ox * s + dx) += g.row(oy * ow + ox).segment((dy * s + dx) * c, c);
  });
}

Var im2col(const Var& a, Eigen::Index h, Eigen::Index w, Eigen::Index k) {
  require(a.rows() == h * w, "im2col: grid size mismatch");
  require(k % 2 == 1, "im2col: kernel size must be odd");
  const Eigen::Index c = a.cols();
  const Eigen::Index r = k / 2;
  const Mat& x = a.value();
  Mat out = Mat::Zero(h * w, k * k * c);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index xx = 0; xx < w; ++xx)
      for (Eigen::Index dy = 0; dy < k; ++dy) {
        const Eigen::Index sy = y + dy - r;
        if (sy < 0 || sy >= h) continue;
        for (Eigen::Index dx = 0; dx < k; ++dx) {
          const Eigen::Index sx = xx + dx - r;
          if (sx < 0 || sx >= w) continue;
          out.row(y * w + xx).segment((dy * k + dx) * c, c) = x.row(sy * w + sx);
        }
      }
  Node* na = a.node();
  return tape_of(a).record(std::move(out), [na, h, w, k, r, c](const Mat& g) {
    Mat& ga = na->grad_ref();
    for (Eigen::Index y = 0; y < h; ++y)
      for (Eigen::Index xx = 0; xx < w; ++xx)
        for (Eigen::Index dy = 0; dy < k; ++dy) {
          const Eigen::Index sy = y + dy - r;
          if (sy < 0 || sy >= h) continue;
          for (Eigen::Index dx = 0; dx < k; ++dx) {
            const Eigen::Index sx = xx + dx - r;
            if (sx < 0 || sx >= w) continue;
            ga.row(sy * w + sx) += g.row(y * w + xx).segment((dy * k + dx) * c, c);
          }
        }
  });
}

}  // namespace rgbtcc
