#pragma once

// Training objective: distribution-matching density loss plus L1 supervision
// of the count token.
//
//   total = count + ot_weight * ot + tv_weight * tv + count_token_weight * |c_hat - C*|
//
// count = |sum(d) - |P||, ot = transport cost of the entropic plan between the
// normalized density and the normalized binned ground truth, tv = 0.5 *
// ||d/sum(d) - gt/sum(gt)||_1 * |P|.

#include "rgbtcc/autodiff.hpp"
#include "rgbtcc/points.hpp"

#include <cmath>
#include <optional>
#include <vector>

namespace rgbtcc {

struct LossConfig {
  double ot_weight = 0.1;
  double tv_weight = 0.01;
  /// Entropic regularization in squared normalized-distance units.
  double sinkhorn_reg = 0.01;
  int sinkhorn_iters = 300;
  double count_token_weight = 1.0;

  void validate() const;
};

struct LossReport {
  double total = 0.0;
  double count_term = 0.0;
  double ot_term = 0.0;
  double tv_term = 0.0;
  double count_token_term = 0.0;
};

/// Squared Euclidean distances between the cell centers of an n x n grid in
/// [0,1]^2, indexed by row-major cell ids.
template <typename Scalar>
MatrixRM<Scalar> grid_cost_matrix(Eigen::Index n) {
  const Eigen::Index m = n * n;
  MatrixRM<Scalar> c(m, m);
  for (Eigen::Index a = 0; a < m; ++a)
    for (Eigen::Index b = 0; b < m; ++b) {
      const Scalar dx = static_cast<Scalar>((a % n) - (b % n)) / static_cast<Scalar>(n);
      const Scalar dy = static_cast<Scalar>((a / n) - (b / n)) / static_cast<Scalar>(n);
      c(a, b) = dx * dx + dy * dy;
    }
  return c;
}

/// Regularization used at iteration `it`: geometric decay from max(1, eps)
/// to eps over the first 30% of the iterations, then eps.
double sinkhorn_schedule(double eps, int it, int iters);

template <typename Scalar>
struct SinkhornResult {
  MatrixRM<Scalar> plan;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> f;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> g;
  Scalar cost = 0;
  /// L1 deviation of plan row and column sums from the marginals.
  Scalar marginal_violation = 0;
};

/// Log-domain Sinkhorn with annealed regularization. Marginals must be
/// strictly positive and sum to one; the final update is on g, so column
/// sums are exact up to rounding.
template <typename Scalar>
SinkhornResult<Scalar> sinkhorn(const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& a,
                                const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& b, const MatrixRM<Scalar>& cost,
                                Scalar eps, int iters) {
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Eigen::Index n = a.size();
  const Eigen::Index m = b.size();
  const Vec log_a = a.array().log();
  const Vec log_b = b.array().log();
  Vec f = Vec::Zero(n);
  Vec g = Vec::Zero(m);
  auto lse = [](const auto& v) {
    const Scalar mx = v.maxCoeff();
    return mx + std::log((v.array() - mx).exp().sum());
  };
  for (int it = 0; it < iters; ++it) {
    const Scalar e = static_cast<Scalar>(sinkhorn_schedule(static_cast<double>(eps), it, iters));
    for (Eigen::Index i = 0; i < n; ++i)
      f(i) = e * log_a(i) - e * lse(((g.transpose() - cost.row(i)) / e).eval());
    for (Eigen::Index j = 0; j < m; ++j)
      g(j) = e * log_b(j) - e * lse(((f - cost.col(j)) / e).eval());
  }
  SinkhornResult<Scalar> r;
  r.plan = ((f.replicate(1, m) + g.transpose().replicate(n, 1) - cost) / eps).array().exp();
  r.cost = r.plan.cwiseProduct(cost).sum();
  r.marginal_violation =
      (r.plan.rowwise().sum() - a).cwiseAbs().sum() + (r.plan.colwise().sum().transpose() - b).cwiseAbs().sum();
  r.f = std::move(f);
  r.g = std::move(g);
  return r;
}

struct OtDiagnostics {
  double cost = 0.0;
  double marginal_violation = 0.0;
};

/// Differentiable entropic transport cost between the normalized `density`
/// ([n*n, 1] cells) and the normalized `gt_mass` (n x n). The Sinkhorn
/// iterations are unrolled in the backward pass, so the gradient is exact
/// for the fixed iteration count. GT cells without mass are dropped.
Var ot_transport_cost(const Var& density, const Mat& gt_mass, double eps, int iters,
                      OtDiagnostics* diag = nullptr);

struct DensityLoss {
  Var count_term;
  Var ot_term;
  Var tv_term;
};

/// `density` is [n*n, 1], `gt_mass` the n x n binned ground truth.
/// Throws on NaN in the density.
DensityLoss dm_count_loss(const Var& density, const Mat& gt_mass, const LossConfig& config);

/// |pred - c_star|.
Var count_token_loss(const Var& pred, double c_star);
double count_token_loss(double pred, double c_star);

struct LossResult {
  Var total;
  LossReport report;
};

/// `count_pred` is absent for variants without a count token; its term is 0.
LossResult total_loss(const Var& density, const Mat& gt_mass, const std::optional<Var>& count_pred,
                      const LossConfig& config);

}  // namespace rgbtcc
