#include "rgbtcc/losses.hpp"

#include <algorithm>
#include <stdexcept>

namespace rgbtcc {

namespace {

// Keeps every predicted cell strictly positive so log-domain potentials stay
// finite; negligible against any real mass.
constexpr double kDensityFloor = 1e-10;

Eigen::Index grid_side(const Var& density) {
  const Eigen::Index cells = density.rows();
  Eigen::Index n = 1;
  while (n * n < cells) ++n;
  if (n * n != cells || density.cols() != 1)
    throw std::invalid_argument("loss: density must be an [n*n, 1] column");
  return n;
}

struct NormalizedDensity {
  Eigen::VectorXd a;
  double total = 0.0;
};

NormalizedDensity normalize(const Mat& d) {
  NormalizedDensity r;
  r.a = d.col(0).array() + kDensityFloor;
  r.total = r.a.sum();
  r.a /= r.total;
  return r;
}

// d(loss)/d(d_k) given d(loss)/d(a_i) for a = (d + floor) / sum(d + floor).
Eigen::VectorXd normalize_backward(const Eigen::VectorXd& grad_a, const NormalizedDensity& nd) {
  return (grad_a.array() - grad_a.dot(nd.a)) / nd.total;
}

double row_lse(const Eigen::Ref<const RowVec>& v) {
  const double mx = v.maxCoeff();
  return mx + std::log((v.array() - mx).exp().sum());
}

}  // namespace

void LossConfig::validate() const {
  if (!(ot_weight > 0.0) || !(tv_weight > 0.0) || !(sinkhorn_reg > 0.0))
    throw std::invalid_argument("loss: ot_weight, tv_weight and sinkhorn_reg must be positive");
  if (sinkhorn_iters < 1) throw std::invalid_argument("loss: sinkhorn_iters must be >= 1");
  if (count_token_weight < 0.0) throw std::invalid_argument("loss: count_token_weight must be >= 0");
}

double sinkhorn_schedule(double eps, int it, int iters) {
  const int ramp = static_cast<int>(0.3 * iters);
  const double start = std::max(1.0, eps);
  if (ramp <= 0 || it >= ramp || start <= eps) return eps;
  return start * std::pow(eps / start, static_cast<double>(it) / static_cast<double>(ramp));
}

Var ot_transport_cost(const Var& density, const Mat& gt_mass, double eps, int iters, OtDiagnostics* diag) {
  const Eigen::Index n = grid_side(density);
  if (gt_mass.rows() != n || gt_mass.cols() != n) throw std::invalid_argument("ot: ground truth grid mismatch");
  const double gt_total = gt_mass.sum();
  if (!(gt_total > 0.0)) throw std::invalid_argument("ot: ground truth has no mass");

  const NormalizedDensity nd = normalize(density.value());
  const Mat full_cost = grid_cost_matrix<double>(n);
  const Eigen::Map<const RowVec> gt_flat(gt_mass.data(), n * n);
  std::vector<Eigen::Index> support;
  for (Eigen::Index j = 0; j < n * n; ++j)
    if (gt_flat(j) > 0.0) support.push_back(j);
  const Eigen::Index rows = n * n;
  const Eigen::Index cols = static_cast<Eigen::Index>(support.size());
  Mat cost(rows, cols);
  Eigen::VectorXd b(cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    cost.col(j) = full_cost.col(support[j]);
    b(j) = gt_flat(support[j]) / gt_total;
  }
  const Eigen::VectorXd log_a = nd.a.array().log();
  const Eigen::VectorXd log_b = b.array().log();

  // f_hist[t] and g_hist[t] hold the potentials after iteration t.
  Mat f_hist(iters, rows);
  Mat g_hist(iters, cols);
  RowVec f = RowVec::Zero(rows);
  RowVec g = RowVec::Zero(cols);
  std::vector<double> eps_at(iters);
  for (int t = 0; t < iters; ++t) {
    const double e = sinkhorn_schedule(eps, t, iters);
    eps_at[t] = e;
    Mat mf = ((-cost).rowwise() + g) / e;
    for (Eigen::Index i = 0; i < rows; ++i) f(i) = e * log_a(i) - e * row_lse(mf.row(i));
    Mat mg = ((-cost.transpose()).rowwise() + f) / e;
    for (Eigen::Index j = 0; j < cols; ++j) g(j) = e * log_b(j) - e * row_lse(mg.row(j));
    f_hist.row(t) = f;
    g_hist.row(t) = g;
  }
  const double e_final = eps_at.back();
  Mat plan = (((-cost).colwise() + f.transpose()).rowwise() + g) / e_final;
  plan = plan.array().exp();
  Mat out(1, 1);
  out(0, 0) = plan.cwiseProduct(cost).sum();
  if (diag != nullptr) {
    diag->cost = out(0, 0);
    diag->marginal_violation =
        (plan.rowwise().sum() - nd.a).cwiseAbs().sum() + (plan.colwise().sum().transpose() - b).cwiseAbs().sum();
  }

  Node* nd_node = density.node();
  return density.tape()->record(
      std::move(out), [nd_node, nd, cost, plan, f_hist, g_hist, eps_at, rows, cols, iters](const Mat& up) {
        const double e_final = eps_at.back();
        const Mat gp = up(0, 0) * cost.cwiseProduct(plan) / e_final;
        RowVec gf = gp.rowwise().sum().transpose();
        RowVec gg = gp.colwise().sum();
        Eigen::VectorXd ga = Eigen::VectorXd::Zero(rows);
        for (int t = iters - 1; t >= 0; --t) {
          const double e = eps_at[t];
          // g_t = e log b - e LSE_i((f_t,i - C_ij) / e)
          Mat sg = ((-cost).colwise() + f_hist.row(t).transpose()) / e;
          for (Eigen::Index j = 0; j < cols; ++j) {
            const double mx = sg.col(j).maxCoeff();
            sg.col(j) = (sg.col(j).array() - mx).exp();
            sg.col(j) /= sg.col(j).sum();
          }
          gf.noalias() -= gg * sg.transpose();
          // f_t = e log a - e LSE_j((g_{t-1},j - C_ij) / e)
          ga += (gf.transpose().array() * e / nd.a.array()).matrix();
          if (t == 0) break;
          Mat sf = ((-cost).rowwise() + g_hist.row(t - 1)) / e;
          for (Eigen::Index i = 0; i < rows; ++i) {
            const double mx = sf.row(i).maxCoeff();
            sf.row(i) = (sf.row(i).array() - mx).exp();
            sf.row(i) /= sf.row(i).sum();
          }
          gg = -(gf * sf);
          gf.setZero();
        }
        nd_node->grad_ref().col(0) += normalize_backward(ga, nd);
      });
}

namespace {

Var tv_term(const Var& density, const Mat& gt_mass) {
  const double gt_total = gt_mass.sum();
  const NormalizedDensity nd = normalize(density.value());
  const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(gt_mass.data(), gt_mass.size()) / gt_total;
  const Eigen::VectorXd diff = nd.a - b;
  Mat out(1, 1);
  out(0, 0) = 0.5 * diff.cwiseAbs().sum() * gt_total;
  Node* node = density.node();
  return density.tape()->record(std::move(out), [node, nd, diff, gt_total](const Mat& up) {
    const Eigen::VectorXd sign = diff.unaryExpr([](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); });
    node->grad_ref().col(0) += normalize_backward(0.5 * gt_total * up(0, 0) * sign, nd);
  });
}

}  // namespace

DensityLoss dm_count_loss(const Var& density, const Mat& gt_mass, const LossConfig& config) {
  const Eigen::Index n = grid_side(density);
  if (gt_mass.rows() != n || gt_mass.cols() != n) throw std::invalid_argument("loss: ground truth grid mismatch");
  if (density.value().hasNaN()) throw std::invalid_argument("loss: NaN in density map");
  Tape& tape = *density.tape();
  const double gt_total = gt_mass.sum();
  DensityLoss out;
  out.count_term = abs(add_scalar(sum(density), -gt_total));
  if (gt_total <= 0.0) {
    out.ot_term = tape.constant(Mat::Zero(1, 1));
    out.tv_term = tape.constant(Mat::Zero(1, 1));
    return out;
  }
  out.ot_term = ot_transport_cost(density, gt_mass, config.sinkhorn_reg, config.sinkhorn_iters);
  out.tv_term = tv_term(density, gt_mass);
  return out;
}

Var count_token_loss(const Var& pred, double c_star) { return abs(add_scalar(pred, -c_star)); }

double count_token_loss(double pred, double c_star) { return std::abs(pred - c_star); }

LossResult total_loss(const Var& density, const Mat& gt_mass, const std::optional<Var>& count_pred,
                      const LossConfig& config) {
  DensityLoss dl = dm_count_loss(density, gt_mass, config);
  Var total = add(add(dl.count_term, scale(dl.ot_term, config.ot_weight)), scale(dl.tv_term, config.tv_weight));
  LossResult r;
  r.report.count_term = dl.count_term.scalar();
  r.report.ot_term = dl.ot_term.scalar();
  r.report.tv_term = dl.tv_term.scalar();
  if (count_pred) {
    Var ct = count_token_loss(*count_pred, gt_mass.sum());
    r.report.count_token_term = ct.scalar();
    total = add(total, scale(ct, config.count_token_weight));
  }
  r.total = total;
  r.report.total = total.scalar();
  if (!std::isfinite(r.report.total)) throw std::runtime_error("loss: non-finite total");
  return r;
}

}  // namespace rgbtcc
