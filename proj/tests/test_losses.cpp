#include "oracles.hpp"
#include "rgbtcc/losses.hpp"
#include "test_support.hpp"

#include <doctest.h>

using namespace rgbtcc;
using rgbtcc::testing::random_mat;

namespace {

Mat column(const Mat& grid) { return Eigen::Map<const Mat>(grid.data(), grid.size(), 1); }

LossConfig sharp(double eps = 0.002, int iters = 2000) {
  LossConfig c;
  c.sinkhorn_reg = eps;
  c.sinkhorn_iters = iters;
  return c;
}

}  // namespace

TEST_CASE("count token loss examples") {
  CHECK(count_token_loss(5.0, 5.0) == 0.0);
  CHECK(count_token_loss(3.0, 5.0) == 2.0);
  CHECK(count_token_loss(7.0, 5.0) == 2.0);
  Tape tape;
  Var p = tape.constant(Mat::Constant(1, 1, 3.0));
  const Var l = count_token_loss(p, 5.0);
  CHECK(l.scalar() == 2.0);
  tape.backward(l);
  CHECK(p.grad()(0, 0) == -1.0);
}

TEST_CASE("exact match gives zero count and tv terms") {
  Mat gt = Mat::Zero(7, 7);
  gt(1, 2) = 2;
  gt(4, 4) = 1;
  gt(6, 0) = 3;
  Tape tape;
  const DensityLoss dl = dm_count_loss(tape.constant(column(gt)), gt, sharp());
  CHECK(dl.count_term.scalar() == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(dl.tv_term.scalar() < 1e-8);
  CHECK(dl.ot_term.scalar() < 1e-3);
}

TEST_CASE("empty ground truth") {
  const Mat gt = Mat::Zero(7, 7);
  Tape tape;
  const LossResult zero = total_loss(tape.constant(Mat::Zero(49, 1)), gt, tape.constant(Mat::Constant(1, 1, 1.5)),
                                     LossConfig{});
  CHECK(zero.report.total == doctest::Approx(1.5));
  CHECK(zero.report.count_token_term == 1.5);
  Rng rng(1);
  const Mat d = random_mat(49, 1, rng).cwiseAbs();
  const LossResult r = total_loss(tape.constant(d), gt, std::nullopt, LossConfig{});
  CHECK(r.report.count_term == doctest::Approx(d.sum()));
  CHECK(r.report.ot_term == 0.0);
  CHECK(r.report.tv_term == 0.0);
}

TEST_CASE("one-cell shift costs one squared cell distance") {
  for (int n : {3, 5, 7}) {
    Mat gt = Mat::Zero(n, n);
    gt(1, 1) = 1;
    Mat d = Mat::Zero(n, n);
    d(1, 2) = 1;
    Tape tape;
    const double ot = dm_count_loss(tape.constant(column(d)), gt, sharp()).ot_term.scalar();
    const double cell2 = 1.0 / (n * n);
    CHECK(std::abs(ot - cell2) < 0.1 * cell2);
  }
}

TEST_CASE("exact transport oracle sanity") {
  // Two unit masses swapped along a line.
  Eigen::VectorXd a(2), b(2);
  a << 0.5, 0.5;
  b << 0.5, 0.5;
  Mat c(2, 2);
  c << 0, 1, 1, 0;
  CHECK(oracle::exact_transport_cost(a, b, c) == doctest::Approx(0.0));
  b << 0.0, 1.0;
  CHECK(oracle::exact_transport_cost(a, b, c) == doctest::Approx(0.5));
  // Crossing paths: the oracle must reroute through a backward arc.
  Eigen::VectorXd a3(3), b3(3);
  a3 << 1, 1, 1;
  b3 << 1, 1, 1;
  Mat c3(3, 3);
  c3 << 0, 5, 1, 1, 0, 5, 5, 1, 0;
  CHECK(oracle::exact_transport_cost(a3, b3, c3) == doctest::Approx(0.0));
  c3 << 9, 1, 9, 9, 9, 1, 1, 9, 9;
  CHECK(oracle::exact_transport_cost(a3, b3, c3) == doctest::Approx(3.0));
}

TEST_CASE("entropic cost matches the exact oracle and satisfies the marginals") {
  Rng rng(2);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Index n = 3 + trial % 5;
    Mat d(n * n, 1);
    for (Eigen::Index i = 0; i < d.size(); ++i) d(i) = u(rng);
    Mat gt = Mat::Zero(n, n);
    std::uniform_int_distribution<Eigen::Index> cell(0, n * n - 1);
    for (int p = 0; p < 12; ++p) gt.data()[cell(rng)] += 1.0;
    OtDiagnostics diag;
    Tape tape;
    ot_transport_cost(tape.constant(d), gt, 0.005, 5000, &diag);
    const Eigen::VectorXd a = d.col(0) / d.sum();
    const Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(gt.data(), gt.size()) / gt.sum();
    const double exact = oracle::exact_transport_cost(a, b, grid_cost_matrix<double>(n));
    CHECK(std::abs(diag.cost - exact) <= 0.05 * exact);
    CHECK(diag.marginal_violation < 1e-3);
  }
}

TEST_CASE("report identity and weight switches") {
  Rng rng(3);
  Mat gt = Mat::Zero(5, 5);
  gt(0, 0) = 2;
  gt(3, 1) = 1;
  const Mat d = random_mat(25, 1, rng).cwiseAbs();
  LossConfig cfg;
  cfg.count_token_weight = 0.5;
  Tape tape;
  const LossResult r = total_loss(tape.constant(d), gt, tape.constant(Mat::Constant(1, 1, 4.0)), cfg);
  CHECK(r.report.total == doctest::Approx(r.report.count_term + cfg.ot_weight * r.report.ot_term +
                                          cfg.tv_weight * r.report.tv_term +
                                          cfg.count_token_weight * r.report.count_token_term)
                              .epsilon(1e-12));
  CHECK(r.report.count_token_term == 1.0);
  for (double v : {r.report.count_term, r.report.ot_term, r.report.tv_term}) CHECK(v >= 0.0);

  cfg.ot_weight = 0.0;
  cfg.tv_weight = 0.0;
  const LossResult plain = total_loss(tape.constant(d), gt, tape.constant(Mat::Constant(1, 1, 4.0)), cfg);
  CHECK(plain.report.total == doctest::Approx(plain.report.count_term + 0.5));

  Mat bad = d;
  bad(3) = std::nan("");
  CHECK_THROWS_AS(total_loss(tape.constant(bad), gt, std::nullopt, LossConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(total_loss(tape.constant(Mat::Zero(24, 1)), gt, std::nullopt, LossConfig{}),
                  std::invalid_argument);
}

TEST_CASE("loss gradient w.r.t. every density cell") {
  Rng rng(4);
  Mat gt = Mat::Zero(4, 4);
  gt(0, 1) = 2;
  gt(2, 3) = 1;
  gt(3, 0) = 1;
  std::uniform_real_distribution<double> u(0.1, 1.0);
  Mat d0(16, 1);
  for (Eigen::Index i = 0; i < 16; ++i) d0(i) = u(rng);
  for (LossConfig cfg : {LossConfig{}, sharp(0.05, 60)}) {
    CHECK(rgbtcc::testing::input_grad_deviation(
              [&](Tape&, const Var& x) { return total_loss(x, gt, std::nullopt, cfg).total; }, d0, 1e-6, 1e-6) <
          1e-3);
    CHECK(rgbtcc::testing::input_grad_deviation(
              [&](Tape&, const Var& x) {
                return ot_transport_cost(x, gt, cfg.sinkhorn_reg, cfg.sinkhorn_iters);
              },
              d0, 1e-6, 1e-6) < 1e-3);
  }
}

TEST_CASE("sinkhorn template agrees with the differentiable path") {
  Rng rng(5);
  const Eigen::Index n = 4;
  Eigen::VectorXd a = random_mat(16, 1, rng).cwiseAbs().col(0).array() + 0.1;
  Eigen::VectorXd b = random_mat(16, 1, rng).cwiseAbs().col(0).array() + 0.1;
  a /= a.sum();
  b /= b.sum();
  const LossConfig defaults;
  const auto r = sinkhorn<double>(a, b, grid_cost_matrix<double>(n), defaults.sinkhorn_reg, defaults.sinkhorn_iters);
  Tape tape;
  OtDiagnostics diag;
  ot_transport_cost(tape.constant(a), Eigen::Map<const Mat>(b.data(), n, n), defaults.sinkhorn_reg,
                    defaults.sinkhorn_iters, &diag);
  CHECK(r.cost == doctest::Approx(diag.cost).epsilon(1e-6));
  CHECK(r.marginal_violation < 1e-3);
  CHECK(sinkhorn_schedule(0.01, 99, 100) == 0.01);
  CHECK(sinkhorn_schedule(0.01, 0, 100) == 1.0);
}
