#pragma once

#include "rgbtcc/autodiff.hpp"
#include "rgbtcc/image.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>

namespace rgbtcc::testing {

inline Mat random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline double rel_dev(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Largest relative deviation between the reverse-mode gradient of
/// f(tape, x) (a scalar) w.r.t. x and central differences.
inline double input_grad_deviation(const std::function<Var(Tape&, const Var&)>& f, const Mat& x0,
                                   double h = 1e-6, double floor = 1e-6) {
  Tape tape;
  Var xv = tape.constant(x0);
  tape.backward(f(tape, xv));
  const Mat g = xv.grad();
  double worst = 0.0;
  Mat x = x0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + h;
    Tape t1;
    const double up = f(t1, t1.constant(x)).scalar();
    x.data()[i] = saved - h;
    Tape t2;
    const double down = f(t2, t2.constant(x)).scalar();
    x.data()[i] = saved;
    worst = std::max(worst, rel_dev(g.data()[i], (up - down) / (2 * h), floor));
  }
  return worst;
}

/// Same for every entry of every parameter in `params`.
inline double param_grad_deviation(ParamSet& params, const std::function<Var(Tape&)>& f, double h = 1e-6,
                                   double floor = 1e-6, std::string* worst_name = nullptr) {
  params.zero_grad();
  {
    Tape tape;
    tape.backward(f(tape));
  }
  double worst = 0.0;
  for (auto& p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& v = p->value.data()[i];
      const double saved = v;
      v = saved + h;
      Tape t1;
      const double up = f(t1).scalar();
      v = saved - h;
      Tape t2;
      const double down = f(t2).scalar();
      v = saved;
      const double d = rel_dev(p->grad.data()[i], (up - down) / (2 * h), floor);
      if (d > worst) {
        worst = d;
        if (worst_name != nullptr) *worst_name = p->name;
      }
    }
  }
  return worst;
}

/// Scalar probe: sum of elementwise product with a fixed random matrix.
inline Var project(Tape& tape, const Var& y, const Mat& w) { return sum(cwise_mul(y, tape.constant(w))); }

}  // namespace rgbtcc::testing
