#include "rgbtcc/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace rgbtcc {

AdamW::AdamW(ParamSet& params, const OptimizerConfig& config) : params_(params), config_(config) {
  for (const auto& p : params_) {
    state_.m.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    state_.v.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::step() {
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  std::size_t i = 0;
  for (auto& p : params_) {
    Mat& m = state_.m[i];
    Mat& v = state_.v[i];
    ++i;
    if (p->grad.size() == 0) p->zero_grad();
    m = config_.beta1 * m + (1.0 - config_.beta1) * p->grad;
    v = config_.beta2 * v + (1.0 - config_.beta2) * p->grad.cwiseAbs2();
    p->value *= 1.0 - config_.lr * config_.weight_decay;
    p->value.array() -= config_.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + config_.eps);
  }
}

void AdamW::set_state(AdamState state) {
  if (state.m.size() != params_.size() || state.v.size() != params_.size())
    throw std::invalid_argument("optimizer state: parameter count mismatch");
  std::size_t i = 0;
  for (const auto& p : params_) {
    if (state.m[i].rows() != p->value.rows() || state.m[i].cols() != p->value.cols() ||
        state.v[i].rows() != p->value.rows() || state.v[i].cols() != p->value.cols())
      throw std::invalid_argument("optimizer state: shape mismatch for " + p->name);
    ++i;
  }
  state_ = std::move(state);
}

}  // namespace rgbtcc
