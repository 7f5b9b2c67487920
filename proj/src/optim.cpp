#include "iaseg/optim.hpp"

#include <cmath>
#include <numbers>

#include "iaseg/errors.hpp"

namespace iaseg {

OptimizerState OptimizerState::for_params(const ad::ParameterSet& params, AdamHyperparams hp) {
  OptimizerState s;
  s.first_moment = params.zeros_like();
  s.second_moment = params.zeros_like();
  s.hp = hp;
  return s;
}

bool OptimizerState::operator==(const OptimizerState& other) const {
  if (step != other.step || first_moment.size() != other.first_moment.size()) return false;
  for (std::size_t i = 0; i < first_moment.size(); ++i) {
    if (first_moment[i] != other.first_moment[i] || second_moment[i] != other.second_moment[i]) return false;
  }
  return hp.beta1 == other.hp.beta1 && hp.beta2 == other.hp.beta2 && hp.eps == other.hp.eps;
}

void adam_step(ad::ParameterSet& params, const std::vector<Matrix>& grads, OptimizerState& state,
               double lr) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw ArgumentError("adam_step: parameter, gradient and moment counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix& p = params.value(i);
    if (grads[i].rows() != p.rows() || grads[i].cols() != p.cols() ||
        state.first_moment[i].rows() != p.rows() || state.first_moment[i].cols() != p.cols()) {
      throw ArgumentError("adam_step: shape mismatch for parameter '" + params.name(i) + "'");
    }
  }
  ++state.step;
  const double b1 = state.hp.beta1, b2 = state.hp.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = params.value(i);
    Matrix& m = state.first_moment[i];
    Matrix& v = state.second_moment[i];
    const Matrix& g = grads[i];
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      const double gk = g.data()[k];
      m.data()[k] = b1 * m.data()[k] + (1.0 - b1) * gk;
      v.data()[k] = b2 * v.data()[k] + (1.0 - b2) * gk * gk;
      const double m_hat = m.data()[k] / c1;
      const double v_hat = v.data()[k] / c2;
      p.data()[k] -= lr * m_hat / (std::sqrt(v_hat) + state.hp.eps);
    }
  }
}

double onecycle_lr(std::int64_t step, const LrSchedule& s) {
  if (s.total_steps < 1) throw ArgumentError("onecycle_lr: total_steps must be >= 1");
  if (!(s.warmup_fraction > 0.0 && s.warmup_fraction < 1.0)) {
    throw ArgumentError("onecycle_lr: warmup_fraction must be in (0, 1)");
  }
  if (step < 0 || step > s.total_steps) {
    throw ArgumentError("onecycle_lr: step " + std::to_string(step) + " outside [0, " +
                        std::to_string(s.total_steps) + "]");
  }
  const double warm = s.warmup_fraction * static_cast<double>(s.total_steps);
  const double x = static_cast<double>(step);
  if (x <= warm) return s.peak_lr * x / warm;
  const double floor_lr = s.peak_lr * s.final_lr_fraction;
  const double progress = (x - warm) / (static_cast<double>(s.total_steps) - warm);
  return floor_lr + (s.peak_lr - floor_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace iaseg
