#pragma once

#include <cstdint>
#include <vector>

#include "iaseg/autodiff.hpp"
#include "iaseg/matrix.hpp"

namespace iaseg {

struct AdamHyperparams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimizerState {
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t step = 0;
  AdamHyperparams hp;

  static OptimizerState for_params(const ad::ParameterSet& params, AdamHyperparams hp = {});
  bool operator==(const OptimizerState& other) const;
};

/// Bias-corrected Adam update applied in place; increments state.step.
void adam_step(ad::ParameterSet& params, const std::vector<Matrix>& grads, OptimizerState& state,
               double lr);

// Linear warm-up from 0 to peak_lr, then cosine decay to peak_lr * final_lr_fraction.
struct LrSchedule {
  double peak_lr = 0.003;
  std::int64_t total_steps = 1;
  double warmup_fraction = 0.3;
  double final_lr_fraction = 1e-4;
};

/// Throws ArgumentError for step outside [0, total_steps] or an invalid schedule.
double onecycle_lr(std::int64_t step, const LrSchedule& schedule);

}  // namespace iaseg
