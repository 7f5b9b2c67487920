#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "iaseg/autodiff.hpp"
#include "iaseg/rng.hpp"
#include "iaseg/scene_io.hpp"

namespace iaseg::testing {

inline Matrix random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

inline PointCloud random_cloud(Rng& rng, std::size_t n, double extent) {
  PointCloud c;
  for (std::size_t i = 0; i < n; ++i) {
    c.points.push_back({static_cast<float>(rng.uniform(0.0, extent)), static_cast<float>(rng.uniform(0.0, extent)),
                        static_cast<float>(rng.uniform(0.0, extent)), static_cast<float>(rng.uniform())});
  }
  return c;
}

struct GradCheckStats {
  int checked = 0;
  int kinks = 0;     // entries within one step of a non-differentiable point
  int failures = 0;
  double max_rel = 0.0;
  double worst_analytic = 0.0;  // the entry behind max_rel
  double worst_numeric = 0.0;
  double worst_gap = 0.0;  // |forward - backward| slope difference there
};

// Relative error between an analytic and a numeric derivative. The floor keeps
// exactly-zero gradients from producing 0/0.
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3});
}

using LossFn = std::function<ad::Var(ad::Tape&, const ad::ParameterSet&)>;

// Central differences on `samples` randomly chosen scalar entries (all entries
// when samples <= 0). A mismatch is attributed to a kink (ReLU, max,
// nearest-neighbor switch inside the step) and not scored only when the two
// one-sided slopes differ and the analytic value equals one of them.
inline GradCheckStats grad_check(ad::ParameterSet& params, const LossFn& loss, Rng& pick, int samples,
                                 double step = 1e-5, double tol = 1e-4) {
  auto eval = [&] {
    ad::Tape t;
    return t.scalar(loss(t, params));
  };
  ad::Tape tape;
  const ad::Var l = loss(tape, params);
  tape.backward(l);
  auto grads = params.zeros_like();
  tape.accumulate_parameter_grads(grads);
  const double f0 = tape.scalar(l);

  std::vector<std::pair<std::size_t, Eigen::Index>> entries;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (Eigen::Index k = 0; k < params.value(p).size(); ++k) entries.emplace_back(p, k);
  }
  if (samples > 0 && static_cast<std::size_t>(samples) < entries.size()) {
    pick.shuffle(std::span(entries));
    entries.resize(static_cast<std::size_t>(samples));
  }

  GradCheckStats s;
  for (const auto& [p, k] : entries) {
    double& v = params.value(p).data()[k];
    const double saved = v;
    v = saved + step;
    const double fp = eval();
    v = saved - step;
    const double fm = eval();
    v = saved;
    const double numeric = (fp - fm) / (2.0 * step);
    const double forward = (fp - f0) / step;
    const double backward = (f0 - fm) / step;
    const double analytic = grads[p].data()[k];
    const double gap = std::abs(forward - backward);
    const double one_sided = std::min(std::abs(analytic - forward), std::abs(analytic - backward));
    if (relative_error(analytic, numeric) > tol && gap > 1e-7 && one_sided <= 0.25 * gap) {
      ++s.kinks;
      continue;
    }
    const double rel = relative_error(analytic, numeric);
    if (rel > s.max_rel) {
      s.max_rel = rel;
      s.worst_analytic = analytic;
      s.worst_numeric = numeric;
      s.worst_gap = gap;
    }
    ++s.checked;
    if (rel > tol) ++s.failures;
  }
  return s;
}

}  // namespace iaseg::testing
