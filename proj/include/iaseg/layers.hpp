#pragma once

#include <string>

#include "iaseg/autodiff.hpp"
#include "iaseg/rng.hpp"

namespace iaseg {

// Affine layer y = x W + b with W stored (in x out).
struct Linear {
  std::size_t weight = 0;
  std::size_t bias = 0;
  int in = 0;
  int out = 0;

  // Registers "<name>.weight" (Glorot-uniform) and "<name>.bias" (zeros).
  static Linear create(ad::ParameterSet& params, const std::string& name, int in, int out, Rng& rng);

  ad::Var operator()(ad::Tape& tape, const ad::ParameterSet& params, ad::Var x) const;
};

/// Row-wise argmax with the lowest column winning ties.
std::vector<int> argmax_rows(const Matrix& m);

}  // namespace iaseg
