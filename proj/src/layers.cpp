#include "iaseg/layers.hpp"

#include <cmath>

#include "iaseg/errors.hpp"

namespace iaseg {

Linear Linear::create(ad::ParameterSet& params, const std::string& name, int in, int out, Rng& rng) {
  if (in <= 0 || out <= 0) throw ArgumentError("Linear '" + name + "': dimensions must be positive");
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  Matrix w(in, out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = params.add(name + ".weight", std::move(w));
  l.bias = params.add(name + ".bias", Matrix::Zero(1, out));
  return l;
}

ad::Var Linear::operator()(ad::Tape& tape, const ad::ParameterSet& params, ad::Var x) const {
  if (tape.value(x).cols() != in) {
    throw ArgumentError("Linear: expected " + std::to_string(in) + " input columns, got " +
                        std::to_string(tape.value(x).cols()));
  }
  return tape.add_bias(tape.matmul(x, tape.parameter(params, weight)), tape.parameter(params, bias));
}

std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()), 0);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    int best = 0;
    for (Eigen::Index c = 1; c < m.cols(); ++c) {
      if (m(i, c) > m(i, best)) best = static_cast<int>(c);
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace iaseg
