#include "iaseg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "iaseg/errors.hpp"

namespace iaseg::ad {

std::size_t ParameterSet::add(std::string name, Matrix init) {
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return values_.size() - 1;
}

std::size_t ParameterSet::index_of(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw ArgumentError("no parameter named '" + name + "'");
  return static_cast<std::size_t>(it - names_.begin());
}

std::vector<Matrix> ParameterSet::zeros_like() const {
  std::vector<Matrix> out;
  out.reserve(values_.size());
  for (const auto& v : values_) out.push_back(Matrix::Zero(v.rows(), v.cols()));
  return out;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

bool ParameterSet::operator==(const ParameterSet& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (values_[i].rows() != other.values_[i].rows() || values_[i].cols() != other.values_[i].cols() ||
        values_[i] != other.values_[i]) {
      return false;
    }
  }
  return true;
}

std::size_t Tape::check(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw ArgumentError("Var does not belong to this tape");
  }
  return static_cast<std::size_t>(v.id);
}

Var Tape::push(Matrix value, bool requires_grad, std::function<void(Tape&, const Matrix&)> backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Matrix& Tape::grad_slot(Var v) {
  Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.rows() != 1 || m.cols() != 1) throw ArgumentError("Tape::scalar on a non-scalar node");
  return m(0, 0);
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::parameter(const ParameterSet& params, std::size_t index) {
  if (index >= params.size()) throw ArgumentError("parameter index out of range");
  if (const auto it = param_leaves_.find(index); it != param_leaves_.end()) return it->second;
  Var v = push(params.value(index), true, nullptr);
  nodes_.back().param_index = static_cast<std::int64_t>(index);
  param_leaves_.emplace(index, v);
  return v;
}

Var Tape::matmul(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.cols() != bv.rows()) {
    throw ArgumentError("matmul: inner dimensions differ (" + std::to_string(av.cols()) + " vs " +
                        std::to_string(bv.rows()) + ")");
  }
  Matrix out = av * bv;
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Matrix& g) {
    if (t.needs(a)) t.grad_slot(a).noalias() += g * t.value(b).transpose();
    if (t.needs(b)) t.grad_slot(b).noalias() += t.value(a).transpose() * g;
  });
}

Var Tape::add(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (av.rows() != bv.rows() || av.cols() != bv.cols()) throw ArgumentError("add: shape mismatch");
  Matrix out = av + bv;
  return push(std::move(out), needs(a) || needs(b), [a, b](Tape& t, const Matrix& g) {
    if (t.needs(a)) t.grad_slot(a) += g;
    if (t.needs(b)) t.grad_slot(b) += g;
  });
}

Var Tape::add_bias(Var x, Var bias) {
  const Matrix& xv = value(x);
  const Matrix& bv = value(bias);
  if (bv.rows() != 1 || bv.cols() != xv.cols()) throw ArgumentError("add_bias: bias must be 1 x cols");
  Matrix out = xv.rowwise() + bv.row(0);
  return push(std::move(out), needs(x) || needs(bias), [x, bias](Tape& t, const Matrix& g) {
    if (t.needs(x)) t.grad_slot(x) += g;
    if (t.needs(bias)) t.grad_slot(bias) += g.colwise().sum();
  });
}

Var Tape::scale(Var a, double s) {
  Matrix out = value(a) * s;
  return push(std::move(out), needs(a), [a, s](Tape& t, const Matrix& g) { t.grad_slot(a) += g * s; });
}

Var Tape::relu(Var a) {
  Matrix out = value(a).cwiseMax(0.0);
  return push(std::move(out), needs(a), [a](Tape& t, const Matrix& g) {
    const Matrix& in = t.value(a);
    Matrix& ga = t.grad_slot(a);
    for (Eigen::Index i = 0; i < in.size(); ++i) {
      if (in.data()[i] > 0.0) ga.data()[i] += g.data()[i];
    }
  });
}

Var Tape::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no inputs");
  const Eigen::Index rows = value(parts[0]).rows();
  Eigen::Index cols = 0;
  bool any = false;
  for (Var p : parts) {
    if (value(p).rows() != rows) throw ArgumentError("concat_cols: row counts differ");
    cols += value(p).cols();
    any = any || needs(p);
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleCols(at, value(p).cols()) = value(p);
    at += value(p).cols();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return push(std::move(out), any, [ins](Tape& t, const Matrix& g) {
    Eigen::Index off = 0;
    for (Var p : ins) {
      const Eigen::Index c = t.value(p).cols();
      if (t.needs(p)) t.grad_slot(p) += g.middleCols(off, c);
      off += c;
    }
  });
}

Var Tape::stack_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ArgumentError("stack_rows: no inputs");
  const Eigen::Index cols = value(parts[0]).cols();
  Eigen::Index rows = 0;
  bool any = false;
  for (Var p : parts) {
    if (value(p).cols() != cols) throw ArgumentError("stack_rows: column counts differ");
    rows += value(p).rows();
    any = any || needs(p);
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, value(p).rows()) = value(p);
    at += value(p).rows();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return push(std::move(out), any, [ins](Tape& t, const Matrix& g) {
    Eigen::Index off = 0;
    for (Var p : ins) {
      const Eigen::Index r = t.value(p).rows();
      if (t.needs(p)) t.grad_slot(p) += g.middleRows(off, r);
      off += r;
    }
  });
}

Var Tape::gather_rows(Var a, std::vector<std::uint32_t> rows) {
  const Matrix& av = value(a);
  Matrix out(static_cast<Eigen::Index>(rows.size()), av.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= av.rows()) throw ArgumentError("gather_rows: row index out of range");
    out.row(static_cast<Eigen::Index>(i)) = av.row(rows[i]);
  }
  return push(std::move(out), needs(a), [a, rows = std::move(rows)](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_slot(a);
    for (std::size_t i = 0; i < rows.size(); ++i) ga.row(rows[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Var Tape::reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
  const Matrix& av = value(a);
  if (rows * cols != av.size()) throw ArgumentError("reshape: element count changes");
  Matrix out = Eigen::Map<const Matrix>(av.data(), rows, cols);
  return push(std::move(out), needs(a), [a](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_slot(a);
    Eigen::Map<Matrix>(ga.data(), g.rows(), g.cols()) += g;
  });
}

Var Tape::neighborhood_max(Var a, std::shared_ptr<const NeighborLists> neighbors) {
  const Matrix& av = value(a);
  if (!neighbors || neighbors->size() != static_cast<std::size_t>(av.rows())) {
    throw ArgumentError("neighborhood_max: neighbor lists do not match the row count");
  }
  const Eigen::Index rows = av.rows(), cols = av.cols();
  Matrix out(rows, cols);
  std::vector<std::uint32_t> arg(static_cast<std::size_t>(rows * cols));
  for (Eigen::Index i = 0; i < rows; ++i) {
    const std::uint32_t begin = neighbors->offsets[static_cast<std::size_t>(i)];
    const std::uint32_t end = neighbors->offsets[static_cast<std::size_t>(i) + 1];
    if (begin == end) throw ArgumentError("neighborhood_max: empty neighborhood");
    // Lists are sorted ascending, so strict '>' keeps the lowest index on ties.
    const std::uint32_t first = neighbors->indices[begin];
    double* o = out.row(i).data();
    std::uint32_t* ar = arg.data() + i * cols;
    const double* src = av.row(first).data();
    for (Eigen::Index c = 0; c < cols; ++c) {
      o[c] = src[c];
      ar[c] = first;
    }
    for (std::uint32_t k = begin + 1; k < end; ++k) {
      const std::uint32_t j = neighbors->indices[k];
      const double* r = av.row(j).data();
      for (Eigen::Index c = 0; c < cols; ++c) {
        if (r[c] > o[c]) {
          o[c] = r[c];
          ar[c] = j;
        }
      }
    }
  }
  return push(std::move(out), needs(a), [a, arg = std::move(arg)](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_slot(a);
    const Eigen::Index cols = g.cols();
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const std::uint32_t* ar = arg.data() + i * cols;
      const double* gi = g.row(i).data();
      for (Eigen::Index c = 0; c < cols; ++c) ga(ar[c], c) += gi[c];
    }
  });
}

Var Tape::max_rows(Var a) {
  const Matrix& av = value(a);
  if (av.rows() == 0) throw ArgumentError("max_rows: empty input");
  Matrix out = av.row(0);
  std::vector<Eigen::Index> arg(static_cast<std::size_t>(av.cols()), 0);
  for (Eigen::Index i = 1; i < av.rows(); ++i) {
    for (Eigen::Index c = 0; c < av.cols(); ++c) {
      if (av(i, c) > out(0, c)) {
        out(0, c) = av(i, c);
        arg[static_cast<std::size_t>(c)] = i;
      }
    }
  }
  return push(std::move(out), needs(a), [a, arg = std::move(arg)](Tape& t, const Matrix& g) {
    Matrix& ga = t.grad_slot(a);
    for (std::size_t c = 0; c < arg.size(); ++c) {
      ga(arg[c], static_cast<Eigen::Index>(c)) += g(0, static_cast<Eigen::Index>(c));
    }
  });
}

Var Tape::sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = value(a).sum();
  return push(std::move(out), needs(a), [a](Tape& t, const Matrix& g) {
    t.grad_slot(a).array() += g(0, 0);
  });
}

Var Tape::mean(Var a) {
  const Matrix& av = value(a);
  if (av.size() == 0) throw ArgumentError("mean: empty input");
  Matrix out(1, 1);
  out(0, 0) = av.sum() / static_cast<double>(av.size());
  const double inv = 1.0 / static_cast<double>(av.size());
  return push(std::move(out), needs(a), [a, inv](Tape& t, const Matrix& g) {
    t.grad_slot(a).array() += g(0, 0) * inv;
  });
}

Var Tape::softmax_ce_rows(Var logits, std::vector<int> labels) {
  const Matrix& z = value(logits);
  if (static_cast<Eigen::Index>(labels.size()) != z.rows()) {
    throw ArgumentError("softmax_ce_rows: one label per row required");
  }
  Matrix probs(z.rows(), z.cols());
  Matrix out(z.rows(), 1);
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= z.cols()) throw ArgumentError("softmax_ce_rows: label outside the class range");
    const double m = z.row(i).maxCoeff();
    double s = 0.0;
    for (Eigen::Index c = 0; c < z.cols(); ++c) {
      probs(i, c) = std::exp(z(i, c) - m);
      s += probs(i, c);
    }
    probs.row(i) /= s;
    out(i, 0) = std::log(s) + m - z(i, y);
  }
  return push(std::move(out), needs(logits),
              [logits, labels = std::move(labels), probs = std::move(probs)](Tape& t, const Matrix& g) {
                Matrix& gz = t.grad_slot(logits);
                for (Eigen::Index i = 0; i < probs.rows(); ++i) {
                  gz.row(i) += g(i, 0) * probs.row(i);
                  gz(i, labels[static_cast<std::size_t>(i)]) -= g(i, 0);
                }
              });
}

std::vector<std::size_t> ohem_keep_indices(std::span<const double> losses, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw ArgumentError("keep_fraction must be in (0, 1]");
  }
  if (losses.empty()) return {};
  const auto k = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(losses.size())));
  const std::size_t keep = std::clamp<std::size_t>(k, 1, losses.size());
  std::vector<std::size_t> order(losses.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return losses[a] > losses[b]; });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  return order;
}

Var Tape::ohem_mean(Var losses, double keep_fraction) {
  const Matrix& lv = value(losses);
  if (lv.cols() != 1 || lv.rows() == 0) throw ArgumentError("ohem_mean: expected a non-empty K x 1 column");
  auto kept = ohem_keep_indices(std::span<const double>(lv.data(), static_cast<std::size_t>(lv.rows())),
                                keep_fraction);
  double s = 0.0;
  for (std::size_t i : kept) s += lv(static_cast<Eigen::Index>(i), 0);
  Matrix out(1, 1);
  out(0, 0) = s / static_cast<double>(kept.size());
  return push(std::move(out), needs(losses), [losses, kept = std::move(kept)](Tape& t, const Matrix& g) {
    Matrix& gl = t.grad_slot(losses);
    const double w = g(0, 0) / static_cast<double>(kept.size());
    for (std::size_t i : kept) gl(static_cast<Eigen::Index>(i), 0) += w;
  });
}

ChamferResult chamfer_with_matches(const Matrix& a, const Matrix& b) {
  if (a.rows() == 0 || b.rows() == 0) throw ArgumentError("chamfer: point sets must be non-empty");
  if (a.cols() != b.cols()) throw ArgumentError("chamfer: dimension mismatch");
  ChamferResult r;
  r.nearest_in_b.resize(static_cast<std::size_t>(a.rows()));
  r.nearest_in_a.resize(static_cast<std::size_t>(b.rows()));
  std::vector<double> best_b(static_cast<std::size_t>(b.rows()), std::numeric_limits<double>::infinity());
  double sum_a = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      double d = 0.0;
      for (Eigen::Index c = 0; c < a.cols(); ++c) {
        const double diff = a(i, c) - b(j, c);
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        r.nearest_in_b[static_cast<std::size_t>(i)] = static_cast<std::size_t>(j);
      }
      if (d < best_b[static_cast<std::size_t>(j)]) {
        best_b[static_cast<std::size_t>(j)] = d;
        r.nearest_in_a[static_cast<std::size_t>(j)] = static_cast<std::size_t>(i);
      }
    }
    sum_a += best;
  }
  double sum_b = 0.0;
  for (double d : best_b) sum_b += d;
  r.value = sum_a / static_cast<double>(a.rows()) + sum_b / static_cast<double>(b.rows());
  return r;
}

Var Tape::chamfer(Var pred, Matrix target) {
  auto res = chamfer_with_matches(value(pred), target);
  Matrix out(1, 1);
  out(0, 0) = res.value;
  return push(std::move(out), needs(pred),
              [pred, target = std::move(target), res = std::move(res)](Tape& t, const Matrix& g) {
                const Matrix& p = t.value(pred);
                Matrix& gp = t.grad_slot(pred);
                const double wa = 2.0 * g(0, 0) / static_cast<double>(p.rows());
                const double wb = 2.0 * g(0, 0) / static_cast<double>(target.rows());
                for (Eigen::Index i = 0; i < p.rows(); ++i) {
                  const auto j = static_cast<Eigen::Index>(res.nearest_in_b[static_cast<std::size_t>(i)]);
                  gp.row(i) += wa * (p.row(i) - target.row(j));
                }
                for (Eigen::Index j = 0; j < target.rows(); ++j) {
                  const auto i = static_cast<Eigen::Index>(res.nearest_in_a[static_cast<std::size_t>(j)]);
                  gp.row(i) += wb * (p.row(i) - target.row(j));
                }
              });
}

void Tape::backward(Var loss) {
  const std::size_t root = check(loss);
  const Matrix& lv = nodes_[root].value;
  if (lv.rows() != 1 || lv.cols() != 1) throw ArgumentError("backward: loss must be a 1 x 1 node");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[root].grad = Matrix::Ones(1, 1);
  for (std::size_t k = root + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

void Tape::accumulate_parameter_grads(std::vector<Matrix>& grads) const {
  for (const auto& [index, var] : param_leaves_) {
    const Node& n = nodes_[static_cast<std::size_t>(var.id)];
    if (n.grad.size() == 0) continue;
    if (index >= grads.size()) throw ArgumentError("accumulate_parameter_grads: gradient list too short");
    grads[index] += n.grad;
  }
}

}  // namespace iaseg::ad
