#pragma once

// Reverse-mode automatic differentiation over dense row-major matrices.
//
// A Tape records each primitive as it is evaluated; node ids grow
// monotonically, so the reverse sweep in backward() is a topological order.
// Parameters live in a ParameterSet outside the tape and enter it as leaves.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "iaseg/matrix.hpp"
#include "iaseg/spatial_hash.hpp"

namespace iaseg::ad {

struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Named learnable matrices in declaration order.
class ParameterSet {
 public:
  std::size_t add(std::string name, Matrix init);

  std::size_t size() const { return values_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Matrix& value(std::size_t i) { return values_[i]; }
  const Matrix& value(std::size_t i) const { return values_[i]; }
  std::size_t index_of(const std::string& name) const;

  std::vector<Matrix> zeros_like() const;
  std::size_t scalar_count() const;

  bool operator==(const ParameterSet& other) const;

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Leaf bound to params[index]; repeated calls return the same node.
  Var parameter(const ParameterSet& params, std::size_t index);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var add_bias(Var x, Var bias);  // bias is 1 x cols, broadcast over rows
  Var scale(Var a, double s);
  Var relu(Var a);
  Var concat_cols(std::span<const Var> parts);
  Var stack_rows(std::span<const Var> parts);
  Var gather_rows(Var a, std::vector<std::uint32_t> rows);
  Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);

  // out(i, c) = max over j in neighbors(i) of a(j, c); lowest j wins ties.
  Var neighborhood_max(Var a, std::shared_ptr<const NeighborLists> neighbors);
  // 1 x cols column-wise max over rows; lowest row wins ties.
  Var max_rows(Var a);

  Var sum(Var a);   // 1 x 1
  Var mean(Var a);  // 1 x 1
  // K x 1 softmax cross-entropy of each logits row against labels[i].
  Var softmax_ce_rows(Var logits, std::vector<int> labels);
  // Mean of the ceil(keep_fraction * K) largest entries of a K x 1 column.
  Var ohem_mean(Var losses, double keep_fraction);
  // Squared symmetric chamfer distance between pred rows and a fixed target.
  Var chamfer(Var pred, Matrix target);

  const Matrix& value(Var v) const { return nodes_[check(v)].value; }
  double scalar(Var v) const;
  // Gradient w.r.t. v after backward(); empty matrix when v was not reached.
  const Matrix& grad(Var v) const { return nodes_[check(v)].grad; }

  /// Loss must be 1 x 1; throws ArgumentError otherwise.
  void backward(Var loss);

  // grads[i] += d loss / d params[i] for every parameter leaf on this tape.
  void accumulate_parameter_grads(std::vector<Matrix>& grads) const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::int64_t param_index = -1;
    std::function<void(Tape&, const Matrix& out_grad)> backward;
  };

  std::size_t check(Var v) const;
  Var push(Matrix value, bool requires_grad, std::function<void(Tape&, const Matrix&)> backward);
  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }
  Matrix& grad_slot(Var v);

  std::vector<Node> nodes_;
  std::unordered_map<std::size_t, Var> param_leaves_;
};

// Indices of the kept (hardest) entries for OHEM: ceil(keep_fraction * K)
// largest values, at least one, ties to the lower index. Returned ascending.
std::vector<std::size_t> ohem_keep_indices(std::span<const double> losses, double keep_fraction);

struct ChamferResult {
  double value = 0.0;
  std::vector<std::size_t> nearest_in_b;  // for each row of a
  std::vector<std::size_t> nearest_in_a;  // for each row of b
};

// mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2 with row-by-row summation.
ChamferResult chamfer_with_matches(const Matrix& a, const Matrix& b);

}  // namespace iaseg::ad
