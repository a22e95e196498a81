#pragma once

// Minimal reverse-mode differentiation over dense double matrices.
//
// A Tape records every operation applied to its Vars. Calling backward() on a
// 1x1 result walks the record in reverse and accumulates gradients into every
// node, and into the `grad` field of any Parameter bound with parameter().
// Vars are cheap handles; they are only valid while their Tape is alive.

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace protofuse {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// A named learnable matrix with its gradient accumulator and Adam moments.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

namespace ad {

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Leaf that requires a gradient; read it back with grad() after backward().
  Var variable(Matrix value);
  // Leaf bound to a parameter; backward() adds into param.grad.
  Var parameter(Parameter& param);

  void backward(const Var& loss);

  const Matrix& value(const Var& v) const { return nodes_[v.id()].value; }
  Matrix grad(const Var& v) const;
  bool requires_grad(const Var& v) const { return nodes_[v.id()].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Used by op implementations.
  Var record(Matrix value, std::span<const Var> parents, BackwardFn fn);
  void accumulate(const Var& v, const Matrix& g);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  std::vector<Node> nodes_;
};

// Elementwise and linear algebra.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
// a (R x C) plus a 1 x C row broadcast over every row.
Var add_row(const Var& a, const Var& row);
// alpha * a + beta, elementwise.
Var affine(const Var& a, double alpha, double beta);
inline Var scale(const Var& a, double s) { return affine(a, s, 0.0); }
// Row i of a multiplied by w(i); w is R x 1.
Var scale_rows(const Var& a, const Var& w);
// Every entry of a multiplied by the 1x1 scalar s.
Var scale_by(const Var& a, const Var& s);
Var transpose(const Var& a);

Var exp(const Var& a);
Var log(const Var& a);
Var reciprocal(const Var& a);
Var abs(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var clamp(const Var& a, double lo, double hi);

Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
// Each row divided by its Euclidean norm. Throws NormalizationError on a
// zero-norm row.
Var normalize_rows(const Var& a);
// B x B matrix of Euclidean distances between rows of a.
Var pairwise_distance(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
// 1 x C sums over rows.
Var col_sum(const Var& a);
// R x 1 sums over columns.
Var row_sum(const Var& a);

Var concat_rows(std::span<const Var> parts);
Var concat_cols(const Var& a, const Var& b);
Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index count);
Var element(const Var& a, Eigen::Index r, Eigen::Index c);

}  // namespace ad
}  // namespace protofuse
