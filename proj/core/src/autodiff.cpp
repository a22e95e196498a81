#include "protofuse/autodiff.hpp"

#include <cmath>
#include <memory>

#include "protofuse/errors.hpp"

namespace protofuse::ad {

const Matrix& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, {}, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::variable(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, true, {}, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::parameter(Parameter& param) {
  nodes_.push_back(Node{param.value, {}, true, {}, &param});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record(Matrix value, std::span<const Var> parents, BackwardFn fn) {
  bool needs = false;
  for (const auto& p : parents) needs = needs || nodes_[p.id()].requires_grad;
  nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{}, nullptr});
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  Node& n = nodes_[v.id()];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_[v.id()];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.rows() != 1 || loss.cols() != 1) {
    throw PreconditionError("backward() requires a 1x1 loss");
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  nodes_[loss.id()].grad = Matrix::Ones(1, 1);
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) {
      // Copy: the callback may push into nodes_ via accumulate only, which
      // never reallocates, but the grad reference must stay stable regardless.
      const Matrix g = n.grad;
      n.backward(*this, g);
    }
    if (n.param != nullptr) {
      if (n.param->grad.size() == 0) {
        n.param->grad = n.grad;
      } else {
        n.param->grad += n.grad;
      }
    }
  }
}

namespace {

Tape& tape_of(const Var& a) { return *a.tape(); }

Var unary(const Var& a, Matrix value, std::function<Matrix(const Matrix& g, const Matrix& out)> dfn) {
  Tape& t = tape_of(a);
  const Var parents[] = {a};
  // The output value is needed by several derivatives (sigmoid, tanh, exp).
  auto out_copy = std::make_shared<Matrix>(value);
  return t.record(std::move(value), parents, [a, out_copy, dfn](Tape& tp, const Matrix& g) {
    tp.accumulate(a, dfn(g, *out_copy));
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  const Var parents[] = {a, b};
  return tape_of(a).record(a.value() * b.value(), parents, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

Var add(const Var& a, const Var& b) {
  const Var parents[] = {a, b};
  return tape_of(a).record(a.value() + b.value(), parents, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(const Var& a, const Var& b) {
  const Var parents[] = {a, b};
  return tape_of(a).record(a.value() - b.value(), parents, [a, b](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

Var mul(const Var& a, const Var& b) {
  const Var parents[] = {a, b};
  return tape_of(a).record(a.value().cwiseProduct(b.value()), parents, [a, b](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw PreconditionError("add_row: broadcast row has the wrong shape");
  }
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  const Var parents[] = {a, row};
  return tape_of(a).record(std::move(out), parents, [a, row](Tape& t, const Matrix& g) {
    t.accumulate(a, g);
    if (t.requires_grad(row)) t.accumulate(row, g.colwise().sum());
  });
}

Var affine(const Var& a, double alpha, double beta) {
  Matrix out = (alpha * a.value()).array() + beta;
  const Var parents[] = {a};
  return tape_of(a).record(std::move(out), parents,
                           [a, alpha](Tape& t, const Matrix& g) { t.accumulate(a, alpha * g); });
}

Var scale_rows(const Var& a, const Var& w) {
  if (w.cols() != 1 || w.rows() != a.rows()) {
    throw PreconditionError("scale_rows: weight vector length differs from row count");
  }
  Matrix out = a.value().array().colwise() * w.value().col(0).array();
  const Var parents[] = {a, w};
  return tape_of(a).record(std::move(out), parents, [a, w](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) {
      t.accumulate(a, Matrix(g.array().colwise() * t.value(w).col(0).array()));
    }
    if (t.requires_grad(w)) t.accumulate(w, g.cwiseProduct(t.value(a)).rowwise().sum());
  });
}

Var scale_by(const Var& a, const Var& s) {
  const Var parents[] = {a, s};
  return tape_of(a).record(a.value() * s.scalar(), parents, [a, s](Tape& t, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(s)(0, 0));
    if (t.requires_grad(s)) t.accumulate(s, Matrix::Constant(1, 1, g.cwiseProduct(t.value(a)).sum()));
  });
}

Var transpose(const Var& a) {
  const Var parents[] = {a};
  return tape_of(a).record(a.value().transpose(), parents,
                           [a](Tape& t, const Matrix& g) { t.accumulate(a, g.transpose()); });
}

Var exp(const Var& a) {
  return unary(a, a.value().array().exp().matrix(),
               [](const Matrix& g, const Matrix& out) -> Matrix { return g.cwiseProduct(out); });
}

Var log(const Var& a) {
  const Matrix in = a.value();
  return unary(a, in.array().log().matrix(),
               [in](const Matrix& g, const Matrix&) -> Matrix { return g.cwiseQuotient(in); });
}

Var reciprocal(const Var& a) {
  return unary(a, a.value().cwiseInverse(), [](const Matrix& g, const Matrix& out) -> Matrix {
    return -g.cwiseProduct(out.cwiseProduct(out));
  });
}

Var abs(const Var& a) {
  const Matrix sign = a.value().unaryExpr([](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
  return unary(a, a.value().cwiseAbs(),
               [sign](const Matrix& g, const Matrix&) -> Matrix { return g.cwiseProduct(sign); });
}

Var tanh(const Var& a) {
  return unary(a, a.value().array().tanh().matrix(), [](const Matrix& g, const Matrix& out) -> Matrix {
    return g.array() * (1.0 - out.array().square());
  });
}

Var sigmoid(const Var& a) {
  Matrix out = a.value().unaryExpr([](double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  });
  return unary(a, std::move(out), [](const Matrix& g, const Matrix& s) -> Matrix {
    return g.array() * s.array() * (1.0 - s.array());
  });
}

Var clamp(const Var& a, double lo, double hi) {
  const Matrix pass = a.value().unaryExpr([lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
  return unary(a, a.value().cwiseMax(lo).cwiseMin(hi),
               [pass](const Matrix& g, const Matrix&) -> Matrix { return g.cwiseProduct(pass); });
}

Var softmax_rows(const Var& a) {
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double mx = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  return unary(a, std::move(out), [](const Matrix& g, const Matrix& y) -> Matrix {
    const Vector dot = g.cwiseProduct(y).rowwise().sum();
    return y.array() * (g.colwise() - dot).array();
  });
}

Var log_softmax_rows(const Var& a) {
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double mx = out.row(r).maxCoeff();
    const double lse = mx + std::log((out.row(r).array() - mx).exp().sum());
    out.row(r).array() -= lse;
  }
  return unary(a, std::move(out), [](const Matrix& g, const Matrix& ls) -> Matrix {
    const Vector gsum = g.rowwise().sum();
    Matrix soft = ls.array().exp();
    return g - Matrix(soft.array().colwise() * gsum.array());
  });
}

Var normalize_rows(const Var& a) {
  const Vector norms = a.value().rowwise().norm();
  for (Eigen::Index r = 0; r < norms.size(); ++r) {
    if (!(norms(r) > 0.0)) throw NormalizationError("cannot L2-normalize a zero-norm row");
  }
  Matrix out = a.value().array().colwise() / norms.array();
  return unary(a, std::move(out), [norms](const Matrix& g, const Matrix& y) -> Matrix {
    const Vector dot = g.cwiseProduct(y).rowwise().sum();
    Matrix proj = g - Matrix(y.array().colwise() * dot.array());
    return proj.array().colwise() / norms.array();
  });
}

Var pairwise_distance(const Var& a) {
  const Matrix& x = a.value();
  const Eigen::Index n = x.rows();
  Matrix dist = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      dist(i, j) = dist(j, i) = (x.row(i) - x.row(j)).norm();
    }
  }
  const Var parents[] = {a};
  return tape_of(a).record(dist, parents, [a, dist](Tape& t, const Matrix& g) {
    const Matrix& xv = t.value(a);
    Matrix ga = Matrix::Zero(xv.rows(), xv.cols());
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
      for (Eigen::Index j = 0; j < xv.rows(); ++j) {
        // Distance is not differentiable at zero; use the zero subgradient.
        if (i == j || dist(i, j) <= 0.0) continue;
        const double coef = (g(i, j) + g(j, i)) / dist(i, j);
        if (j > i) {
          const RowVector diff = xv.row(i) - xv.row(j);
          ga.row(i) += coef * diff;
          ga.row(j) -= coef * diff;
        }
      }
    }
    t.accumulate(a, ga);
  });
}

Var sum(const Var& a) {
  const Var parents[] = {a};
  const Eigen::Index r = a.rows(), c = a.cols();
  return tape_of(a).record(Matrix::Constant(1, 1, a.value().sum()), parents, [a, r, c](Tape& t, const Matrix& g) {
    t.accumulate(a, Matrix::Constant(r, c, g(0, 0)));
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var col_sum(const Var& a) {
  const Var parents[] = {a};
  const Eigen::Index r = a.rows();
  return tape_of(a).record(a.value().colwise().sum(), parents, [a, r](Tape& t, const Matrix& g) {
    t.accumulate(a, g.replicate(r, 1));
  });
}

Var row_sum(const Var& a) {
  const Var parents[] = {a};
  const Eigen::Index c = a.cols();
  return tape_of(a).record(a.value().rowwise().sum(), parents, [a, c](Tape& t, const Matrix& g) {
    t.accumulate(a, g.replicate(1, c));
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw PreconditionError("concat_rows: no inputs");
  Eigen::Index total = 0;
  const Eigen::Index cols = parts.front().cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw PreconditionError("concat_rows: column mismatch");
    total += p.rows();
  }
  Matrix out(total, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Var> keep(parts.begin(), parts.end());
  return tape_of(parts.front()).record(std::move(out), parts, [keep](Tape& t, const Matrix& g) {
    Eigen::Index off = 0;
    for (const auto& p : keep) {
      const Eigen::Index n = t.value(p).rows();
      if (t.requires_grad(p)) t.accumulate(p, g.middleRows(off, n));
      off += n;
    }
  });
}

Var concat_cols(const Var& a, const Var& b) {
  if (a.rows() != b.rows()) throw PreconditionError("concat_cols: row mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const Var parents[] = {a, b};
  const Eigen::Index ca = a.cols(), cb = b.cols();
  return tape_of(a).record(std::move(out), parents, [a, b, ca, cb](Tape& t, const Matrix& g) {
    t.accumulate(a, g.leftCols(ca));
    t.accumulate(b, g.rightCols(cb));
  });
}

Var slice_rows(const Var& a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.rows()) throw PreconditionError("slice_rows: out of range");
  const Var parents[] = {a};
  const Eigen::Index r = a.rows(), c = a.cols();
  return tape_of(a).record(a.value().middleRows(begin, count), parents,
                           [a, begin, count, r, c](Tape& t, const Matrix& g) {
                             Matrix full = Matrix::Zero(r, c);
                             full.middleRows(begin, count) = g;
                             t.accumulate(a, full);
                           });
}

Var element(const Var& a, Eigen::Index row, Eigen::Index col) {
  const Var parents[] = {a};
  const Eigen::Index r = a.rows(), c = a.cols();
  return tape_of(a).record(Matrix::Constant(1, 1, a.value()(row, col)), parents,
                           [a, row, col, r, c](Tape& t, const Matrix& g) {
                             Matrix full = Matrix::Zero(r, c);
                             full(row, col) = g(0, 0);
                             t.accumulate(a, full);
                           });
}

}  // namespace protofuse::ad
