#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace mpt {

using Mat = Eigen::MatrixXd;

class Tape;

// Lightweight handle into a Tape node. Copyable; valid as long as the tape
// lives. Default-constructed handles are null.
class Var {
 public:
  Var() = default;
  const Mat& val() const;
  const Mat& grad() const;
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
  double scalar() const { return val()(0, 0); }
  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int index() const { return idx_; }

 private:
  friend class Tape;
  Var(Tape* t, int i) : tape_(t), idx_(i) {}
  Tape* tape_ = nullptr;
  int idx_ = -1;
};

// Reverse-mode autodiff tape over dense matrices. Nodes are appended in
// topological order by construction; backward() walks them in reverse.
// Construct with grad=false for inference passes: values are computed but
// no backward closures or gradient buffers are kept.
class Tape {
 public:
  explicit Tape(bool grad = true) : grad_(grad) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_; }
  std::size_t size() const { return nodes_.size(); }

  Var leaf(Mat value) { return make(std::move(value)); }

  Var constant(double x) { return leaf(Mat::Constant(1, 1, x)); }

  // Seeds root with 1 and accumulates gradients into every node created
  // before it. Root must be a scalar (1x1).
  void backward(Var root) {
    if (!grad_) throw std::logic_error("tape: backward on no-grad tape");
    if (root.tape() != this) throw std::logic_error("tape: foreign root");
    if (root.rows() != 1 || root.cols() != 1)
      throw std::invalid_argument("tape: backward root must be 1x1");
    nodes_[root.index()].grad(0, 0) += 1.0;
    for (int i = root.index(); i >= 0; --i) {
      if (nodes_[i].back) nodes_[i].back();
    }
  }

  Var make(Mat value) {
    Node n;
    n.val = std::move(value);
    if (grad_) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  void set_back(Var v, std::function<void()> back) {
    if (grad_) nodes_[v.index()].back = std::move(back);
  }

  const Mat& val_at(int i) const { return nodes_[i].val; }
  Mat& grad_at(int i) {
    if (!grad_) throw std::logic_error("tape: gradients disabled");
    return nodes_[i].grad;
  }

 private:
  struct Node {
    Mat val;
    Mat grad;
    std::function<void()> back;
  };
  std::vector<Node> nodes_;
  bool grad_;
};

inline const Mat& Var::val() const { return tape_->val_at(idx_); }
inline const Mat& Var::grad() const { return tape_->grad_at(idx_); }

namespace detail {
inline Tape& same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::logic_error("tape: mixed tapes");
  return *a.tape();
}
inline void check_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}
}  // namespace detail

// --------------------------------------------------------------------------
// arithmetic
// --------------------------------------------------------------------------

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::check_same_shape(a, b, "add");
  Var out = t.make(a.val() + b.val());
  const int ia = a.index(), ib = b.index(), io = out.index();
  t.set_back(out, [&t, ia, ib, io] {
    t.grad_at(ia) += t.grad_at(io);
    t.grad_at(ib) += t.grad_at(io);
  });
  return out;
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::check_same_shape(a, b, "sub");
  Var out = t.make(a.val() - b.val());
  const int ia = a.index(), ib = b.index(), io = out.index();
  t.set_back(out, [&t, ia, ib, io] {
    t.grad_at(ia) += t.grad_at(io);
    t.grad_at(ib) -= t.grad_at(io);
  });
  return out;
}

inline Var cmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  detail::check_same_shape(a, b, "cmul");
  Var out = t.make(a.val().cwiseProduct(b.val()));
  const int ia = a.index(), ib = b.index(), io = out.index();
  t.set_back(out, [&t, ia, ib, io] {
    t.grad_at(ia) += t.grad_at(io).cwiseProduct(t.val_at(ib));
    t.grad_at(ib) += t.grad_at(io).cwiseProduct(t.val_at(ia));
  });
  return out;
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape();
  Var out = t.make(a.val() * s);
  const int ia = a.index(), io = out.index();
  t.set_back(out, [&t, ia, io, s] { t.grad_at(ia) += t.grad_at(io) * s; });
  return out;
}

// m scaled by a 1x1 variable (gradient flows to both).
inline Var scale_by(Var m, Var s) {
  Tape& t = detail::same_tape(m, s);
  if (s.rows() != 1 || s.cols() != 1) throw std::invalid_argument("scale_by: s must be 1x1");
  Var out = t.make(m.val() * s.scalar());
  const int im = m.index(), is = s.index(), io = out.index();
  t.set_back(out, [&t, im, is, io] {
    t.grad_at(im) += t.grad_at(io) * t.val_at(is)(0, 0);
    t.grad_at(is)(0, 0) += t.grad_at(io).cwiseProduct(t.val_at(im)).sum();
  });
  return out;
}

// m divided elementwise by a 1x1 variable.
inline Var div_scalar(Var m, Var s) {
  Tape& t = detail::same_tape(m, s);
  if (s.rows() != 1 || s.cols() != 1) throw std::invalid_argument("div_scalar: s must be 1x1");
  const double sv = s.scalar();
  Var out = t.make(m.val() / sv);
  const int im = m.index(), is = s.index(), io = out.index();
  t.set_back(out, [&t, im, is, io] {
    const double d = t.val_at(is)(0, 0);
    t.grad_at(im) += t.grad_at(io) / d;
    t.grad_at(is)(0, 0) -= t.grad_at(io).cwiseProduct(t.val_at(im)).sum() / (d * d);
  });
  return out;
}

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b);
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dims differ");
  Var out = t.make(a.val() * b.val());
  const int ia = a.index(), ib = b.index(), io = out.index();
  t.set_back(out, [&t, ia, ib, io] {
    t.grad_at(ia) += t.grad_at(io) * t.val_at(ib).transpose();
    t.grad_at(ib) += t.val_at(ia).transpose() * t.grad_at(io);
  });
  return out;
}

inline Var transpose(Var a) {
  Tape& t = *a.tape();
  Var out = t.make(a.val().transpose());
  const int ia = a.index(), io = out.index();
  t.set_back(out, [&t, ia, io] { t.grad_at(ia) += t.grad_at(io).transpose(); });
  return out;
}

// Broadcast-add a 1xC row vector over every row of m.
inline Var add_rowvec(Var m, Var r) {
  Tape& t = detail::same_tape(m, r);
  if (r.rows() != 1 || r.cols() != m.cols())
    throw std::invalid_argument("add_rowvec: r must be 1 x cols(m)");
  Var out = t.make(m.val().rowwise() + Eigen::RowVectorXd(r.val().row(0)));
  const int im = m.index(), ir = r.index(), io = out.index();
  t.set_back(out, [&t, im, ir, io] {
    t.grad_at(im) += t.grad_at(io);
    t.grad_at(ir) += t.grad_at(io).colwise().sum();
  });
  return out;
}

// Broadcast-multiply a 1xC row vector over every row of m.
inline Var mul_rowvec(Var m, Var r) {
  Tape& t = detail::same_tape(m, r);
  if (r.rows() != 1 || r.cols() != m.cols())
    throw std::invalid_argument("mul_rowvec: r must be 1 x cols(m)");
  Mat v = m.val().array().rowwise() * r.val().row(0).array();
  Var out = t.make(std::move(v));
  const int im = m.index(), ir = r.index(), io = out.index();
  t.set_back(out, [&t, im, ir, io] {
    t.grad_at(im) += Mat(t.grad_at(io).array().rowwise() * t.val_at(ir).row(0).array());
    t.grad_at(ir) += t.grad_at(io).cwiseProduct(t.val_at(im)).colwise().sum();
  });
  return out;
}

// Scale row i of m by w(i,0); w is a column vector.
inline Var mul_colvec(Var m, Var w) {
  Tape& t = detail::same_tape(m, w);
  if (w.cols() != 1 || w.rows() != m.rows())
    throw std::invalid_argument("mul_colvec: w must be rows(m) x 1");
  Mat v = m.val().array().colwise() * w.val().col(0).array();
  Var out = t.make(std::move(v));
  const int im = m.index(), iw = w.index(), io = out.index();
  t.set_back(out, [&t, im, iw, io] {
    t.grad_at(im) += Mat(t.grad_at(io).array().colwise() * t.val_at(iw).col(0).array());
    t.grad_at(iw) += t.grad_at(io).cwiseProduct(t.val_at(im)).rowwise().sum();
  });
  return out;
}

// --------------------------------------------------------------------------
// nonlinearities
// --------------------------------------------------------------------------

inline Var tanh_v(Var a) {
  Tape& t = *a.tape();
  Var out = t.make(a.val().array().tanh().matrix());
  const int ia = a.index(), io = out.index();
  t.set_back(out, [&t, ia, io] {
    const Mat& y = t.val_at(io);
    t.grad_at(ia) += t.grad_at(io).cwiseProduct(Mat(1.0 - y.array().square()));
  });
  return out;
}

inline Var sigmoid_v(Var a) {
  Tape& t = *a.tape();
  Mat v = (1.0 / (1.0 + (-a.val().array()).exp())).matrix();
  Var out = t.make(std::move(v));
  const int ia = a.index(), io = out.index();
  t.set_back(out, [&t, ia, io] {
    const Mat& y = t.val_at(io);
    t.grad_at(ia) += t.grad_at(io).cwiseProduct(Mat(y.array() * (1.0 - y.array())));
  });
  return out;
}

// Exact (erf-based) GELU; smooth everywhere, so finite differences agree.
inline Var gelu_v(Var a) {
  Tape& t = *a.tape();
  const Mat& x = a.val();
  Mat v(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i)
    v(i) = 0.5 * x(i) * (1.0 + std::erf(x(i) * M_SQRT1_2));
  Var out = t.make(std::move(v));
  const int ia = a.index(), io = out.index();
  t.set_back(out, [&t, ia, io] {
    const Mat& xin = t.val_at(ia);
    Mat d(xin.rows(), xin.cols());
    for (Eigen::Index i = 0; i < xin.size(); ++i) {
      const double xi = xin(i);
      const double cdf = 0.5 * (1.0 + std::erf(xi * M_SQRT1_2));
      const double pdf = std::exp(-0.5 * xi * xi) / std::sqrt(2.0 * M_PI);
      d(i) = cdf + xi * pdf;
    }
    t.grad_at(ia) += t.grad_at(io).cwiseProduct(d);
  });
  return out;
}

// Elementwise natural log; inputs must be strictly positive.
inline Var log_v(Var a) {
  Tape& t = *a.tape();
  Var out = t.make(a.val().array().log().matrix());
  const int ia = a.index(), io = out.index();
  t.set_back(out, [&t, ia, io] {
    t.grad_at(ia) += t.grad_at(io).cwiseQuotient(t.val_at(ia));
  });
  return out;
}

// Row-wise softmax with max subtraction.
inline Var softmax_rows(Var a) {
  Tape& t = *a.tape();
  Mat v = a.val();
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    Eigen::RowVectorXd row = v.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp();
    v.row(r) = row / row.sum();
  }
  Var out = t.make(std::move(v));
  const int ia = a.index(), io = out.index();
  t.set_back(out, [&t, ia, io] {
    const Mat& y = t.val_at(io);
    const Mat& g = t.grad_at(io);
    Mat& ga = t.grad_at(ia);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double dot = g.row(r).cwiseProduct(y.row(r)).sum();
      ga.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
    }
  });
  return out;
}

// Sum of -p*log(p) over all entries, with 0*log(0) == 0. Zero entries get a
// zero (sub)gradient; smooth inputs from a softmax never hit that branch.
inline Var entropy_sum(Var a) {
  Tape& t = *a.tape();
  const Mat& p = a.val();
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p(i) > 0.0) h -= p(i) * std::log(p(i));
  Var out = t.make(Mat::Constant(1, 1, h));
  const int ia = a.index(), io = out.index();
  t.set_back(out, [&t, ia, io] {
    const Mat& pin = t.val_at(ia);
    const double g = t.grad_at(io)(0, 0);
    Mat& ga = t.grad_at(ia);
    for (Eigen::Index i = 0; i < pin.size(); ++i)
      if (pin(i) > 0.0) ga(i) += g * (-(std::log(pin(i)) + 1.0));
  });
  return out;
}

// --------------------------------------------------------------------------
// shape ops
// --------------------------------------------------------------------------

inline Var rows_slice(Var a, Eigen::Index r0, Eigen::Index n) {
  Tape& t = *a.tape();
  if (r0 < 0 || r0 + n > a.rows()) throw std::invalid_argument("rows_slice: out of range");
  Var out = t.make(a.val().middleRows(r0, n));
  const int ia = a.index(), io = out.index();
  t.set_back(out, [&t, ia, io, r0, n] {
    t.grad_at(ia).middleRows(r0, n) += t.grad_at(io);
  });
  return out;
}

inline Var cols_slice(Var a, Eigen::Index c0, Eigen::Index n) {
  Tape& t = *a.tape();
  if (c0 < 0 || c0 + n > a.cols()) throw std::invalid_argument("cols_slice: out of range");
  Var out = t.make(a.val().middleCols(c0, n));
  const int ia = a.index(), io = out.index();
  t.set_back(out, [&t, ia, io, c0, n] {
    t.grad_at(ia).middleCols(c0, n) += t.grad_at(io);
  });
  return out;
}

inline Var entry(Var a, Eigen::Index r, Eigen::Index c) {
  Tape& t = *a.tape();
  if (r >= a.rows() || c >= a.cols()) throw std::invalid_argument("entry: out of range");
  Var out = t.make(Mat::Constant(1, 1, a.val()(r, c)));
  const int ia = a.index(), io = out.index();
  t.set_back(out, [&t, ia, io, r, c] { t.grad_at(ia)(r, c) += t.grad_at(io)(0, 0); });
  return out;
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
  Tape& t = *parts.front().tape();
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  for (const Var& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat v(rows, cols);
  Eigen::Index at = 0;
  std::vector<int> idx;
  std::vector<Eigen::Index> extents;
  idx.reserve(parts.size());
  extents.reserve(parts.size());
  for (const Var& p : parts) {
    v.middleRows(at, p.rows()) = p.val();
    idx.push_back(p.index());
    extents.push_back(p.rows());
    at += p.rows();
  }
  Var out = t.make(std::move(v));
  const int io = out.index();
  t.set_back(out, [&t, io, idx, extents] {
    Eigen::Index row = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      t.grad_at(idx[k]) += t.grad_at(io).middleRows(row, extents[k]);
      row += extents[k];
    }
  });
  return out;
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
  Tape& t = *parts.front().tape();
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts.front().rows();
  for (const Var& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat v(rows, cols);
  Eigen::Index at = 0;
  std::vector<int> idx;
  std::vector<Eigen::Index> extents;
  for (const Var& p : parts) {
    v.middleCols(at, p.cols()) = p.val();
    idx.push_back(p.index());
    extents.push_back(p.cols());
    at += p.cols();
  }
  Var out = t.make(std::move(v));
  const int io = out.index();
  t.set_back(out, [&t, io, idx, extents] {
    Eigen::Index col = 0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      t.grad_at(idx[k]) += t.grad_at(io).middleCols(col, extents[k]);
      col += extents[k];
    }
  });
  return out;
}

// Gather rows of a table by index; duplicate ids accumulate gradient.
inline Var lookup_rows(Var table, const std::vector<int>& ids) {
  Tape& t = *table.tape();
  Mat v(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] < 0 || ids[k] >= table.rows())
      throw std::out_of_range("lookup_rows: id " + std::to_string(ids[k]) + " out of range");
    v.row(static_cast<Eigen::Index>(k)) = table.val().row(ids[k]);
  }
  Var out = t.make(std::move(v));
  const int it = table.index(), io = out.index();
  t.set_back(out, [&t, it, io, ids] {
    for (std::size_t k = 0; k < ids.size(); ++k)
      t.grad_at(it).row(ids[k]) += t.grad_at(io).row(static_cast<Eigen::Index>(k));
  });
  return out;
}

// Gather columns of a 1xN row vector by index.
inline Var lookup_cols(Var rowvec, const std::vector<int>& ids) {
  Tape& t = *rowvec.tape();
  if (rowvec.rows() != 1) throw std::invalid_argument("lookup_cols: expects a row vector");
  Mat v(1, static_cast<Eigen::Index>(ids.size()));
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (ids[k] < 0 || ids[k] >= rowvec.cols())
      throw std::out_of_range("lookup_cols: id out of range");
    v(0, static_cast<Eigen::Index>(k)) = rowvec.val()(0, ids[k]);
  }
  Var out = t.make(std::move(v));
  const int ir = rowvec.index(), io = out.index();
  t.set_back(out, [&t, ir, io, ids] {
    for (std::size_t k = 0; k < ids.size(); ++k)
      t.grad_at(ir)(0, ids[k]) += t.grad_at(io)(0, static_cast<Eigen::Index>(k));
  });
  return out;
}

// --------------------------------------------------------------------------
// reductions and compositions
// --------------------------------------------------------------------------

inline Var sum_all(Var a) {
  Tape& t = *a.tape();
  Var out = t.make(Mat::Constant(1, 1, a.val().sum()));
  const int ia = a.index(), io = out.index();
  t.set_back(out, [&t, ia, io] {
    t.grad_at(ia).array() += t.grad_at(io)(0, 0);
  });
  return out;
}

// 0.5 * sum of squares; the gradient is the matrix itself.
inline Var half_square_sum(Var a) {
  Tape& t = *a.tape();
  Var out = t.make(Mat::Constant(1, 1, 0.5 * a.val().squaredNorm()));
  const int ia = a.index(), io = out.index();
  t.set_back(out, [&t, ia, io] {
    t.grad_at(ia) += t.grad_at(io)(0, 0) * t.val_at(ia);
  });
  return out;
}

inline Var mean_of(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("mean_of: empty");
  Var acc = parts.front();
  for (std::size_t k = 1; k < parts.size(); ++k) acc = add(acc, parts[k]);
  return scale(acc, 1.0 / static_cast<double>(parts.size()));
}

inline Var affine(Var x, Var w, Var b) { return add_rowvec(matmul(x, w), b); }

// Per-row layer normalization with learned gain/bias (both 1xC).
inline Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5) {
  Tape& t = *x.tape();
  if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 || bias.cols() != x.cols())
    throw std::invalid_argument("layer_norm_rows: gain/bias must be 1 x cols(x)");
  const Mat& xv = x.val();
  const Eigen::Index C = xv.cols();
  Mat xhat(xv.rows(), C);
  Eigen::VectorXd inv_sigma(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma(r) = is;
    xhat.row(r) = (xv.row(r).array() - mu) * is;
  }
  Mat v = (xhat.array().rowwise() * gain.val().row(0).array()).rowwise() +
          bias.val().row(0).array();
  Var out = t.make(std::move(v));
  const int ix = x.index(), ig = gain.index(), ib = bias.index(), io = out.index();
  t.set_back(out, [&t, ix, ig, ib, io, xhat, inv_sigma] {
    const Mat& g = t.grad_at(io);
    const Eigen::RowVectorXd gn = t.val_at(ig).row(0);
    Mat& gx = t.grad_at(ix);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gn);
      const double m1 = dxhat.mean();
      const double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
      gx.row(r) += inv_sigma(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
    }
    t.grad_at(ig) += g.cwiseProduct(xhat).colwise().sum();
    t.grad_at(ib) += g.colwise().sum();
  });
  return out;
}

}  // namespace mpt
