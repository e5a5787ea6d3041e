#include "tridira/autodiff.hpp"

#include <cmath>
#include <numbers>

namespace tridira::ad {

namespace {
constexpr double kNormFloor = 1e-300;
}

int Tape::check(Value v) const {
  if (!v.valid() || static_cast<std::size_t>(v.idx) >= nodes_.size()) {
    throw ShapeError("invalid tape value handle");
  }
  return v.idx;
}

Matrix& Tape::grad_buf(int idx) {
  Node& n = nodes_[static_cast<std::size_t>(idx)];
  if (!n.grad_ready) {
    n.grad = Matrix::Zero(n.val.rows(), n.val.cols());
    n.grad_ready = true;
  }
  return n.grad;
}

const Matrix& Tape::grad(Value v) const {
  const Node& n = nodes_[static_cast<std::size_t>(check(v))];
  if (!n.grad_ready) {
    static const Matrix empty;
    if (n.val.size() == 0) return empty;
    throw ValidationError("gradient not computed for this value; run backward first");
  }
  return n.grad;
}

double Tape::scalar_val(Value v) const {
  const Matrix& m = val(v);
  if (m.rows() != 1 || m.cols() != 1) throw ShapeError("expected 1x1 value");
  return m(0, 0);
}

Value Tape::push(Matrix val, bool needs, std::function<void()> back) {
  nodes_.push_back(Node{std::move(val), Matrix(), std::move(back), needs, false});
  return Value{static_cast<int>(nodes_.size()) - 1};
}

Value Tape::input(Matrix v, bool needs_grad) { return push(std::move(v), needs_grad, nullptr); }

Value Tape::scalar(double s) {
  Matrix m(1, 1);
  m(0, 0) = s;
  return input(std::move(m), false);
}

void Tape::backward(Value root) {
  const int r = check(root);
  Node& rn = nodes_[static_cast<std::size_t>(r)];
  if (rn.val.rows() != 1 || rn.val.cols() != 1) {
    throw ShapeError("backward root must be a 1x1 scalar");
  }
  grad_buf(r)(0, 0) = 1.0;
  for (int i = r; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.back && n.needs && n.grad_ready) n.back();
  }
}

// ---------------------------------------------------------------------------
// arithmetic

Value Tape::add(Value a, Value b) {
  const int ia = check(a), ib = check(b);
  if (nodes_[ia].val.rows() != nodes_[ib].val.rows() ||
      nodes_[ia].val.cols() != nodes_[ib].val.cols()) {
    throw ShapeError("add: shape mismatch");
  }
  const bool ng = needs(a) || needs(b);
  Value out = push(nodes_[ia].val + nodes_[ib].val, ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, ib, io] {
      const Matrix& g = nodes_[io].grad;
      if (nodes_[ia].needs) grad_buf(ia) += g;
      if (nodes_[ib].needs) grad_buf(ib) += g;
    };
  }
  return out;
}

Value Tape::sub(Value a, Value b) {
  const int ia = check(a), ib = check(b);
  if (nodes_[ia].val.rows() != nodes_[ib].val.rows() ||
      nodes_[ia].val.cols() != nodes_[ib].val.cols()) {
    throw ShapeError("sub: shape mismatch");
  }
  const bool ng = needs(a) || needs(b);
  Value out = push(nodes_[ia].val - nodes_[ib].val, ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, ib, io] {
      const Matrix& g = nodes_[io].grad;
      if (nodes_[ia].needs) grad_buf(ia) += g;
      if (nodes_[ib].needs) grad_buf(ib) -= g;
    };
  }
  return out;
}

Value Tape::mul(Value a, Value b) {
  const int ia = check(a), ib = check(b);
  if (nodes_[ia].val.rows() != nodes_[ib].val.rows() ||
      nodes_[ia].val.cols() != nodes_[ib].val.cols()) {
    throw ShapeError("mul: shape mismatch");
  }
  const bool ng = needs(a) || needs(b);
  Value out = push(nodes_[ia].val.cwiseProduct(nodes_[ib].val), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, ib, io] {
      const Matrix& g = nodes_[io].grad;
      if (nodes_[ia].needs) grad_buf(ia) += g.cwiseProduct(nodes_[ib].val);
      if (nodes_[ib].needs) grad_buf(ib) += g.cwiseProduct(nodes_[ia].val);
    };
  }
  return out;
}

Value Tape::scale(Value a, double s) {
  const int ia = check(a);
  const bool ng = needs(a);
  Value out = push(nodes_[ia].val * s, ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io, s] { grad_buf(ia) += s * nodes_[io].grad; };
  }
  return out;
}

Value Tape::matmul(Value a, Value b) {
  const int ia = check(a), ib = check(b);
  if (nodes_[ia].val.cols() != nodes_[ib].val.rows()) throw ShapeError("matmul: inner dims");
  const bool ng = needs(a) || needs(b);
  Value out = push(nodes_[ia].val * nodes_[ib].val, ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, ib, io] {
      const Matrix& g = nodes_[io].grad;
      if (nodes_[ia].needs) grad_buf(ia) += g * nodes_[ib].val.transpose();
      if (nodes_[ib].needs) grad_buf(ib) += nodes_[ia].val.transpose() * g;
    };
  }
  return out;
}

Value Tape::transpose(Value a) {
  const int ia = check(a);
  const bool ng = needs(a);
  Value out = push(nodes_[ia].val.transpose(), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io] { grad_buf(ia) += nodes_[io].grad.transpose(); };
  }
  return out;
}

Value Tape::add_rowvec(Value a, Value row) {
  const int ia = check(a), ir = check(row);
  if (nodes_[ir].val.rows() != 1 || nodes_[ir].val.cols() != nodes_[ia].val.cols()) {
    throw ShapeError("add_rowvec: row must be 1 x cols(a)");
  }
  const bool ng = needs(a) || needs(row);
  Matrix v = nodes_[ia].val;
  v.rowwise() += nodes_[ir].val.row(0);
  Value out = push(std::move(v), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, ir, io] {
      const Matrix& g = nodes_[io].grad;
      if (nodes_[ia].needs) grad_buf(ia) += g;
      if (nodes_[ir].needs) grad_buf(ir) += g.colwise().sum();
    };
  }
  return out;
}

Value Tape::sub_rowvec(Value a, Value row) {
  const int ia = check(a), ir = check(row);
  if (nodes_[ir].val.rows() != 1 || nodes_[ir].val.cols() != nodes_[ia].val.cols()) {
    throw ShapeError("sub_rowvec: row must be 1 x cols(a)");
  }
  const bool ng = needs(a) || needs(row);
  Matrix v = nodes_[ia].val;
  v.rowwise() -= nodes_[ir].val.row(0);
  Value out = push(std::move(v), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, ir, io] {
      const Matrix& g = nodes_[io].grad;
      if (nodes_[ia].needs) grad_buf(ia) += g;
      if (nodes_[ir].needs) grad_buf(ir) -= g.colwise().sum();
    };
  }
  return out;
}

Value Tape::mul_const(Value a, const Matrix& c) {
  const int ia = check(a);
  if (c.rows() != nodes_[ia].val.rows() || c.cols() != nodes_[ia].val.cols()) {
    throw ShapeError("mul_const: shape mismatch");
  }
  const bool ng = needs(a);
  Value out = push(nodes_[ia].val.cwiseProduct(c), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    Matrix cc = c;
    nodes_[io].back = [this, ia, io, cc] { grad_buf(ia) += nodes_[io].grad.cwiseProduct(cc); };
  }
  return out;
}

Value Tape::scale_rows(Value a, const Vector& w) {
  const int ia = check(a);
  if (w.size() != nodes_[ia].val.rows()) throw ShapeError("scale_rows: weight length");
  const bool ng = needs(a);
  Value out = push(w.asDiagonal() * nodes_[ia].val, ng, nullptr);
  const int io = out.idx;
  if (ng) {
    Vector ww = w;
    nodes_[io].back = [this, ia, io, ww] {
      grad_buf(ia) += ww.asDiagonal() * nodes_[io].grad;
    };
  }
  return out;
}

Value Tape::add_constant(Value a, const Matrix& c) {
  const int ia = check(a);
  if (c.rows() != nodes_[ia].val.rows() || c.cols() != nodes_[ia].val.cols()) {
    throw ShapeError("add_constant: shape mismatch");
  }
  const bool ng = needs(a);
  Value out = push(nodes_[ia].val + c, ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io] { grad_buf(ia) += nodes_[io].grad; };
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise

Value Tape::tanh(Value a) {
  const int ia = check(a);
  const bool ng = needs(a);
  Value out = push(nodes_[ia].val.array().tanh().matrix(), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io] {
      const Matrix& y = nodes_[io].val;
      grad_buf(ia) +=
          nodes_[io].grad.cwiseProduct((1.0 - y.array().square()).matrix());
    };
  }
  return out;
}

Value Tape::gelu(Value a) {
  const int ia = check(a);
  const bool ng = needs(a);
  const Matrix& x = nodes_[ia].val;
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x(i);
    y(i) = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  }
  Value out = push(std::move(y), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io] {
      const Matrix& x2 = nodes_[ia].val;
      const Matrix& g = nodes_[io].grad;
      Matrix& ga = grad_buf(ia);
      const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
      for (Eigen::Index i = 0; i < x2.size(); ++i) {
        const double v = x2(i);
        const double cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        ga(i) += g(i) * (cdf + v * pdf);
      }
    };
  }
  return out;
}

Value Tape::log(Value a) {
  const int ia = check(a);
  const bool ng = needs(a);
  Value out = push(nodes_[ia].val.array().log().matrix(), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io] {
      grad_buf(ia) += nodes_[io].grad.cwiseQuotient(nodes_[ia].val);
    };
  }
  return out;
}

Value Tape::square(Value a) {
  const int ia = check(a);
  const bool ng = needs(a);
  Value out = push(nodes_[ia].val.array().square().matrix(), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io] {
      grad_buf(ia) += 2.0 * nodes_[io].grad.cwiseProduct(nodes_[ia].val);
    };
  }
  return out;
}

Value Tape::pow_int(Value a, int k) {
  if (k < 1) throw ValidationError("pow_int requires k >= 1");
  const int ia = check(a);
  const bool ng = needs(a);
  Value out = push(nodes_[ia].val.array().pow(k).matrix(), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io, k] {
      grad_buf(ia) += static_cast<double>(k) *
                      nodes_[io].grad.cwiseProduct(nodes_[ia].val.array().pow(k - 1).matrix());
    };
  }
  return out;
}

Value Tape::reciprocal(Value a) {
  const int ia = check(a);
  const bool ng = needs(a);
  Value out = push(nodes_[ia].val.cwiseInverse(), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io] {
      const Matrix& y = nodes_[io].val;
      grad_buf(ia) -= nodes_[io].grad.cwiseProduct(y.cwiseProduct(y));
    };
  }
  return out;
}

Value Tape::clamp(Value a, double lo, double hi) {
  if (!(hi > lo)) throw ValidationError("clamp: hi must exceed lo");
  const int ia = check(a);
  const bool ng = needs(a);
  Value out = push(nodes_[ia].val.cwiseMax(lo).cwiseMin(hi), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io, lo, hi] {
      const Matrix& x = nodes_[ia].val;
      const Matrix& g = nodes_[io].grad;
      Matrix& ga = grad_buf(ia);
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (x(i) >= lo && x(i) <= hi) ga(i) += g(i);
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions

Value Tape::sum(Value a) {
  const int ia = check(a);
  const bool ng = needs(a);
  Matrix m(1, 1);
  m(0, 0) = nodes_[ia].val.sum();
  Value out = push(std::move(m), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io] {
      grad_buf(ia).array() += nodes_[io].grad(0, 0);
    };
  }
  return out;
}

Value Tape::mean_all(Value a) {
  const int ia = check(a);
  const bool ng = needs(a);
  const double n = static_cast<double>(nodes_[ia].val.size());
  Matrix m(1, 1);
  m(0, 0) = nodes_[ia].val.mean();
  Value out = push(std::move(m), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io, n] {
      grad_buf(ia).array() += nodes_[io].grad(0, 0) / n;
    };
  }
  return out;
}

Value Tape::colwise_mean(Value a) {
  const int ia = check(a);
  const bool ng = needs(a);
  const double m = static_cast<double>(nodes_[ia].val.rows());
  Value out = push(nodes_[ia].val.colwise().mean(), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io, m] {
      grad_buf(ia) += (nodes_[io].grad / m).replicate(nodes_[ia].val.rows(), 1);
    };
  }
  return out;
}

Value Tape::rowwise_sum(Value a) {
  const int ia = check(a);
  const bool ng = needs(a);
  Value out = push(nodes_[ia].val.rowwise().sum(), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io] {
      grad_buf(ia) += nodes_[io].grad.replicate(1, nodes_[ia].val.cols());
    };
  }
  return out;
}

Value Tape::l2_norm(Value a) {
  const int ia = check(a);
  const bool ng = needs(a);
  Matrix m(1, 1);
  m(0, 0) = nodes_[ia].val.norm();
  Value out = push(std::move(m), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io] {
      const double norm = nodes_[io].val(0, 0);
      if (norm > kNormFloor) {
        grad_buf(ia) += (nodes_[io].grad(0, 0) / norm) * nodes_[ia].val;
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// structure

Value Tape::concat_cols(const std::vector<Value>& xs) {
  if (xs.empty()) throw ShapeError("concat_cols: empty input");
  Eigen::Index rows = val(xs[0]).rows();
  Eigen::Index cols = 0;
  bool ng = false;
  for (auto x : xs) {
    if (val(x).rows() != rows) throw ShapeError("concat_cols: row mismatch");
    cols += val(x).cols();
    ng = ng || needs(x);
  }
  Matrix v(rows, cols);
  Eigen::Index off = 0;
  std::vector<int> parents;
  std::vector<Eigen::Index> offsets;
  for (auto x : xs) {
    v.middleCols(off, val(x).cols()) = val(x);
    parents.push_back(x.idx);
    offsets.push_back(off);
    off += val(x).cols();
  }
  Value out = push(std::move(v), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, io, parents, offsets] {
      const Matrix& g = nodes_[io].grad;
      for (std::size_t k = 0; k < parents.size(); ++k) {
        const int ip = parents[k];
        if (nodes_[ip].needs) {
          grad_buf(ip) += g.middleCols(offsets[k], nodes_[ip].val.cols());
        }
      }
    };
  }
  return out;
}

Value Tape::concat_rows(const std::vector<Value>& xs) {
  if (xs.empty()) throw ShapeError("concat_rows: empty input");
  Eigen::Index cols = val(xs[0]).cols();
  Eigen::Index rows = 0;
  bool ng = false;
  for (auto x : xs) {
    if (val(x).cols() != cols) throw ShapeError("concat_rows: col mismatch");
    rows += val(x).rows();
    ng = ng || needs(x);
  }
  Matrix v(rows, cols);
  Eigen::Index off = 0;
  std::vector<int> parents;
  std::vector<Eigen::Index> offsets;
  for (auto x : xs) {
    v.middleRows(off, val(x).rows()) = val(x);
    parents.push_back(x.idx);
    offsets.push_back(off);
    off += val(x).rows();
  }
  Value out = push(std::move(v), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, io, parents, offsets] {
      const Matrix& g = nodes_[io].grad;
      for (std::size_t k = 0; k < parents.size(); ++k) {
        const int ip = parents[k];
        if (nodes_[ip].needs) {
          grad_buf(ip) += g.middleRows(offsets[k], nodes_[ip].val.rows());
        }
      }
    };
  }
  return out;
}

Value Tape::slice_cols(Value a, int c0, int n) {
  const int ia = check(a);
  if (c0 < 0 || n < 1 || c0 + n > nodes_[ia].val.cols()) throw ShapeError("slice_cols: range");
  const bool ng = needs(a);
  Value out = push(nodes_[ia].val.middleCols(c0, n), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io, c0, n] {
      grad_buf(ia).middleCols(c0, n) += nodes_[io].grad;
    };
  }
  return out;
}

Value Tape::slice_rows(Value a, int r0, int n) {
  const int ia = check(a);
  if (r0 < 0 || n < 1 || r0 + n > nodes_[ia].val.rows()) throw ShapeError("slice_rows: range");
  const bool ng = needs(a);
  Value out = push(nodes_[ia].val.middleRows(r0, n), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io, r0, n] {
      grad_buf(ia).middleRows(r0, n) += nodes_[io].grad;
    };
  }
  return out;
}

Value Tape::split_tokens(Value a, int tokens) {
  const int ia = check(a);
  const Matrix& x = nodes_[ia].val;
  if (tokens < 1 || x.cols() % tokens != 0) throw ShapeError("split_tokens: cols % tokens != 0");
  const Eigen::Index width = x.cols() / tokens;
  const Eigen::Index batch = x.rows();
  Matrix v(batch * tokens, width);
  for (Eigen::Index i = 0; i < batch; ++i) {
    for (int t = 0; t < tokens; ++t) {
      v.row(i * tokens + t) = x.row(i).segment(t * width, width);
    }
  }
  const bool ng = needs(a);
  Value out = push(std::move(v), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io, tokens, width, batch] {
      const Matrix& g = nodes_[io].grad;
      Matrix& ga = grad_buf(ia);
      for (Eigen::Index i = 0; i < batch; ++i) {
        for (int t = 0; t < tokens; ++t) {
          ga.row(i).segment(t * width, width) += g.row(i * tokens + t);
        }
      }
    };
  }
  return out;
}

Value Tape::merge_tokens(Value a, int tokens) {
  const int ia = check(a);
  const Matrix& x = nodes_[ia].val;
  if (tokens < 1 || x.rows() % tokens != 0) throw ShapeError("merge_tokens: rows % tokens != 0");
  const Eigen::Index batch = x.rows() / tokens;
  const Eigen::Index width = x.cols();
  Matrix v(batch, width * tokens);
  for (Eigen::Index i = 0; i < batch; ++i) {
    for (int t = 0; t < tokens; ++t) {
      v.row(i).segment(t * width, width) = x.row(i * tokens + t);
    }
  }
  const bool ng = needs(a);
  Value out = push(std::move(v), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io, tokens, width, batch] {
      const Matrix& g = nodes_[io].grad;
      Matrix& ga = grad_buf(ia);
      for (Eigen::Index i = 0; i < batch; ++i) {
        for (int t = 0; t < tokens; ++t) {
          ga.row(i * tokens + t) += g.row(i).segment(t * width, width);
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax / normalization

namespace {

Matrix softmax_of(const Matrix& logits) {
  Matrix y(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    Eigen::ArrayXd e = (logits.row(i).array() - m).exp();
    y.row(i) = (e / e.sum()).matrix();
  }
  return y;
}

}  // namespace

Value Tape::softmax_rows(Value a) {
  const int ia = check(a);
  const bool ng = needs(a);
  Value out = push(softmax_of(nodes_[ia].val), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io] {
      const Matrix& y = nodes_[io].val;
      const Matrix& g = nodes_[io].grad;
      Matrix& ga = grad_buf(ia);
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const double dot = g.row(i).dot(y.row(i));
        ga.row(i) += (y.row(i).array() * (g.row(i).array() - dot)).matrix();
      }
    };
  }
  return out;
}

Value Tape::softmax_rows_masked(Value a, const Matrix& addmask) {
  const int ia = check(a);
  if (addmask.rows() != nodes_[ia].val.rows() || addmask.cols() != nodes_[ia].val.cols()) {
    throw ShapeError("softmax_rows_masked: mask shape");
  }
  const bool ng = needs(a);
  Value out = push(softmax_of(nodes_[ia].val + addmask), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io] {
      const Matrix& y = nodes_[io].val;
      const Matrix& g = nodes_[io].grad;
      Matrix& ga = grad_buf(ia);
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        const double dot = g.row(i).dot(y.row(i));
        ga.row(i) += (y.row(i).array() * (g.row(i).array() - dot)).matrix();
      }
    };
  }
  return out;
}

Value Tape::log_softmax_rows(Value a) {
  const int ia = check(a);
  const bool ng = needs(a);
  const Matrix& x = nodes_[ia].val;
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    const double lse = m + std::log((x.row(i).array() - m).exp().sum());
    y.row(i) = x.row(i).array() - lse;
  }
  Value out = push(std::move(y), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, io] {
      const Matrix& y2 = nodes_[io].val;
      const Matrix& g = nodes_[io].grad;
      Matrix& ga = grad_buf(ia);
      for (Eigen::Index i = 0; i < y2.rows(); ++i) {
        const double gsum = g.row(i).sum();
        ga.row(i) += (g.row(i).array() - gsum * y2.row(i).array().exp()).matrix();
      }
    };
  }
  return out;
}

Value Tape::layernorm_rows(Value a, Value gain, Value bias, double eps) {
  const int ia = check(a), igain = check(gain), ibias = check(bias);
  const Matrix& x = nodes_[ia].val;
  const Eigen::Index d = x.cols();
  if (nodes_[igain].val.rows() != 1 || nodes_[igain].val.cols() != d ||
      nodes_[ibias].val.rows() != 1 || nodes_[ibias].val.cols() != d) {
    throw ShapeError("layernorm_rows: gain/bias must be 1 x d");
  }
  const bool ng = needs(a) || needs(gain) || needs(bias);

  Matrix xhat(x.rows(), d);
  Vector inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    const double s = std::sqrt(var + eps);
    inv_std(i) = 1.0 / s;
    xhat.row(i) = (x.row(i).array() - mu) / s;
  }
  Matrix y = xhat.array().rowwise() * nodes_[igain].val.row(0).array();
  y.rowwise() += nodes_[ibias].val.row(0);

  Value out = push(std::move(y), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    // xhat and inv_std are cached by value for the pullback.
    nodes_[io].back = [this, ia, igain, ibias, io, xhat, inv_std] {
      const Matrix& g = nodes_[io].grad;
      const Eigen::Index d2 = xhat.cols();
      if (nodes_[igain].needs) {
        grad_buf(igain) += g.cwiseProduct(xhat).colwise().sum();
      }
      if (nodes_[ibias].needs) {
        grad_buf(ibias) += g.colwise().sum();
      }
      if (nodes_[ia].needs) {
        Matrix& ga = grad_buf(ia);
        const Eigen::RowVectorXd gamma = nodes_[igain].val.row(0);
        for (Eigen::Index i = 0; i < xhat.rows(); ++i) {
          const Eigen::RowVectorXd h = g.row(i).cwiseProduct(gamma);
          const double mean_h = h.mean();
          const double mean_hx = h.cwiseProduct(xhat.row(i)).mean();
          ga.row(i) += inv_std(i) *
                       (h.array() - mean_h - xhat.row(i).array() * mean_hx).matrix();
          (void)d2;
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// batched block ops

Value Tape::bmm(Value a, Value b, int a_block_rows) {
  const int ia = check(a), ib = check(b);
  const Matrix& av = nodes_[ia].val;
  const Matrix& bv = nodes_[ib].val;
  const Eigen::Index p = a_block_rows;
  const Eigen::Index q = av.cols();
  if (p < 1 || av.rows() % p != 0) throw ShapeError("bmm: a rows not divisible by block");
  const Eigen::Index nblocks = av.rows() / p;
  if (bv.rows() != nblocks * q) throw ShapeError("bmm: b rows must be blocks * cols(a)");
  const Eigen::Index r = bv.cols();

  Matrix v(av.rows(), r);
  for (Eigen::Index i = 0; i < nblocks; ++i) {
    v.middleRows(i * p, p).noalias() = av.middleRows(i * p, p) * bv.middleRows(i * q, q);
  }
  const bool ng = needs(a) || needs(b);
  Value out = push(std::move(v), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, ib, io, p, q, nblocks] {
      const Matrix& g = nodes_[io].grad;
      const Matrix& av2 = nodes_[ia].val;
      const Matrix& bv2 = nodes_[ib].val;
      if (nodes_[ia].needs) {
        Matrix& ga = grad_buf(ia);
        for (Eigen::Index i = 0; i < nblocks; ++i) {
          ga.middleRows(i * p, p).noalias() +=
              g.middleRows(i * p, p) * bv2.middleRows(i * q, q).transpose();
        }
      }
      if (nodes_[ib].needs) {
        Matrix& gb = grad_buf(ib);
        for (Eigen::Index i = 0; i < nblocks; ++i) {
          gb.middleRows(i * q, q).noalias() +=
              av2.middleRows(i * p, p).transpose() * g.middleRows(i * p, p);
        }
      }
    };
  }
  return out;
}

Value Tape::bmm_nt(Value a, Value b, int a_block_rows, int b_block_rows) {
  const int ia = check(a), ib = check(b);
  const Matrix& av = nodes_[ia].val;
  const Matrix& bv = nodes_[ib].val;
  const Eigen::Index p = a_block_rows;
  const Eigen::Index pb = b_block_rows;
  if (p < 1 || av.rows() % p != 0) throw ShapeError("bmm_nt: a rows not divisible by block");
  if (pb < 1 || bv.rows() % pb != 0) throw ShapeError("bmm_nt: b rows not divisible by block");
  const Eigen::Index nblocks = av.rows() / p;
  if (bv.rows() / pb != nblocks) throw ShapeError("bmm_nt: block count mismatch");
  if (av.cols() != bv.cols()) throw ShapeError("bmm_nt: inner width mismatch");

  Matrix v(av.rows(), pb);
  for (Eigen::Index i = 0; i < nblocks; ++i) {
    v.middleRows(i * p, p).noalias() =
        av.middleRows(i * p, p) * bv.middleRows(i * pb, pb).transpose();
  }
  const bool ng = needs(a) || needs(b);
  Value out = push(std::move(v), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, ia, ib, io, p, pb, nblocks] {
      const Matrix& g = nodes_[io].grad;
      const Matrix& av2 = nodes_[ia].val;
      const Matrix& bv2 = nodes_[ib].val;
      if (nodes_[ia].needs) {
        Matrix& ga = grad_buf(ia);
        for (Eigen::Index i = 0; i < nblocks; ++i) {
          ga.middleRows(i * p, p).noalias() += g.middleRows(i * p, p) * bv2.middleRows(i * pb, pb);
        }
      }
      if (nodes_[ib].needs) {
        Matrix& gb = grad_buf(ib);
        for (Eigen::Index i = 0; i < nblocks; ++i) {
          gb.middleRows(i * pb, pb).noalias() +=
              g.middleRows(i * p, p).transpose() * av2.middleRows(i * p, p);
        }
      }
    };
  }
  return out;
}

Value Tape::pool_blocks(Value a, const Matrix& weights) {
  const int ia = check(a);
  const Matrix& x = nodes_[ia].val;
  const Eigen::Index batch = weights.rows();
  const Eigen::Index tau = weights.cols();
  if (x.rows() != batch * tau) throw ShapeError("pool_blocks: rows != batch * tau");
  Matrix v(batch, x.cols());
  for (Eigen::Index i = 0; i < batch; ++i) {
    v.row(i).noalias() = weights.row(i) * x.middleRows(i * tau, tau);
  }
  const bool ng = needs(a);
  Value out = push(std::move(v), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    Matrix w = weights;
    nodes_[io].back = [this, ia, io, w, batch, tau] {
      const Matrix& g = nodes_[io].grad;
      Matrix& ga = grad_buf(ia);
      for (Eigen::Index i = 0; i < batch; ++i) {
        ga.middleRows(i * tau, tau).noalias() += w.row(i).transpose() * g.row(i);
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// kernels

Value Tape::rbf_gram(Value z, double sigma) {
  if (sigma <= 0) throw ValidationError("rbf_gram: sigma must be positive");
  const int iz = check(z);
  const Matrix& x = nodes_[iz].val;
  const Eigen::Index n = x.rows();
  const Vector sq = x.rowwise().squaredNorm();
  Matrix dist = (-2.0 * x * x.transpose());
  dist.colwise() += sq;
  dist.rowwise() += sq.transpose();
  dist = dist.cwiseMax(0.0);
  const double inv = 1.0 / (2.0 * sigma * sigma);
  Matrix k = (-inv * dist.array()).exp().matrix();

  const bool ng = needs(z);
  Value out = push(std::move(k), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    nodes_[io].back = [this, iz, io, sigma, n] {
      const Matrix& kv = nodes_[io].val;
      const Matrix& g = nodes_[io].grad;
      const Matrix& x2 = nodes_[iz].val;
      const Matrix s = (g + g.transpose()).cwiseProduct(kv);
      const Vector rowsum = s.rowwise().sum();
      // dL/dZ = -(1/sigma^2) (diag(S 1) Z - S Z)
      grad_buf(iz) +=
          (-1.0 / (sigma * sigma)) * (rowsum.asDiagonal() * x2 - s * x2);
      (void)n;
    };
  }
  return out;
}

Value Tape::normprod_gram(Value z, double sigma) {
  if (sigma <= 0) throw ValidationError("normprod_gram: sigma must be positive");
  const int iz = check(z);
  const Matrix& x = nodes_[iz].val;
  const Vector norms = x.rowwise().norm();
  const double inv = 1.0 / (2.0 * sigma * sigma);
  Matrix k = (-inv * (norms * norms.transpose()).array()).exp().matrix();

  const bool ng = needs(z);
  Value out = push(std::move(k), ng, nullptr);
  const int io = out.idx;
  if (ng) {
    Vector cached_norms = norms;
    nodes_[io].back = [this, iz, io, sigma, cached_norms] {
      const Matrix& kv = nodes_[io].val;
      const Matrix& g = nodes_[io].grad;
      const Matrix& x2 = nodes_[iz].val;
      const Matrix s = (g + g.transpose()).cwiseProduct(kv);
      const Vector c = s * cached_norms;  // c_i = sum_j S_ij ||z_j||
      Matrix& gz = grad_buf(iz);
      const double inv2 = 1.0 / (2.0 * sigma * sigma);
      for (Eigen::Index i = 0; i < x2.rows(); ++i) {
        if (cached_norms(i) > kNormFloor) {
          gz.row(i) += (-inv2 * c(i) / cached_norms(i)) * x2.row(i);
        }
      }
    };
  }
  return out;
}

}  // namespace tridira::ad
