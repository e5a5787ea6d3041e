#pragma once

#include <Eigen/Dense>

#include <functional>
#include <vector>

#include "tridira/types.hpp"

namespace tridira::ad {

using Matrix = Eigen::MatrixXd;

/// Handle into a Tape. Cheap to copy; only meaningful for the tape that
/// produced it.
struct Value {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

/// Eager reverse-mode tape over dense double matrices. Every op computes its
/// result immediately (so callers can branch on values) and records a pullback
/// that accumulates into parent gradients. Single-threaded by design: one tape
/// per forward/backward pass.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value input(Matrix v, bool needs_grad = false);
  Value constant(Matrix v) { return input(std::move(v), false); }
  Value scalar(double s);

  const Matrix& val(Value v) const { return nodes_[check(v)].val; }
  const Matrix& grad(Value v) const;
  bool has_grad(Value v) const { return nodes_[static_cast<std::size_t>(check(v))].grad_ready; }
  double scalar_val(Value v) const;

  // --- arithmetic ---
  Value add(Value a, Value b);
  Value sub(Value a, Value b);
  Value mul(Value a, Value b);  // elementwise, same shape
  Value scale(Value a, double s);
  Value matmul(Value a, Value b);
  Value transpose(Value a);
  Value add_rowvec(Value a, Value row);  // broadcast a 1 x n row over all rows
  Value sub_rowvec(Value a, Value row);
  Value mul_const(Value a, const Matrix& c);          // elementwise by a constant
  Value scale_rows(Value a, const Vector& w);         // row i scaled by w(i)
  Value add_constant(Value a, const Matrix& c);

  // --- elementwise functions ---
  Value tanh(Value a);
  Value gelu(Value a);
  Value log(Value a);
  Value square(Value a);
  Value pow_int(Value a, int k);  // k >= 1
  Value reciprocal(Value a);      // elementwise 1/x; caller keeps x away from 0
  /// Elementwise clamp to [lo, hi]; zero gradient outside the interval.
  Value clamp(Value a, double lo, double hi);

  // --- reductions ---
  Value sum(Value a);        // 1x1
  Value mean_all(Value a);   // 1x1
  Value colwise_mean(Value a);  // 1 x n
  Value rowwise_sum(Value a);   // m x 1
  Value l2_norm(Value a);    // 1x1 Frobenius norm; zero-safe pullback

  // --- structure ---
  Value concat_cols(const std::vector<Value>& xs);
  Value concat_rows(const std::vector<Value>& xs);
  Value slice_cols(Value a, int c0, int n);
  Value slice_rows(Value a, int r0, int n);
  /// (B x h*w) -> (B*h x w): row i becomes h stacked tokens of width w.
  Value split_tokens(Value a, int tokens);
  /// Inverse of split_tokens: (B*h x w) -> (B x h*w).
  Value merge_tokens(Value a, int tokens);

  // --- softmax / normalization ---
  Value softmax_rows(Value a);
  /// addmask entries are 0 (keep) or a large negative number (drop key).
  Value softmax_rows_masked(Value a, const Matrix& addmask);
  Value log_softmax_rows(Value a);
  Value layernorm_rows(Value a, Value gain, Value bias, double eps = 1e-5);

  // --- batched block ops over per-sample stacked matrices ---
  /// a: (B*p) x q, b: (B*q) x r, per-sample product -> (B*p) x r.
  Value bmm(Value a, Value b, int a_block_rows);
  /// a: (B*p) x q, b: (B*pb) x q, per-sample a_i * b_i^T -> (B*p) x pb.
  Value bmm_nt(Value a, Value b, int a_block_rows, int b_block_rows);
  /// a: (B*tau) x d, weights: B x tau -> B x d with out_i = sum_t w(i,t) row(i*tau+t).
  Value pool_blocks(Value a, const Matrix& weights);

  // --- kernels ---
  /// K_ij = exp(-||z_i - z_j||^2 / (2 sigma^2)), z_i rows of z.
  Value rbf_gram(Value z, double sigma);
  /// K_ij = exp(-||z_i|| ||z_j|| / (2 sigma^2)).
  Value normprod_gram(Value z, double sigma);

  /// Seeds d(root)/d(root) = 1 and runs all pullbacks. root must be 1x1.
  void backward(Value root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix val;
    Matrix grad;
    std::function<void()> back;  // empty for leaves and constants
    bool needs = false;          // true if any ancestor requires grad
    bool grad_ready = false;
  };

  int check(Value v) const;
  bool needs(Value v) const { return nodes_[static_cast<std::size_t>(v.idx)].needs; }
  Matrix& grad_buf(int idx);
  Value push(Matrix val, bool needs, std::function<void()> back);

  std::vector<Node> nodes_;
};

}  // namespace tridira::ad
