#include "tridira/adamw.hpp"

#include <cmath>

namespace tridira {

AdamW::AdamW(int param_count, double beta1, double beta2, double eps)
    : m_(static_cast<std::size_t>(param_count)),
      v_(static_cast<std::size_t>(param_count)),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps) {}

void AdamW::step(ParameterStore& params, const std::vector<Matrix>& grads,
                 const std::vector<char>& trainable, double lr, double weight_decay,
                 std::optional<double> grad_clip) {
  const auto n = static_cast<std::size_t>(params.count());
  if (grads.size() != n || trainable.size() != n || m_.size() != n) {
    throw ShapeError("adamw: store/gradient/mask size mismatch");
  }

  double clip_scale = 1.0;
  if (grad_clip) {
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (trainable[i] && grads[i].size() > 0) sq += grads[i].squaredNorm();
    }
    const double norm = std::sqrt(sq);
    if (norm > *grad_clip && norm > 0.0) clip_scale = *grad_clip / norm;
  }

  ++step_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));

  for (std::size_t i = 0; i < n; ++i) {
    if (!trainable[i]) continue;
    Matrix& p = params.value(static_cast<int>(i));
    Matrix g = grads[i].size() > 0 ? Matrix(grads[i] * clip_scale)
                                   : Matrix(Matrix::Zero(p.rows(), p.cols()));
    if (!g.allFinite()) {
      throw TrainAbort("NaN/Inf gradient for parameter '" + params.name(static_cast<int>(i)) +
                       "'");
    }
    if (m_[i].size() == 0) {
      m_[i] = Matrix::Zero(p.rows(), p.cols());
      v_[i] = Matrix::Zero(p.rows(), p.cols());
    }
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    const Matrix m_hat = m_[i] / bc1;
    const Matrix v_hat = v_[i] / bc2;
    Matrix update = (m_hat.array() / (v_hat.array().sqrt() + eps_)).matrix();
    if (weight_decay > 0.0) update += weight_decay * p;
    p -= lr * update;
  }
}

}  // namespace tridira
