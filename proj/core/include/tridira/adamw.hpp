#pragma once

#include <optional>
#include <vector>

#include "tridira/params.hpp"

namespace tridira {

/// AdamW with bias-corrected moments and decoupled weight decay:
///   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
class AdamW {
 public:
  AdamW() = default;
  AdamW(int param_count, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// Updates every parameter flagged trainable. Parameters with empty
  /// gradients get a zero gradient (weight decay still applies). Throws
  /// TrainAbort on NaN gradients, naming the parameter.
  void step(ParameterStore& params, const std::vector<Matrix>& grads,
            const std::vector<char>& trainable, double lr, double weight_decay,
            std::optional<double> grad_clip = std::nullopt);

  long step_count() const { return step_; }

 private:
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long step_ = 0;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
};

}  // namespace tridira
