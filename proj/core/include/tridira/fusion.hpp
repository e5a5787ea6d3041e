#pragma once

#include <string>

#include "tridira/params.hpp"
#include "tridira/types.hpp"

namespace tridira {

// Fixed ordering of the six fused tokens; rows/columns of every exported
// attention trace follow it.
inline constexpr std::array<const char*, 6> kFusionTokenLabels = {
    "rstar_t", "rstar_a", "rstar_v", "rcapu_t", "rcapu_a", "rcapu_v"};

/// Running mean of head-averaged fusion attention over a dataset.
struct AttentionTrace {
  Matrix mean;  // T x T
  long count = 0;

  void accumulate(const Matrix& sample);
};

/// Multi-head self-attention over the stacked effective representations (no
/// positional additions: the tokens are a set), mean-pooled to one vector,
/// plus the prediction head FC_c and the shared 3-way modality discriminator
/// FC_m.
class FusionHead {
 public:
  FusionHead() = default;
  FusionHead(ParameterStore& store, int d_model, int heads, TaskKind task, int num_classes,
             rng::Stream& stream);

  struct FuseOut {
    ad::Value fused;          // B x d_model
    ad::Value head_avg_attn;  // (B*T) x T
  };
  /// tokens: (B*T) x d_model stacked per sample.
  FuseOut fuse(GraphContext& ctx, ad::Value tokens, int tokens_per_sample) const;

  /// Regression: B x 1 scores. Classification: B x C logits.
  ad::Value predict_raw(GraphContext& ctx, ad::Value fused) const;
  /// Same head with gradients stopped at FC_c's parameters.
  ad::Value predict_raw_detached(GraphContext& ctx, ad::Value fused) const;
  /// Classification probabilities (softmax of predict_raw).
  ad::Value predict_probs(GraphContext& ctx, ad::Value fused) const;

  /// Softmax over {text, audio, visual} from concat(u*, r cap u).
  ad::Value discriminate(GraphContext& ctx, ad::Value u_star, ad::Value r_cap_u) const;
  ad::Value discriminate_logits(GraphContext& ctx, ad::Value u_star, ad::Value r_cap_u) const;

  TaskKind task() const { return task_; }
  int num_classes() const { return num_classes_; }

 private:
  ParamId wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
  ParamId fc_c_w_, fc_c_b_;
  ParamId fc_m_w_, fc_m_b_;
  int d_model_ = 0;
  int heads_ = 0;
  TaskKind task_ = TaskKind::regression;
  int num_classes_ = 0;
};

}  // namespace tridira
