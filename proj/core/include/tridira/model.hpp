#pragma once

#include <memory>

#include "tridira/disentangler.hpp"
#include "tridira/encoder.hpp"
#include "tridira/fusion.hpp"
#include "tridira/losses.hpp"
#include "tridira/params.hpp"

namespace tridira {

struct ModelConfig {
  EncoderConfig encoder;
  DisentanglerConfig disentangler;
  TaskKind task = TaskKind::regression;
  int num_classes = 0;
  std::array<int, 3> input_dims{0, 0, 0};

  void validate() const;
};

/// The full triple-disentanglement model: feature encoder, per-modality
/// disentanglers, attention fusion, prediction and discriminator heads.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t init_seed);

  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }

  /// Parameters trained in stage 1 (encoder, fusion, FC_c).
  std::vector<char> stage1_mask() const;
  std::vector<char> full_mask() const;

  /// Re-draws the stage-2-only parameters (disentanglers, FC_m) from a seed;
  /// stage-1 weights are left untouched.
  void reinit_stage2(std::uint64_t seed);

  struct Stage1Out {
    ad::Value raw_pred;  // B x 1 (regression) or B x C logits
    ad::Value fused;
  };
  Stage1Out forward_stage1(GraphContext& ctx, const UtteranceBatch& batch) const;
  ad::Value stage1_loss(GraphContext& ctx, const Stage1Out& out, const Vector& labels) const;

  struct FullOut {
    std::array<EncodedModality, 3> encoded;
    std::array<DisentangledTriple, 3> triples;
    ad::Value fused;
    ad::Value head_avg_attn;  // (B*6) x 6
    ad::Value raw_pred;
    std::array<ad::Value, 3> disc_logits;
    std::array<ad::Value, 3> ustar_pred_raw;  // FC_c (frozen) applied to u*
  };
  FullOut forward(GraphContext& ctx, const UtteranceBatch& batch,
                  EncoderTrace* trace = nullptr) const;

  struct LossGraph {
    ad::Value total;
    LossReport report;
  };
  LossGraph stage2_loss(GraphContext& ctx, const FullOut& out, const Vector& labels,
                        const LossWeights& weights, const LossConfig& loss_cfg) const;

  /// Raw head output -> user-facing predictions (softmax for classification).
  Matrix finalize_predictions(const Matrix& raw) const;

  const FeatureEncoder& encoder() const { return encoder_; }
  const Disentangler& disentangler() const { return disentangler_; }
  const FusionHead& fusion() const { return fusion_; }

 private:
  ModelConfig cfg_;
  ParameterStore params_;
  FeatureEncoder encoder_;
  Disentangler disentangler_;
  FusionHead fusion_;
};

std::vector<int> labels_to_classes(const Vector& labels, int num_classes);

}  // namespace tridira
