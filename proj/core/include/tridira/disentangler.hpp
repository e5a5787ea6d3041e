#pragma once

#include <array>
#include <string>

#include "tridira/params.hpp"
#include "tridira/types.hpp"

namespace tridira {

struct DisentanglerConfig {
  int attention_tokens = 8;  // h: pooled vectors are reshaped to h tokens of d_model/h
  int decoder_hidden = 0;    // 0 = 2 * d_model

  void validate(int d_model) const;
};

/// Both outputs of one attention pass: attended = A V and complement = (1-A) V
/// with 1 the all-ones matrix, plus the row-stochastic A itself.
struct DualAttentionOut {
  ad::Value attended;
  ad::Value complement;
  ad::Value attention;  // (B*h) x h
};

/// query_tokens/key_value_tokens: (B*h) x d_k stacked per sample. Projections
/// wq/wk/wv are d_k x d_k tape values.
DualAttentionOut dual_output_attention(ad::Tape& tape, ad::Value query_tokens,
                                       ad::Value key_value_tokens, ad::Value wq, ad::Value wk,
                                       ad::Value wv, int tokens_per_sample);

/// Elementwise mean of the two directional intersections.
ad::Value combine_intersection(ad::Tape& tape, ad::Value dir_ur, ad::Value dir_ru);

struct DisentangledTriple {
  ad::Value r;         // label-relevant branch, B x d_model, tanh-bounded
  ad::Value u;         // modality-specific branch, B x d_model, tanh-bounded
  ad::Value r_star;    // modality-invariant
  ad::Value r_cap_u;   // effective modality-specific
  ad::Value u_star;    // ineffective modality-specific
  ad::Value recon;     // decoder output, B x d_model
  ad::Value attn_ur;   // attention of the u->r pass
  ad::Value attn_ru;   // attention of the r->u pass
};

/// Per-modality branch projections, dual-output attention in both directions,
/// intersection combination, and the reconstruction decoder. Holds exactly
/// three parameter sets, one per modality.
class Disentangler {
 public:
  Disentangler() = default;
  Disentangler(ParameterStore& store, const DisentanglerConfig& cfg, int d_model,
               rng::Stream& stream);

  DisentangledTriple forward(GraphContext& ctx, Modality m, ad::Value x_hat) const;

  /// Decoder only: maps concat(r*, r cap u, u*) back to d_model.
  ad::Value reconstruct(GraphContext& ctx, Modality m, ad::Value r_star, ad::Value r_cap_u,
                        ad::Value u_star) const;

  int tokens() const { return cfg_.attention_tokens; }
  const DisentanglerConfig& config() const { return cfg_; }

 private:
  struct PerModality {
    ParamId w_r, b_r, w_u, b_u;
    ParamId wq_u, wk_r, wv_r;  // u -> r direction
    ParamId wq_r, wk_u, wv_u;  // r -> u direction
    ParamId dec_w1, dec_b1, dec_w2, dec_b2;
  };
  DisentanglerConfig cfg_;
  int d_model_ = 0;
  std::array<PerModality, 3> mods_;
};

}  // namespace tridira
