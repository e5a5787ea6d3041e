#include "tridira/fusion.hpp"

#include <cmath>

namespace tridira {

void AttentionTrace::accumulate(const Matrix& sample) {
  if (count == 0) {
    mean = sample;
  } else {
    mean += (sample - mean) / static_cast<double>(count + 1);
  }
  ++count;
}

FusionHead::FusionHead(ParameterStore& store, int d_model, int heads, TaskKind task,
                       int num_classes, rng::Stream& stream)
    : d_model_(d_model), heads_(heads), task_(task), num_classes_(num_classes) {
  if (heads < 1 || d_model % heads != 0) {
    throw ConfigError("fusion heads must divide d_model");
  }
  if (task == TaskKind::classification && num_classes < 2) {
    throw ConfigError("classification head needs num_classes >= 2");
  }
  wq_ = store.add("fusion.wq", init::glorot_uniform(d_model, d_model, stream));
  bq_ = store.add("fusion.bq", init::zeros(1, d_model));
  wk_ = store.add("fusion.wk", init::glorot_uniform(d_model, d_model, stream));
  bk_ = store.add("fusion.bk", init::zeros(1, d_model));
  wv_ = store.add("fusion.wv", init::glorot_uniform(d_model, d_model, stream));
  bv_ = store.add("fusion.bv", init::zeros(1, d_model));
  wo_ = store.add("fusion.wo", init::glorot_uniform(d_model, d_model, stream));
  bo_ = store.add("fusion.bo", init::zeros(1, d_model));
  const int out_dim = task == TaskKind::regression ? 1 : num_classes;
  fc_c_w_ = store.add("heads.fc_c_w", init::glorot_uniform(d_model, out_dim, stream));
  fc_c_b_ = store.add("heads.fc_c_b", init::zeros(1, out_dim));
  fc_m_w_ = store.add("heads.fc_m_w", init::glorot_uniform(2 * d_model, 3, stream));
  fc_m_b_ = store.add("heads.fc_m_b", init::zeros(1, 3));
}

FusionHead::FuseOut FusionHead::fuse(GraphContext& ctx, ad::Value tokens,
                                     int tokens_per_sample) const {
  auto& tape = ctx.tape;
  const auto& tv = tape.val(tokens);
  if (tv.cols() != d_model_) throw ShapeError("fusion: token width != d_model");
  if (tokens_per_sample < 1 || tv.rows() % tokens_per_sample != 0) {
    throw ShapeError("fusion: token count not divisible by tokens_per_sample");
  }
  const auto batch = tv.rows() / tokens_per_sample;
  const int dk = d_model_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  ad::Value q = tape.add_rowvec(tape.matmul(tokens, ctx.use(wq_)), ctx.use(bq_));
  ad::Value k = tape.add_rowvec(tape.matmul(tokens, ctx.use(wk_)), ctx.use(bk_));
  ad::Value v = tape.add_rowvec(tape.matmul(tokens, ctx.use(wv_)), ctx.use(bv_));

  std::vector<ad::Value> head_ctx;
  ad::Value attn_sum;
  for (int h = 0; h < heads_; ++h) {
    ad::Value qh = tape.slice_cols(q, h * dk, dk);
    ad::Value kh = tape.slice_cols(k, h * dk, dk);
    ad::Value vh = tape.slice_cols(v, h * dk, dk);
    ad::Value attn = tape.softmax_rows(
        tape.scale(tape.bmm_nt(qh, kh, tokens_per_sample, tokens_per_sample), scale));
    attn_sum = h == 0 ? attn : tape.add(attn_sum, attn);
    head_ctx.push_back(tape.bmm(attn, vh, tokens_per_sample));
  }
  ad::Value merged = heads_ == 1 ? head_ctx[0] : tape.concat_cols(head_ctx);
  ad::Value out = tape.add_rowvec(tape.matmul(merged, ctx.use(wo_)), ctx.use(bo_));

  Matrix pool = Matrix::Constant(batch, tokens_per_sample, 1.0 / tokens_per_sample);
  FuseOut result;
  result.fused = tape.pool_blocks(out, pool);
  result.head_avg_attn = tape.scale(attn_sum, 1.0 / heads_);
  return result;
}

ad::Value FusionHead::predict_raw(GraphContext& ctx, ad::Value fused) const {
  return ctx.tape.add_rowvec(ctx.tape.matmul(fused, ctx.use(fc_c_w_)), ctx.use(fc_c_b_));
}

ad::Value FusionHead::predict_raw_detached(GraphContext& ctx, ad::Value fused) const {
  return ctx.tape.add_rowvec(ctx.tape.matmul(fused, ctx.detached(fc_c_w_)),
                             ctx.detached(fc_c_b_));
}

ad::Value FusionHead::predict_probs(GraphContext& ctx, ad::Value fused) const {
  if (task_ != TaskKind::classification) {
    throw ConfigError("predict_probs is only defined for classification");
  }
  return ctx.tape.softmax_rows(predict_raw(ctx, fused));
}

ad::Value FusionHead::discriminate_logits(GraphContext& ctx, ad::Value u_star,
                                          ad::Value r_cap_u) const {
  auto& tape = ctx.tape;
  if (tape.val(u_star).cols() != d_model_ || tape.val(r_cap_u).cols() != d_model_) {
    throw ShapeError("discriminate: inputs must be B x d_model");
  }
  ad::Value cat = tape.concat_cols({u_star, r_cap_u});
  return tape.add_rowvec(tape.matmul(cat, ctx.use(fc_m_w_)), ctx.use(fc_m_b_));
}

ad::Value FusionHead::discriminate(GraphContext& ctx, ad::Value u_star, ad::Value r_cap_u) const {
  return ctx.tape.softmax_rows(discriminate_logits(ctx, u_star, r_cap_u));
}

}  // namespace tridira
