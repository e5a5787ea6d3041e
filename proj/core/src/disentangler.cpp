#include "tridira/disentangler.hpp"

#include <cmath>

namespace tridira {

void DisentanglerConfig::validate(int d_model) const {
  if (attention_tokens < 1) throw ConfigError("attention_tokens must be >= 1");
  if (d_model % attention_tokens != 0) {
    throw ConfigError("d_model (" + std::to_string(d_model) +
                      ") not divisible by attention_tokens (" +
                      std::to_string(attention_tokens) + ")");
  }
  if (decoder_hidden < 0) throw ConfigError("decoder_hidden must be nonnegative");
}

DualAttentionOut dual_output_attention(ad::Tape& tape, ad::Value query_tokens,
                                       ad::Value key_value_tokens, ad::Value wq, ad::Value wk,
                                       ad::Value wv, int tokens_per_sample) {
  const Eigen::Index dk = tape.val(query_tokens).cols();
  if (tape.val(key_value_tokens).cols() != dk) {
    throw ShapeError("dual_output_attention: token width mismatch");
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  ad::Value q = tape.matmul(query_tokens, wq);
  ad::Value k = tape.matmul(key_value_tokens, wk);
  ad::Value v = tape.matmul(key_value_tokens, wv);

  ad::Value logits = tape.scale(tape.bmm_nt(q, k, tokens_per_sample, tokens_per_sample), scale);
  ad::Value attn = tape.softmax_rows(logits);
  ad::Value ones = tape.constant(
      Matrix::Ones(tape.val(attn).rows(), tape.val(attn).cols()));

  DualAttentionOut out;
  out.attention = attn;
  out.attended = tape.bmm(attn, v, tokens_per_sample);
  out.complement = tape.bmm(tape.sub(ones, attn), v, tokens_per_sample);
  return out;
}

ad::Value combine_intersection(ad::Tape& tape, ad::Value dir_ur, ad::Value dir_ru) {
  const auto& a = tape.val(dir_ur);
  const auto& b = tape.val(dir_ru);
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("combine_intersection: length mismatch");
  }
  return tape.scale(tape.add(dir_ur, dir_ru), 0.5);
}

Disentangler::Disentangler(ParameterStore& store, const DisentanglerConfig& cfg, int d_model,
                           rng::Stream& stream)
    : cfg_(cfg), d_model_(d_model) {
  cfg.validate(d_model);
  const int dk = d_model / cfg.attention_tokens;
  const int hidden = cfg.decoder_hidden > 0 ? cfg.decoder_hidden : 2 * d_model;
  for (auto m : kModalities) {
    const int i = index_of(m);
    const std::string p = std::string("disentangler.") + to_string(m);
    auto& pm = mods_[i];
    pm.w_r = store.add(p + ".w_r", init::glorot_uniform(d_model, d_model, stream));
    pm.b_r = store.add(p + ".b_r", init::zeros(1, d_model));
    pm.w_u = store.add(p + ".w_u", init::glorot_uniform(d_model, d_model, stream));
    pm.b_u = store.add(p + ".b_u", init::zeros(1, d_model));
    pm.wq_u = store.add(p + ".wq_u", init::glorot_uniform(dk, dk, stream));
    pm.wk_r = store.add(p + ".wk_r", init::glorot_uniform(dk, dk, stream));
    pm.wv_r = store.add(p + ".wv_r", init::glorot_uniform(dk, dk, stream));
    pm.wq_r = store.add(p + ".wq_r", init::glorot_uniform(dk, dk, stream));
    pm.wk_u = store.add(p + ".wk_u", init::glorot_uniform(dk, dk, stream));
    pm.wv_u = store.add(p + ".wv_u", init::glorot_uniform(dk, dk, stream));
    pm.dec_w1 = store.add(p + ".dec_w1", init::glorot_uniform(3 * d_model, hidden, stream));
    pm.dec_b1 = store.add(p + ".dec_b1", init::zeros(1, hidden));
    pm.dec_w2 = store.add(p + ".dec_w2", init::glorot_uniform(hidden, d_model, stream));
    pm.dec_b2 = store.add(p + ".dec_b2", init::zeros(1, d_model));
  }
}

DisentangledTriple Disentangler::forward(GraphContext& ctx, Modality m, ad::Value x_hat) const {
  auto& tape = ctx.tape;
  const auto& pm = mods_[index_of(m)];
  if (tape.val(x_hat).cols() != d_model_) {
    throw ShapeError("disentangler input width != d_model");
  }

  DisentangledTriple t;
  // Branch projections; tanh keeps outputs in (-1, 1) for the CMD bounds.
  t.r = tape.tanh(tape.add_rowvec(tape.matmul(x_hat, ctx.use(pm.w_r)), ctx.use(pm.b_r)));
  t.u = tape.tanh(tape.add_rowvec(tape.matmul(x_hat, ctx.use(pm.w_u)), ctx.use(pm.b_u)));

  const int h = cfg_.attention_tokens;
  ad::Value r_tok = tape.split_tokens(t.r, h);
  ad::Value u_tok = tape.split_tokens(t.u, h);

  auto ur = dual_output_attention(tape, u_tok, r_tok, ctx.use(pm.wq_u), ctx.use(pm.wk_r),
                                  ctx.use(pm.wv_r), h);
  auto ru = dual_output_attention(tape, r_tok, u_tok, ctx.use(pm.wq_r), ctx.use(pm.wk_u),
                                  ctx.use(pm.wv_u), h);
  t.attn_ur = ur.attention;
  t.attn_ru = ru.attention;

  t.r_star = tape.merge_tokens(ur.complement, h);
  t.u_star = tape.merge_tokens(ru.complement, h);
  t.r_cap_u = tape.merge_tokens(combine_intersection(tape, ur.attended, ru.attended), h);
  t.recon = reconstruct(ctx, m, t.r_star, t.r_cap_u, t.u_star);
  return t;
}

ad::Value Disentangler::reconstruct(GraphContext& ctx, Modality m, ad::Value r_star,
                                    ad::Value r_cap_u, ad::Value u_star) const {
  auto& tape = ctx.tape;
  const auto& pm = mods_[index_of(m)];
  ad::Value cat = tape.concat_cols({r_star, r_cap_u, u_star});
  ad::Value hidden =
      tape.tanh(tape.add_rowvec(tape.matmul(cat, ctx.use(pm.dec_w1)), ctx.use(pm.dec_b1)));
  return tape.add_rowvec(tape.matmul(hidden, ctx.use(pm.dec_w2)), ctx.use(pm.dec_b2));
}

}  // namespace tridira
