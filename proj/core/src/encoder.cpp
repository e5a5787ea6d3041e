#include "tridira/encoder.hpp"

#include <cmath>

namespace tridira {

namespace {
constexpr double kMaskLogit = -1e9;
}

void EncoderConfig::validate() const {
  if (d_model < 1) throw ConfigError("d_model must be positive");
  for (auto m : kModalities) {
    const int i = index_of(m);
    if (layers[i] < 1) throw ConfigError("encoder layer counts must be >= 1");
    if (heads[i] < 1 || d_model % heads[i] != 0) {
      throw ConfigError(std::string("d_model not divisible by head count for ") + to_string(m));
    }
  }
  if (shared_layers < 1) throw ConfigError("shared encoder layer count must be >= 1");
  if (shared_heads < 1 || d_model % shared_heads != 0) {
    throw ConfigError("d_model not divisible by shared head count");
  }
  if (ffn_mult < 1) throw ConfigError("ffn_mult must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0, 1)");
  if (conv_kernel != 1 && conv_kernel != 3) throw ConfigError("conv_kernel must be 1 or 3");
}

BatchGeom BatchGeom::make(const UtteranceBatch::ModalityBlock& block, Pooling pooling) {
  BatchGeom g;
  g.batch = static_cast<int>(block.mask.rows());
  g.tau = block.tau;
  g.row_mask = Vector::Zero(static_cast<Eigen::Index>(g.batch) * g.tau);
  g.key_addmask = Matrix::Zero(static_cast<Eigen::Index>(g.batch) * g.tau, g.tau);
  g.pool_weights = Matrix::Zero(g.batch, g.tau);
  for (int i = 0; i < g.batch; ++i) {
    int valid = 0;
    for (int t = 0; t < g.tau; ++t) {
      if (block.mask(i, t)) ++valid;
    }
    if (valid == 0) throw ValidationError("batch sample with empty mask");
    for (int t = 0; t < g.tau; ++t) {
      const bool on = block.mask(i, t) != 0;
      g.row_mask(static_cast<Eigen::Index>(i) * g.tau + t) = on ? 1.0 : 0.0;
      for (int t2 = 0; t2 < g.tau; ++t2) {
        if (!block.mask(i, t2)) {
          g.key_addmask(static_cast<Eigen::Index>(i) * g.tau + t, t2) = kMaskLogit;
        }
      }
      if (pooling == Pooling::mean_masked) {
        g.pool_weights(i, t) = on ? 1.0 / valid : 0.0;
      }
    }
    if (pooling == Pooling::first_token) g.pool_weights(i, 0) = 1.0;
  }
  return g;
}

Matrix sinusoidal_positions(int tau, int d_model) {
  Matrix pe(tau, d_model);
  for (int t = 0; t < tau; ++t) {
    for (int j = 0; j < d_model; ++j) {
      const int pair = j / 2;
      const double rate = std::pow(10000.0, -2.0 * pair / d_model);
      pe(t, j) = (j % 2 == 0) ? std::sin(t * rate) : std::cos(t * rate);
    }
  }
  return pe;
}

ad::Value apply_dropout(GraphContext& ctx, ad::Value x, double rate) {
  if (rate <= 0.0 || !ctx.training || ctx.dropout_rng == nullptr) return x;
  const auto& v = ctx.tape.val(x);
  Matrix mask(v.rows(), v.cols());
  const double keep = 1.0 - rate;
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    mask(i) = ctx.dropout_rng->uniform() < rate ? 0.0 : 1.0 / keep;
  }
  return ctx.tape.mul_const(x, mask);
}

TransformerEncoder::TransformerEncoder(ParameterStore& store, const std::string& prefix,
                                       int d_model, int layers, int heads, int ffn_mult,
                                       double dropout, rng::Stream& stream)
    : d_model_(d_model), heads_(heads), dropout_(dropout) {
  const int ffn = d_model * ffn_mult;
  for (int l = 0; l < layers; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l);
    Layer layer;
    layer.wq = store.add(p + ".wq", init::glorot_uniform(d_model, d_model, stream));
    layer.bq = store.add(p + ".bq", init::zeros(1, d_model));
    layer.wk = store.add(p + ".wk", init::glorot_uniform(d_model, d_model, stream));
    layer.bk = store.add(p + ".bk", init::zeros(1, d_model));
    layer.wv = store.add(p + ".wv", init::glorot_uniform(d_model, d_model, stream));
    layer.bv = store.add(p + ".bv", init::zeros(1, d_model));
    layer.wo = store.add(p + ".wo", init::glorot_uniform(d_model, d_model, stream));
    layer.bo = store.add(p + ".bo", init::zeros(1, d_model));
    layer.ln1_g = store.add(p + ".ln1_g", init::ones(1, d_model));
    layer.ln1_b = store.add(p + ".ln1_b", init::zeros(1, d_model));
    layer.ln2_g = store.add(p + ".ln2_g", init::ones(1, d_model));
    layer.ln2_b = store.add(p + ".ln2_b", init::zeros(1, d_model));
    layer.w1 = store.add(p + ".ffn_w1", init::glorot_uniform(d_model, ffn, stream));
    layer.b1 = store.add(p + ".ffn_b1", init::zeros(1, ffn));
    layer.w2 = store.add(p + ".ffn_w2", init::glorot_uniform(ffn, d_model, stream));
    layer.b2 = store.add(p + ".ffn_b2", init::zeros(1, d_model));
    layers_.push_back(layer);
  }
}

ad::Value TransformerEncoder::forward(GraphContext& ctx, ad::Value x, const BatchGeom& geom,
                                      std::vector<ad::Value>* attn_trace) const {
  auto& tape = ctx.tape;
  const int dk = d_model_ / heads_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  for (const auto& layer : layers_) {
    // Self-attention sublayer, pre-norm.
    ad::Value normed = tape.layernorm_rows(x, ctx.use(layer.ln1_g), ctx.use(layer.ln1_b));
    ad::Value q = tape.add_rowvec(tape.matmul(normed, ctx.use(layer.wq)), ctx.use(layer.bq));
    ad::Value k = tape.add_rowvec(tape.matmul(normed, ctx.use(layer.wk)), ctx.use(layer.bk));
    ad::Value v = tape.add_rowvec(tape.matmul(normed, ctx.use(layer.wv)), ctx.use(layer.bv));

    std::vector<ad::Value> head_ctx;
    head_ctx.reserve(static_cast<std::size_t>(heads_));
    for (int h = 0; h < heads_; ++h) {
      ad::Value qh = tape.slice_cols(q, h * dk, dk);
      ad::Value kh = tape.slice_cols(k, h * dk, dk);
      ad::Value vh = tape.slice_cols(v, h * dk, dk);
      ad::Value logits = tape.scale(tape.bmm_nt(qh, kh, geom.tau, geom.tau), scale);
      ad::Value attn = tape.softmax_rows_masked(logits, geom.key_addmask);
      if (attn_trace) attn_trace->push_back(attn);
      head_ctx.push_back(tape.bmm(attn, vh, geom.tau));
    }
    ad::Value merged = heads_ == 1 ? head_ctx[0] : tape.concat_cols(head_ctx);
    ad::Value attended =
        tape.add_rowvec(tape.matmul(merged, ctx.use(layer.wo)), ctx.use(layer.bo));
    attended = apply_dropout(ctx, attended, dropout_);
    x = tape.add(x, attended);

    // Feed-forward sublayer, pre-norm.
    ad::Value normed2 = tape.layernorm_rows(x, ctx.use(layer.ln2_g), ctx.use(layer.ln2_b));
    ad::Value hidden =
        tape.gelu(tape.add_rowvec(tape.matmul(normed2, ctx.use(layer.w1)), ctx.use(layer.b1)));
    hidden = apply_dropout(ctx, hidden, dropout_);
    ad::Value ffn_out =
        tape.add_rowvec(tape.matmul(hidden, ctx.use(layer.w2)), ctx.use(layer.b2));
    x = tape.add(x, ffn_out);
  }
  return x;
}

FeatureEncoder::FeatureEncoder(ParameterStore& store, const EncoderConfig& cfg,
                               std::array<int, 3> input_dims, rng::Stream& stream)
    : cfg_(cfg), input_dims_(input_dims) {
  cfg.validate();
  for (auto m : kModalities) {
    const int i = index_of(m);
    if (input_dims[i] < 1) throw ConfigError("input dims must be positive");
    const std::string p = std::string("encoder.") + to_string(m);
    conv_[i].w = store.add(p + ".conv_w",
                           init::glorot_uniform(cfg.conv_kernel * input_dims[i], cfg.d_model,
                                                stream));
    conv_[i].b = store.add(p + ".conv_b", init::zeros(1, cfg.d_model));
    specific_[i] = TransformerEncoder(store, p, cfg.d_model, cfg.layers[i], cfg.heads[i],
                                      cfg.ffn_mult, cfg.dropout, stream);
  }
  shared_ = TransformerEncoder(store, "encoder.shared", cfg.d_model, cfg.shared_layers,
                               cfg.shared_heads, cfg.ffn_mult, cfg.dropout, stream);
}

ad::Value FeatureEncoder::conv_normalize(GraphContext& ctx, Modality m, ad::Value x,
                                         const BatchGeom& geom) const {
  auto& tape = ctx.tape;
  const int i = index_of(m);
  const int d_in = input_dims_[i];
  if (tape.val(x).cols() != d_in) {
    throw ShapeError(std::string("conv_normalize: ") + to_string(m) + " dim " +
                     std::to_string(tape.val(x).cols()) + " != declared " + std::to_string(d_in));
  }

  // Zero out padded frames so no masked value can reach a valid output.
  ad::Value masked = tape.scale_rows(x, geom.row_mask);

  ad::Value stacked;
  if (cfg_.conv_kernel == 1) {
    stacked = masked;
  } else {
    // kernel 3: concatenate each frame with its zero-padded neighbors.
    const auto& v = tape.val(masked);
    const Eigen::Index rows = v.rows();
    Matrix shift_prev = Matrix::Zero(rows, rows);
    Matrix shift_next = Matrix::Zero(rows, rows);
    for (int b = 0; b < geom.batch; ++b) {
      for (int t = 0; t < geom.tau; ++t) {
        const Eigen::Index r = static_cast<Eigen::Index>(b) * geom.tau + t;
        if (t > 0) shift_prev(r, r - 1) = 1.0;
        if (t + 1 < geom.tau) shift_next(r, r + 1) = 1.0;
      }
    }
    ad::Value prev = tape.matmul(tape.constant(shift_prev), masked);
    ad::Value next = tape.matmul(tape.constant(shift_next), masked);
    stacked = tape.concat_cols({prev, masked, next});
  }

  ad::Value out = tape.add_rowvec(tape.matmul(stacked, ctx.use(conv_[i].w)),
                                  ctx.use(conv_[i].b));
  // Masked frames stay masked.
  return tape.scale_rows(out, geom.row_mask);
}

ad::Value FeatureEncoder::encode_shared_tokens(GraphContext& ctx, ad::Value tokens,
                                               const BatchGeom& geom,
                                               std::vector<ad::Value>* attn) const {
  return shared_.forward(ctx, tokens, geom, attn);
}

ad::Value FeatureEncoder::pool(GraphContext& ctx, ad::Value tokens, const BatchGeom& geom) const {
  return ctx.tape.pool_blocks(tokens, geom.pool_weights);
}

std::array<EncodedModality, 3> FeatureEncoder::forward(GraphContext& ctx,
                                                       const UtteranceBatch& batch,
                                                       EncoderTrace* trace) const {
  auto& tape = ctx.tape;
  std::array<EncodedModality, 3> out;
  for (auto m : kModalities) {
    const int i = index_of(m);
    const auto& block = batch.blocks[i];
    const BatchGeom geom = BatchGeom::make(block, cfg_.pooling);

    ad::Value x = tape.constant(block.values);
    ad::Value tokens = conv_normalize(ctx, m, x, geom);

    // Sinusoidal positions, masked so padded rows stay zero.
    Matrix pe = sinusoidal_positions(geom.tau, cfg_.d_model).replicate(geom.batch, 1);
    for (Eigen::Index r = 0; r < pe.rows(); ++r) {
      if (geom.row_mask(r) == 0.0) pe.row(r).setZero();
    }
    tokens = tape.add_constant(tokens, pe);

    tokens = specific_[i].forward(ctx, tokens, geom,
                                  trace ? &trace->specific_attention[i] : nullptr);
    tokens = shared_.forward(ctx, tokens, geom, trace ? &trace->shared_attention[i] : nullptr);
    tokens = tape.scale_rows(tokens, geom.row_mask);

    out[i].tokens = tokens;
    out[i].pooled = tape.pool_blocks(tokens, geom.pool_weights);
  }
  return out;
}

}  // namespace tridira
