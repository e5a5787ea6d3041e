#include "tridira/model.hpp"

#include <cmath>
#include <limits>

namespace tridira {

void ModelConfig::validate() const {
  encoder.validate();
  disentangler.validate(encoder.d_model);
  if (task == TaskKind::classification && num_classes < 2) {
    throw ConfigError("classification requires num_classes >= 2");
  }
  for (int d : input_dims) {
    if (d < 1) throw ConfigError("input dims must be positive");
  }
}

Model::Model(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
  cfg.validate();
  rng::Stream stream(init_seed, rng::streams::model_init);
  encoder_ = FeatureEncoder(params_, cfg.encoder, cfg.input_dims, stream);
  disentangler_ = Disentangler(params_, cfg.disentangler, cfg.encoder.d_model, stream);
  fusion_ = FusionHead(params_, cfg.encoder.d_model, cfg.encoder.shared_heads, cfg.task,
                       cfg.num_classes, stream);
}

namespace {

bool is_stage2_param(const std::string& name) {
  return name.rfind("disentangler.", 0) == 0 || name.rfind("heads.fc_m", 0) == 0;
}

}  // namespace

std::vector<char> Model::stage1_mask() const {
  std::vector<char> mask(static_cast<std::size_t>(params_.count()), 1);
  for (int i = 0; i < params_.count(); ++i) {
    if (is_stage2_param(params_.name(i))) mask[static_cast<std::size_t>(i)] = 0;
  }
  return mask;
}

std::vector<char> Model::full_mask() const {
  return std::vector<char>(static_cast<std::size_t>(params_.count()), 1);
}

void Model::reinit_stage2(std::uint64_t seed) {
  rng::Stream stream(seed, rng::streams::stage2_init);
  for (int i = 0; i < params_.count(); ++i) {
    if (!is_stage2_param(params_.name(i))) continue;
    Matrix& v = params_.value(i);
    const std::string& name = params_.name(i);
    const bool is_bias = name.find(".b_") != std::string::npos ||
                         name.find("_b1") != std::string::npos ||
                         name.find("_b2") != std::string::npos ||
                         name.find("fc_m_b") != std::string::npos;
    if (is_bias) {
      v.setZero();
    } else {
      v = init::glorot_uniform(static_cast<int>(v.rows()), static_cast<int>(v.cols()), stream);
    }
  }
}

Model::Stage1Out Model::forward_stage1(GraphContext& ctx, const UtteranceBatch& batch) const {
  auto& tape = ctx.tape;
  auto encoded = encoder_.forward(ctx, batch);
  ad::Value stacked = tape.concat_cols(
      {encoded[0].pooled, encoded[1].pooled, encoded[2].pooled});
  ad::Value tokens = tape.split_tokens(stacked, 3);
  auto fused = fusion_.fuse(ctx, tokens, 3);
  Stage1Out out;
  out.fused = fused.fused;
  out.raw_pred = fusion_.predict_raw(ctx, fused.fused);
  return out;
}

ad::Value Model::stage1_loss(GraphContext& ctx, const Stage1Out& out,
                             const Vector& labels) const {
  auto& tape = ctx.tape;
  if (cfg_.task == TaskKind::regression) {
    return losses::mse_graph(tape, out.raw_pred, labels);
  }
  return losses::cross_entropy_graph(tape, tape.log_softmax_rows(out.raw_pred),
                                     labels_to_classes(labels, cfg_.num_classes));
}

Model::FullOut Model::forward(GraphContext& ctx, const UtteranceBatch& batch,
                              EncoderTrace* trace) const {
  auto& tape = ctx.tape;
  FullOut out;
  out.encoded = encoder_.forward(ctx, batch, trace);
  for (auto m : kModalities) {
    const int i = index_of(m);
    out.triples[i] = disentangler_.forward(ctx, m, out.encoded[i].pooled);
    out.disc_logits[i] =
        fusion_.discriminate_logits(ctx, out.triples[i].u_star, out.triples[i].r_cap_u);
    out.ustar_pred_raw[i] = fusion_.predict_raw_detached(ctx, out.triples[i].u_star);
  }
  ad::Value stacked = tape.concat_cols({out.triples[0].r_star, out.triples[1].r_star,
                                        out.triples[2].r_star, out.triples[0].r_cap_u,
                                        out.triples[1].r_cap_u, out.triples[2].r_cap_u});
  ad::Value tokens = tape.split_tokens(stacked, 6);
  auto fused = fusion_.fuse(ctx, tokens, 6);
  out.fused = fused.fused;
  out.head_avg_attn = fused.head_avg_attn;
  out.raw_pred = fusion_.predict_raw(ctx, out.fused);
  return out;
}

Model::LossGraph Model::stage2_loss(GraphContext& ctx, const FullOut& out, const Vector& labels,
                                    const LossWeights& weights,
                                    const LossConfig& loss_cfg) const {
  auto& tape = ctx.tape;
  weights.validate();
  loss_cfg.validate();
  LossGraph g;
  LossReport& rep = g.report;

  const std::vector<int> classes =
      cfg_.task == TaskKind::classification ? labels_to_classes(labels, cfg_.num_classes)
                                            : std::vector<int>{};

  // Task loss (Eq. 4 shape).
  ad::Value task = cfg_.task == TaskKind::regression
                       ? losses::mse_graph(tape, out.raw_pred, labels)
                       : losses::cross_entropy_graph(
                             tape, tape.log_softmax_rows(out.raw_pred), classes);

  // Modality classification loss, averaged over the three modalities.
  ad::Value modality;
  for (auto m : kModalities) {
    const int i = index_of(m);
    std::vector<int> target(static_cast<std::size_t>(labels.size()), i);
    ad::Value ce = losses::cross_entropy_graph(
        tape, tape.log_softmax_rows(out.disc_logits[i]), target);
    modality = (i == 0) ? ce : tape.add(modality, ce);
  }
  modality = tape.scale(modality, 1.0 / 3.0);

  // Label-independence loss on u*, averaged over modalities; FC_c is frozen
  // along this path (detached bindings), so only the u* path receives grads.
  ad::Value ucorr;
  bool any_degenerate = false;
  for (auto m : kModalities) {
    const int i = index_of(m);
    ad::Value term;
    if (cfg_.task == TaskKind::regression) {
      auto res = losses::pearson_graph(tape, out.ustar_pred_raw[i], labels);
      any_degenerate = any_degenerate || res.degenerate;
      term = loss_cfg.ucorr_mode == UcorrMode::paper_literal ? res.value
                                                             : tape.square(res.value);
    } else {
      ad::Value lp = tape.log_softmax_rows(out.ustar_pred_raw[i]);
      if (loss_cfg.ucorr_mode == UcorrMode::paper_literal) {
        // +(1/B) sum log p[true]: the sign-flipped cross entropy of Eq. 6.
        term = tape.scale(losses::cross_entropy_graph(tape, lp, classes), -1.0);
      } else {
        // KL(p || uniform) = log C + (1/B) sum_i sum_c p log p
        ad::Value p = tape.softmax_rows(out.ustar_pred_raw[i]);
        ad::Value ent = tape.scale(tape.sum(tape.mul(p, lp)),
                                   1.0 / static_cast<double>(labels.size()));
        term = tape.add(tape.scalar(std::log(static_cast<double>(cfg_.num_classes))), ent);
      }
    }
    ucorr = (i == 0) ? term : tape.add(ucorr, term);
  }
  ucorr = tape.scale(ucorr, 1.0 / 3.0);
  rep.ucorr_degenerate = any_degenerate;

  // Similarity (CMD) over invariant representations.
  std::array<ad::Value, 3> r_star{out.triples[0].r_star, out.triples[1].r_star,
                                  out.triples[2].r_star};
  double lo = -1.0, hi = 1.0;
  if (loss_cfg.cmd_bounds == CmdBoundsMode::empirical) {
    lo = std::numeric_limits<double>::infinity();
    hi = -std::numeric_limits<double>::infinity();
    for (auto v : r_star) {
      lo = std::min(lo, tape.val(v).minCoeff());
      hi = std::max(hi, tape.val(v).maxCoeff());
    }
    if (!(hi > lo)) hi = lo + 1e-6;
  }
  ad::Value sim = losses::sim_loss_graph(tape, r_star, loss_cfg.cmd_order, lo, hi);

  // Independence losses.
  std::array<ad::Value, 3> r_cap_u{out.triples[0].r_cap_u, out.triples[1].r_cap_u,
                                   out.triples[2].r_cap_u};
  std::array<ad::Value, 3> u_star{out.triples[0].u_star, out.triples[1].u_star,
                                  out.triples[2].u_star};
  ad::Value h_inter = losses::inter_independence_graph(tape, r_cap_u, loss_cfg.hsic_sigma,
                                                       loss_cfg.hsic_kernel);
  ad::Value h_intra = losses::intra_exclusive_graph(tape, r_star, u_star, loss_cfg.hsic_sigma,
                                                    loss_cfg.hsic_kernel);

  // Reconstruction, averaged over modalities.
  ad::Value recon;
  for (auto m : kModalities) {
    const int i = index_of(m);
    ad::Value term = losses::recon_loss_graph(tape, out.triples[i].recon,
                                              out.encoded[i].pooled);
    recon = (i == 0) ? term : tape.add(recon, term);
  }
  recon = tape.scale(recon, 1.0 / 3.0);

  ad::Value total = tape.scale(task, weights.task);
  total = tape.add(total, tape.scale(modality, weights.modality));
  total = tape.add(total, tape.scale(ucorr, weights.ucorr));
  total = tape.add(total, tape.scale(sim, weights.sim));
  total = tape.add(total, tape.scale(tape.add(h_inter, h_intra), weights.h));
  total = tape.add(total, tape.scale(recon, weights.recon));

  rep.task = tape.scalar_val(task);
  rep.modality = tape.scalar_val(modality);
  rep.ucorr = tape.scalar_val(ucorr);
  rep.sim = tape.scalar_val(sim);
  rep.h_inter = tape.scalar_val(h_inter);
  rep.h_intra = tape.scalar_val(h_intra);
  rep.recon = tape.scalar_val(recon);
  rep.total = tape.scalar_val(total);
  rep.check(weights);

  g.total = total;
  return g;
}

Matrix Model::finalize_predictions(const Matrix& raw) const {
  if (cfg_.task == TaskKind::regression) return raw;
  Matrix probs(raw.rows(), raw.cols());
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const double m = raw.row(i).maxCoeff();
    Eigen::ArrayXd e = (raw.row(i).array() - m).exp();
    probs.row(i) = (e / e.sum()).matrix();
  }
  return probs;
}

std::vector<int> labels_to_classes(const Vector& labels, int num_classes) {
  std::vector<int> out(static_cast<std::size_t>(labels.size()));
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    const double l = labels(i);
    const int c = static_cast<int>(std::nearbyint(l));
    if (c != l || c < 0 || c >= num_classes) {
      throw ValidationError("label " + std::to_string(l) + " is not a valid class index");
    }
    out[static_cast<std::size_t>(i)] = c;
  }
  return out;
}

}  // namespace tridira
