#include "tridira/losses.hpp"

#include <cmath>
#include <cstdio>

namespace tridira {

void LossWeights::validate() const {
  for (double v : {task, sim, ucorr, recon, modality, h}) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw ValidationError("loss weights must be finite and nonnegative");
    }
  }
  if (!(task > 0.0)) throw ValidationError("w_task must be positive");
}

void LossConfig::validate() const {
  if (hsic_sigma <= 0.0) throw ValidationError("hsic sigma must be positive");
  if (cmd_order < 1) throw ValidationError("cmd order K must be >= 1");
}

const std::array<const char*, 7>& LossReport::component_names() {
  static const std::array<const char*, 7> names = {"task",    "modality", "ucorr", "sim",
                                                   "h_inter", "h_intra",  "recon"};
  return names;
}

double LossReport::component(int i) const {
  switch (i) {
    case 0: return task;
    case 1: return modality;
    case 2: return ucorr;
    case 3: return sim;
    case 4: return h_inter;
    case 5: return h_intra;
    case 6: return recon;
    default: throw ValidationError("bad loss component index");
  }
}

void LossReport::check(const LossWeights& w) const {
  for (int i = 0; i < 7; ++i) {
    if (std::isnan(component(i))) {
      throw TrainAbort(std::string("loss component '") + component_names()[i] + "' is NaN");
    }
  }
  if (std::isnan(total)) throw TrainAbort("total loss is NaN");
  const double recomposed = w.task * task + w.modality * modality + w.ucorr * ucorr +
                            w.sim * sim + w.h * (h_inter + h_intra) + w.recon * recon;
  const double scale = std::max({1.0, std::abs(total), std::abs(recomposed)});
  if (std::abs(recomposed - total) > 1e-6 * scale) {
    throw TrainAbort("total loss decomposition identity violated: total=" +
                     std::to_string(total) + " recomposed=" + std::to_string(recomposed));
  }
}

namespace losses {

// ---------------------------------------------------------------------------
// graph builders

ad::Value mse_graph(ad::Tape& tape, ad::Value y_hat, const Vector& y) {
  const auto& pred = tape.val(y_hat);
  if (pred.cols() != 1 || pred.rows() != y.size()) throw ShapeError("mse: prediction shape");
  if (y.size() < 1) throw ValidationError("mse: empty batch");
  ad::Value diff = tape.add_constant(y_hat, Matrix(-y));
  return tape.mean_all(tape.square(diff));
}

ad::Value cross_entropy_graph(ad::Tape& tape, ad::Value log_probs,
                              const std::vector<int>& classes) {
  const auto& lp = tape.val(log_probs);
  const auto batch = static_cast<Eigen::Index>(classes.size());
  if (lp.rows() != batch) throw ShapeError("cross_entropy: batch mismatch");
  Matrix onehot = Matrix::Zero(lp.rows(), lp.cols());
  for (Eigen::Index i = 0; i < batch; ++i) {
    const int c = classes[static_cast<std::size_t>(i)];
    if (c < 0 || c >= lp.cols()) throw ValidationError("class index out of range");
    onehot(i, c) = 1.0;
  }
  ad::Value picked = tape.mul_const(log_probs, onehot);
  return tape.scale(tape.sum(picked), -1.0 / static_cast<double>(batch));
}

PearsonResult pearson_graph(ad::Tape& tape, ad::Value y_tilde, const Vector& y) {
  const auto& pred = tape.val(y_tilde);
  if (pred.cols() != 1 || pred.rows() != y.size()) throw ShapeError("pearson: shape");
  if (y.size() < 2) throw ValidationError("pearson needs B >= 2");

  const double y_mean = y.mean();
  const Vector yc = y.array() - y_mean;
  const double y_norm = yc.norm();

  PearsonResult out;
  const double pred_std = std::sqrt(
      (pred.col(0).array() - pred.col(0).mean()).square().sum());
  if (y_norm < 1e-12 || pred_std < 1e-12) {
    out.value = tape.scalar(0.0);
    out.degenerate = true;
    return out;
  }

  // corr = <centered, yc> / (||centered|| ||yc||); the label norm is constant.
  ad::Value centered = tape.sub_rowvec(y_tilde, tape.colwise_mean(y_tilde));
  ad::Value cov = tape.sum(tape.mul_const(centered, Matrix(yc)));
  ad::Value denom = tape.l2_norm(centered);
  ad::Value corr = tape.mul(cov, tape.reciprocal(denom));
  out.value = tape.scale(corr, 1.0 / y_norm);
  return out;
}

ad::Value cmd_graph(ad::Tape& tape, ad::Value z, ad::Value w, int order, double a, double b,
                    bool* clamped) {
  const auto& zv = tape.val(z);
  const auto& wv = tape.val(w);
  if (zv.rows() < 1 || wv.rows() < 1) throw ValidationError("cmd: empty sample set");
  if (zv.cols() != wv.cols()) throw ShapeError("cmd: width mismatch");
  if (!(b > a)) throw ValidationError("cmd: bounds must satisfy b > a");
  if (order < 1) throw ValidationError("cmd: order must be >= 1");

  const bool out_of_range = zv.minCoeff() < a || zv.maxCoeff() > b || wv.minCoeff() < a ||
                            wv.maxCoeff() > b;
  if (clamped) *clamped = out_of_range;
  if (out_of_range) {
    z = tape.clamp(z, a, b);
    w = tape.clamp(w, a, b);
  }

  const double range = std::abs(b - a);
  ad::Value mean_z = tape.colwise_mean(z);
  ad::Value mean_w = tape.colwise_mean(w);
  ad::Value total = tape.scale(tape.l2_norm(tape.sub(mean_z, mean_w)), 1.0 / range);

  ad::Value zc = tape.sub_rowvec(z, mean_z);
  ad::Value wc = tape.sub_rowvec(w, mean_w);
  double denom = range;
  for (int k = 2; k <= order; ++k) {
    denom *= range;
    ad::Value mz = tape.colwise_mean(tape.pow_int(zc, k));
    ad::Value mw = tape.colwise_mean(tape.pow_int(wc, k));
    total = tape.add(total, tape.scale(tape.l2_norm(tape.sub(mz, mw)), 1.0 / denom));
  }
  return total;
}

ad::Value sim_loss_graph(ad::Tape& tape, const std::array<ad::Value, 3>& r_star, int order,
                         double a, double b) {
  ad::Value total = cmd_graph(tape, r_star[0], r_star[1], order, a, b);
  total = tape.add(total, cmd_graph(tape, r_star[0], r_star[2], order, a, b));
  total = tape.add(total, cmd_graph(tape, r_star[1], r_star[2], order, a, b));
  return tape.scale(total, 1.0 / 3.0);
}

ad::Value hsic_graph(ad::Tape& tape, ad::Value z, ad::Value w, double sigma, HsicKernel kernel) {
  const auto& zv = tape.val(z);
  const auto& wv = tape.val(w);
  if (zv.rows() != wv.rows()) throw ShapeError("hsic: row count mismatch");
  const auto batch = zv.rows();
  if (batch < 2) throw ValidationError("hsic needs B >= 2");

  ad::Value kz = kernel == HsicKernel::rbf ? tape.rbf_gram(z, sigma)
                                           : tape.normprod_gram(z, sigma);
  ad::Value kw = kernel == HsicKernel::rbf ? tape.rbf_gram(w, sigma)
                                           : tape.normprod_gram(w, sigma);
  Matrix centering = Matrix::Identity(batch, batch) -
                     Matrix::Constant(batch, batch, 1.0 / static_cast<double>(batch));
  ad::Value j = tape.constant(centering);
  ad::Value kzj = tape.matmul(kz, j);
  ad::Value kwj = tape.matmul(kw, j);
  // Tr(P Q) = sum(P .* Q^T)
  ad::Value tr = tape.sum(tape.mul(kzj, tape.transpose(kwj)));
  const double norm = static_cast<double>(batch - 1);
  return tape.scale(tr, 1.0 / (norm * norm));
}

ad::Value inter_independence_graph(ad::Tape& tape, const std::array<ad::Value, 3>& r_cap_u,
                                   double sigma, HsicKernel kernel) {
  ad::Value total = hsic_graph(tape, r_cap_u[0], r_cap_u[1], sigma, kernel);
  total = tape.add(total, hsic_graph(tape, r_cap_u[0], r_cap_u[2], sigma, kernel));
  total = tape.add(total, hsic_graph(tape, r_cap_u[1], r_cap_u[2], sigma, kernel));
  return tape.scale(total, 1.0 / 3.0);
}

ad::Value intra_exclusive_graph(ad::Tape& tape, const std::array<ad::Value, 3>& r_star,
                                const std::array<ad::Value, 3>& u_star, double sigma,
                                HsicKernel kernel) {
  ad::Value total = hsic_graph(tape, r_star[0], u_star[0], sigma, kernel);
  total = tape.add(total, hsic_graph(tape, r_star[1], u_star[1], sigma, kernel));
  total = tape.add(total, hsic_graph(tape, r_star[2], u_star[2], sigma, kernel));
  return tape.scale(total, 1.0 / 3.0);
}

ad::Value recon_loss_graph(ad::Tape& tape, ad::Value x_hat_prime, ad::Value x_hat) {
  const auto& a = tape.val(x_hat_prime);
  const auto& b = tape.val(x_hat);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("recon: shape mismatch");
  ad::Value diff = tape.sub(x_hat_prime, x_hat);
  // (1/B) sum_i ||diff_i||^2 = sum of squares / rows
  return tape.scale(tape.sum(tape.square(diff)), 1.0 / static_cast<double>(a.rows()));
}

// ---------------------------------------------------------------------------
// plain evaluators

double task_loss(const Matrix& predictions, const Vector& labels, TaskKind task) {
  if (predictions.rows() != labels.size() || predictions.rows() < 1) {
    throw ShapeError("task_loss: batch mismatch");
  }
  if (task == TaskKind::regression) {
    if (predictions.cols() != 1) throw ShapeError("regression predictions must be B x 1");
    return (predictions.col(0) - labels).squaredNorm() / static_cast<double>(labels.size());
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < predictions.rows(); ++i) {
    const double sum = predictions.row(i).sum();
    if (std::abs(sum - 1.0) > 1e-6 || predictions.row(i).minCoeff() < -1e-12) {
      throw ValidationError("classification predictions must be probability vectors");
    }
    const int c = static_cast<int>(labels(i));
    if (c < 0 || c >= predictions.cols()) throw ValidationError("label class out of range");
    total -= std::log(std::max(predictions(i, c), 1e-300));
  }
  return total / static_cast<double>(predictions.rows());
}

double modality_loss(const Matrix& discriminator_probs, Modality m) {
  if (discriminator_probs.cols() != 3) throw ShapeError("modality probs must be B x 3");
  if (discriminator_probs.rows() < 1) throw ValidationError("modality_loss: empty batch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < discriminator_probs.rows(); ++i) {
    const double sum = discriminator_probs.row(i).sum();
    if (std::abs(sum - 1.0) > 1e-6 || discriminator_probs.row(i).minCoeff() < -1e-12) {
      throw ValidationError("modality probs must lie on the simplex");
    }
    total -= std::log(std::max(discriminator_probs(i, index_of(m)), 1e-300));
  }
  return total / static_cast<double>(discriminator_probs.rows());
}

double ucorr_loss(const Vector& y_tilde, const Vector& y, UcorrMode mode, bool* degenerate) {
  if (y_tilde.size() != y.size()) throw ShapeError("ucorr: length mismatch");
  if (y.size() < 2) throw ValidationError("ucorr needs B >= 2");
  if (degenerate) *degenerate = false;
  const Vector a = y_tilde.array() - y_tilde.mean();
  const Vector b = y.array() - y.mean();
  const double na = a.norm();
  const double nb = b.norm();
  if (na < 1e-12 || nb < 1e-12) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  const double corr = a.dot(b) / (na * nb);
  return mode == UcorrMode::paper_literal ? corr : corr * corr;
}

double ucorr_loss_classification(const Matrix& probs, const std::vector<int>& classes,
                                 UcorrMode mode) {
  if (probs.rows() != static_cast<Eigen::Index>(classes.size()) || probs.rows() < 1) {
    throw ShapeError("ucorr classification: batch mismatch");
  }
  const auto batch = probs.rows();
  if (mode == UcorrMode::paper_literal) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < batch; ++i) {
      total += std::log(std::max(probs(i, classes[static_cast<std::size_t>(i)]), 1e-300));
    }
    return total / static_cast<double>(batch);
  }
  // KL(p || uniform) = log C + sum p log p
  const double log_c = std::log(static_cast<double>(probs.cols()));
  double total = 0.0;
  for (Eigen::Index i = 0; i < batch; ++i) {
    double ent = 0.0;
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double p = probs(i, c);
      if (p > 0) ent += p * std::log(p);
    }
    total += log_c + ent;
  }
  return total / static_cast<double>(batch);
}

double cmd(const Matrix& z, const Matrix& w, int order, double a, double b) {
  ad::Tape tape;
  bool clamped = false;
  const double v = tape.scalar_val(
      cmd_graph(tape, tape.constant(z), tape.constant(w), order, a, b, &clamped));
  if (clamped) {
    std::fprintf(stderr, "cmd: samples outside [%g, %g] were clamped\n", a, b);
  }
  return v;
}

double sim_loss(const std::array<Matrix, 3>& r_star, int order, double a, double b) {
  ad::Tape tape;
  std::array<ad::Value, 3> vals{tape.constant(r_star[0]), tape.constant(r_star[1]),
                                tape.constant(r_star[2])};
  return tape.scalar_val(sim_loss_graph(tape, vals, order, a, b));
}

double hsic(const Matrix& z, const Matrix& w, double sigma, HsicKernel kernel) {
  ad::Tape tape;
  return tape.scalar_val(hsic_graph(tape, tape.constant(z), tape.constant(w), sigma, kernel));
}

double inter_independence_loss(const std::array<Matrix, 3>& r_cap_u, double sigma,
                               HsicKernel kernel) {
  ad::Tape tape;
  std::array<ad::Value, 3> vals{tape.constant(r_cap_u[0]), tape.constant(r_cap_u[1]),
                                tape.constant(r_cap_u[2])};
  return tape.scalar_val(inter_independence_graph(tape, vals, sigma, kernel));
}

double intra_exclusive_loss(const Matrix& r_star, const Matrix& u_star, double sigma,
                            HsicKernel kernel) {
  ad::Tape tape;
  return tape.scalar_val(
      hsic_graph(tape, tape.constant(r_star), tape.constant(u_star), sigma, kernel));
}

double recon_loss(const Matrix& x_hat_prime, const Matrix& x_hat) {
  ad::Tape tape;
  return tape.scalar_val(
      recon_loss_graph(tape, tape.constant(x_hat_prime), tape.constant(x_hat)));
}

LossReport total_loss(const LossReport& components, const LossWeights& weights) {
  weights.validate();
  LossReport out = components;
  out.total = weights.task * out.task + weights.modality * out.modality +
              weights.ucorr * out.ucorr + weights.sim * out.sim +
              weights.h * (out.h_inter + out.h_intra) + weights.recon * out.recon;
  out.check(weights);
  return out;
}

}  // namespace losses

}  // namespace tridira
