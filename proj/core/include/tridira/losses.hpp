#pragma once

#include <array>
#include <optional>
#include <string>

#include "tridira/autodiff.hpp"
#include "tridira/types.hpp"

namespace tridira {

struct LossWeights {
  double task = 1.0;
  double sim = 0.1;
  double ucorr = 0.8;
  double recon = 0.2;
  double modality = 0.05;
  double h = 1.0;

  void validate() const;
};

enum class UcorrMode { independence, paper_literal };
enum class HsicKernel { rbf, paper_literal };
enum class CmdBoundsMode { tanh_fixed, empirical };

struct LossConfig {
  UcorrMode ucorr_mode = UcorrMode::independence;
  HsicKernel hsic_kernel = HsicKernel::rbf;
  double hsic_sigma = 1.0;
  int cmd_order = 5;
  CmdBoundsMode cmd_bounds = CmdBoundsMode::tanh_fixed;

  void validate() const;
};

/// Named per-step scalars and their weighted total.
struct LossReport {
  double task = 0, modality = 0, ucorr = 0, sim = 0, h_inter = 0, h_intra = 0, recon = 0;
  double total = 0;
  bool ucorr_degenerate = false;

  /// Throws TrainAbort when any component is NaN (naming it) or the weighted
  /// recomposition drifts beyond 1e-6 relative.
  void check(const LossWeights& w) const;
  static const std::array<const char*, 7>& component_names();
  double component(int i) const;
};

namespace losses {

// --- graph builders (differentiable) ---

/// Regression: mean squared error over B predictions (y_hat B x 1).
ad::Value mse_graph(ad::Tape& tape, ad::Value y_hat, const Vector& y);
/// Classification: -(1/B) sum log p[true class]; probs B x C on the tape.
ad::Value cross_entropy_graph(ad::Tape& tape, ad::Value log_probs,
                              const std::vector<int>& classes);

struct PearsonResult {
  ad::Value value;
  bool degenerate = false;
};
/// Pearson correlation of predictions (B x 1) against constant labels.
PearsonResult pearson_graph(ad::Tape& tape, ad::Value y_tilde, const Vector& y);

/// CMD_K on two sample sets (rows = samples). Samples outside [a, b] are
/// clamped; `clamped` reports whether any were.
ad::Value cmd_graph(ad::Tape& tape, ad::Value z, ad::Value w, int order, double a, double b,
                    bool* clamped = nullptr);

/// Mean pairwise CMD over the three modalities' invariant representations.
ad::Value sim_loss_graph(ad::Tape& tape, const std::array<ad::Value, 3>& r_star, int order,
                         double a, double b);

/// HSIC estimator: (1/(B-1)^2) Tr(K_Z J K_W J), J = I - ones/B.
ad::Value hsic_graph(ad::Tape& tape, ad::Value z, ad::Value w, double sigma, HsicKernel kernel);

ad::Value inter_independence_graph(ad::Tape& tape, const std::array<ad::Value, 3>& r_cap_u,
                                   double sigma, HsicKernel kernel);
ad::Value intra_exclusive_graph(ad::Tape& tape, const std::array<ad::Value, 3>& r_star,
                                const std::array<ad::Value, 3>& u_star, double sigma,
                                HsicKernel kernel);

ad::Value recon_loss_graph(ad::Tape& tape, ad::Value x_hat_prime, ad::Value x_hat);

// --- plain evaluators (no gradients; same formulas) ---

double task_loss(const Matrix& predictions, const Vector& labels, TaskKind task);
double modality_loss(const Matrix& discriminator_probs, Modality m);
double ucorr_loss(const Vector& y_tilde, const Vector& y, UcorrMode mode,
                  bool* degenerate = nullptr);
double ucorr_loss_classification(const Matrix& probs, const std::vector<int>& classes,
                                 UcorrMode mode);
double cmd(const Matrix& z, const Matrix& w, int order, double a, double b);
double sim_loss(const std::array<Matrix, 3>& r_star, int order, double a, double b);
double hsic(const Matrix& z, const Matrix& w, double sigma, HsicKernel kernel = HsicKernel::rbf);
double inter_independence_loss(const std::array<Matrix, 3>& r_cap_u, double sigma,
                               HsicKernel kernel = HsicKernel::rbf);
double intra_exclusive_loss(const Matrix& r_star, const Matrix& u_star, double sigma,
                            HsicKernel kernel = HsicKernel::rbf);
double recon_loss(const Matrix& x_hat_prime, const Matrix& x_hat);

/// Weighted recomposition; carries every component.
LossReport total_loss(const LossReport& components, const LossWeights& weights);

}  // namespace losses

}  // namespace tridira
