#pragma once

#include <string>

#include "tridira/types.hpp"

namespace tridira {

/// Task-dependent metric set. Regression fills the MOSI-style block (MAE,
/// Corr, both Acc-2/F1 binarizations, Acc-7); classification fills acc and
/// weighted F1. Accuracies are percentages.
struct MetricReport {
  TaskKind task = TaskKind::regression;
  double mae = 0;
  double corr = 0;
  double acc2_nonneg = 0;  // threshold at >= 0, all samples
  double acc2_pos = 0;     // threshold at > 0, samples with y != 0 only
  double f1_nonneg = 0;
  double f1_pos = 0;
  double acc7 = 0;
  double acc = 0;          // classification
  double f1_weighted = 0;  // classification

  std::string to_json_string() const;
  static MetricReport from_json_string(const std::string& s);
};

/// predictions: B x 1 scores (regression) or B x C probabilities.
MetricReport compute_metrics(const Matrix& predictions, const Vector& labels, TaskKind task);

double pearson(const Vector& a, const Vector& b);

/// Weighted-by-support F1 over the given class count.
double weighted_f1(const std::vector<int>& predicted, const std::vector<int>& truth,
                   int num_classes);

/// Arithmetic mean across reports, field by field.
MetricReport mean_report(const std::vector<MetricReport>& reports);

}  // namespace tridira
