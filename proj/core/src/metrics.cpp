#include "tridira/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace tridira {

using nlohmann::json;

double pearson(const Vector& a, const Vector& b) {
  if (a.size() != b.size() || a.size() < 2) return 0.0;
  const Vector ac = a.array() - a.mean();
  const Vector bc = b.array() - b.mean();
  const double na = ac.norm();
  const double nb = bc.norm();
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  return ac.dot(bc) / (na * nb);
}

double weighted_f1(const std::vector<int>& predicted, const std::vector<int>& truth,
                   int num_classes) {
  if (predicted.size() != truth.size() || predicted.empty()) {
    throw ValidationError("weighted_f1: empty or mismatched inputs");
  }
  std::vector<double> tp(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<double> fp(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<double> fn(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<double> support(static_cast<std::size_t>(num_classes), 0.0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i];
    const int p = predicted[i];
    support[static_cast<std::size_t>(t)] += 1.0;
    if (p == t) {
      tp[static_cast<std::size_t>(t)] += 1.0;
    } else {
      fp[static_cast<std::size_t>(p)] += 1.0;
      fn[static_cast<std::size_t>(t)] += 1.0;
    }
  }
  double f1_sum = 0.0;
  double total_support = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    const auto cc = static_cast<std::size_t>(c);
    if (support[cc] == 0.0) continue;
    const double denom = 2.0 * tp[cc] + fp[cc] + fn[cc];
    const double f1 = denom > 0.0 ? 2.0 * tp[cc] / denom : 0.0;
    f1_sum += support[cc] * f1;
    total_support += support[cc];
  }
  return total_support > 0.0 ? f1_sum / total_support : 0.0;
}

namespace {

int bucket7(double v) {
  const int r = static_cast<int>(std::nearbyint(v));
  return std::clamp(r, -3, 3);
}

}  // namespace

MetricReport compute_metrics(const Matrix& predictions, const Vector& labels, TaskKind task) {
  if (predictions.rows() != labels.size() || predictions.rows() < 1) {
    throw ValidationError("compute_metrics: empty input or batch mismatch");
  }
  MetricReport rep;
  rep.task = task;
  const auto n = labels.size();

  if (task == TaskKind::regression) {
    if (predictions.cols() != 1) throw ShapeError("regression predictions must be B x 1");
    const Vector pred = predictions.col(0);
    rep.mae = (pred - labels).cwiseAbs().mean();
    rep.corr = pearson(pred, labels);

    int correct_nonneg = 0;
    std::vector<int> bin_pred_nonneg, bin_true_nonneg;
    std::vector<int> bin_pred_pos, bin_true_pos;
    int correct_pos = 0, count_pos = 0;
    int correct7 = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool p_nn = pred(i) >= 0.0;
      const bool y_nn = labels(i) >= 0.0;
      correct_nonneg += (p_nn == y_nn) ? 1 : 0;
      bin_pred_nonneg.push_back(p_nn ? 1 : 0);
      bin_true_nonneg.push_back(y_nn ? 1 : 0);
      if (labels(i) != 0.0) {
        const bool p_pos = pred(i) > 0.0;
        const bool y_pos = labels(i) > 0.0;
        correct_pos += (p_pos == y_pos) ? 1 : 0;
        ++count_pos;
        bin_pred_pos.push_back(p_pos ? 1 : 0);
        bin_true_pos.push_back(y_pos ? 1 : 0);
      }
      correct7 += (bucket7(pred(i)) == bucket7(labels(i))) ? 1 : 0;
    }
    rep.acc2_nonneg = 100.0 * correct_nonneg / static_cast<double>(n);
    rep.acc2_pos = count_pos > 0 ? 100.0 * correct_pos / count_pos : 0.0;
    rep.f1_nonneg = 100.0 * weighted_f1(bin_pred_nonneg, bin_true_nonneg, 2);
    rep.f1_pos = count_pos > 0 ? 100.0 * weighted_f1(bin_pred_pos, bin_true_pos, 2) : 0.0;
    rep.acc7 = 100.0 * correct7 / static_cast<double>(n);
    return rep;
  }

  const int num_classes = static_cast<int>(predictions.cols());
  std::vector<int> pred_class, true_class;
  int correct = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index argmax = 0;
    predictions.row(i).maxCoeff(&argmax);
    const int p = static_cast<int>(argmax);
    const int t = static_cast<int>(labels(i));
    if (t < 0 || t >= num_classes) throw ValidationError("label class out of range");
    pred_class.push_back(p);
    true_class.push_back(t);
    correct += (p == t) ? 1 : 0;
  }
  rep.acc = 100.0 * correct / static_cast<double>(n);
  rep.f1_weighted = 100.0 * weighted_f1(pred_class, true_class, num_classes);
  return rep;
}

std::string MetricReport::to_json_string() const {
  json j;
  j["task"] = to_string(task);
  if (task == TaskKind::regression) {
    j["mae"] = mae;
    j["corr"] = corr;
    j["acc2_nonneg"] = acc2_nonneg;
    j["acc2_pos"] = acc2_pos;
    j["f1_nonneg"] = f1_nonneg;
    j["f1_pos"] = f1_pos;
    j["acc7"] = acc7;
  } else {
    j["acc"] = acc;
    j["f1_weighted"] = f1_weighted;
  }
  return j.dump(2);
}

MetricReport MetricReport::from_json_string(const std::string& s) {
  const json j = json::parse(s);
  MetricReport rep;
  rep.task = task_from_string(j.at("task").get<std::string>());
  if (rep.task == TaskKind::regression) {
    rep.mae = j.at("mae");
    rep.corr = j.at("corr");
    rep.acc2_nonneg = j.at("acc2_nonneg");
    rep.acc2_pos = j.at("acc2_pos");
    rep.f1_nonneg = j.at("f1_nonneg");
    rep.f1_pos = j.at("f1_pos");
    rep.acc7 = j.at("acc7");
  } else {
    rep.acc = j.at("acc");
    rep.f1_weighted = j.at("f1_weighted");
  }
  return rep;
}

MetricReport mean_report(const std::vector<MetricReport>& reports) {
  if (reports.empty()) throw ValidationError("mean_report: no reports");
  MetricReport mean;
  mean.task = reports.front().task;
  const double n = static_cast<double>(reports.size());
  for (const auto& r : reports) {
    mean.mae += r.mae / n;
    mean.corr += r.corr / n;
    mean.acc2_nonneg += r.acc2_nonneg / n;
    mean.acc2_pos += r.acc2_pos / n;
    mean.f1_nonneg += r.f1_nonneg / n;
    mean.f1_pos += r.f1_pos / n;
    mean.acc7 += r.acc7 / n;
    mean.acc += r.acc / n;
    mean.f1_weighted += r.f1_weighted / n;
  }
  return mean;
}

}  // namespace tridira
