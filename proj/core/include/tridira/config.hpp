#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tridira/encoder.hpp"
#include "tridira/disentangler.hpp"
#include "tridira/losses.hpp"
#include "tridira/synthetic.hpp"

namespace tridira {

struct TrainSchedule {
  int stage1_epochs = 10;
  int stage2_epochs = 40;
  double learning_rate = 8e-5;
  double weight_decay = 5e-5;
  int batch_size = 64;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::optional<double> grad_clip;

  void validate() const;
};

struct DatasetConfig {
  enum class Kind { synthetic, manifest } kind = Kind::synthetic;
  // synthetic
  SyntheticSpec synthetic;
  int train_count = 0, val_count = 0, test_count = 0;  // consecutive split of num_samples
  // manifest
  std::filesystem::path train_manifest, val_manifest, test_manifest;

  void validate(bool check_paths) const;
};

inline constexpr int kConfigVersion = 1;

/// Versioned experiment description. Parsing is strict: unknown keys are
/// errors, and serialization round-trips losslessly.
struct ExperimentConfig {
  int version = kConfigVersion;
  DatasetConfig dataset;
  EncoderConfig encoder;
  DisentanglerConfig disentangler;
  LossWeights weights;
  LossConfig loss;
  TrainSchedule schedule;
  std::filesystem::path output_dir = "out";

  void validate(bool check_paths = true) const;

  std::string to_json_string() const;
  static ExperimentConfig from_json_string(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// FNV-1a over the canonical serialized form; stored in checkpoints.
  std::uint64_t fingerprint() const;

  /// Applies the TRIDIRA_OUT environment override and an optional --out flag.
  std::filesystem::path resolved_output_dir(
      const std::optional<std::filesystem::path>& cli_override = std::nullopt) const;
};

}  // namespace tridira
