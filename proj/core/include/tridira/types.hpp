#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tridira {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Modality : std::uint8_t { text = 0, audio = 1, visual = 2 };

inline constexpr std::array<Modality, 3> kModalities{Modality::text, Modality::audio,
                                                     Modality::visual};

inline constexpr int index_of(Modality m) { return static_cast<int>(m); }

const char* to_string(Modality m);
Modality modality_from_string(const std::string& s);

enum class TaskKind { regression, classification };

const char* to_string(TaskKind t);
TaskKind task_from_string(const std::string& s);

/// Invalid values, ranges, or numerically unusable inputs.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Structurally malformed inputs (manifest lines, archives, checkpoints).
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dimension mismatches between tensors or against declared sizes.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when training must stop (NaN loss or gradient); names the culprit.
struct TrainAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One modality's per-utterance feature matrix. Values are stored as float32
/// to match the on-disk TDRF payload bit for bit.
struct FeatureSequence {
  Modality modality = Modality::text;
  Eigen::MatrixXf values;           // tau x dim, row-major semantics
  std::vector<std::uint8_t> mask;   // tau entries, nonzero = valid frame

  int length() const { return static_cast<int>(values.rows()); }
  int dim() const { return static_cast<int>(values.cols()); }

  void validate() const;
};

struct UtteranceRecord {
  std::string id;
  double label = 0.0;  // class index for classification tasks
  std::array<FeatureSequence, 3> features;  // indexed by Modality
};

/// Aligned batch of three modality blocks. Sequences are padded to the
/// per-modality maximum length; padded rows are zero and masked out.
struct UtteranceBatch {
  struct ModalityBlock {
    Matrix values;  // (B * tau) x dim, sample i occupies rows [i*tau, (i+1)*tau)
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> mask;  // B x tau
    int tau = 0;
    int dim = 0;
  };

  std::array<ModalityBlock, 3> blocks;
  Vector labels;
  std::vector<std::string> ids;

  int size() const { return static_cast<int>(ids.size()); }
};

}  // namespace tridira
