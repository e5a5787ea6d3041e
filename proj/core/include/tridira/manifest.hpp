#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <vector>

#include "tridira/types.hpp"

namespace tridira {

/// One-line JSON header at the top of every manifest: task kind, label
/// range (regression) or class count (classification), per-modality dims.
struct ManifestHeader {
  TaskKind task = TaskKind::regression;
  double label_min = -3.0;
  double label_max = 3.0;
  int num_classes = 0;
  std::array<int, 3> feature_dims{0, 0, 0};

  void validate() const;
  void check_label(double label, const std::string& id) const;
};

struct UtteranceDescriptor {
  std::string id;
  double label = 0.0;
  std::array<std::filesystem::path, 3> paths;  // indexed by Modality
};

struct Manifest {
  ManifestHeader header;
  std::vector<UtteranceDescriptor> records;
};

// Record lines are tab-separated: id, label, text path, audio path, visual
// path. Relative paths resolve against the manifest's directory.
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

UtteranceRecord load_record(const UtteranceDescriptor& desc, const ManifestHeader& header);
std::vector<UtteranceRecord> load_records(const Manifest& manifest);

}  // namespace tridira
