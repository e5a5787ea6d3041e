#include "tridira/manifest.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "tridira/tdrf.hpp"

namespace tridira {

using nlohmann::json;

void ManifestHeader::validate() const {
  if (task == TaskKind::regression) {
    if (!(label_max > label_min)) throw ValidationError("label range must satisfy max > min");
  } else {
    if (num_classes < 2) throw ValidationError("classification needs num_classes >= 2");
  }
  for (auto m : kModalities) {
    if (feature_dims[index_of(m)] < 1) {
      throw ValidationError(std::string("feature dim for ") + to_string(m) +
                            " must be positive");
    }
  }
}

void ManifestHeader::check_label(double label, const std::string& id) const {
  if (!std::isfinite(label)) throw ValidationError("non-finite label for id " + id);
  if (task == TaskKind::regression) {
    if (label < label_min || label > label_max) {
      throw ValidationError("label " + std::to_string(label) + " outside declared range [" +
                            std::to_string(label_min) + ", " + std::to_string(label_max) +
                            "] for id " + id);
    }
  } else {
    const double rounded = std::nearbyint(label);
    if (rounded != label || label < 0 || label >= num_classes) {
      throw ValidationError("label " + std::to_string(label) +
                            " is not a class index in [0, " + std::to_string(num_classes) +
                            ") for id " + id);
    }
  }
}

namespace {

json header_to_json(const ManifestHeader& h) {
  json j;
  j["task"] = to_string(h.task);
  if (h.task == TaskKind::regression) {
    j["label_range"] = {h.label_min, h.label_max};
  } else {
    j["num_classes"] = h.num_classes;
  }
  j["feature_dims"] = {{"text", h.feature_dims[0]},
                       {"audio", h.feature_dims[1]},
                       {"visual", h.feature_dims[2]}};
  return j;
}

ManifestHeader header_from_json(const json& j) {
  ManifestHeader h;
  if (!j.contains("task")) throw SchemaError("manifest header missing 'task'");
  h.task = task_from_string(j.at("task").get<std::string>());
  if (h.task == TaskKind::regression) {
    if (!j.contains("label_range")) throw SchemaError("regression manifest missing 'label_range'");
    const auto& r = j.at("label_range");
    if (!r.is_array() || r.size() != 2) throw SchemaError("label_range must be [min, max]");
    h.label_min = r[0].get<double>();
    h.label_max = r[1].get<double>();
  } else {
    if (!j.contains("num_classes")) {
      throw SchemaError("classification manifest missing 'num_classes'");
    }
    h.num_classes = j.at("num_classes").get<int>();
  }
  if (!j.contains("feature_dims")) throw SchemaError("manifest header missing 'feature_dims'");
  const auto& d = j.at("feature_dims");
  for (auto m : kModalities) {
    const std::string key = to_string(m);
    if (!d.contains(key)) throw SchemaError("feature_dims missing '" + key + "'");
    h.feature_dims[index_of(m)] = d.at(key).get<int>();
  }
  h.validate();
  return h;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

}  // namespace

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path.string());

  std::string line;
  if (!std::getline(is, line)) throw SchemaError("empty manifest: " + path.string());

  Manifest manifest;
  try {
    manifest.header = header_from_json(json::parse(line));
  } catch (const json::exception& e) {
    throw SchemaError("bad manifest header: " + std::string(e.what()));
  }

  const auto base = path.parent_path();
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    const std::string id = fields.empty() ? ("line " + std::to_string(lineno)) : fields[0];
    if (fields.size() != 5) {
      throw SchemaError("manifest record for id '" + id + "' has " +
                        std::to_string(fields.size()) +
                        " fields, expected id, label, and three feature paths");
    }
    for (int k = 2; k < 5; ++k) {
      if (fields[static_cast<std::size_t>(k)].empty()) {
        throw SchemaError(std::string("manifest record for id '") + id + "' is missing the " +
                          to_string(static_cast<Modality>(k - 2)) + " path");
      }
    }
    UtteranceDescriptor desc;
    desc.id = id;
    try {
      desc.label = std::stod(fields[1]);
    } catch (const std::exception&) {
      throw SchemaError("unparsable label '" + fields[1] + "' for id " + id);
    }
    manifest.header.check_label(desc.label, id);
    for (auto m : kModalities) {
      std::filesystem::path p = fields[static_cast<std::size_t>(2 + index_of(m))];
      desc.paths[index_of(m)] = p.is_absolute() ? p : base / p;
    }
    manifest.records.push_back(std::move(desc));
  }
  return manifest;
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  manifest.header.validate();
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open manifest for write: " + path.string());
  os << header_to_json(manifest.header).dump() << "\n";
  const auto base = path.parent_path();
  for (const auto& rec : manifest.records) {
    os << rec.id << '\t';
    {
      std::ostringstream label;
      label.precision(17);
      label << rec.label;
      os << label.str();
    }
    for (auto m : kModalities) {
      auto p = rec.paths[index_of(m)];
      const auto rel = p.lexically_proximate(base);
      os << '\t' << (rel.empty() ? p : rel).generic_string();
    }
    os << "\n";
  }
  if (!os) throw IoError("manifest write failed: " + path.string());
}

UtteranceRecord load_record(const UtteranceDescriptor& desc, const ManifestHeader& header) {
  UtteranceRecord rec;
  rec.id = desc.id;
  rec.label = desc.label;
  for (auto m : kModalities) {
    auto seq = read_feature_file(desc.paths[index_of(m)]);
    if (seq.modality != m) {
      throw SchemaError("file " + desc.paths[index_of(m)].string() + " is tagged " +
                        to_string(seq.modality) + " but listed as " + to_string(m) +
                        " for id " + desc.id);
    }
    if (seq.dim() != header.feature_dims[index_of(m)]) {
      throw ShapeError("id " + desc.id + ": " + to_string(m) + " dim " +
                       std::to_string(seq.dim()) + " != declared " +
                       std::to_string(header.feature_dims[index_of(m)]));
    }
    rec.features[index_of(m)] = std::move(seq);
  }
  return rec;
}

std::vector<UtteranceRecord> load_records(const Manifest& manifest) {
  std::vector<UtteranceRecord> out;
  out.reserve(manifest.records.size());
  for (const auto& desc : manifest.records) out.push_back(load_record(desc, manifest.header));
  return out;
}

}  // namespace tridira
