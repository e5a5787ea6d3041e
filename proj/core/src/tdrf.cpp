#include "tridira/tdrf.hpp"

#include <cstring>
#include <fstream>

namespace tridira {

namespace {

constexpr char kMagic[4] = {'T', 'D', 'R', 'F'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

float get_f32(std::istream& is) {
  const std::uint32_t bits = get_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void FeatureSequence::validate() const {
  if (values.rows() < 1 || values.cols() < 1) {
    throw ValidationError("feature sequence must have positive length and dim");
  }
  if (mask.size() != static_cast<std::size_t>(values.rows())) {
    throw ShapeError("mask length " + std::to_string(mask.size()) + " != tau " +
                     std::to_string(values.rows()));
  }
  if (!values.allFinite()) {
    throw ValidationError("feature sequence contains NaN or Inf");
  }
  bool any = false;
  for (auto m : mask) any = any || (m != 0);
  if (!any) throw ValidationError("mask has no valid frame");
}

void write_feature_file(const FeatureSequence& seq, const std::filesystem::path& path) {
  seq.validate();
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for write: " + path.string());

  os.write(kMagic, 4);
  put_u32(os, kTdrfVersion);
  const auto modality = static_cast<unsigned char>(seq.modality);
  os.write(reinterpret_cast<const char*>(&modality), 1);
  put_u32(os, static_cast<std::uint32_t>(seq.length()));
  put_u32(os, static_cast<std::uint32_t>(seq.dim()));

  for (int t = 0; t < seq.length(); ++t) {
    for (int j = 0; j < seq.dim(); ++j) put_f32(os, seq.values(t, j));
  }
  for (int t = 0; t < seq.length(); ++t) {
    const unsigned char b = seq.mask[static_cast<std::size_t>(t)] ? 1 : 0;
    os.write(reinterpret_cast<const char*>(&b), 1);
  }
  os.flush();
  if (!os) throw IoError("write failed: " + path.string());
}

FeatureSequence read_feature_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for read: " + path.string());

  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw SchemaError("not a TDRF file: " + path.string());
  }
  const std::uint32_t version = get_u32(is);
  if (version != kTdrfVersion) {
    throw SchemaError("unsupported TDRF version " + std::to_string(version));
  }
  unsigned char modality_byte = 0;
  is.read(reinterpret_cast<char*>(&modality_byte), 1);
  if (modality_byte > 2) throw SchemaError("invalid modality tag in " + path.string());
  const std::uint32_t tau = get_u32(is);
  const std::uint32_t dim = get_u32(is);
  if (!is || tau == 0 || dim == 0) throw SchemaError("invalid TDRF header in " + path.string());

  FeatureSequence seq;
  seq.modality = static_cast<Modality>(modality_byte);
  seq.values.resize(tau, dim);
  for (std::uint32_t t = 0; t < tau; ++t) {
    for (std::uint32_t j = 0; j < dim; ++j) seq.values(t, j) = get_f32(is);
  }
  seq.mask.resize(tau);
  is.read(reinterpret_cast<char*>(seq.mask.data()), tau);
  if (!is) throw IoError("truncated TDRF file: " + path.string());
  for (auto& m : seq.mask) m = m ? 1 : 0;
  seq.validate();
  return seq;
}

const char* to_string(Modality m) {
  switch (m) {
    case Modality::text: return "text";
    case Modality::audio: return "audio";
    case Modality::visual: return "visual";
  }
  return "?";
}

Modality modality_from_string(const std::string& s) {
  if (s == "text" || s == "t") return Modality::text;
  if (s == "audio" || s == "a") return Modality::audio;
  if (s == "visual" || s == "v") return Modality::visual;
  throw ValidationError("unknown modality: " + s);
}

const char* to_string(TaskKind t) {
  return t == TaskKind::regression ? "regression" : "classification";
}

TaskKind task_from_string(const std::string& s) {
  if (s == "regression") return TaskKind::regression;
  if (s == "classification") return TaskKind::classification;
  throw ValidationError("unknown task kind: " + s);
}

}  // namespace tridira
