#include "tridira/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace tridira {

namespace {

constexpr char kMagic[4] = {'T', 'D', 'C', 'K'};

template <class T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T get(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

}  // namespace

Checkpoint Checkpoint::capture(const ParameterStore& store, std::uint64_t fingerprint,
                               std::uint32_t stage, std::uint32_t epoch,
                               const std::array<std::uint64_t, 4>& rng_state) {
  Checkpoint ckpt;
  ckpt.config_fingerprint = fingerprint;
  ckpt.stage = stage;
  ckpt.epoch = epoch;
  ckpt.rng_state = rng_state;
  ckpt.parameters.reserve(static_cast<std::size_t>(store.count()));
  for (int i = 0; i < store.count(); ++i) {
    ckpt.parameters.emplace_back(store.name(i), store.value(i));
  }
  return ckpt;
}

void Checkpoint::restore(ParameterStore& store) const {
  if (static_cast<int>(parameters.size()) != store.count()) {
    throw SchemaError("checkpoint parameter count " + std::to_string(parameters.size()) +
                      " != store count " + std::to_string(store.count()));
  }
  for (int i = 0; i < store.count(); ++i) {
    const auto& [name, value] = parameters[static_cast<std::size_t>(i)];
    if (name != store.name(i)) {
      throw SchemaError("checkpoint parameter '" + name + "' does not match store entry '" +
                        store.name(i) + "'");
    }
    Matrix& dst = store.value(i);
    if (dst.rows() != value.rows() || dst.cols() != value.cols()) {
      throw ShapeError("checkpoint shape mismatch for '" + name + "'");
    }
    dst = value;
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for write: " + path.string());
  os.write(kMagic, 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, ckpt.config_fingerprint);
  put<std::uint32_t>(os, ckpt.stage);
  put<std::uint32_t>(os, ckpt.epoch);
  for (auto w : ckpt.rng_state) put<std::uint64_t>(os, w);
  put<std::uint64_t>(os, static_cast<std::uint64_t>(ckpt.parameters.size()));
  for (const auto& [name, value] : ckpt.parameters) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(value.rows()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(value.cols()));
    for (Eigen::Index r = 0; r < value.rows(); ++r) {
      for (Eigen::Index c = 0; c < value.cols(); ++c) put<double>(os, value(r, c));
    }
  }
  os.flush();
  if (!os) throw IoError("checkpoint write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw SchemaError("not a TDCK checkpoint: " + path.string());
  }
  const auto version = get<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw SchemaError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.config_fingerprint = get<std::uint64_t>(is);
  ckpt.stage = get<std::uint32_t>(is);
  ckpt.epoch = get<std::uint32_t>(is);
  for (auto& w : ckpt.rng_state) w = get<std::uint64_t>(is);
  const auto count = get<std::uint64_t>(is);
  ckpt.parameters.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto name_len = get<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto rows = get<std::uint32_t>(is);
    const auto cols = get<std::uint32_t>(is);
    Matrix value(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r) {
      for (std::uint32_t c = 0; c < cols; ++c) value(r, c) = get<double>(is);
    }
    ckpt.parameters.emplace_back(std::move(name), std::move(value));
  }
  if (!is) throw IoError("truncated checkpoint: " + path.string());
  return ckpt;
}

}  // namespace tridira
