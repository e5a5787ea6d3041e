#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "tridira/params.hpp"

namespace tridira {

// TDCK container: magic "TDCK", version, config fingerprint, schedule
// position, RNG state, then the named parameter tensors in store order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint64_t config_fingerprint = 0;
  std::uint32_t stage = 0;
  std::uint32_t epoch = 0;
  std::array<std::uint64_t, 4> rng_state{};
  std::vector<std::pair<std::string, Matrix>> parameters;

  static Checkpoint capture(const ParameterStore& store, std::uint64_t fingerprint,
                            std::uint32_t stage, std::uint32_t epoch,
                            const std::array<std::uint64_t, 4>& rng_state);
  /// Copies parameter tensors back into the store (names and shapes must match).
  void restore(ParameterStore& store) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tridira
