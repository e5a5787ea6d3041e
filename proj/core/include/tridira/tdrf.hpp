#pragma once

#include <filesystem>

#include "tridira/types.hpp"

namespace tridira {

// TDRF container: 17-byte header {magic "TDRF", version u32=1, modality u8,
// tau u32, dim u32}, then tau*dim little-endian float32 row-major, then tau
// mask bytes.
inline constexpr std::uint32_t kTdrfVersion = 1;

void write_feature_file(const FeatureSequence& seq, const std::filesystem::path& path);
FeatureSequence read_feature_file(const std::filesystem::path& path);

}  // namespace tridira
