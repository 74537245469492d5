#pragma once

#include <filesystem>

#include "prism/numerics/layers.hpp"

namespace prism::num {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout: "PRCK", u32 version, then per parameter: u32 name length, name bytes,
/// u32 rank, rank x u32 dims, little-endian f32 values. Records run to end of file.
void save_checkpoint(const std::filesystem::path& path, const StateDict<float>& tensors);
StateDict<float> load_checkpoint(const std::filesystem::path& path);

inline void save_checkpoint(const std::filesystem::path& path, const ParamModule<float>& module) {
  save_checkpoint(path, state(module));
}

}  // namespace prism::num
