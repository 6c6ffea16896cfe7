#pragma once

#include <filesystem>

#include "apgl/optim.hpp"

namespace apgl::ad {

// Binary checkpoint layout (all integers and floats little-endian):
//
//   "APGLCKPT"                 8-byte magic
//   u8   version               kCheckpointVersion
//   i64  optimizer step count
//   u8   has_moments
//   u32  parameter count
//   per parameter:
//     u32 name length, name bytes
//     u32 rank, u64 dims[rank]
//     f64 values[numel]
//     f64 first moment[numel], f64 second moment[numel]   (if has_moments)
inline constexpr std::uint8_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path,
                     const ParameterSet& params, const Adam* optimizer);

// Loads into existing parameters matched by name. Every parameter in `params`
// must be present with the same shape; otherwise ShapeError/DataError names
// the parameter. Moments are restored only when `optimizer` is non-null.
void load_checkpoint(const std::filesystem::path& path, ParameterSet& params,
                     Adam* optimizer);

}  // namespace apgl::ad
