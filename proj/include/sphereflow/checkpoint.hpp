#pragma once

// Parameter checkpoint container.
//
//   "SFCK" u32 version u32 d u32 H u32 B u32 F u32 geometry
//   f32 tensors, in FieldParams::tensors() order, each column-major
//   u64 fnv1a64 of every preceding byte
//
// A ".meta" sidecar next to the checkpoint holds key=value run metadata.

#include <cstdint>
#include <filesystem>

#include "sphereflow/fieldnet.hpp"
#include "sphereflow/kvconfig.hpp"

namespace sphereflow {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const FieldParams<T>& params);

FieldParamsF load_checkpoint(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

}  // namespace sphereflow
