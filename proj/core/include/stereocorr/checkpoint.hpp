#pragma once

// Little-endian binary checkpoint:
//   magic "SVLT", u32 version,
//   arch descriptor (u32 conv layers, u32 pool count, u32 pool positions...,
//   u32 theta, u32 in_channels, u32 correlation mode, u32 flags),
//   u32 blob count, then named parameter blobs
//   (u32 name length, name bytes, u32 dims[4], float32 values).
// flags bit 0: batch-norm running moments are initialized.

#include <string>

#include "stereocorr/model.hpp"

namespace stereocorr {

inline constexpr char kCheckpointMagic[4] = {'S', 'V', 'L', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, StereoModel& model);
StereoModel load_checkpoint(const std::string& path);

} // namespace stereocorr
