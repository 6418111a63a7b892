// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "affnet/model.hpp"

namespace affnet {

/// Checkpoint layout: "AFFN" magic, u32 format version, u64 header
/// length, JSON header (format version, model config, named tensor table
/// with shapes and byte offsets), then a little-endian float32 blob.
/// save(load(p)) reproduces p byte for byte; float models round-trip
/// their values exactly.
template <typename T>
void save_checkpoint(const ModelParams<T>& params, const std::filesystem::path& path);

template <typename T>
ModelParams<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace affnet
