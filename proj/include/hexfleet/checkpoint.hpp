#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "hexfleet/tensor.hpp"

namespace hexfleet::ad {

// Binary layout: the 9 magic bytes "HEXFLEET1", then one record per tensor
// in name order until end of file:
//   u64 name_length, name bytes, u64 rank, rank x u64 dims, f64 values
// All integers and reals little-endian; values row-major.
inline constexpr std::string_view kCheckpointMagic = "HEXFLEET1";

using TensorMap = std::map<std::string, Tensor>;

std::string serialize_checkpoint(const TensorMap& tensors);
TensorMap deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load_checkpoint(const std::filesystem::path& path);

}  // namespace hexfleet::ad
