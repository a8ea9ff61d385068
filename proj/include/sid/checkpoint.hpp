#pragma once

// Flat checkpoint container of named f64 tensors.
//
// Layout (all integers little-endian):
//   magic "SID2" | version u32 | count u32
//   per entry: name_len u32 | name bytes | rank u32 | dims u64 each | f64 payload

#include <string>
#include <utility>
#include <vector>

#include "sid/tensor.hpp"

namespace sid {

inline constexpr uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

// Writes atomically: temp file in the same directory, then rename.
void save_checkpoint(const std::string& path, const NamedTensors& tensors);

NamedTensors load_checkpoint(const std::string& path);

}  // namespace sid
