// SPDX-License-Identifier: Apache-2.0
//
// NPCK container, all integers little-endian:
//   "NPCK" | u32 version | u32 count | count x tensor
//   tensor: u32 name bytes | name (UTF-8) | u32 rank | rank x u32 dim | f32 data
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "normprobe/adam.hpp"
#include "normprobe/models.hpp"

namespace normprobe {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct Checkpoint {
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(std::string_view name) const;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws CheckpointError on bad magic, unknown version, truncation or trailing bytes.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Parameters, norm running statistics and (optionally) Adam moments and step.
Checkpoint capture_checkpoint(LocCnn& model, const AdamState<float>* optimizer);

/// Writes a checkpoint back into a model built from the same config.
/// Throws CheckpointError if a tensor is missing or has the wrong shape.
void restore_checkpoint(const Checkpoint& ckpt, LocCnn& model, AdamState<float>* optimizer);

}  // namespace normprobe
