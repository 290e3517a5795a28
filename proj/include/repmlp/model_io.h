/*
 * Copyright 2026 The RepMLP Toolkit Authors. All Rights Reserved.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Config files, checkpoints and FC3 kernel heatmaps.
//
// Checkpoint layout (all integers little-endian):
//
//   "RMLPFRG1"                       8-byte magic
//   u32 version                      currently 1
//   u32 mode                         0 train, 1 deploy
//   u32 config_len, config JSON      the NetConfig the tensors belong to
//   u32 entry_count
//   entry_count x {
//     u32 name_len, name (UTF-8)
//     u8  dtype                      0 = f32
//     u32 rank, u64 dims[rank]
//     u64 offset                     absolute file offset of the tensor data
//   }
//   payload                          raw little-endian f32 tensors, in entry order
//
// Tensors are the ones for_each_param visits, in the same order.

#ifndef REPMLP_MODEL_IO_H_
#define REPMLP_MODEL_IO_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "repmlp/block.h"
#include "repmlp/layers.h"
#include "repmlp/net.h"
#include "repmlp/tensor.h"

namespace repmlp {

std::string config_to_json(const NetConfig& config);
// Accepts every NetConfig field by name. An optional "preset" key selects the
// starting values; other keys override them. Unknown keys, wrong types and
// invalid results throw ConfigError.
NetConfig config_from_json(std::string_view text);
// A preset name, or the path of a JSON config file.
NetConfig resolve_config(std::string_view name_or_path);

inline constexpr char kCheckpointMagic[9] = "RMLPFRG1";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  std::vector<std::int64_t> dims;
  std::uint64_t offset = 0;
  // Where the entry's record starts in the header, for error reporting.
  std::uint64_t record_offset = 0;
  std::uint64_t bytes() const;
};

struct CheckpointInfo {
  NetConfig config;
  Mode mode = Mode::kTrain;
  std::vector<CheckpointEntry> entries;
  std::uint64_t header_bytes = 0;
  std::uint64_t payload_bytes = 0;
};

std::vector<std::uint8_t> serialize_net(const Network& net);
void save_net(const Network& net, const std::filesystem::path& path);

// Header only. FormatError (with byte offset) on bad magic, version, dtype,
// truncation, overlapping or out-of-bounds offsets, duplicate names.
CheckpointInfo parse_checkpoint_header(std::span<const std::uint8_t> bytes);
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

// Loads into a skeleton of the right config and mode. ConfigError when the
// checkpoint mode or config differs from the skeleton's; FormatError when the
// tensor table does not match the skeleton. `net` is untouched on failure.
void load_net(const std::filesystem::path& path, Network& net);
// Builds the skeleton from the stored config and mode.
Network load_net(const std::filesystem::path& path);
Network deserialize_net(std::span<const std::uint8_t> bytes);

// Kernel-locality heatmaps.
//
// The set-sharing FC3 weight (s*h*w, h*w) is viewed as W(s, h, w, 1, h, w);
// the slice for set `set`, output point (i, j) is the (h, w) grid of weights
// feeding that point. Indices are 0-based here.
Matrix fc3_kernel_slice(const FcLayer& fc3, std::int64_t s, std::int64_t h, std::int64_t w,
                        std::int64_t set, std::int64_t i, std::int64_t j);

// Smallest non-zero |entry| of the whole weight matrix (0 if all zero).
float min_nonzero_abs(const Matrix& weight);

struct Heatmap {
  Matrix raw;                // the sampled weights
  std::vector<double> log;   // ln(max(|v|, m * kGuard) / m), row-major
  double min_nonzero = 0.0;  // m
  static constexpr double kGuard = 1e-12;
};

Heatmap locality_heatmap(const FcLayer& fc3, std::int64_t s, std::int64_t h, std::int64_t w,
                         std::int64_t set, std::int64_t i, std::int64_t j);

// Writes <path>.csv (log values, one grid row per line) and <path>.pgm
// (8-bit P5, min-max normalized). IndexError on out-of-range indices.
// Returns the heatmap that was written.
Heatmap export_locality_heatmap(const FcLayer& fc3, std::int64_t s, std::int64_t h,
                                std::int64_t w, std::int64_t set, std::int64_t i,
                                std::int64_t j, const std::filesystem::path& path);

}  // namespace repmlp

#endif  // REPMLP_MODEL_IO_H_
