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

// Hierarchical RepMLPNet.
//
//   stem: conv 4x4 / 4 (3 -> C) + BN
//   stage i (channels C * 2^i, spatial H / 2^(i+2)):
//     [downsample from stage i-1]
//     B_i units, each:  x += RepMLPBlock(x);  x += FFN(x)
//     FFN = conv1x1 (c -> r*c) + BN, GELU, conv1x1 (r*c -> c) + BN
//   head: global average pool + FC(8C -> num_classes)
//
// Downsample between stages is a 2x2 / 2 conv + BN, or a 1x1 conv + BN
// followed by a depth-wise k x k / 2 conv + BN (k = 3 or 5). In deploy form
// every BN is folded into the preceding conv's bias.

#ifndef REPMLP_NET_H_
#define REPMLP_NET_H_

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "repmlp/block.h"
#include "repmlp/layers.h"
#include "repmlp/tensor.h"

namespace repmlp {

inline constexpr int kNumStages = 4;

enum class DownsampleKind { kEmbed2x2, kConv3, kConv5 };

std::string_view downsample_name(DownsampleKind kind);
// Accepts "embed2x2", "conv3", "conv5".
DownsampleKind parse_downsample(std::string_view name);

struct NetConfig {
  std::string name = "custom";
  std::array<std::int64_t, kNumStages> blocks{2, 2, 6, 2};
  std::int64_t base_channels = 64;
  std::array<std::int64_t, kNumStages> share_sets{1, 4, 16, 128};
  std::int64_t input_h = 224;
  std::int64_t input_w = 224;
  std::int64_t in_channels = 3;
  std::int64_t num_classes = 1000;
  std::int64_t ffn_ratio = 4;
  DownsampleKind downsample = DownsampleKind::kEmbed2x2;
  std::vector<std::int64_t> local_kernels{1, 3};
  std::int64_t gp_reduction = 4;
  bool global_perceptron = true;

  std::int64_t stage_channels(int i) const { return base_channels << i; }
  std::int64_t stage_h(int i) const { return input_h >> (i + 2); }
  std::int64_t stage_w(int i) const { return input_w >> (i + 2); }
  RepMlpBlockConfig block_config(int i) const;

  // ConfigError unless H, W are positive multiples of 32, every S_i divides
  // its stage width, and the block settings are valid.
  void validate() const;
};

// T224, B224, T256, B256, D256, L256.
const std::vector<std::string>& preset_names();
NetConfig preset(std::string_view name);

// Train form: conv without bias, then BN. Deploy form: conv with bias, no BN.
struct ConvBn {
  ConvLayer conv;
  std::optional<BnParams> bn;
};

struct Ffn {
  ConvBn expand;
  ConvBn project;
};

struct Unit {
  RepMlpBlock block;
  Ffn ffn;
};

struct Stage {
  std::vector<ConvBn> downsample;  // empty for the first stage
  std::vector<Unit> units;
};

struct Network {
  NetConfig config;
  Mode mode = Mode::kTrain;
  ConvBn stem;
  std::array<Stage, kNumStages> stages;
  FcLayer head;

  // Structural check against config and mode (names and shapes of every
  // tensor, conv hyper-parameters, block forms).
  void validate() const;
};

// Deterministic random train-form network. Weights are He-style uniform;
// BN running statistics are then measured on a seeded probe image so every
// BN output is roughly gamma * N(0, 1) + beta.
Network build_net(const NetConfig& config, std::uint64_t seed);
// Correctly shaped network of the given form; weights zero, BN identity.
Network make_skeleton(const NetConfig& config, Mode mode);
// Every block merged, every BN folded. Throws ConfigError on deploy input.
Network convert_net(const Network& net);

// Visits every stored tensor in a fixed order with a dotted name such as
// "stages.2.units.9.block.fc3.weight". Shapes are reported as dims.
using ParamVisitor =
    std::function<void(const std::string& name, const std::vector<std::int64_t>& dims,
                       std::span<float> data)>;
using ConstParamVisitor =
    std::function<void(const std::string& name, const std::vector<std::int64_t>& dims,
                       std::span<const float> data)>;
void for_each_param(Network& net, const ParamVisitor& visit);
void for_each_param(const Network& net, const ConstParamVisitor& visit);

struct ParamSpec {
  std::string name;
  std::vector<std::int64_t> dims;
};
// The (name, dims) sequence for_each_param yields, derived from the config.
std::vector<ParamSpec> parameter_layout(const NetConfig& config, Mode mode);

Tensor4 conv_bn_forward(const ConvBn& layer, const Tensor4& input);

// Logits (n, num_classes). Input must be at the native resolution.
Matrix net_forward(const Network& net, const Tensor4& input);
// Stage outputs of the classification trunk at native resolution.
std::array<Tensor4, kNumStages> trunk_features(const Network& net, const Tensor4& input);

struct BackboneOutput {
  std::array<Tensor4, kNumStages> features;
  // Patch grid (rows, cols) used at each stage; (1, 1) at native size.
  std::array<std::array<std::int64_t, 2>, kNumStages> patch_grid{};
};

// Runs the four stages at any resolution that is a multiple of the native
// one: before each stage the map is tiled into the blocks' native size and
// restored afterwards. With patch_mode false the input must be native.
BackboneOutput backbone_forward(const Network& net, const Tensor4& input, bool patch_mode);

struct LayerCount {
  std::string name;
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

// Multiply-accumulates per sample (1 MAC = 1 FLOP); BN is 4 parameters per
// channel and no MACs; pooling, activations and additions are not counted.
struct CountReport {
  std::string config_name;
  Mode mode = Mode::kTrain;
  std::vector<LayerCount> layers;
  std::int64_t total_params = 0;
  std::int64_t total_macs = 0;

  std::string to_text(bool per_layer) const;
};

// Closed form from the configuration.
CountReport count_params_flops(const NetConfig& config, Mode mode);
// Read off the layers of a built network.
CountReport count_params_flops(const Network& net);

struct LocalityDelta {
  std::int64_t one_by_one = 0;
  std::int64_t three_by_three = 0;
  std::int64_t both = 0;
};

// Extra train-time parameters from attaching 1x1, 3x3 or both conv branches
// to every block of a single-stage model with `blocks` blocks of s sets.
LocalityDelta resmlp_delta_config(std::int64_t blocks = 12, std::int64_t s = 1);

}  // namespace repmlp

#endif  // REPMLP_NET_H_
