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

// RepMLP block: Global, Channel and Local Perceptrons.
//
// Train form:
//   out = BN3(FC3(x)) + sum_k BN_k(DWConv_k(x)) + broadcast(GP(x))
// where FC3 and the depth-wise convs act on the share-set layout
// (n, c, h, w) -> (n*c/s, s, h, w), so channel j uses parameter set j mod s.
// Deploy form:
//   out = FC3'(x) + broadcast(GP(x))
// with FC3' carrying a bias. GP(x) = FC2(ReLU(FC1(avgpool(x)))).

#ifndef REPMLP_BLOCK_H_
#define REPMLP_BLOCK_H_

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "repmlp/layers.h"
#include "repmlp/random.h"
#include "repmlp/reparam.h"
#include "repmlp/tensor.h"

namespace repmlp {

enum class Mode { kTrain, kDeploy };

std::string_view mode_name(Mode mode);

struct RepMlpBlockConfig {
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::int64_t s = 1;
  std::vector<std::int64_t> local_kernels{1, 3};
  std::int64_t gp_reduction = 4;
  bool global_perceptron = true;

  std::int64_t hw() const { return h * w; }
  // ConfigError on s not dividing c, even or non-positive kernels, or a
  // reduction that does not divide c.
  void validate() const;
};

struct GlobalPerceptron {
  FcLayer fc1;  // c -> c / r, with bias
  FcLayer fc2;  // c / r -> c, with bias
};

struct RepMlpBlock {
  RepMlpBlockConfig config;
  Mode mode = Mode::kTrain;
  std::optional<GlobalPerceptron> gp;
  FcLayer fc3;                      // (s*hw, hw), s groups; bias in deploy form
  std::optional<BnParams> bn3;      // train form only, over s channels
  std::vector<ConvBnBranch> local;  // train form only, one per local kernel

  // Checks layer shapes against config and mode.
  void validate() const;
};

// Parameter and multiply-accumulate counts per sample. Batch norm counts 4
// parameters per channel and no MACs; biases count as parameters only.
struct BlockCost {
  std::int64_t gp_params = 0;
  std::int64_t gp_macs = 0;
  std::int64_t channel_params = 0;
  std::int64_t channel_macs = 0;
  std::int64_t local_params = 0;
  std::int64_t local_macs = 0;

  std::int64_t params() const { return gp_params + channel_params + local_params; }
  std::int64_t macs() const { return gp_macs + channel_macs + local_macs; }
};

// Closed-form counts from the configuration alone.
BlockCost block_cost(const RepMlpBlockConfig& config, Mode mode);
// Counts read off the layers actually present.
BlockCost block_cost(const RepMlpBlock& block);

struct BlockInit {
  // Range of gamma for the batch norms that close the channel and local
  // paths, and the gain applied to the second GP layer. Small values keep
  // a deep residual stack numerically tame.
  float branch_gamma_lo = 0.1f;
  float branch_gamma_hi = 0.4f;
  float gp_out_gain = 0.25f;
};

// Random train-form block; He-style uniform weights, random BN statistics.
RepMlpBlock random_train_block(const RepMlpBlockConfig& config, Rng& rng,
                               const BlockInit& init = {});

// Random BN statistics: mu in [-0.1, 0.1], var in [0.5, 1.5], beta in
// [-0.1, 0.1] and gamma in [gamma_lo, gamma_hi].
BnParams random_bn(std::int64_t channels, Rng& rng, float gamma_lo = 0.5f, float gamma_hi = 1.5f);

Tensor4 global_perceptron(const RepMlpBlock& block, const Tensor4& input);
Tensor4 channel_perceptron(const RepMlpBlock& block, const Tensor4& input);
// Train form only; a deploy block has no local branches and yields zeros.
Tensor4 local_perceptron(const RepMlpBlock& block, const Tensor4& input);
// input must be exactly (n, c, h, w) of the block config.
Tensor4 block_forward(const RepMlpBlock& block, const Tensor4& input);

// Train -> deploy. Throws ConfigError when the block is already deployed.
RepMlpBlock convert_block(const RepMlpBlock& block);

}  // namespace repmlp

#endif  // REPMLP_BLOCK_H_
