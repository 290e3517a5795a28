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

// Locality injection: turning convolutions into equivalent FC kernels and
// folding them, together with batch norm, into a single FC layer.
//
// The FC kernel of a size-preserving conv is obtained by convolving an
// identity matrix reshaped into a batch of chw one-hot feature maps:
//
//   W = reshape(conv2d(reshape(I, (chw, c, h, w)), F), (chw, ohw))^T
//
// Because it reuses conv2d itself, W matches this library's convolution
// exactly, whatever its memory layout or padding convention.

#ifndef REPMLP_REPARAM_H_
#define REPMLP_REPARAM_H_

#include <cstdint>
#include <utility>
#include <vector>

#include "repmlp/layers.h"
#include "repmlp/tensor.h"

namespace repmlp {

enum class ToeplitzLayout {
  // (o*h*w, c*h*w); block diagonal over conv groups.
  kDense,
  // (s*h*w, h*w); depth-wise conv over s channels, one (hw, hw) block per
  // channel stacked vertically. Same layout as a set-sharing FC weight.
  kSetStacked,
};

struct ToeplitzResult {
  Matrix weight;
  ToeplitzLayout layout = ToeplitzLayout::kDense;
  // Recorded for audit.
  std::int64_t kernel = 0;
  int padding = 0;
  int groups = 1;
};

// Rejects anything that is not stride 1 with a square odd kernel and padding
// (k - 1) / 2. The conv bias is ignored; callers fold it separately.
void check_mergeable(const ConvLayer& layer);

ToeplitzResult conv_to_fc(const ConvLayer& layer, std::int64_t c, std::int64_t h,
                          std::int64_t w);
// layer must be depth-wise over s channels: kernel (s, 1, k, k), groups s.
ToeplitzResult conv_to_fc_sets(const ConvLayer& layer, std::int64_t h, std::int64_t w);

// Reference construction from the convolution definition alone:
//   W[(o, y, x), (ci, u, v)] = F[o, ci - group_base, u - y + p, v - x + p]
// when the kernel index is in range and ci is in o's group, else 0.
// Does not call conv2d.
Matrix toeplitz_oracle(const ConvLayer& layer, std::int64_t c, std::int64_t h, std::int64_t w);
Matrix toeplitz_oracle_sets(const ConvLayer& layer, std::int64_t h, std::int64_t w);

// F'_i = (gamma_i / sigma_i) F_i, b'_i = -mu_i gamma_i / sigma_i + beta_i
// (an existing conv bias b_i is carried through as (gamma_i / sigma_i) b_i).
ConvLayer fuse_bn_conv(const ConvLayer& layer, const BnParams& bn);

// Set-sharing FC (s*hw, hw) followed by BN over the s sets: rows of set i are
// scaled by gamma_i / sigma_i and get bias -mu_i gamma_i / sigma_i + beta_i.
FcLayer fuse_bn_grouped_fc(const FcLayer& fc, const BnParams& bn, std::int64_t hw);

struct ConvBnBranch {
  ConvLayer conv;
  BnParams bn;
};

// Folds BN into FC3, converts every depth-wise conv branch (after its own BN
// fusion) into the set-stacked layout, and sums kernels and biases. Conv
// biases are replicated over the hw positions of their channel.
FcLayer merge_local_into_channel(const FcLayer& fc3, const BnParams& bn3,
                                 const std::vector<ConvBnBranch>& branches, std::int64_t s,
                                 std::int64_t h, std::int64_t w);

}  // namespace repmlp

#endif  // REPMLP_REPARAM_H_
