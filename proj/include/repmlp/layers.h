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

#ifndef REPMLP_LAYERS_H_
#define REPMLP_LAYERS_H_

#include <cstdint>
#include <optional>
#include <vector>

#include "repmlp/tensor.h"

namespace repmlp {

// Kernel is (out_channels, in_channels / groups, kh, kw). Padding is applied
// symmetrically on both spatial axes with zeros.
struct ConvLayer {
  Tensor4 kernel;
  std::optional<std::vector<float>> bias;
  int padding = 0;
  int stride = 1;
  int groups = 1;

  std::int64_t out_channels() const { return kernel.n(); }
  std::int64_t in_channels() const { return kernel.c() * groups; }
  std::int64_t kernel_h() const { return kernel.h(); }
  std::int64_t kernel_w() const { return kernel.w(); }
  std::int64_t param_count() const {
    return kernel.numel() + (bias ? static_cast<std::int64_t>(bias->size()) : 0);
  }

  // Throws ConfigError when the fields are inconsistent with each other.
  void validate() const;
};

// Fully-connected layer. weight is (out_len, in_len) for groups == 1. With
// groups == s the layer is a set-sharing FC: weight is (s * hw, hw), the
// input vector has s consecutive segments of length hw and segment j is
// mapped by rows [j * hw, (j + 1) * hw).
struct FcLayer {
  Matrix weight;
  std::optional<std::vector<float>> bias;
  int groups = 1;

  std::int64_t in_len() const { return weight.cols() * groups; }
  std::int64_t out_len() const { return weight.rows(); }
  std::int64_t param_count() const {
    return weight.numel() + (bias ? static_cast<std::int64_t>(bias->size()) : 0);
  }

  void validate() const;
};

// Inference-time batch norm. sigma already includes epsilon:
// sigma = sqrt(running_var + eps).
struct BnParams {
  std::vector<float> mu;
  std::vector<float> sigma;
  std::vector<float> gamma;
  std::vector<float> beta;

  static constexpr float kEps = 1e-5f;

  static BnParams identity(std::int64_t channels);
  static BnParams from_running_var(std::vector<float> mu, const std::vector<float>& var,
                                   std::vector<float> gamma, std::vector<float> beta,
                                   float eps = kEps);

  std::int64_t channels() const { return static_cast<std::int64_t>(mu.size()); }
  // mu, sigma, gamma and beta are all counted.
  std::int64_t param_count() const { return 4 * channels(); }

  // Throws ParameterError on length mismatch or non-positive sigma.
  void validate() const;
};

}  // namespace repmlp

#endif  // REPMLP_LAYERS_H_
