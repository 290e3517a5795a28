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

#include "repmlp/layers.h"

#include <cmath>
#include <string>

#include "repmlp/errors.h"

namespace repmlp {

void ConvLayer::validate() const {
  if (groups < 1) throw ConfigError("conv: groups must be positive");
  if (stride < 1) throw ConfigError("conv: stride must be positive");
  if (padding < 0) throw ConfigError("conv: padding must be non-negative");
  if (kernel.n() % groups != 0) {
    throw ConfigError("conv: out_channels " + std::to_string(kernel.n()) +
                      " not divisible by groups " + std::to_string(groups));
  }
  if (bias && static_cast<std::int64_t>(bias->size()) != kernel.n()) {
    throw DimensionError("conv: bias length " + std::to_string(bias->size()) +
                         " != out_channels " + std::to_string(kernel.n()));
  }
}

void FcLayer::validate() const {
  if (groups < 1) throw ConfigError("fc: groups must be positive");
  if (weight.rows() % groups != 0) {
    throw ConfigError("fc: rows " + std::to_string(weight.rows()) + " not divisible by groups " +
                      std::to_string(groups));
  }
  if (groups > 1 && weight.rows() != weight.cols() * groups) {
    throw DimensionError("fc: grouped weight must be (s*hw, hw), got (" +
                         std::to_string(weight.rows()) + ", " + std::to_string(weight.cols()) +
                         ")");
  }
  if (bias && static_cast<std::int64_t>(bias->size()) != weight.rows()) {
    throw DimensionError("fc: bias length " + std::to_string(bias->size()) +
                         " != out_len " + std::to_string(weight.rows()));
  }
}

BnParams BnParams::identity(std::int64_t channels) {
  const auto n = static_cast<std::size_t>(channels);
  return BnParams{std::vector<float>(n, 0.0f), std::vector<float>(n, 1.0f),
                  std::vector<float>(n, 1.0f), std::vector<float>(n, 0.0f)};
}

BnParams BnParams::from_running_var(std::vector<float> mu, const std::vector<float>& var,
                                    std::vector<float> gamma, std::vector<float> beta,
                                    float eps) {
  std::vector<float> sigma(var.size());
  for (std::size_t i = 0; i < var.size(); ++i) sigma[i] = std::sqrt(var[i] + eps);
  BnParams bn{std::move(mu), std::move(sigma), std::move(gamma), std::move(beta)};
  bn.validate();
  return bn;
}

void BnParams::validate() const {
  if (sigma.size() != mu.size() || gamma.size() != mu.size() || beta.size() != mu.size()) {
    throw ParameterError("bn: mu/sigma/gamma/beta lengths differ");
  }
  for (std::size_t i = 0; i < sigma.size(); ++i) {
    if (!(sigma[i] > 0.0f)) {
      throw ParameterError("bn: sigma[" + std::to_string(i) + "] must be positive");
    }
  }
}

}  // namespace repmlp
