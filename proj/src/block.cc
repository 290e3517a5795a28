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

#include "repmlp/block.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "repmlp/errors.h"
#include "repmlp/ops.h"

namespace repmlp {

namespace {

float he_bound(std::int64_t fan_in) { return std::sqrt(6.0f / static_cast<float>(fan_in)); }

Shape4 set_view(const Shape4& shape, std::int64_t s) {
  return Shape4{shape.n * shape.c / s, s, shape.h, shape.w};
}

void check_input(const RepMlpBlock& block, const Tensor4& input) {
  const RepMlpBlockConfig& cfg = block.config;
  if (input.c() != cfg.c) {
    throw DimensionError("block: channel axis: input has " + std::to_string(input.c()) +
                         " channels, block expects " + std::to_string(cfg.c));
  }
  if (input.h() != cfg.h || input.w() != cfg.w) {
    throw DimensionError("block: spatial axes: input is " + std::to_string(input.h()) + "x" +
                         std::to_string(input.w()) + " but the block is bound to " +
                         std::to_string(cfg.h) + "x" + std::to_string(cfg.w) +
                         "; split into patches first");
  }
}

void check_fc(const FcLayer& fc, std::int64_t rows, std::int64_t cols, bool bias,
              const char* what) {
  fc.validate();
  if (fc.weight.rows() != rows || fc.weight.cols() != cols) {
    throw DimensionError(std::string(what) + ": expected weight (" + std::to_string(rows) + ", " +
                         std::to_string(cols) + "), got (" + std::to_string(fc.weight.rows()) +
                         ", " + std::to_string(fc.weight.cols()) + ")");
  }
  if (bias != fc.bias.has_value()) {
    throw ConfigError(std::string(what) + (bias ? ": bias missing" : ": unexpected bias"));
  }
}

}  // namespace

std::string_view mode_name(Mode mode) { return mode == Mode::kTrain ? "train" : "deploy"; }

void RepMlpBlockConfig::validate() const {
  if (c < 1 || h < 1 || w < 1 || s < 1) {
    throw ConfigError("block: c, h, w and s must be positive");
  }
  if (c % s != 0) {
    throw ConfigError("block: s = " + std::to_string(s) + " does not divide c = " +
                      std::to_string(c));
  }
  for (std::int64_t k : local_kernels) {
    if (k < 1 || k % 2 == 0) {
      throw ConfigError("block: local kernel " + std::to_string(k) + " must be odd and positive");
    }
  }
  if (global_perceptron && (gp_reduction < 1 || c % gp_reduction != 0)) {
    throw ConfigError("block: gp reduction " + std::to_string(gp_reduction) +
                      " does not divide c = " + std::to_string(c));
  }
}

void RepMlpBlock::validate() const {
  config.validate();
  const std::int64_t s = config.s;
  const std::int64_t hw = config.hw();
  if (config.global_perceptron != gp.has_value()) {
    throw ConfigError("block: global perceptron presence disagrees with config");
  }
  if (gp) {
    const std::int64_t hidden = config.c / config.gp_reduction;
    check_fc(gp->fc1, hidden, config.c, true, "gp fc1");
    check_fc(gp->fc2, config.c, hidden, true, "gp fc2");
  }
  if (fc3.groups != s) {
    throw ConfigError("block: fc3 has " + std::to_string(fc3.groups) + " groups, expected s = " +
                      std::to_string(s));
  }
  check_fc(fc3, s * hw, hw, mode == Mode::kDeploy || fc3.bias.has_value(), "fc3");
  if (mode == Mode::kDeploy) {
    if (bn3 || !local.empty()) {
      throw ConfigError("block: deploy form carries no batch norm or conv branches");
    }
    return;
  }
  if (!bn3 || bn3->channels() != s) {
    throw ConfigError("block: train form needs bn3 over s = " + std::to_string(s) + " channels");
  }
  bn3->validate();
  if (local.size() != config.local_kernels.size()) {
    throw ConfigError("block: expected " + std::to_string(config.local_kernels.size()) +
                      " local branches, got " + std::to_string(local.size()));
  }
  for (std::size_t i = 0; i < local.size(); ++i) {
    const std::int64_t k = config.local_kernels[i];
    const ConvLayer& conv = local[i].conv;
    if (!(conv.kernel.shape() == Shape4{s, 1, k, k}) || conv.groups != s) {
      throw ConfigError("block: local branch " + std::to_string(i) + " must be (" +
                        std::to_string(s) + ", 1, " + std::to_string(k) + ", " +
                        std::to_string(k) + ") with " + std::to_string(s) + " groups");
    }
    check_mergeable(conv);
    if (local[i].bn.channels() != s) {
      throw ConfigError("block: local branch " + std::to_string(i) + " bn has wrong length");
    }
    local[i].bn.validate();
  }
}

BlockCost block_cost(const RepMlpBlockConfig& config, Mode mode) {
  config.validate();
  const std::int64_t c = config.c, s = config.s, hw = config.hw();
  BlockCost cost;
  if (config.global_perceptron) {
    const std::int64_t hidden = c / config.gp_reduction;
    cost.gp_params = 2 * c * hidden + hidden + c;
    cost.gp_macs = 2 * c * hidden;
  }
  cost.channel_params = s * hw * hw + (mode == Mode::kTrain ? 4 * s : s * hw);
  cost.channel_macs = c * hw * hw;
  if (mode == Mode::kTrain) {
    for (std::int64_t k : config.local_kernels) {
      cost.local_params += s * k * k + 4 * s;
      cost.local_macs += c * k * k * hw;
    }
  }
  return cost;
}

BlockCost block_cost(const RepMlpBlock& block) {
  const RepMlpBlockConfig& cfg = block.config;
  const std::int64_t rows_per_sample = cfg.c / cfg.s;
  const std::int64_t hw = cfg.hw();
  BlockCost cost;
  if (block.gp) {
    cost.gp_params = block.gp->fc1.param_count() + block.gp->fc2.param_count();
    cost.gp_macs = block.gp->fc1.weight.numel() + block.gp->fc2.weight.numel();
  }
  cost.channel_params = block.fc3.param_count() + (block.bn3 ? block.bn3->param_count() : 0);
  cost.channel_macs = rows_per_sample * block.fc3.weight.numel();
  for (const ConvBnBranch& b : block.local) {
    cost.local_params += b.conv.param_count() + b.bn.param_count();
    cost.local_macs += rows_per_sample * b.conv.kernel.numel() * hw;
  }
  return cost;
}

BnParams random_bn(std::int64_t channels, Rng& rng, float gamma_lo, float gamma_hi) {
  std::vector<float> mu = rng.vec(channels, -0.1f, 0.1f);
  std::vector<float> var = rng.vec(channels, 0.5f, 1.5f);
  std::vector<float> gamma = rng.vec(channels, gamma_lo, gamma_hi);
  std::vector<float> beta = rng.vec(channels, -0.1f, 0.1f);
  return BnParams::from_running_var(std::move(mu), var, std::move(gamma), std::move(beta));
}

RepMlpBlock random_train_block(const RepMlpBlockConfig& config, Rng& rng, const BlockInit& init) {
  config.validate();
  const std::int64_t c = config.c, s = config.s, hw = config.hw();
  RepMlpBlock block;
  block.config = config;
  block.mode = Mode::kTrain;
  if (config.global_perceptron) {
    const std::int64_t hidden = c / config.gp_reduction;
    GlobalPerceptron gp;
    const float b1 = he_bound(c);
    gp.fc1.weight = Matrix(hidden, c, rng.vec(hidden * c, -b1, b1));
    gp.fc1.bias = rng.vec(hidden, -0.1f, 0.1f);
    const float b2 = he_bound(hidden) * init.gp_out_gain;
    gp.fc2.weight = Matrix(c, hidden, rng.vec(c * hidden, -b2, b2));
    gp.fc2.bias = rng.vec(c, -0.1f * init.gp_out_gain, 0.1f * init.gp_out_gain);
    block.gp = std::move(gp);
  }
  const float b3 = he_bound(hw);
  block.fc3.groups = static_cast<int>(s);
  block.fc3.weight = Matrix(s * hw, hw, rng.vec(s * hw * hw, -b3, b3));
  block.bn3 = random_bn(s, rng, init.branch_gamma_lo, init.branch_gamma_hi);
  for (std::int64_t k : config.local_kernels) {
    ConvBnBranch branch;
    const float bk = he_bound(k * k);
    branch.conv.kernel = Tensor4(Shape4{s, 1, k, k}, rng.vec(s * k * k, -bk, bk));
    branch.conv.padding = static_cast<int>((k - 1) / 2);
    branch.conv.groups = static_cast<int>(s);
    branch.bn = random_bn(s, rng, init.branch_gamma_lo, init.branch_gamma_hi);
    block.local.push_back(std::move(branch));
  }
  return block;
}

Tensor4 global_perceptron(const RepMlpBlock& block, const Tensor4& input) {
  if (input.c() != block.config.c) {
    throw DimensionError("global perceptron: channel axis: input has " +
                         std::to_string(input.c()) + " channels, expected " +
                         std::to_string(block.config.c));
  }
  if (!block.gp) return Tensor4(Shape4{input.n(), input.c(), 1, 1});
  Matrix pooled = to_matrix(global_avg_pool(input), input.n(), input.c());
  Matrix hidden = fc_forward(pooled, block.gp->fc1);
  for (float& v : hidden.values()) v = std::max(v, 0.0f);
  return to_tensor(fc_forward(hidden, block.gp->fc2), Shape4{input.n(), input.c(), 1, 1});
}

Tensor4 channel_perceptron(const RepMlpBlock& block, const Tensor4& input) {
  check_input(block, input);
  const Shape4 view = set_view(input.shape(), block.config.s);
  Tensor4 out = fc_forward(input, block.fc3, view);
  if (block.mode == Mode::kTrain) bn_inference_inplace(out, *block.bn3);
  return reshape(std::move(out), input.shape());
}

namespace {

// Sum of the conv branches on an input already viewed as (nc/s, s, h, w).
void add_local(const RepMlpBlock& block, const Tensor4& sets, Tensor4& out) {
  for (const ConvBnBranch& branch : block.local) {
    Tensor4 y = conv2d(sets, branch.conv);
    bn_inference_inplace(y, branch.bn);
    const float* src = y.data();
    float* dst = out.data();
    for (std::int64_t i = 0; i < y.numel(); ++i) dst[i] += src[i];
  }
}

}  // namespace

Tensor4 local_perceptron(const RepMlpBlock& block, const Tensor4& input) {
  check_input(block, input);
  const Tensor4 sets = reshape(input, set_view(input.shape(), block.config.s));
  Tensor4 out(sets.shape());
  add_local(block, sets, out);
  return reshape(std::move(out), input.shape());
}

Tensor4 block_forward(const RepMlpBlock& block, const Tensor4& input) {
  check_input(block, input);
  const Shape4 view = set_view(input.shape(), block.config.s);
  Tensor4 out = fc_forward(input, block.fc3, view);
  if (block.mode == Mode::kTrain) {
    bn_inference_inplace(out, *block.bn3);
    add_local(block, reshape(input, view), out);
  }
  out = reshape(std::move(out), input.shape());
  if (block.gp) broadcast_add_inplace(out, global_perceptron(block, input));
  return out;
}

RepMlpBlock convert_block(const RepMlpBlock& block) {
  if (block.mode != Mode::kTrain) {
    throw ConfigError("convert_block: block is already in deploy form");
  }
  block.validate();
  RepMlpBlock deployed;
  deployed.config = block.config;
  deployed.mode = Mode::kDeploy;
  deployed.gp = block.gp;
  deployed.fc3 = merge_local_into_channel(block.fc3, *block.bn3, block.local, block.config.s,
                                          block.config.h, block.config.w);
  return deployed;
}

}  // namespace repmlp
