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

#include "repmlp/net.h"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <utility>

#include "repmlp/errors.h"
#include "repmlp/ops.h"
#include "repmlp/random.h"
#include "repmlp/reparam.h"

namespace repmlp {

namespace {

std::string stage_prefix(int i) { return "stages." + std::to_string(i); }

// Downsample layer geometry between stage i-1 and stage i.
struct DownSpec {
  std::int64_t out;
  std::int64_t in_per_group;
  std::int64_t k;
  int stride;
  int padding;
  int groups;
};

std::vector<DownSpec> downsample_specs(const NetConfig& cfg, int i) {
  const std::int64_t cin = cfg.stage_channels(i - 1);
  const std::int64_t cout = cfg.stage_channels(i);
  switch (cfg.downsample) {
    case DownsampleKind::kEmbed2x2:
      return {{cout, cin, 2, 2, 0, 1}};
    case DownsampleKind::kConv3:
      return {{cout, cin, 1, 1, 0, 1}, {cout, 1, 3, 2, 1, static_cast<int>(cout)}};
    case DownsampleKind::kConv5:
      return {{cout, cin, 1, 1, 0, 1}, {cout, 1, 5, 2, 2, static_cast<int>(cout)}};
  }
  throw ConfigError("unknown downsample kind");
}

// Supplies tensor contents while a network is assembled.
class Filler {
 public:
  virtual ~Filler() = default;
  virtual std::vector<float> weights(std::int64_t count, std::int64_t fan_in) = 0;
  virtual BnParams bn(std::int64_t channels, bool closes_branch) = 0;
  virtual RepMlpBlock block(const RepMlpBlockConfig& cfg, Mode mode) = 0;
};

class RandomFiller : public Filler {
 public:
  explicit RandomFiller(std::uint64_t seed) : rng_(seed) {}

  std::vector<float> weights(std::int64_t count, std::int64_t fan_in) override {
    const float bound = std::sqrt(6.0f / static_cast<float>(fan_in));
    return rng_.vec(count, -bound, bound);
  }
  BnParams bn(std::int64_t channels, bool closes_branch) override {
    BlockInit init;
    return closes_branch ? random_bn(channels, rng_, init.branch_gamma_lo, init.branch_gamma_hi)
                         : random_bn(channels, rng_);
  }
  RepMlpBlock block(const RepMlpBlockConfig& cfg, Mode mode) override {
    if (mode != Mode::kTrain) throw ConfigError("random networks are built in train form");
    return random_train_block(cfg, rng_);
  }

 private:
  Rng rng_;
};

class ZeroFiller : public Filler {
 public:
  std::vector<float> weights(std::int64_t count, std::int64_t) override {
    return std::vector<float>(static_cast<std::size_t>(count), 0.0f);
  }
  BnParams bn(std::int64_t channels, bool) override { return BnParams::identity(channels); }
  RepMlpBlock block(const RepMlpBlockConfig& cfg, Mode mode) override {
    const std::int64_t s = cfg.s, hw = cfg.hw();
    RepMlpBlock b;
    b.config = cfg;
    b.mode = mode;
    if (cfg.global_perceptron) {
      const std::int64_t hidden = cfg.c / cfg.gp_reduction;
      GlobalPerceptron gp;
      gp.fc1.weight = Matrix(hidden, cfg.c);
      gp.fc1.bias = std::vector<float>(static_cast<std::size_t>(hidden), 0.0f);
      gp.fc2.weight = Matrix(cfg.c, hidden);
      gp.fc2.bias = std::vector<float>(static_cast<std::size_t>(cfg.c), 0.0f);
      b.gp = std::move(gp);
    }
    b.fc3.groups = static_cast<int>(s);
    b.fc3.weight = Matrix(s * hw, hw);
    if (mode == Mode::kDeploy) {
      b.fc3.bias = std::vector<float>(static_cast<std::size_t>(s * hw), 0.0f);
      return b;
    }
    b.bn3 = BnParams::identity(s);
    for (std::int64_t k : cfg.local_kernels) {
      ConvBnBranch br;
      br.conv.kernel = Tensor4(Shape4{s, 1, k, k});
      br.conv.padding = static_cast<int>((k - 1) / 2);
      br.conv.groups = static_cast<int>(s);
      br.bn = BnParams::identity(s);
      b.local.push_back(std::move(br));
    }
    return b;
  }
};

ConvBn make_conv_bn(Filler& f, Mode mode, std::int64_t out, std::int64_t in_per_group,
                    std::int64_t k, int stride, int padding, int groups, bool closes_branch) {
  ConvBn cb;
  const std::int64_t fan_in = in_per_group * k * k;
  cb.conv.kernel = Tensor4(Shape4{out, in_per_group, k, k}, f.weights(out * fan_in, fan_in));
  cb.conv.stride = stride;
  cb.conv.padding = padding;
  cb.conv.groups = groups;
  if (mode == Mode::kTrain) {
    cb.bn = f.bn(out, closes_branch);
  } else {
    cb.conv.bias = std::vector<float>(static_cast<std::size_t>(out), 0.0f);
  }
  return cb;
}

Network assemble(const NetConfig& cfg, Mode mode, Filler& f) {
  cfg.validate();
  Network net;
  net.config = cfg;
  net.mode = mode;
  net.stem = make_conv_bn(f, mode, cfg.base_channels, cfg.in_channels, 4, 4, 0, 1, false);
  for (int i = 0; i < kNumStages; ++i) {
    Stage& stage = net.stages[static_cast<std::size_t>(i)];
    if (i > 0) {
      for (const DownSpec& d : downsample_specs(cfg, i)) {
        stage.downsample.push_back(
            make_conv_bn(f, mode, d.out, d.in_per_group, d.k, d.stride, d.padding, d.groups, false));
      }
    }
    const std::int64_t c = cfg.stage_channels(i);
    const std::int64_t hidden = c * cfg.ffn_ratio;
    for (std::int64_t j = 0; j < cfg.blocks[static_cast<std::size_t>(i)]; ++j) {
      Unit unit;
      unit.block = f.block(cfg.block_config(i), mode);
      unit.ffn.expand = make_conv_bn(f, mode, hidden, c, 1, 1, 0, 1, false);
      unit.ffn.project = make_conv_bn(f, mode, c, hidden, 1, 1, 0, 1, true);
      stage.units.push_back(std::move(unit));
    }
  }
  const std::int64_t feat = cfg.stage_channels(kNumStages - 1);
  net.head.weight = Matrix(cfg.num_classes, feat, f.weights(cfg.num_classes * feat, feat));
  net.head.bias = std::vector<float>(static_cast<std::size_t>(cfg.num_classes), 0.0f);
  return net;
}

ConvBn fold(const ConvBn& cb) {
  if (!cb.bn) throw ConfigError("convert: conv without batch norm in a train-form network");
  return ConvBn{fuse_bn_conv(cb.conv, *cb.bn), std::nullopt};
}

// Generic traversal shared by the const and mutable visitors.
template <typename NetT, typename Fn>
void visit_net(NetT& net, Fn&& fn) {
  auto dims4 = [](const Tensor4& t) {
    return std::vector<std::int64_t>{t.n(), t.c(), t.h(), t.w()};
  };
  auto vec_span = [](auto& v) { return std::span(v.data(), v.size()); };
  auto visit_bn = [&](const std::string& p, auto& bn) {
    const std::vector<std::int64_t> d{bn.channels()};
    fn(p + ".mu", d, vec_span(bn.mu));
    fn(p + ".sigma", d, vec_span(bn.sigma));
    fn(p + ".gamma", d, vec_span(bn.gamma));
    fn(p + ".beta", d, vec_span(bn.beta));
  };
  auto visit_conv = [&](const std::string& p, auto& conv) {
    fn(p + ".weight", dims4(conv.kernel), conv.kernel.values());
    if (conv.bias) {
      fn(p + ".bias", std::vector<std::int64_t>{conv.out_channels()}, vec_span(*conv.bias));
    }
  };
  auto visit_conv_bn = [&](const std::string& p, auto& cb) {
    visit_conv(p + ".conv", cb.conv);
    if (cb.bn) visit_bn(p + ".bn", *cb.bn);
  };
  auto visit_fc = [&](const std::string& p, auto& fc) {
    fn(p + ".weight", std::vector<std::int64_t>{fc.weight.rows(), fc.weight.cols()},
       fc.weight.values());
    if (fc.bias) {
      fn(p + ".bias", std::vector<std::int64_t>{fc.out_len()}, vec_span(*fc.bias));
    }
  };

  visit_conv_bn("stem", net.stem);
  for (int i = 0; i < kNumStages; ++i) {
    auto& stage = net.stages[static_cast<std::size_t>(i)];
    const std::string sp = stage_prefix(i);
    for (std::size_t j = 0; j < stage.downsample.size(); ++j) {
      visit_conv_bn(sp + ".downsample." + std::to_string(j), stage.downsample[j]);
    }
    for (std::size_t j = 0; j < stage.units.size(); ++j) {
      auto& unit = stage.units[j];
      const std::string up = sp + ".units." + std::to_string(j);
      auto& block = unit.block;
      if (block.gp) {
        visit_fc(up + ".block.gp.fc1", block.gp->fc1);
        visit_fc(up + ".block.gp.fc2", block.gp->fc2);
      }
      visit_fc(up + ".block.fc3", block.fc3);
      if (block.bn3) visit_bn(up + ".block.bn3", *block.bn3);
      for (std::size_t k = 0; k < block.local.size(); ++k) {
        const std::string lp = up + ".block.local." + std::to_string(k);
        visit_conv(lp + ".conv", block.local[k].conv);
        visit_bn(lp + ".bn", block.local[k].bn);
      }
      visit_conv_bn(up + ".ffn.expand", unit.ffn.expand);
      visit_conv_bn(up + ".ffn.project", unit.ffn.project);
    }
  }
  visit_fc("head", net.head);
}

void check_conv(const ConvLayer& conv, int stride, int padding, int groups, const std::string& what) {
  conv.validate();
  if (conv.stride != stride || conv.padding != padding || conv.groups != groups) {
    throw ConfigError(what + ": expected stride " + std::to_string(stride) + ", padding " +
                      std::to_string(padding) + ", groups " + std::to_string(groups));
  }
}

void unit_forward(const Unit& unit, Tensor4& x) {
  add_inplace(x, block_forward(unit.block, x));
  Tensor4 hidden = conv_bn_forward(unit.ffn.expand, x);
  activation_inplace(hidden, Activation::kGelu);
  add_inplace(x, conv_bn_forward(unit.ffn.project, hidden));
}

Tensor4 downsample_forward(const Stage& stage, Tensor4 x) {
  for (const ConvBn& d : stage.downsample) x = conv_bn_forward(d, x);
  return x;
}

void check_input(const Network& net, const Tensor4& input) {
  if (input.c() != net.config.in_channels) {
    throw DimensionError("network: channel axis: input has " + std::to_string(input.c()) +
                         " channels, expected " + std::to_string(net.config.in_channels));
  }
}

Tensor4 run_trunk(const Network& net, const Tensor4& input,
                  std::array<Tensor4, kNumStages>* keep) {
  check_input(net, input);
  if (input.h() != net.config.input_h || input.w() != net.config.input_w) {
    throw DimensionError("network: spatial axes: input is " + std::to_string(input.h()) + "x" +
                         std::to_string(input.w()) + ", native resolution is " +
                         std::to_string(net.config.input_h) + "x" +
                         std::to_string(net.config.input_w));
  }
  Tensor4 x = conv_bn_forward(net.stem, input);
  for (int i = 0; i < kNumStages; ++i) {
    const Stage& stage = net.stages[static_cast<std::size_t>(i)];
    x = downsample_forward(stage, std::move(x));
    for (const Unit& unit : stage.units) unit_forward(unit, x);
    if (keep) (*keep)[static_cast<std::size_t>(i)] = x;
  }
  return x;
}

LayerCount conv_count(const std::string& name, const ConvBn& cb, std::int64_t out_hw) {
  return {name, cb.conv.param_count() + (cb.bn ? cb.bn->param_count() : 0),
          cb.conv.kernel.numel() * out_hw};
}

LayerCount conv_count_cfg(const std::string& name, Mode mode, std::int64_t out,
                          std::int64_t in_per_group, std::int64_t k, std::int64_t out_hw) {
  const std::int64_t weights = out * in_per_group * k * k;
  return {name, weights + (mode == Mode::kTrain ? 4 * out : out), weights * out_hw};
}

void append_block_counts(std::vector<LayerCount>& out, const std::string& up,
                         const RepMlpBlockConfig& bc, Mode mode) {
  const BlockCost cost = block_cost(bc, mode);
  if (bc.global_perceptron) out.push_back({up + ".block.gp", cost.gp_params, cost.gp_macs});
  out.push_back({up + ".block.fc3", cost.channel_params, cost.channel_macs});
  if (mode == Mode::kTrain) {
    for (std::size_t k = 0; k < bc.local_kernels.size(); ++k) {
      const std::int64_t ks = bc.local_kernels[k];
      out.push_back({up + ".block.local." + std::to_string(k), bc.s * ks * ks + 4 * bc.s,
                     bc.c * ks * ks * bc.hw()});
    }
  }
}

CountReport finish(CountReport r) {
  for (const LayerCount& l : r.layers) {
    r.total_params += l.params;
    r.total_macs += l.macs;
  }
  return r;
}

// Running statistics measured on a probe batch, so that every BN sees
// roughly normalized data the way a trained network would.
BnParams measured_bn(const Tensor4& y, const BnParams& keep) {
  const std::int64_t ch = y.c(), plane = y.h() * y.w();
  std::vector<float> mu(static_cast<std::size_t>(ch)), var(static_cast<std::size_t>(ch));
  for (std::int64_t j = 0; j < ch; ++j) {
    double sum = 0.0, sq = 0.0;
    for (std::int64_t i = 0; i < y.n(); ++i) {
      const float* p = y.data() + (i * ch + j) * plane;
      for (std::int64_t e = 0; e < plane; ++e) {
        sum += p[e];
        sq += static_cast<double>(p[e]) * p[e];
      }
    }
    const double count = static_cast<double>(y.n() * plane);
    const double mean = sum / count;
    mu[static_cast<std::size_t>(j)] = static_cast<float>(mean);
    var[static_cast<std::size_t>(j)] = static_cast<float>(std::max(sq / count - mean * mean, 0.0));
  }
  return BnParams::from_running_var(std::move(mu), var, keep.gamma, keep.beta);
}

Tensor4 calibrate_conv_bn(ConvBn& cb, const Tensor4& x) {
  Tensor4 y = conv2d(x, cb.conv);
  cb.bn = measured_bn(y, *cb.bn);
  bn_inference_inplace(y, *cb.bn);
  return y;
}

void calibrate_block(RepMlpBlock& b, Tensor4& x) {
  const Shape4 view{x.n() * x.c() / b.config.s, b.config.s, x.h(), x.w()};
  Tensor4 out = fc_forward(x, b.fc3, view);
  b.bn3 = measured_bn(out, *b.bn3);
  bn_inference_inplace(out, *b.bn3);
  const Tensor4 sets = reshape(x, view);
  for (ConvBnBranch& br : b.local) {
    Tensor4 z = conv2d(sets, br.conv);
    br.bn = measured_bn(z, br.bn);
    bn_inference_inplace(z, br.bn);
    add_inplace(out, z);
  }
  out = reshape(std::move(out), x.shape());
  if (b.gp) broadcast_add_inplace(out, global_perceptron(b, x));
  add_inplace(x, out);
}

void calibrate(Network& net, const Tensor4& probe) {
  Tensor4 x = calibrate_conv_bn(net.stem, probe);
  for (Stage& stage : net.stages) {
    for (ConvBn& d : stage.downsample) x = calibrate_conv_bn(d, x);
    for (Unit& unit : stage.units) {
      calibrate_block(unit.block, x);
      Tensor4 hidden = calibrate_conv_bn(unit.ffn.expand, x);
      activation_inplace(hidden, Activation::kGelu);
      add_inplace(x, calibrate_conv_bn(unit.ffn.project, hidden));
    }
  }
}

}  // namespace

std::string_view downsample_name(DownsampleKind kind) {
  switch (kind) {
    case DownsampleKind::kEmbed2x2:
      return "embed2x2";
    case DownsampleKind::kConv3:
      return "conv3";
    case DownsampleKind::kConv5:
      return "conv5";
  }
  return "?";
}

DownsampleKind parse_downsample(std::string_view name) {
  if (name == "embed2x2") return DownsampleKind::kEmbed2x2;
  if (name == "conv3") return DownsampleKind::kConv3;
  if (name == "conv5") return DownsampleKind::kConv5;
  throw ConfigError("unknown downsample kind '" + std::string(name) +
                    "' (expected embed2x2, conv3 or conv5)");
}

RepMlpBlockConfig NetConfig::block_config(int i) const {
  RepMlpBlockConfig bc;
  bc.c = stage_channels(i);
  bc.h = stage_h(i);
  bc.w = stage_w(i);
  bc.s = share_sets[static_cast<std::size_t>(i)];
  bc.local_kernels = local_kernels;
  bc.gp_reduction = gp_reduction;
  bc.global_perceptron = global_perceptron;
  return bc;
}

void NetConfig::validate() const {
  if (input_h < 32 || input_w < 32 || input_h % 32 != 0 || input_w % 32 != 0) {
    throw ConfigError("config: input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                      " must be a positive multiple of 32 on both axes");
  }
  if (base_channels < 1 || in_channels < 1 || num_classes < 1 || ffn_ratio < 1) {
    throw ConfigError("config: channels, classes and ffn ratio must be positive");
  }
  for (int i = 0; i < kNumStages; ++i) {
    if (blocks[static_cast<std::size_t>(i)] < 0) {
      throw ConfigError("config: negative block count in stage " + std::to_string(i + 1));
    }
    const std::int64_t s = share_sets[static_cast<std::size_t>(i)];
    if (s < 1 || stage_channels(i) % s != 0) {
      throw ConfigError("config: S" + std::to_string(i + 1) + " = " + std::to_string(s) +
                        " does not divide stage width " + std::to_string(stage_channels(i)));
    }
    block_config(i).validate();
  }
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"T224", "B224", "T256", "B256", "D256", "L256"};
  return names;
}

NetConfig preset(std::string_view name) {
  struct Row {
    std::int64_t res;
    std::array<std::int64_t, 4> blocks;
    std::int64_t c;
    std::array<std::int64_t, 4> sets;
  };
  static const std::map<std::string, Row, std::less<>> rows{
      {"T224", {224, {2, 2, 6, 2}, 64, {1, 4, 16, 128}}},
      {"B224", {224, {2, 2, 12, 2}, 96, {1, 4, 32, 128}}},
      {"T256", {256, {2, 2, 6, 2}, 64, {1, 4, 16, 128}}},
      {"B256", {256, {2, 2, 12, 2}, 96, {1, 4, 32, 128}}},
      {"D256", {256, {2, 2, 18, 2}, 80, {1, 4, 16, 128}}},
      {"L256", {256, {2, 2, 18, 2}, 96, {1, 4, 32, 256}}},
  };
  auto it = rows.find(name);
  if (it == rows.end()) {
    throw ConfigError("unknown preset '" + std::string(name) +
                      "' (expected T224, B224, T256, B256, D256 or L256)");
  }
  NetConfig cfg;
  cfg.name = it->first;
  cfg.input_h = cfg.input_w = it->second.res;
  cfg.blocks = it->second.blocks;
  cfg.base_channels = it->second.c;
  cfg.share_sets = it->second.sets;
  return cfg;
}

void Network::validate() const {
  config.validate();
  const std::vector<ParamSpec> want = parameter_layout(config, mode);
  std::size_t idx = 0;
  for_each_param(*this, [&](const std::string& name, const std::vector<std::int64_t>& dims,
                            std::span<const float> data) {
    if (idx >= want.size() || want[idx].name != name || want[idx].dims != dims) {
      throw ConfigError("network: unexpected tensor " + name + " at position " +
                        std::to_string(idx) +
                        (idx < want.size() ? " (expected " + want[idx].name + ")" : ""));
    }
    std::int64_t numel = 1;
    for (std::int64_t d : dims) numel *= d;
    if (static_cast<std::int64_t>(data.size()) != numel) {
      throw DimensionError("network: tensor " + name + " holds " + std::to_string(data.size()) +
                           " values, dims say " + std::to_string(numel));
    }
    ++idx;
  });
  if (idx != want.size()) {
    throw ConfigError("network: missing tensor " + want[idx].name);
  }
  check_conv(stem.conv, 4, 0, 1, "stem");
  for (int i = 0; i < kNumStages; ++i) {
    const Stage& stage = stages[static_cast<std::size_t>(i)];
    if (i > 0) {
      const std::vector<DownSpec> specs = downsample_specs(config, i);
      for (std::size_t j = 0; j < specs.size(); ++j) {
        check_conv(stage.downsample[j].conv, specs[j].stride, specs[j].padding, specs[j].groups,
                   stage_prefix(i) + ".downsample." + std::to_string(j));
      }
    }
    for (const Unit& unit : stage.units) {
      if (unit.block.mode != mode) throw ConfigError("network: block form differs from network");
      unit.block.validate();
      check_conv(unit.ffn.expand.conv, 1, 0, 1, "ffn expand");
      check_conv(unit.ffn.project.conv, 1, 0, 1, "ffn project");
    }
  }
  head.validate();
}

Network build_net(const NetConfig& config, std::uint64_t seed) {
  RandomFiller filler(seed);
  Network net = assemble(config, Mode::kTrain, filler);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  const Shape4 probe{1, config.in_channels, config.input_h, config.input_w};
  calibrate(net, Tensor4(probe, rng.vec(probe.numel(), -1.0f, 1.0f)));
  return net;
}

Network make_skeleton(const NetConfig& config, Mode mode) {
  ZeroFiller filler;
  return assemble(config, mode, filler);
}

Network convert_net(const Network& net) {
  if (net.mode != Mode::kTrain) {
    throw ConfigError("convert: network is already in deploy form");
  }
  net.validate();
  Network out;
  out.config = net.config;
  out.mode = Mode::kDeploy;
  out.stem = fold(net.stem);
  for (std::size_t i = 0; i < net.stages.size(); ++i) {
    const Stage& src = net.stages[i];
    Stage& dst = out.stages[i];
    for (const ConvBn& d : src.downsample) dst.downsample.push_back(fold(d));
    for (const Unit& unit : src.units) {
      dst.units.push_back(
          Unit{convert_block(unit.block), Ffn{fold(unit.ffn.expand), fold(unit.ffn.project)}});
    }
  }
  out.head = net.head;
  return out;
}

void for_each_param(Network& net, const ParamVisitor& visit) { visit_net(net, visit); }

void for_each_param(const Network& net, const ConstParamVisitor& visit) {
  visit_net(net, visit);
}

std::vector<ParamSpec> parameter_layout(const NetConfig& cfg, Mode mode) {
  cfg.validate();
  std::vector<ParamSpec> out;
  auto add_bn = [&](const std::string& p, std::int64_t ch) {
    for (const char* f : {".mu", ".sigma", ".gamma", ".beta"}) out.push_back({p + f, {ch}});
  };
  auto add_conv_bn = [&](const std::string& p, std::int64_t o, std::int64_t cg, std::int64_t k) {
    out.push_back({p + ".conv.weight", {o, cg, k, k}});
    if (mode == Mode::kDeploy) {
      out.push_back({p + ".conv.bias", {o}});
    } else {
      add_bn(p + ".bn", o);
    }
  };
  auto add_fc = [&](const std::string& p, std::int64_t rows, std::int64_t cols, bool bias) {
    out.push_back({p + ".weight", {rows, cols}});
    if (bias) out.push_back({p + ".bias", {rows}});
  };
  add_conv_bn("stem", cfg.base_channels, cfg.in_channels, 4);
  for (int i = 0; i < kNumStages; ++i) {
    const std::string sp = stage_prefix(i);
    if (i > 0) {
      const std::vector<DownSpec> specs = downsample_specs(cfg, i);
      for (std::size_t j = 0; j < specs.size(); ++j) {
        add_conv_bn(sp + ".downsample." + std::to_string(j), specs[j].out, specs[j].in_per_group,
                    specs[j].k);
      }
    }
    const RepMlpBlockConfig bc = cfg.block_config(i);
    const std::int64_t hidden = bc.c * cfg.ffn_ratio;
    for (std::int64_t j = 0; j < cfg.blocks[static_cast<std::size_t>(i)]; ++j) {
      const std::string up = sp + ".units." + std::to_string(j);
      if (bc.global_perceptron) {
        add_fc(up + ".block.gp.fc1", bc.c / bc.gp_reduction, bc.c, true);
        add_fc(up + ".block.gp.fc2", bc.c, bc.c / bc.gp_reduction, true);
      }
      add_fc(up + ".block.fc3", bc.s * bc.hw(), bc.hw(), mode == Mode::kDeploy);
      if (mode == Mode::kTrain) {
        add_bn(up + ".block.bn3", bc.s);
        for (std::size_t k = 0; k < bc.local_kernels.size(); ++k) {
          const std::string lp = up + ".block.local." + std::to_string(k);
          const std::int64_t ks = bc.local_kernels[k];
          out.push_back({lp + ".conv.weight", {bc.s, 1, ks, ks}});
          add_bn(lp + ".bn", bc.s);
        }
      }
      add_conv_bn(up + ".ffn.expand", hidden, bc.c, 1);
      add_conv_bn(up + ".ffn.project", bc.c, hidden, 1);
    }
  }
  add_fc("head", cfg.num_classes, cfg.stage_channels(kNumStages - 1), true);
  return out;
}

Tensor4 conv_bn_forward(const ConvBn& layer, const Tensor4& input) {
  Tensor4 y = conv2d(input, layer.conv);
  if (layer.bn) bn_inference_inplace(y, *layer.bn);
  return y;
}

Matrix net_forward(const Network& net, const Tensor4& input) {
  Tensor4 x = run_trunk(net, input, nullptr);
  return fc_forward(to_matrix(global_avg_pool(x), x.n(), x.c()), net.head);
}

std::array<Tensor4, kNumStages> trunk_features(const Network& net, const Tensor4& input) {
  std::array<Tensor4, kNumStages> out;
  run_trunk(net, input, &out);
  return out;
}

BackboneOutput backbone_forward(const Network& net, const Tensor4& input, bool patch_mode) {
  check_input(net, input);
  const NetConfig& cfg = net.config;
  if (!patch_mode && (input.h() != cfg.input_h || input.w() != cfg.input_w)) {
    throw ConfigError("backbone: input " + std::to_string(input.h()) + "x" +
                      std::to_string(input.w()) + " is not the native " +
                      std::to_string(cfg.input_h) + "x" + std::to_string(cfg.input_w) +
                      "; enable patch mode");
  }
  if (input.h() % cfg.input_h != 0 || input.w() % cfg.input_w != 0) {
    throw ConfigError("backbone: input height must be a multiple of " +
                      std::to_string(cfg.input_h) + " and width a multiple of " +
                      std::to_string(cfg.input_w) + ", got " + std::to_string(input.h()) + "x" +
                      std::to_string(input.w()));
  }
  BackboneOutput out;
  Tensor4 x = conv_bn_forward(net.stem, input);
  for (int i = 0; i < kNumStages; ++i) {
    const Stage& stage = net.stages[static_cast<std::size_t>(i)];
    x = downsample_forward(stage, std::move(x));
    const std::int64_t ph = cfg.stage_h(i), pw = cfg.stage_w(i);
    const std::int64_t full_h = x.h(), full_w = x.w();
    out.patch_grid[static_cast<std::size_t>(i)] = {full_h / ph, full_w / pw};
    Tensor4 patches = split_patches(x, ph, pw);
    for (const Unit& unit : stage.units) unit_forward(unit, patches);
    x = restore_patches(patches, full_h, full_w);
    out.features[static_cast<std::size_t>(i)] = x;
  }
  return out;
}

std::string CountReport::to_text(bool per_layer) const {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s (%s form; FLOPs counted as multiply-accumulates)\n",
                config_name.c_str(), std::string(mode_name(mode)).c_str());
  os << buf;
  if (per_layer) {
    for (const LayerCount& l : layers) {
      std::snprintf(buf, sizeof(buf), "  %-40s %12lld params %14lld MACs\n", l.name.c_str(),
                    static_cast<long long>(l.params), static_cast<long long>(l.macs));
      os << buf;
    }
  }
  std::snprintf(buf, sizeof(buf), "total: %.1fM params / %.1fB FLOPs (%lld params, %lld MACs)\n",
                static_cast<double>(total_params) / 1e6, static_cast<double>(total_macs) / 1e9,
                static_cast<long long>(total_params), static_cast<long long>(total_macs));
  os << buf;
  return os.str();
}

CountReport count_params_flops(const NetConfig& cfg, Mode mode) {
  cfg.validate();
  CountReport r;
  r.config_name = cfg.name;
  r.mode = mode;
  r.layers.push_back(conv_count_cfg("stem", mode, cfg.base_channels, cfg.in_channels, 4,
                                    cfg.stage_h(0) * cfg.stage_w(0)));
  for (int i = 0; i < kNumStages; ++i) {
    const std::string sp = stage_prefix(i);
    const std::int64_t hw = cfg.stage_h(i) * cfg.stage_w(i);
    if (i > 0) {
      const std::vector<DownSpec> specs = downsample_specs(cfg, i);
      for (std::size_t j = 0; j < specs.size(); ++j) {
        // A stride-1 layer runs at the previous stage's resolution.
        const std::int64_t out_hw = specs[j].stride == 1 ? 4 * hw : hw;
        r.layers.push_back(conv_count_cfg(sp + ".downsample." + std::to_string(j), mode,
                                          specs[j].out, specs[j].in_per_group, specs[j].k,
                                          out_hw));
      }
    }
    const RepMlpBlockConfig bc = cfg.block_config(i);
    const std::int64_t hidden = bc.c * cfg.ffn_ratio;
    for (std::int64_t j = 0; j < cfg.blocks[static_cast<std::size_t>(i)]; ++j) {
      const std::string up = sp + ".units." + std::to_string(j);
      append_block_counts(r.layers, up, bc, mode);
      r.layers.push_back(conv_count_cfg(up + ".ffn.expand", mode, hidden, bc.c, 1, hw));
      r.layers.push_back(conv_count_cfg(up + ".ffn.project", mode, bc.c, hidden, 1, hw));
    }
  }
  const std::int64_t feat = cfg.stage_channels(kNumStages - 1);
  r.layers.push_back({"head", feat * cfg.num_classes + cfg.num_classes, feat * cfg.num_classes});
  return finish(std::move(r));
}

CountReport count_params_flops(const Network& net) {
  CountReport r;
  r.config_name = net.config.name;
  r.mode = net.mode;
  Shape4 shape{1, net.config.in_channels, net.config.input_h, net.config.input_w};
  auto conv_step = [&](const std::string& name, const ConvBn& cb) {
    shape = conv_output_shape(shape, cb.conv);
    r.layers.push_back(conv_count(name, cb, shape.h * shape.w));
  };
  conv_step("stem", net.stem);
  for (int i = 0; i < kNumStages; ++i) {
    const Stage& stage = net.stages[static_cast<std::size_t>(i)];
    const std::string sp = stage_prefix(i);
    for (std::size_t j = 0; j < stage.downsample.size(); ++j) {
      conv_step(sp + ".downsample." + std::to_string(j), stage.downsample[j]);
    }
    const std::int64_t hw = shape.h * shape.w;
    for (std::size_t j = 0; j < stage.units.size(); ++j) {
      const Unit& unit = stage.units[j];
      const RepMlpBlock& b = unit.block;
      const std::string up = sp + ".units." + std::to_string(j);
      const std::int64_t rows = b.config.c / b.config.s;
      if (b.gp) {
        r.layers.push_back({up + ".block.gp", b.gp->fc1.param_count() + b.gp->fc2.param_count(),
                            b.gp->fc1.weight.numel() + b.gp->fc2.weight.numel()});
      }
      r.layers.push_back({up + ".block.fc3",
                          b.fc3.param_count() + (b.bn3 ? b.bn3->param_count() : 0),
                          rows * b.fc3.weight.numel()});
      for (std::size_t k = 0; k < b.local.size(); ++k) {
        r.layers.push_back({up + ".block.local." + std::to_string(k),
                            b.local[k].conv.param_count() + b.local[k].bn.param_count(),
                            rows * b.local[k].conv.kernel.numel() * hw});
      }
      r.layers.push_back(conv_count(up + ".ffn.expand", unit.ffn.expand, hw));
      r.layers.push_back(conv_count(up + ".ffn.project", unit.ffn.project, hw));
    }
  }
  r.layers.push_back({"head", net.head.param_count(), net.head.weight.numel()});
  return finish(std::move(r));
}

LocalityDelta resmlp_delta_config(std::int64_t blocks, std::int64_t s) {
  RepMlpBlockConfig bc;
  bc.c = 384 * s;
  bc.h = bc.w = 14;
  bc.s = s;
  bc.global_perceptron = false;
  auto train_params = [&](std::vector<std::int64_t> kernels) {
    bc.local_kernels = std::move(kernels);
    return block_cost(bc, Mode::kTrain).params();
  };
  const std::int64_t base = train_params({});
  LocalityDelta d;
  d.one_by_one = blocks * (train_params({1}) - base);
  d.three_by_three = blocks * (train_params({3}) - base);
  d.both = blocks * (train_params({1, 3}) - base);
  return d;
}

}  // namespace repmlp
