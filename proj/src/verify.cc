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

#include "repmlp/verify.h"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>

#include "repmlp/block.h"
#include "repmlp/ops.h"
#include "repmlp/random.h"
#include "repmlp/reparam.h"

namespace repmlp {

namespace {

ConvLayer random_conv(Rng& rng, std::int64_t o, std::int64_t c, std::int64_t k, int padding,
                      int groups = 1, int stride = 1, bool bias = false) {
  ConvLayer layer;
  layer.kernel = Tensor4(Shape4{o, c / groups, k, k}, rng.vec(o * (c / groups) * k * k, -1, 1));
  layer.padding = padding;
  layer.stride = stride;
  layer.groups = groups;
  if (bias) layer.bias = rng.vec(o, -1, 1);
  return layer;
}

BnParams random_bn_stats(Rng& rng, std::int64_t ch) {
  return BnParams::from_running_var(rng.vec(ch, -0.5f, 0.5f), rng.vec(ch, 0.2f, 2.0f),
                                    rng.vec(ch, 0.5f, 1.5f), rng.vec(ch, -0.5f, 0.5f));
}

Tensor4 random_tensor(Rng& rng, Shape4 shape) {
  return Tensor4(shape, rng.vec(shape.numel(), -1, 1));
}

// A random group count dividing both.
int pick_groups(Rng& rng, std::int64_t c, std::int64_t o) {
  std::vector<int> options;
  for (int g = 1; g <= c; ++g) {
    if (c % g == 0 && o % g == 0) options.push_back(g);
  }
  return options[static_cast<std::size_t>(rng.pick(0, static_cast<std::int64_t>(options.size()) - 1))];
}

SuiteResult timed(const std::string& name, double tolerance,
                  const std::function<void(SuiteResult&)>& body) {
  SuiteResult r;
  r.name = name;
  r.tolerance = tolerance;
  const auto start = std::chrono::steady_clock::now();
  body(r);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

void record(SuiteResult& r, double diff) {
  r.worst = std::max(r.worst, diff);
  ++r.cases;
}

// MMUL(M, W): rows of the flattened input times W^T.
Tensor4 apply_fc(const Tensor4& m, const Matrix& w, std::int64_t o) {
  FcLayer fc;
  fc.weight = w;
  return fc_forward(m, fc, Shape4{m.n(), o, m.h(), m.w()});
}

}  // namespace

SuiteResult verify_toeplitz_oracle(std::uint64_t seed, bool exhaustive, bool perturb) {
  return timed(exhaustive ? "toeplitz-oracle-exhaustive" : "toeplitz-oracle", 1e-5,
               [&](SuiteResult& r) {
    Rng rng(seed);
    auto check = [&](const ConvLayer& layer, std::int64_t c, std::int64_t h, std::int64_t w) {
      Matrix got = conv_to_fc(layer, c, h, w).weight;
      if (perturb) got(0, 0) += kPerturbation;
      record(r, max_abs_diff(got.values(), toeplitz_oracle(layer, c, h, w).values()));
    };
    if (exhaustive) {
      for (std::int64_t k : {1, 3})
        for (std::int64_t h = 1; h <= 4; ++h)
          for (std::int64_t w = 1; w <= 4; ++w)
            for (std::int64_t c : {1, 2})
              for (std::int64_t o : {1, 2})
                for (std::int64_t g : c == 1 ? std::vector<std::int64_t>{1}
                                             : std::vector<std::int64_t>{1, c}) {
                  if (o % g != 0) continue;
                  check(random_conv(rng, o, c, k, static_cast<int>(k / 2), static_cast<int>(g)),
                        c, h, w);
                }
      return;
    }
    for (int t = 0; t < 100; ++t) {
      const std::int64_t c = rng.pick(1, 6), o = rng.pick(1, 6);
      const std::int64_t k = 2 * rng.pick(0, 3) + 1;
      const int g = pick_groups(rng, c, o);
      check(random_conv(rng, o, c, k, static_cast<int>(k / 2), g), c, rng.pick(1, 8),
            rng.pick(1, 8));
    }
    for (int t = 0; t < 30; ++t) {
      const std::int64_t s = rng.pick(1, 6), k = 2 * rng.pick(0, 2) + 1;
      const std::int64_t h = rng.pick(1, 8), w = rng.pick(1, 8);
      ConvLayer dw = random_conv(rng, s, s, k, static_cast<int>(k / 2), static_cast<int>(s));
      Matrix got = conv_to_fc_sets(dw, h, w).weight;
      if (perturb) got(0, 0) += kPerturbation;
      record(r, max_abs_diff(got.values(), toeplitz_oracle_sets(dw, h, w).values()));
    }
  });
}

SuiteResult verify_mmul_equals_conv(std::uint64_t seed, int cases, bool perturb) {
  return timed("mmul-equals-conv", 1e-4, [&](SuiteResult& r) {
    Rng rng(seed + 1);
    for (int t = 0; t < cases; ++t) {
      const std::int64_t c = rng.pick(1, 8), o = rng.pick(1, 8);
      const std::int64_t k = 2 * rng.pick(0, 2) + 1;
      const int g = pick_groups(rng, c, o);
      ConvLayer layer = random_conv(rng, o, c, k, static_cast<int>(k / 2), g);
      Tensor4 m = random_tensor(rng, Shape4{rng.pick(1, 2), c, rng.pick(1, 16), rng.pick(1, 16)});
      Matrix w = conv_to_fc(layer, c, m.h(), m.w()).weight;
      if (perturb) {
        // Output 0 of sample 0 picks up kPerturbation * m[0].
        w(0, 0) += kPerturbation;
        m.data()[0] = 1.0f;
      }
      record(r, max_abs_diff(apply_fc(m, w, o).values(), conv2d(m, layer).values()));
    }
  });
}

SuiteResult verify_bn_fusion(std::uint64_t seed, int pairs, bool perturb) {
  return timed("bn-fusion", 1e-5, [&](SuiteResult& r) {
    Rng rng(seed + 2);
    for (int t = 0; t < pairs; ++t) {
      const int g = static_cast<int>(rng.pick(1, 3));
      const std::int64_t c = g * rng.pick(1, 3), o = g * rng.pick(1, 3);
      const std::int64_t k = rng.pick(1, 3);
      ConvLayer layer = random_conv(rng, o, c, k, static_cast<int>(rng.pick(0, 1)), g,
                                    static_cast<int>(rng.pick(1, 2)), t % 3 == 0);
      const BnParams bn = random_bn_stats(rng, o);
      Tensor4 in = random_tensor(rng, Shape4{2, c, rng.pick(3, 9), rng.pick(3, 9)});
      ConvLayer fused = fuse_bn_conv(layer, bn);
      if (perturb) {
        fused.kernel.data()[0] += kPerturbation;
        std::fill(in.values().begin(), in.values().end(), 1.0f);
      }
      record(r, max_abs_diff(conv2d(in, fused).values(),
                             bn_inference(conv2d(in, layer), bn).values()));
    }
    for (int t = 0; t < pairs; ++t) {
      const std::int64_t s = rng.pick(1, 4), h = rng.pick(1, 5), w = rng.pick(1, 5), hw = h * w;
      FcLayer fc;
      fc.groups = static_cast<int>(s);
      fc.weight = Matrix(s * hw, hw, rng.vec(s * hw * hw, -1, 1));
      if (t % 2) fc.bias = rng.vec(s * hw, -1, 1);
      const BnParams bn = random_bn_stats(rng, s);
      Tensor4 in = random_tensor(rng, Shape4{3, s, h, w});
      FcLayer fused = fuse_bn_grouped_fc(fc, bn, hw);
      if (perturb) {
        fused.weight(0, 0) += kPerturbation;
        std::fill(in.values().begin(), in.values().end(), 1.0f);
      }
      record(r, max_abs_diff(fc_forward(in, fused).values(),
                             bn_inference(fc_forward(in, fc), bn).values()));
    }
  });
}

SuiteResult verify_linearity(std::uint64_t seed, int cases, bool perturb) {
  return timed("linearity", 1e-5, [&](SuiteResult& r) {
    Rng rng(seed + 3);
    for (int t = 0; t < cases; ++t) {
      const std::int64_t c = rng.pick(1, 4), o = rng.pick(1, 4), k = 2 * rng.pick(0, 2) + 1;
      const std::int64_t h = rng.pick(1, 8), w = rng.pick(1, 8);
      const int g = pick_groups(rng, c, o);
      ConvLayer f1 = random_conv(rng, o, c, k, static_cast<int>(k / 2), g);
      ConvLayer f2 = random_conv(rng, o, c, k, static_cast<int>(k / 2), g);
      const float a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
      ConvLayer mix = f1;
      for (std::int64_t i = 0; i < mix.kernel.numel(); ++i) {
        mix.kernel.data()[i] = a * f1.kernel.data()[i] + b * f2.kernel.data()[i];
      }
      Matrix wm = conv_to_fc(mix, c, h, w).weight;
      const Matrix w1 = conv_to_fc(f1, c, h, w).weight, w2 = conv_to_fc(f2, c, h, w).weight;
      if (perturb) wm(0, 0) += kPerturbation;
      double worst = 0.0;
      for (std::int64_t i = 0; i < wm.numel(); ++i) {
        worst = std::max<double>(
            worst, std::abs(wm.data()[i] - (a * w1.data()[i] + b * w2.data()[i])));
      }
      record(r, worst);
    }
  });
}

SuiteResult verify_block_grid(std::uint64_t seed, bool perturb) {
  return timed("block-train-vs-deploy", 1e-4, [&](SuiteResult& r) {
    Rng rng(seed + 4);
    const std::vector<std::vector<std::int64_t>> kernel_sets{{1}, {3}, {1, 3}, {1, 3, 5}};
    for (std::int64_t c : {4, 8, 64})
      for (std::int64_t s : {1, 2, 4})
        for (std::int64_t side : {4, 8, 16})
          for (const auto& kernels : kernel_sets) {
            RepMlpBlockConfig cfg{.c = c, .h = side, .w = side, .s = s};
            cfg.local_kernels = kernels;
            const RepMlpBlock train = random_train_block(cfg, rng, BlockInit{0.5f, 1.5f, 1.0f});
            RepMlpBlock deploy = convert_block(train);
            Tensor4 x = random_tensor(rng, Shape4{2, c, side, side});
            if (perturb) {
              deploy.fc3.weight(0, 0) += kPerturbation;
              x.data()[0] = 1.0f;
            }
            record(r, max_abs_diff(block_forward(train, x).values(),
                                   block_forward(deploy, x).values()));
          }
  });
}

SuiteResult verify_net(const NetConfig& config, std::uint64_t seed, bool perturb) {
  return timed("net-train-vs-deploy:" + config.name, 1e-3, [&](SuiteResult& r) {
    const Network train = build_net(config, seed);
    Network deploy = convert_net(train);
    Rng rng(seed + 5);
    const Tensor4 x =
        random_tensor(rng, Shape4{2, config.in_channels, config.input_h, config.input_w});
    if (perturb) {
      // Spread the bump over a whole row so it survives pooling.
      auto row = deploy.stages[0].units[0].block.fc3.weight.row(0);
      for (float& v : row) v += kPerturbation;
    }
    record(r, max_abs_diff(net_forward(train, x).values(), net_forward(deploy, x).values()));
  });
}

bool VerifyReport::passed() const {
  return std::all_of(suites.begin(), suites.end(), [](const SuiteResult& s) { return s.passed(); });
}

std::string VerifyReport::to_text() const {
  std::string out;
  char line[256];
  for (const SuiteResult& s : suites) {
    std::snprintf(line, sizeof(line), "%-4s %-34s cases=%-5lld worst=%.3e tol=%.0e (%.2fs)\n",
                  s.passed() ? "ok" : "FAIL", s.name.c_str(), static_cast<long long>(s.cases),
                  s.worst, s.tolerance, s.seconds);
    out += line;
  }
  out += passed() ? "verify: all suites passed\n" : "verify: FAILED\n";
  return out;
}

VerifyReport run_verify(const VerifyOptions& options) {
  VerifyReport report;
  report.suites.push_back(
      verify_toeplitz_oracle(options.seed, options.exhaustive_small, options.perturb));
  report.suites.push_back(verify_mmul_equals_conv(options.seed, 200, options.perturb));
  report.suites.push_back(verify_bn_fusion(options.seed, 100, options.perturb));
  report.suites.push_back(verify_linearity(options.seed, 50, options.perturb));
  report.suites.push_back(verify_block_grid(options.seed, options.perturb));
  if (options.net) report.suites.push_back(verify_net(*options.net, options.seed, options.perturb));
  return report;
}

}  // namespace repmlp
