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

#include "repmlp/bench.h"

#include <algorithm>
#include <chrono>
#include <cstdio>

#include "repmlp/errors.h"
#include "repmlp/random.h"

namespace repmlp {

namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

BenchResult run_bench(const NetConfig& config, const BenchOptions& options) {
  const Network train = build_net(config, options.seed);
  const Network deploy = convert_net(train);
  return run_bench(train, deploy, options);
}

BenchResult run_bench(const Network& train, const Network& deploy, const BenchOptions& options) {
  if (options.warmup < 3 || options.iters < 10) {
    throw ConfigError("bench needs at least 3 warmup and 10 timed iterations");
  }
  if (options.batch < 1) throw ConfigError("bench batch must be positive");
  if (options.modes.empty()) throw ConfigError("bench needs at least one mode");
  const NetConfig& cfg = train.config;
  Rng rng(options.seed ^ 0xbe7c4u);
  const Shape4 shape{options.batch, cfg.in_channels, cfg.input_h, cfg.input_w};
  const Tensor4 input(shape, rng.vec(shape.numel(), -1, 1));

  BenchResult result;
  const Matrix ref_train = net_forward(train, input);
  const Matrix ref_deploy = net_forward(deploy, input);
  result.max_abs_diff = max_abs_diff(ref_train.values(), ref_deploy.values());
  if (!(result.max_abs_diff <= options.agreement)) {
    char msg[160];
    std::snprintf(msg, sizeof(msg), "train and deploy outputs differ by %.3e (limit %.0e)",
                  static_cast<double>(result.max_abs_diff),
                  static_cast<double>(options.agreement));
    throw VerificationError(msg);
  }

  const std::size_t m = options.modes.size();
  std::vector<std::vector<double>> times(m);
  for (Mode mode : options.modes) {
    result.outputs.push_back(mode == Mode::kTrain ? ref_train : ref_deploy);
  }
  for (int it = 0; it < options.warmup + options.iters; ++it) {
    for (std::size_t k = 0; k < m; ++k) {
      const std::size_t idx = it % 2 ? m - 1 - k : k;
      const Network& net = options.modes[idx] == Mode::kTrain ? train : deploy;
      const auto start = std::chrono::steady_clock::now();
      const Matrix out = net_forward(net, input);
      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
              .count();
      if (it >= options.warmup) times[idx].push_back(ms);
    }
  }
  for (std::size_t k = 0; k < m; ++k) {
    BenchRow row;
    row.config = cfg.name;
    row.mode = options.modes[k];
    row.batch = options.batch;
    row.warmup = options.warmup;
    row.iters = options.iters;
    row.median_ms = median(times[k]);
    row.samples_per_sec = static_cast<double>(options.batch) * 1000.0 / row.median_ms;
    row.samples_ms = std::move(times[k]);
    result.rows.push_back(std::move(row));
  }
  return result;
}

std::string bench_csv_header() {
  return "config,mode,batch,warmup,iters,median_ms,samples_per_sec";
}

std::string bench_csv_row(const BenchRow& row) {
  char line[256];
  std::snprintf(line, sizeof(line), "%s,%s,%lld,%d,%d,%.3f,%.2f", row.config.c_str(),
                std::string(mode_name(row.mode)).c_str(), static_cast<long long>(row.batch),
                row.warmup, row.iters, row.median_ms, row.samples_per_sec);
  return line;
}

}  // namespace repmlp
