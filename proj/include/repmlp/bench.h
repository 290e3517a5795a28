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

// End-to-end forward timing of train and deploy forms.

#ifndef REPMLP_BENCH_H_
#define REPMLP_BENCH_H_

#include <cstdint>
#include <string>
#include <vector>

#include "repmlp/block.h"
#include "repmlp/net.h"

namespace repmlp {

struct BenchOptions {
  std::int64_t batch = 8;
  std::vector<Mode> modes{Mode::kTrain, Mode::kDeploy};
  int warmup = 3;
  int iters = 10;
  std::uint64_t seed = 0;
  // Outputs of the two forms must agree this closely before anything is timed.
  float agreement = 1e-3f;
};

struct BenchRow {
  std::string config;
  Mode mode = Mode::kTrain;
  std::int64_t batch = 0;
  int warmup = 0;
  int iters = 0;
  double median_ms = 0.0;
  double samples_per_sec = 0.0;
  std::vector<double> samples_ms;  // every timed iteration
};

struct BenchResult {
  std::vector<BenchRow> rows;  // one per mode, in option order
  float max_abs_diff = 0.0f;   // train vs deploy logits on the bench input
  // Logits of each mode on the bench input, in option order.
  std::vector<Matrix> outputs;
};

// Builds the train net from `seed`, converts it, checks agreement (throws
// VerificationError otherwise) and times forwards on one seeded batch.
// Modes are interleaved iteration by iteration, alternating which goes
// first, so slow drifts in machine state hit both equally.
BenchResult run_bench(const NetConfig& config, const BenchOptions& options);

// Also accepts prebuilt networks; `deploy` must be convert_net(train).
BenchResult run_bench(const Network& train, const Network& deploy, const BenchOptions& options);

std::string bench_csv_header();
std::string bench_csv_row(const BenchRow& row);

}  // namespace repmlp

#endif  // REPMLP_BENCH_H_
