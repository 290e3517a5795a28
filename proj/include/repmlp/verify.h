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

// Self-checks for the conversion machinery, shared by `repmlp verify` and the
// acceptance binary. Every suite is seeded and deterministic.

#ifndef REPMLP_VERIFY_H_
#define REPMLP_VERIFY_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "repmlp/net.h"

namespace repmlp {

struct SuiteResult {
  std::string name;
  std::int64_t cases = 0;
  double worst = 0.0;      // largest max-abs deviation seen
  double tolerance = 0.0;  // passes when worst <= tolerance
  double seconds = 0.0;
  bool passed() const { return worst <= tolerance; }
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  // Sweep k in {1, 3}, h, w in 1..4, c, o in {1, 2}, groups in {1, c} against
  // the oracle instead of sampling random layers.
  bool exhaustive_small = false;
  // Adds 1e-2 to one converted weight in every suite; all of them should
  // then fail. Sanity check of the harness itself.
  bool perturb = false;
  // Whole-network check; skipped when empty.
  std::optional<NetConfig> net;
};

inline constexpr float kPerturbation = 1e-2f;

// conv_to_fc vs toeplitz_oracle, tolerance 1e-5.
SuiteResult verify_toeplitz_oracle(std::uint64_t seed, bool exhaustive, bool perturb);
// Matrix product with W(F, p) vs conv2d on `cases` random (M, F, p) with
// c, o <= 8 and h, w <= 16; tolerance 1e-4.
SuiteResult verify_mmul_equals_conv(std::uint64_t seed, int cases, bool perturb);
// BN folding into convs and set-sharing FCs; `pairs` of each; tolerance 1e-5.
SuiteResult verify_bn_fusion(std::uint64_t seed, int pairs, bool perturb);
// conv_to_fc(a F1 + b F2) vs a conv_to_fc(F1) + b conv_to_fc(F2); 1e-5.
SuiteResult verify_linearity(std::uint64_t seed, int cases, bool perturb);
// Block train vs deploy over c in {4, 8, 64}, s in {1, 2, 4},
// side in {4, 8, 16} and local kernel sets; tolerance 1e-4.
SuiteResult verify_block_grid(std::uint64_t seed, bool perturb);
// Whole network train vs deploy on a random batch of 2; tolerance 1e-3.
SuiteResult verify_net(const NetConfig& config, std::uint64_t seed, bool perturb);

struct VerifyReport {
  std::vector<SuiteResult> suites;
  bool passed() const;
  // One line per suite with worst deviation and tolerance.
  std::string to_text() const;
};

VerifyReport run_verify(const VerifyOptions& options);

}  // namespace repmlp

#endif  // REPMLP_VERIFY_H_
