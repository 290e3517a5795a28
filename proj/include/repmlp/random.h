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

#ifndef REPMLP_RANDOM_H_
#define REPMLP_RANDOM_H_

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace repmlp {

// Seeded generator for weights and probe inputs. Floats are built from the
// top 24 bits of mt19937_64, so sequences are identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  float uniform(float lo, float hi) {
    const float unit = static_cast<float>(engine_() >> 40) * 0x1.0p-24f;
    return lo + (hi - lo) * unit;
  }
  void fill(std::span<float> out, float lo, float hi) {
    for (float& v : out) v = uniform(lo, hi);
  }
  std::vector<float> vec(std::int64_t len, float lo, float hi) {
    std::vector<float> v(static_cast<std::size_t>(len));
    fill(v, lo, hi);
    return v;
  }
  // Integer in [lo, hi]. Modulo bias is irrelevant at the ranges used here.
  std::int64_t pick(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(engine_() % static_cast<std::uint64_t>(hi - lo + 1));
  }
  std::uint64_t next() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace repmlp

#endif  // REPMLP_RANDOM_H_
