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

#ifndef REPMLP_SRC_PARALLEL_H_
#define REPMLP_SRC_PARALLEL_H_

#include <algorithm>
#include <cstdint>
#include <thread>
#include <vector>

#include "repmlp/ops.h"

namespace repmlp::internal {

// Runs fn(begin, end) over [0, count) split into contiguous ranges, one per
// worker. Callers only hand out disjoint output elements.
template <typename Fn>
void parallel_for(std::int64_t count, Fn&& fn) {
  const std::int64_t workers = std::min<std::int64_t>(num_threads(), count);
  if (workers <= 1) {
    if (count > 0) fn(std::int64_t{0}, count);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(static_cast<std::size_t>(workers - 1));
  const std::int64_t step = (count + workers - 1) / workers;
  for (std::int64_t t = 1; t < workers; ++t) {
    const std::int64_t b = t * step;
    const std::int64_t e = std::min(count, b + step);
    if (b < e) pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::int64_t{0}, std::min(count, step));
}

}  // namespace repmlp::internal

#endif  // REPMLP_SRC_PARALLEL_H_
