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

#include "repmlp/tensor.h"

#include <algorithm>
#include <cmath>
#include <utility>

#include "repmlp/errors.h"

namespace repmlp {

std::string Shape4::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
         std::to_string(w) + ")";
}

namespace {

void check_shape(const Shape4& s) {
  if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) {
    throw DimensionError("negative extent in shape " + s.str());
  }
}

void check_count(std::int64_t have, std::int64_t want, const std::string& what) {
  if (have != want) {
    throw DimensionError("reshape " + what + ": element count " + std::to_string(have) +
                         " != " + std::to_string(want));
  }
}

}  // namespace

Tensor4::Tensor4(Shape4 shape, float fill) : shape_(shape) {
  check_shape(shape);
  data_.assign(static_cast<std::size_t>(shape.numel()), fill);
}

Tensor4::Tensor4(Shape4 shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
  check_shape(shape);
  check_count(static_cast<std::int64_t>(data_.size()), shape.numel(), "to " + shape.str());
}

Matrix::Matrix(std::int64_t rows, std::int64_t cols, float fill) : rows_(rows), cols_(cols) {
  if (rows < 0 || cols < 0) throw DimensionError("negative matrix extent");
  data_.assign(static_cast<std::size_t>(rows * cols), fill);
}

Matrix::Matrix(std::int64_t rows, std::int64_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows < 0 || cols < 0) throw DimensionError("negative matrix extent");
  check_count(static_cast<std::int64_t>(data_.size()), rows * cols,
              "to (" + std::to_string(rows) + ", " + std::to_string(cols) + ")");
}

Matrix Matrix::identity(std::int64_t n) {
  Matrix m(n, n);
  for (std::int64_t i = 0; i < n; ++i) m(i, i) = 1.0f;
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  constexpr std::int64_t kTile = 32;
  for (std::int64_t r0 = 0; r0 < rows_; r0 += kTile) {
    for (std::int64_t c0 = 0; c0 < cols_; c0 += kTile) {
      const std::int64_t r1 = std::min(rows_, r0 + kTile);
      const std::int64_t c1 = std::min(cols_, c0 + kTile);
      for (std::int64_t r = r0; r < r1; ++r) {
        for (std::int64_t c = c0; c < c1; ++c) t(c, r) = (*this)(r, c);
      }
    }
  }
  return t;
}

Tensor4 reshape(const Tensor4& t, Shape4 shape) {
  check_count(t.numel(), shape.numel(), t.shape().str() + " -> " + shape.str());
  return Tensor4(shape, std::vector<float>(t.values().begin(), t.values().end()));
}

Tensor4 reshape(Tensor4&& t, Shape4 shape) {
  check_count(t.numel(), shape.numel(), t.shape().str() + " -> " + shape.str());
  return Tensor4(shape, std::move(t).take());
}

Matrix to_matrix(const Tensor4& t, std::int64_t rows, std::int64_t cols) {
  check_count(t.numel(), rows * cols, t.shape().str() + " -> matrix");
  return Matrix(rows, cols, std::vector<float>(t.values().begin(), t.values().end()));
}

Matrix to_matrix(Tensor4&& t, std::int64_t rows, std::int64_t cols) {
  check_count(t.numel(), rows * cols, t.shape().str() + " -> matrix");
  return Matrix(rows, cols, std::move(t).take());
}

Tensor4 to_tensor(const Matrix& m, Shape4 shape) {
  check_count(m.numel(), shape.numel(), "matrix -> " + shape.str());
  return Tensor4(shape, std::vector<float>(m.values().begin(), m.values().end()));
}

Tensor4 to_tensor(Matrix&& m, Shape4 shape) {
  check_count(m.numel(), shape.numel(), "matrix -> " + shape.str());
  return Tensor4(shape, std::move(m).take());
}

Matrix reshape(Matrix&& m, std::int64_t rows, std::int64_t cols) {
  check_count(m.numel(), rows * cols, "matrix -> matrix");
  return Matrix(rows, cols, std::move(m).take());
}

float max_abs_diff(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw DimensionError("max_abs_diff: length " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
  float worst = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const float d = std::fabs(a[i] - b[i]);
    if (!(d <= worst)) worst = d;  // propagates NaN
  }
  return worst;
}

float max_abs(std::span<const float> a) {
  float worst = 0.0f;
  for (float v : a) worst = std::max(worst, std::fabs(v));
  return worst;
}

}  // namespace repmlp
