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

// Dense float containers used throughout the toolkit.
//
// Tensor4 is an NCHW feature map stored contiguously in row-major order:
//   index(i, j, u, v) = ((i * c + j) * h + u) * w + v
// Matrix is a row-major (rows, cols) array. Reshaping between the two never
// reorders elements; the rvalue overloads hand the buffer over without
// touching the data.

#ifndef REPMLP_TENSOR_H_
#define REPMLP_TENSOR_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace repmlp {

struct Shape4 {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  std::int64_t numel() const { return n * c * h * w; }
  std::string str() const;
  bool operator==(const Shape4&) const = default;
};

class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape4 shape, float fill = 0.0f);
  Tensor4(Shape4 shape, std::vector<float> data);

  const Shape4& shape() const { return shape_; }
  std::int64_t n() const { return shape_.n; }
  std::int64_t c() const { return shape_.c; }
  std::int64_t h() const { return shape_.h; }
  std::int64_t w() const { return shape_.w; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }

  float& at(std::int64_t i, std::int64_t j, std::int64_t u, std::int64_t v) {
    return data_[static_cast<std::size_t>(((i * shape_.c + j) * shape_.h + u) * shape_.w + v)];
  }
  const float& at(std::int64_t i, std::int64_t j, std::int64_t u, std::int64_t v) const {
    return data_[static_cast<std::size_t>(((i * shape_.c + j) * shape_.h + u) * shape_.w + v)];
  }

  // Releases the buffer; used by the move-reshape helpers.
  std::vector<float> take() && { return std::move(data_); }

 private:
  Shape4 shape_;
  std::vector<float> data_;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::int64_t rows, std::int64_t cols, float fill = 0.0f);
  Matrix(std::int64_t rows, std::int64_t cols, std::vector<float> data);

  static Matrix identity(std::int64_t n);

  std::int64_t rows() const { return rows_; }
  std::int64_t cols() const { return cols_; }
  std::int64_t numel() const { return rows_ * cols_; }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<float> values() { return data_; }
  std::span<const float> values() const { return data_; }
  std::span<float> row(std::int64_t r) {
    return std::span<float>(data_).subspan(static_cast<std::size_t>(r * cols_),
                                           static_cast<std::size_t>(cols_));
  }
  std::span<const float> row(std::int64_t r) const {
    return std::span<const float>(data_).subspan(static_cast<std::size_t>(r * cols_),
                                                 static_cast<std::size_t>(cols_));
  }

  float& operator()(std::int64_t r, std::int64_t c) {
    return data_[static_cast<std::size_t>(r * cols_ + c)];
  }
  float operator()(std::int64_t r, std::int64_t c) const {
    return data_[static_cast<std::size_t>(r * cols_ + c)];
  }

  Matrix transposed() const;

  std::vector<float> take() && { return std::move(data_); }

 private:
  std::int64_t rows_ = 0;
  std::int64_t cols_ = 0;
  std::vector<float> data_;
};

// Order-preserving reshapes. Element counts must agree (DimensionError
// otherwise). The rvalue forms move the buffer.
Tensor4 reshape(const Tensor4& t, Shape4 shape);
Tensor4 reshape(Tensor4&& t, Shape4 shape);
Matrix to_matrix(const Tensor4& t, std::int64_t rows, std::int64_t cols);
Matrix to_matrix(Tensor4&& t, std::int64_t rows, std::int64_t cols);
Tensor4 to_tensor(const Matrix& m, Shape4 shape);
Tensor4 to_tensor(Matrix&& m, Shape4 shape);
Matrix reshape(Matrix&& m, std::int64_t rows, std::int64_t cols);

float max_abs_diff(std::span<const float> a, std::span<const float> b);
float max_abs(std::span<const float> a);

}  // namespace repmlp

#endif  // REPMLP_TENSOR_H_
