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

// Deterministic NCHW primitives.
//
// Every reduction has a fixed accumulation order that does not depend on
// batch size, blocking or thread count, so a given output element is computed
// bit-identically whichever batch it appears in.
//
//  * conv2d sums over (input channel, kernel row, kernel column) in that
//    order, starting from zero, then adds the bias.
//  * Matrix products (fc_forward, gemm_ab, gemm_abt) compute every element
//    as 0 + a[0] * b[0] + a[1] * b[1] + ... in increasing k.

#ifndef REPMLP_OPS_H_
#define REPMLP_OPS_H_

#include <cstdint>
#include <optional>
#include <span>

#include "repmlp/layers.h"
#include "repmlp/tensor.h"

namespace repmlp {

enum class Activation { kRelu, kGelu };

// Worker threads used by conv2d and the matrix products. Work is split over independent
// output elements only, so results do not depend on this value.
void set_num_threads(int threads);
int num_threads();

Shape4 conv_output_shape(const Shape4& input, const ConvLayer& layer);
Tensor4 conv2d(const Tensor4& input, const ConvLayer& layer);

// C(m, n) = A(m, k) * B(k, n) with leading dimensions lda, ldb, ldc.
void gemm_ab(std::int64_t m, std::int64_t n, std::int64_t k, const float* a,
             std::int64_t lda, const float* b, std::int64_t ldb, float* c,
             std::int64_t ldc);
// C(m, n) = A(m, k) * B(n, k)^T.
void gemm_abt(std::int64_t m, std::int64_t n, std::int64_t k, const float* a,
              std::int64_t lda, const float* b, std::int64_t ldb, float* c,
              std::int64_t ldc);

// Rows of `input` are independent vectors of length layer.in_len().
Matrix fc_forward(const Matrix& input, const FcLayer& layer);
// Flattens the tensor into vectors of length layer.in_len() and reshapes the
// result to `out_shape` (defaults to the input shape when in_len == out_len,
// otherwise (vectors, out_len, 1, 1)).
Tensor4 fc_forward(const Tensor4& input, const FcLayer& layer,
                   std::optional<Shape4> out_shape = std::nullopt);

Tensor4 bn_inference(const Tensor4& input, const BnParams& bn);
void bn_inference_inplace(Tensor4& t, const BnParams& bn);

Tensor4 activation(const Tensor4& input, Activation kind);
void activation_inplace(Tensor4& t, Activation kind);
float gelu(float x);

Tensor4 global_avg_pool(const Tensor4& input);

// a += b, shapes must match.
void add_inplace(Tensor4& a, const Tensor4& b);
// t(i, j, :, :) += v(i, j, 0, 0).
void broadcast_add_inplace(Tensor4& t, const Tensor4& per_channel);

// Tiles every sample into non-overlapping (ph, pw) patches. Output sample
// index is (i * grid_h + py) * grid_w + px, i.e. row-major over the patch grid
// within each input sample.
Tensor4 split_patches(const Tensor4& input, std::int64_t ph, std::int64_t pw);
// Exact inverse of split_patches for an original spatial size (h, w).
Tensor4 restore_patches(const Tensor4& patches, std::int64_t h, std::int64_t w);

}  // namespace repmlp

#endif  // REPMLP_OPS_H_
