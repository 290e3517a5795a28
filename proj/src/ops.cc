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

#include "repmlp/ops.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "parallel.h"
#include "repmlp/errors.h"

namespace repmlp {

namespace {

std::atomic<int> g_threads{1};

// 16 x f32. Maps to one zmm register with AVX-512, two ymm otherwise.
using Vec = float __attribute__((vector_size(64)));
constexpr std::int64_t kLanes = 16;

// Unaligned alias of Vec for loads and stores.
using UVec = float __attribute__((vector_size(64), aligned(4), may_alias));

inline Vec load(const float* p) { return *reinterpret_cast<const UVec*>(p); }
inline void store(float* p, Vec v) { *reinterpret_cast<UVec*>(p) = v; }
inline Vec broadcast(float s) {
  return Vec{s, s, s, s, s, s, s, s, s, s, s, s, s, s, s, s};
}

// R rows x (V * 16) columns of C held in registers for the whole k loop.
// Each element is 0 + a[0] * b[0] + a[1] * b[1] + ... in order, then
// + bias[row] when a bias is given.
template <int R, int V>
void gemm_tile(std::int64_t k, const float* a, std::int64_t lda, const float* b,
               std::int64_t ldb, float* c, std::int64_t ldc, const float* bias) {
  // Early unrolling lets GCC keep acc in registers instead of on the stack.
  Vec acc[R][V];
#pragma GCC unroll 8
  for (int r = 0; r < R; ++r) {
#pragma GCC unroll 4
    for (int v = 0; v < V; ++v) acc[r][v] = broadcast(0.0f);
  }
  for (std::int64_t p = 0; p < k; ++p) {
    Vec bv[V];
#pragma GCC unroll 4
    for (int v = 0; v < V; ++v) bv[v] = load(b + p * ldb + v * kLanes);
#pragma GCC unroll 8
    for (int r = 0; r < R; ++r) {
      const Vec av = broadcast(a[r * lda + p]);
#pragma GCC unroll 4
      for (int v = 0; v < V; ++v) acc[r][v] += av * bv[v];
    }
  }
  if (bias) {
#pragma GCC unroll 8
    for (int r = 0; r < R; ++r) {
      const Vec bv = broadcast(bias[r]);
#pragma GCC unroll 4
      for (int v = 0; v < V; ++v) acc[r][v] += bv;
    }
  }
#pragma GCC unroll 8
  for (int r = 0; r < R; ++r) {
#pragma GCC unroll 4
    for (int v = 0; v < V; ++v) store(c + r * ldc + v * kLanes, acc[r][v]);
  }
}

template <int V>
void gemm_rows(std::int64_t rows, std::int64_t k, const float* a, std::int64_t lda,
               const float* b, std::int64_t ldb, float* c, std::int64_t ldc,
               const float* bias) {
  constexpr int kRows = 6;
  std::int64_t i = 0;
  for (; i + kRows <= rows; i += kRows) {
    gemm_tile<kRows, V>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, bias ? bias + i : nullptr);
  }
  if (bias) bias += i;
  switch (rows - i) {
    case 5: gemm_tile<5, V>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, bias); break;
    case 4: gemm_tile<4, V>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, bias); break;
    case 3: gemm_tile<3, V>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, bias); break;
    case 2: gemm_tile<2, V>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, bias); break;
    case 1: gemm_tile<1, V>(k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, bias); break;
    default: break;
  }
}

// Column panels of B (k x 64) are packed contiguously, zero-padded to whole
// vectors, and stay in L2 while the rows of A stream past.
constexpr std::int64_t kPanel = 4 * kLanes;

// row_bias, when given, is added to every element of row i after the sum.
void gemm_panels(std::int64_t first, std::int64_t last, std::int64_t m, std::int64_t n,
                 std::int64_t k, const float* a, std::int64_t lda, const float* b,
                 std::int64_t ldb, float* c, std::int64_t ldc, const float* row_bias = nullptr) {
  std::vector<float> packed(static_cast<std::size_t>(k * kPanel));
  std::vector<float> scratch;
  for (std::int64_t pnl = first; pnl < last; ++pnl) {
    const std::int64_t j = pnl * kPanel;
    const std::int64_t width = std::min(kPanel, n - j);
    const std::int64_t padded = (width + kLanes - 1) / kLanes * kLanes;
    for (std::int64_t p = 0; p < k; ++p) {
      float* row = packed.data() + p * padded;
      std::memcpy(row, b + p * ldb + j, static_cast<std::size_t>(width) * sizeof(float));
      std::fill(row + width, row + padded, 0.0f);
    }
    float* cj = c + j;
    std::int64_t ldcj = ldc;
    if (padded != width) {
      scratch.resize(static_cast<std::size_t>(m * padded));
      cj = scratch.data();
      ldcj = padded;
    }
    const float* bj = packed.data();
    switch (padded / kLanes) {
      case 4: gemm_rows<4>(m, k, a, lda, bj, padded, cj, ldcj, row_bias); break;
      case 3: gemm_rows<3>(m, k, a, lda, bj, padded, cj, ldcj, row_bias); break;
      case 2: gemm_rows<2>(m, k, a, lda, bj, padded, cj, ldcj, row_bias); break;
      case 1: gemm_rows<1>(m, k, a, lda, bj, padded, cj, ldcj, row_bias); break;
      default: break;
    }
    if (padded != width) {
      for (std::int64_t i = 0; i < m; ++i) {
        std::memcpy(c + i * ldc + j, scratch.data() + i * padded,
                    static_cast<std::size_t>(width) * sizeof(float));
      }
    }
  }
}

// gemm_ab plus an optional per-row bias added after each sum.
void gemm_ab_bias(std::int64_t m, std::int64_t n, std::int64_t k, const float* a,
                  std::int64_t lda, const float* b, std::int64_t ldb, float* c,
                  std::int64_t ldc, const float* row_bias) {
  const std::int64_t panels = (n + kPanel - 1) / kPanel;
  internal::parallel_for(panels, [&](std::int64_t first, std::int64_t last) {
    gemm_panels(first, last, m, n, k, a, lda, b, ldb, c, ldc, row_bias);
  });
}

// dst(j, i) = src(i, j) for a (rows, cols) block.
void transpose_block(const float* src, std::int64_t rows, std::int64_t cols, std::int64_t lds,
                     float* dst, std::int64_t ldd) {
  constexpr std::int64_t kTile = 16;
  for (std::int64_t i0 = 0; i0 < rows; i0 += kTile) {
    const std::int64_t i1 = std::min(rows, i0 + kTile);
    for (std::int64_t j0 = 0; j0 < cols; j0 += kTile) {
      const std::int64_t j1 = std::min(cols, j0 + kTile);
      for (std::int64_t i = i0; i < i1; ++i) {
        for (std::int64_t j = j0; j < j1; ++j) dst[j * ldd + i] = src[i * lds + j];
      }
    }
  }
}

// out(rows, len) = in(rows, len) * W^T is evaluated as out^T = W * in^T so the
// weight is consumed in its stored orientation; only activations are
// transposed.
void fc_apply(const float* in, std::int64_t rows, const FcLayer& layer, float* out) {
  const std::int64_t in_len = layer.in_len();
  const std::int64_t out_len = layer.out_len();
  const std::int64_t seg_in = in_len / layer.groups;
  const std::int64_t seg_out = out_len / layer.groups;
  std::vector<float> in_t(static_cast<std::size_t>(seg_in * rows));
  std::vector<float> out_t(static_cast<std::size_t>(seg_out * rows));
  for (std::int64_t g = 0; g < layer.groups; ++g) {
    transpose_block(in + g * seg_in, rows, seg_in, in_len, in_t.data(), rows);
    gemm_ab_bias(seg_out, rows, seg_in, layer.weight.data() + g * seg_out * seg_in, seg_in,
                 in_t.data(), rows, out_t.data(), rows,
                 layer.bias ? layer.bias->data() + g * seg_out : nullptr);
    transpose_block(out_t.data(), seg_out, rows, rows, out + g * seg_out, out_len);
  }
}

constexpr std::int64_t kStagedMinOutputs = 8;

// Convs with many outputs per group. For a chunk of output rows, the input
// value under every tap (c, ky, kx) is staged once as row (c * kh + ky) * kw
// + kx of a (cg * kh * kw, len) buffer; one register-tiled product with the
// kernel viewed as (og, cg * kh * kw) then sums the taps in (c, ky, kx) order.
void conv_staged(const Tensor4& input, const ConvLayer& layer, Tensor4& out) {
  const Shape4& os = out.shape();
  const std::int64_t groups = layer.groups;
  const std::int64_t cg = layer.kernel.c();
  const std::int64_t og = os.c / groups;
  const std::int64_t kh = layer.kernel_h(), kw = layer.kernel_w();
  const std::int64_t ih = input.h(), iw = input.w();
  const std::int64_t oh = os.h, ow = os.w;
  const std::int64_t stride = layer.stride, pad = layer.padding;
  const std::int64_t taps = cg * kh * kw;
  const std::int64_t plane_out = oh * ow;

  constexpr std::int64_t kStageFloats = 1 << 16;
  const std::int64_t rows_per_chunk =
      std::clamp<std::int64_t>(kStageFloats / std::max<std::int64_t>(1, taps * ow), 1, oh);
  const std::int64_t chunks = (oh + rows_per_chunk - 1) / rows_per_chunk;
  const std::int64_t tasks = os.n * groups * chunks;

  internal::parallel_for(tasks, [&](std::int64_t first, std::int64_t last) {
    std::vector<float> staged(static_cast<std::size_t>(taps * rows_per_chunk * ow));
    for (std::int64_t task = first; task < last; ++task) {
      const std::int64_t chunk = task % chunks;
      const std::int64_t g = (task / chunks) % groups;
      const std::int64_t i = task / (chunks * groups);
      const std::int64_t row0 = chunk * rows_per_chunk;
      const std::int64_t rows = std::min(rows_per_chunk, oh - row0);
      const std::int64_t len = rows * ow;

      for (std::int64_t cl = 0; cl < cg; ++cl) {
        const float* plane = input.data() + (i * input.c() + g * cg + cl) * ih * iw;
        for (std::int64_t ky = 0; ky < kh; ++ky) {
          for (std::int64_t kx = 0; kx < kw; ++kx) {
            float* dst = staged.data() + ((cl * kh + ky) * kw + kx) * len;
            for (std::int64_t r = 0; r < rows; ++r) {
              float* drow = dst + r * ow;
              const std::int64_t y = (row0 + r) * stride + ky - pad;
              if (y < 0 || y >= ih) {
                std::fill(drow, drow + ow, 0.0f);
                continue;
              }
              const float* srow = plane + y * iw;
              if (stride == 1) {
                // x = ox + kx - pad, valid for ox in [lo, hi).
                const std::int64_t lo = std::clamp<std::int64_t>(pad - kx, 0, ow);
                const std::int64_t hi = std::clamp<std::int64_t>(iw + pad - kx, lo, ow);
                std::fill(drow, drow + lo, 0.0f);
                std::memcpy(drow + lo, srow + lo + kx - pad,
                            static_cast<std::size_t>(hi - lo) * sizeof(float));
                std::fill(drow + hi, drow + ow, 0.0f);
              } else {
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                  const std::int64_t x = ox * stride + kx - pad;
                  drow[ox] = (x >= 0 && x < iw) ? srow[x] : 0.0f;
                }
              }
            }
          }
        }
      }
      float* dst = out.data() + (i * os.c + g * og) * plane_out + row0 * ow;
      const std::int64_t panels = (len + kPanel - 1) / kPanel;
      gemm_panels(0, panels, og, len, taps, layer.kernel.data() + g * og * taps, taps,
                  staged.data(), len, dst, plane_out,
                  layer.bias ? layer.bias->data() + g * og : nullptr);
    }
  });
}

// Depth-wise and other narrow convs: each input plane is copied once into a
// zero-padded buffer and every tap adds a shifted row slice, kernel row and
// column innermost-last so each output sums in (c, ky, kx) order.
void conv_planes(const Tensor4& input, const ConvLayer& layer, Tensor4& out) {
  const Shape4& os = out.shape();
  const std::int64_t groups = layer.groups;
  const std::int64_t cg = layer.kernel.c();
  const std::int64_t og = os.c / groups;
  const std::int64_t kh = layer.kernel_h(), kw = layer.kernel_w();
  const std::int64_t ih = input.h(), iw = input.w();
  const std::int64_t oh = os.h, ow = os.w;
  const std::int64_t stride = layer.stride, pad = layer.padding;
  const std::int64_t ph = ih + 2 * pad, pw = iw + 2 * pad;
  const std::int64_t tasks = os.n * groups;

  internal::parallel_for(tasks, [&](std::int64_t first, std::int64_t last) {
    std::vector<float> padded(static_cast<std::size_t>(ph * pw), 0.0f);
    std::vector<float> acc(static_cast<std::size_t>(oh * ow));
    for (std::int64_t task = first; task < last; ++task) {
      const std::int64_t g = task % groups;
      const std::int64_t i = task / groups;
      for (std::int64_t ob = 0; ob < og; ++ob) {
        const std::int64_t o = g * og + ob;
        std::fill(acc.begin(), acc.end(), 0.0f);
        for (std::int64_t cl = 0; cl < cg; ++cl) {
          const float* plane = input.data() + (i * input.c() + g * cg + cl) * ih * iw;
          for (std::int64_t y = 0; y < ih; ++y) {
            std::memcpy(padded.data() + (y + pad) * pw + pad, plane + y * iw,
                        static_cast<std::size_t>(iw) * sizeof(float));
          }
          const float* f = layer.kernel.data() + (o * cg + cl) * kh * kw;
          for (std::int64_t ky = 0; ky < kh; ++ky) {
            for (std::int64_t kx = 0; kx < kw; ++kx) {
              const float fv = f[ky * kw + kx];
              for (std::int64_t y = 0; y < oh; ++y) {
                const float* src = padded.data() + (y * stride + ky) * pw + kx;
                float* a = acc.data() + y * ow;
                if (stride == 1) {
                  for (std::int64_t x = 0; x < ow; ++x) a[x] += fv * src[x];
                } else {
                  for (std::int64_t x = 0; x < ow; ++x) a[x] += fv * src[x * stride];
                }
              }
            }
          }
        }
        float* dst = out.data() + (i * os.c + o) * oh * ow;
        const float b = layer.bias ? (*layer.bias)[static_cast<std::size_t>(o)] : 0.0f;
        if (layer.bias) {
          for (std::int64_t x = 0; x < oh * ow; ++x) dst[x] = acc[static_cast<std::size_t>(x)] + b;
        } else {
          std::memcpy(dst, acc.data(), static_cast<std::size_t>(oh * ow) * sizeof(float));
        }
      }
    }
  });
}

}  // namespace

void set_num_threads(int threads) { g_threads = std::max(1, threads); }
int num_threads() { return g_threads; }

void gemm_ab(std::int64_t m, std::int64_t n, std::int64_t k, const float* a, std::int64_t lda,
             const float* b, std::int64_t ldb, float* c, std::int64_t ldc) {
  gemm_ab_bias(m, n, k, a, lda, b, ldb, c, ldc, nullptr);
}

void gemm_abt(std::int64_t m, std::int64_t n, std::int64_t k, const float* a, std::int64_t lda,
              const float* b, std::int64_t ldb, float* c, std::int64_t ldc) {
  // C^T = B * A^T.
  std::vector<float> a_t(static_cast<std::size_t>(k * m));
  std::vector<float> c_t(static_cast<std::size_t>(n * m));
  transpose_block(a, m, k, lda, a_t.data(), m);
  gemm_ab(n, m, k, b, ldb, a_t.data(), m, c_t.data(), m);
  transpose_block(c_t.data(), n, m, m, c, ldc);
}

Shape4 conv_output_shape(const Shape4& input, const ConvLayer& layer) {
  layer.validate();
  if (input.c != layer.in_channels()) {
    throw DimensionError("conv2d: channel axis: input has " + std::to_string(input.c) +
                         " channels, layer expects " + std::to_string(layer.in_channels()));
  }
  const std::int64_t span_h = input.h + 2 * layer.padding - layer.kernel_h();
  const std::int64_t span_w = input.w + 2 * layer.padding - layer.kernel_w();
  if (span_h < 0 || span_w < 0) {
    throw ConfigError("conv2d: kernel " + std::to_string(layer.kernel_h()) + "x" +
                      std::to_string(layer.kernel_w()) + " larger than padded input " +
                      input.str());
  }
  return Shape4{input.n, layer.out_channels(), span_h / layer.stride + 1,
                span_w / layer.stride + 1};
}

Tensor4 conv2d(const Tensor4& input, const ConvLayer& layer) {
  const Shape4 os = conv_output_shape(input.shape(), layer);
  Tensor4 out(os);

  const std::int64_t groups = layer.groups;
  const std::int64_t cg = layer.kernel.c();
  const std::int64_t og = layer.out_channels() / groups;
  const bool pointwise = layer.kernel_h() == 1 && layer.kernel_w() == 1 && layer.stride == 1 &&
                         layer.padding == 0;

  if (pointwise && og >= kStagedMinOutputs) {
    // Per sample and group: out(og, hw) = kernel(og, cg) * in(cg, hw).
    const std::int64_t hw = input.h() * input.w();
    for (std::int64_t i = 0; i < os.n; ++i) {
      for (std::int64_t g = 0; g < groups; ++g) {
        float* dst = out.data() + (i * os.c + g * og) * hw;
        gemm_ab_bias(og, hw, cg, layer.kernel.data() + g * og * cg, cg,
                     input.data() + (i * input.c() + g * cg) * hw, hw, dst, hw,
                     layer.bias ? layer.bias->data() + g * og : nullptr);
      }
    }
    return out;
  }

  if (og >= kStagedMinOutputs) {
    conv_staged(input, layer, out);
  } else {
    conv_planes(input, layer, out);
  }
  return out;
}

Matrix fc_forward(const Matrix& input, const FcLayer& layer) {
  layer.validate();
  if (input.cols() != layer.in_len()) {
    throw DimensionError("fc_forward: feature axis: input length " +
                         std::to_string(input.cols()) + " != layer input length " +
                         std::to_string(layer.in_len()));
  }
  Matrix out(input.rows(), layer.out_len());
  fc_apply(input.data(), input.rows(), layer, out.data());
  return out;
}

Tensor4 fc_forward(const Tensor4& input, const FcLayer& layer, std::optional<Shape4> out_shape) {
  layer.validate();
  const std::int64_t in_len = layer.in_len();
  if (in_len == 0 || input.numel() % in_len != 0) {
    throw DimensionError("fc_forward: feature axis: " + std::to_string(input.numel()) +
                         " elements do not split into vectors of length " +
                         std::to_string(in_len));
  }
  const std::int64_t rows = input.numel() / in_len;
  Shape4 shape;
  if (out_shape) {
    shape = *out_shape;
  } else if (layer.out_len() == in_len) {
    shape = input.shape();
  } else {
    shape = Shape4{rows, layer.out_len(), 1, 1};
  }
  if (shape.numel() != rows * layer.out_len()) {
    throw DimensionError("fc_forward: requested output shape " + shape.str() + " holds " +
                         std::to_string(shape.numel()) + " elements, layer produces " +
                         std::to_string(rows * layer.out_len()));
  }
  Tensor4 out(shape);
  fc_apply(input.data(), rows, layer, out.data());
  return out;
}

void bn_inference_inplace(Tensor4& t, const BnParams& bn) {
  bn.validate();
  if (bn.channels() != t.c()) {
    throw DimensionError("bn_inference: channel axis: tensor has " + std::to_string(t.c()) +
                         " channels, bn has " + std::to_string(bn.channels()));
  }
  const std::int64_t plane = t.h() * t.w();
  for (std::int64_t i = 0; i < t.n(); ++i) {
    for (std::int64_t j = 0; j < t.c(); ++j) {
      const auto ju = static_cast<std::size_t>(j);
      const float scale = bn.gamma[ju] / bn.sigma[ju];
      const float mu = bn.mu[ju];
      const float beta = bn.beta[ju];
      float* p = t.data() + (i * t.c() + j) * plane;
      for (std::int64_t x = 0; x < plane; ++x) p[x] = scale * (p[x] - mu) + beta;
    }
  }
}

Tensor4 bn_inference(const Tensor4& input, const BnParams& bn) {
  Tensor4 out = input;
  bn_inference_inplace(out, bn);
  return out;
}

namespace {

// Rational fit of erf on [-4, 4] (odd numerator over even denominator); erf is
// +-1 to float precision outside. Max abs error against std::erf is ~1e-7.
// Evaluated 16 lanes at a time so every element takes the same path.
inline Vec erf_rational(Vec x) {
  const Vec lo = broadcast(-4.0f);
  const Vec hi = broadcast(4.0f);
  x = x < lo ? lo : x;
  x = x > hi ? hi : x;
  const Vec x2 = x * x;
  Vec p = broadcast(-2.72614225801306e-10f);
  p = p * x2 + 2.77068142495902e-08f;
  p = p * x2 + -2.10102402082508e-06f;
  p = p * x2 + -5.69250639462346e-05f;
  p = p * x2 + -7.34990630326855e-04f;
  p = p * x2 + -2.95459980854025e-03f;
  p = p * x2 + -1.60960333262415e-02f;
  Vec q = broadcast(-1.45660718464996e-05f);
  q = q * x2 + -2.13374055278905e-04f;
  q = q * x2 + -1.68282697438203e-03f;
  q = q * x2 + -7.37332916720468e-03f;
  q = q * x2 + -1.42647390514189e-02f;
  return x * p / q;
}

// x * Phi(x) with Phi(x) = (1 + erf(x / sqrt(2))) / 2.
inline Vec gelu_vec(Vec x) {
  return 0.5f * x * (1.0f + erf_rational(x * 0.70710678118654752f));
}

void gelu_span(float* p, std::int64_t count) {
  std::int64_t i = 0;
  for (; i + kLanes <= count; i += kLanes) store(p + i, gelu_vec(load(p + i)));
  if (i < count) {
    float tail[kLanes] = {};
    std::memcpy(tail, p + i, static_cast<std::size_t>(count - i) * sizeof(float));
    store(tail, gelu_vec(load(tail)));
    std::memcpy(p + i, tail, static_cast<std::size_t>(count - i) * sizeof(float));
  }
}

}  // namespace

float gelu(float x) {
  float v = x;
  gelu_span(&v, 1);
  return v;
}

void activation_inplace(Tensor4& t, Activation kind) {
  float* p = t.data();
  const std::int64_t count = t.numel();
  switch (kind) {
    case Activation::kRelu:
      for (std::int64_t i = 0; i < count; ++i) p[i] = std::max(p[i], 0.0f);
      break;
    case Activation::kGelu:
      gelu_span(p, count);
      break;
  }
}

Tensor4 activation(const Tensor4& input, Activation kind) {
  Tensor4 out = input;
  activation_inplace(out, kind);
  return out;
}

Tensor4 global_avg_pool(const Tensor4& input) {
  const std::int64_t plane = input.h() * input.w();
  if (plane < 1) throw DimensionError("global_avg_pool: empty spatial axes");
  Tensor4 out(Shape4{input.n(), input.c(), 1, 1});
  for (std::int64_t ij = 0; ij < input.n() * input.c(); ++ij) {
    const float* p = input.data() + ij * plane;
    float s = 0.0f;
    for (std::int64_t x = 0; x < plane; ++x) s += p[x];
    out.data()[ij] = s / static_cast<float>(plane);
  }
  return out;
}

void add_inplace(Tensor4& a, const Tensor4& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape " + a.shape().str() + " vs " + b.shape().str());
  }
  float* pa = a.data();
  const float* pb = b.data();
  for (std::int64_t i = 0; i < a.numel(); ++i) pa[i] += pb[i];
}

void broadcast_add_inplace(Tensor4& t, const Tensor4& per_channel) {
  if (per_channel.n() != t.n() || per_channel.c() != t.c() || per_channel.h() != 1 ||
      per_channel.w() != 1) {
    throw DimensionError("broadcast_add: expected (" + std::to_string(t.n()) + ", " +
                         std::to_string(t.c()) + ", 1, 1), got " + per_channel.shape().str());
  }
  const std::int64_t plane = t.h() * t.w();
  for (std::int64_t ij = 0; ij < t.n() * t.c(); ++ij) {
    const float v = per_channel.data()[ij];
    float* p = t.data() + ij * plane;
    for (std::int64_t x = 0; x < plane; ++x) p[x] += v;
  }
}

Tensor4 split_patches(const Tensor4& input, std::int64_t ph, std::int64_t pw) {
  if (ph < 1 || pw < 1 || input.h() % ph != 0 || input.w() % pw != 0) {
    throw ConfigError("split_patches: patch " + std::to_string(ph) + "x" + std::to_string(pw) +
                      " does not tile " + std::to_string(input.h()) + "x" +
                      std::to_string(input.w()));
  }
  const std::int64_t gh = input.h() / ph;
  const std::int64_t gw = input.w() / pw;
  if (gh == 1 && gw == 1) return input;
  Tensor4 out(Shape4{input.n() * gh * gw, input.c(), ph, pw});
  for (std::int64_t i = 0; i < input.n(); ++i) {
    for (std::int64_t py = 0; py < gh; ++py) {
      for (std::int64_t px = 0; px < gw; ++px) {
        const std::int64_t pi = (i * gh + py) * gw + px;
        for (std::int64_t j = 0; j < input.c(); ++j) {
          for (std::int64_t u = 0; u < ph; ++u) {
            const float* src = &input.at(i, j, py * ph + u, px * pw);
            std::memcpy(&out.at(pi, j, u, 0), src, static_cast<std::size_t>(pw) * sizeof(float));
          }
        }
      }
    }
  }
  return out;
}

Tensor4 restore_patches(const Tensor4& patches, std::int64_t h, std::int64_t w) {
  const std::int64_t ph = patches.h();
  const std::int64_t pw = patches.w();
  if (ph < 1 || pw < 1 || h % ph != 0 || w % pw != 0) {
    throw ConfigError("restore_patches: patch " + std::to_string(ph) + "x" +
                      std::to_string(pw) + " does not tile " + std::to_string(h) + "x" +
                      std::to_string(w));
  }
  const std::int64_t gh = h / ph;
  const std::int64_t gw = w / pw;
  if (patches.n() % (gh * gw) != 0) {
    throw DimensionError("restore_patches: batch axis: " + std::to_string(patches.n()) +
                         " patches is not a multiple of the grid " + std::to_string(gh) + "x" +
                         std::to_string(gw));
  }
  if (gh == 1 && gw == 1) return patches;
  const std::int64_t n = patches.n() / (gh * gw);
  Tensor4 out(Shape4{n, patches.c(), h, w});
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t py = 0; py < gh; ++py) {
      for (std::int64_t px = 0; px < gw; ++px) {
        const std::int64_t pi = (i * gh + py) * gw + px;
        for (std::int64_t j = 0; j < patches.c(); ++j) {
          for (std::int64_t u = 0; u < ph; ++u) {
            std::memcpy(&out.at(i, j, py * ph + u, px * pw), &patches.at(pi, j, u, 0),
                        static_cast<std::size_t>(pw) * sizeof(float));
          }
        }
      }
    }
  }
  return out;
}

}  // namespace repmlp
