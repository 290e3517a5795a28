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

#include "repmlp/reparam.h"

#include <string>

#include "repmlp/errors.h"
#include "repmlp/ops.h"

namespace repmlp {

namespace {

// One-hot feature maps: sample i has a single 1 at flat position i.
Tensor4 identity_maps(std::int64_t c, std::int64_t h, std::int64_t w) {
  const std::int64_t len = c * h * w;
  return to_tensor(Matrix::identity(len), Shape4{len, c, h, w});
}

void check_dims(const ConvLayer& layer, std::int64_t c, std::int64_t h, std::int64_t w) {
  if (c < 1 || h < 1 || w < 1) throw DimensionError("conv_to_fc: empty feature map");
  if (c != layer.in_channels()) {
    throw DimensionError("conv_to_fc: channel axis: c = " + std::to_string(c) +
                         " but layer takes " + std::to_string(layer.in_channels()));
  }
}

void check_depthwise(const ConvLayer& layer) {
  if (layer.kernel.c() != 1 || layer.groups != layer.out_channels()) {
    throw UnsupportedConfigError("expected a depth-wise kernel (s, 1, k, k) with s groups, got " +
                                 layer.kernel.shape().str() + " with " +
                                 std::to_string(layer.groups) + " groups");
  }
}

ConvLayer without_bias(const ConvLayer& layer) {
  ConvLayer bare;
  bare.kernel = layer.kernel;
  bare.padding = layer.padding;
  bare.stride = layer.stride;
  bare.groups = layer.groups;
  return bare;
}

}  // namespace

void check_mergeable(const ConvLayer& layer) {
  layer.validate();
  if (layer.stride != 1) {
    throw UnsupportedConfigError("merge requires stride 1, got " + std::to_string(layer.stride));
  }
  const std::int64_t k = layer.kernel_h();
  if (k != layer.kernel_w()) {
    throw UnsupportedConfigError("merge requires a square kernel");
  }
  if (k % 2 == 0) {
    throw UnsupportedConfigError("merge requires an odd kernel, got " + std::to_string(k));
  }
  if (2 * layer.padding != k - 1) {
    throw UnsupportedConfigError("padding " + std::to_string(layer.padding) +
                                 " changes the spatial size of a " + std::to_string(k) + "x" +
                                 std::to_string(k) + " conv");
  }
}

ToeplitzResult conv_to_fc(const ConvLayer& layer, std::int64_t c, std::int64_t h,
                          std::int64_t w) {
  check_mergeable(layer);
  check_dims(layer, c, h, w);
  const std::int64_t hw = h * w;
  const std::int64_t o = layer.out_channels();
  const std::int64_t g = layer.groups;
  const std::int64_t cg = c / g;
  const std::int64_t og = o / g;

  ToeplitzResult result;
  result.layout = ToeplitzLayout::kDense;
  result.kernel = layer.kernel_h();
  result.padding = layer.padding;
  result.groups = layer.groups;
  result.weight = Matrix(o * hw, c * hw);

  // Per group: a dense conv over the group's channels applied to cg*hw
  // one-hot maps, transposed into the diagonal block.
  const Tensor4 eye = identity_maps(cg, h, w);
  for (std::int64_t gi = 0; gi < g; ++gi) {
    ConvLayer part;
    part.padding = layer.padding;
    const std::int64_t per_out = cg * layer.kernel_h() * layer.kernel_w();
    std::vector<float> slice(layer.kernel.data() + gi * og * per_out,
                             layer.kernel.data() + (gi + 1) * og * per_out);
    part.kernel = Tensor4(Shape4{og, cg, layer.kernel_h(), layer.kernel_w()}, std::move(slice));
    const Matrix cols = to_matrix(conv2d(eye, part), cg * hw, og * hw);
    for (std::int64_t r = 0; r < cg * hw; ++r) {
      for (std::int64_t q = 0; q < og * hw; ++q) {
        result.weight(gi * og * hw + q, gi * cg * hw + r) = cols(r, q);
      }
    }
  }
  return result;
}

ToeplitzResult conv_to_fc_sets(const ConvLayer& layer, std::int64_t h, std::int64_t w) {
  check_mergeable(layer);
  check_depthwise(layer);
  if (h < 1 || w < 1) throw DimensionError("conv_to_fc_sets: empty feature map");
  const std::int64_t s = layer.out_channels();
  const std::int64_t hw = h * w;

  // Every kernel channel convolves the same single-channel one-hot batch:
  // (hw, 1, h, w) -> (hw, s, h, w) -> (hw, s*hw) -> transpose.
  ConvLayer dense;
  dense.kernel = layer.kernel;
  dense.padding = layer.padding;
  const Matrix cols = to_matrix(conv2d(identity_maps(1, h, w), dense), hw, s * hw);

  ToeplitzResult result;
  result.layout = ToeplitzLayout::kSetStacked;
  result.kernel = layer.kernel_h();
  result.padding = layer.padding;
  result.groups = layer.groups;
  result.weight = cols.transposed();
  return result;
}

Matrix toeplitz_oracle(const ConvLayer& layer, std::int64_t c, std::int64_t h, std::int64_t w) {
  check_mergeable(layer);
  check_dims(layer, c, h, w);
  const std::int64_t o = layer.out_channels();
  const std::int64_t cg = layer.kernel.c();
  const std::int64_t og = o / layer.groups;
  const std::int64_t k = layer.kernel_h();
  const std::int64_t p = layer.padding;
  Matrix m(o * h * w, c * h * w);
  for (std::int64_t oc = 0; oc < o; ++oc) {
    const std::int64_t base = (oc / og) * cg;
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const std::int64_t row = (oc * h + y) * w + x;
        for (std::int64_t ci = base; ci < base + cg; ++ci) {
          for (std::int64_t u = 0; u < h; ++u) {
            const std::int64_t ky = u - y + p;
            if (ky < 0 || ky >= k) continue;
            for (std::int64_t v = 0; v < w; ++v) {
              const std::int64_t kx = v - x + p;
              if (kx < 0 || kx >= k) continue;
              m(row, (ci * h + u) * w + v) = layer.kernel.at(oc, ci - base, ky, kx);
            }
          }
        }
      }
    }
  }
  return m;
}

Matrix toeplitz_oracle_sets(const ConvLayer& layer, std::int64_t h, std::int64_t w) {
  check_mergeable(layer);
  check_depthwise(layer);
  const std::int64_t s = layer.out_channels();
  const std::int64_t hw = h * w;
  const std::int64_t k = layer.kernel_h();
  const std::int64_t p = layer.padding;
  Matrix m(s * hw, hw);
  for (std::int64_t set = 0; set < s; ++set) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        for (std::int64_t u = 0; u < h; ++u) {
          for (std::int64_t v = 0; v < w; ++v) {
            const std::int64_t ky = u - y + p;
            const std::int64_t kx = v - x + p;
            if (ky < 0 || ky >= k || kx < 0 || kx >= k) continue;
            m(set * hw + y * w + x, u * w + v) = layer.kernel.at(set, 0, ky, kx);
          }
        }
      }
    }
  }
  return m;
}

ConvLayer fuse_bn_conv(const ConvLayer& layer, const BnParams& bn) {
  layer.validate();
  bn.validate();
  const std::int64_t o = layer.out_channels();
  if (bn.channels() != o) {
    throw DimensionError("fuse_bn_conv: channel axis: bn has " + std::to_string(bn.channels()) +
                         " channels, conv has " + std::to_string(o) + " outputs");
  }
  ConvLayer fused = without_bias(layer);
  std::vector<float> bias(static_cast<std::size_t>(o));
  const std::int64_t per_out = layer.kernel.numel() / o;
  for (std::int64_t i = 0; i < o; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    const float t = bn.gamma[iu] / bn.sigma[iu];
    float* f = fused.kernel.data() + i * per_out;
    for (std::int64_t e = 0; e < per_out; ++e) f[e] *= t;
    bias[iu] = -bn.mu[iu] * t + bn.beta[iu];
    if (layer.bias) bias[iu] += t * (*layer.bias)[iu];
  }
  fused.bias = std::move(bias);
  return fused;
}

FcLayer fuse_bn_grouped_fc(const FcLayer& fc, const BnParams& bn, std::int64_t hw) {
  fc.validate();
  bn.validate();
  const std::int64_t s = bn.channels();
  if (fc.weight.rows() != s * hw || fc.weight.cols() != hw) {
    throw DimensionError("fuse_bn_grouped_fc: weight must be (" + std::to_string(s * hw) + ", " +
                         std::to_string(hw) + "), got (" + std::to_string(fc.weight.rows()) +
                         ", " + std::to_string(fc.weight.cols()) + ")");
  }
  FcLayer fused;
  fused.groups = fc.groups;
  fused.weight = fc.weight;
  std::vector<float> bias(static_cast<std::size_t>(s * hw));
  for (std::int64_t i = 0; i < s; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    const float t = bn.gamma[iu] / bn.sigma[iu];
    const float shift = -bn.mu[iu] * t + bn.beta[iu];
    for (std::int64_t r = i * hw; r < (i + 1) * hw; ++r) {
      for (float& v : fused.weight.row(r)) v *= t;
      const auto ru = static_cast<std::size_t>(r);
      bias[ru] = shift;
      if (fc.bias) bias[ru] += t * (*fc.bias)[ru];
    }
  }
  fused.bias = std::move(bias);
  return fused;
}

FcLayer merge_local_into_channel(const FcLayer& fc3, const BnParams& bn3,
                                 const std::vector<ConvBnBranch>& branches, std::int64_t s,
                                 std::int64_t h, std::int64_t w) {
  const std::int64_t hw = h * w;
  if (fc3.groups != s) {
    throw DimensionError("merge: fc3 has " + std::to_string(fc3.groups) + " groups, expected s = " +
                         std::to_string(s));
  }
  if (bn3.channels() != s) {
    throw DimensionError("merge: bn3 has " + std::to_string(bn3.channels()) +
                         " channels, expected s = " + std::to_string(s));
  }
  FcLayer merged = fuse_bn_grouped_fc(fc3, bn3, hw);
  std::vector<float>& bias = *merged.bias;
  for (const ConvBnBranch& branch : branches) {
    check_mergeable(branch.conv);
    check_depthwise(branch.conv);
    if (branch.conv.out_channels() != s) {
      throw DimensionError("merge: branch has " + std::to_string(branch.conv.out_channels()) +
                           " channels, expected s = " + std::to_string(s));
    }
    const ConvLayer fused = fuse_bn_conv(branch.conv, branch.bn);
    const Matrix t = conv_to_fc_sets(fused, h, w).weight;
    float* dst = merged.weight.data();
    const float* src = t.data();
    for (std::int64_t e = 0; e < t.numel(); ++e) dst[e] += src[e];
    for (std::int64_t i = 0; i < s; ++i) {
      const float b = (*fused.bias)[static_cast<std::size_t>(i)];
      for (std::int64_t r = i * hw; r < (i + 1) * hw; ++r) bias[static_cast<std::size_t>(r)] += b;
    }
  }
  return merged;
}

}  // namespace repmlp
