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

#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "repmlp/errors.h"
#include "repmlp/layers.h"
#include "repmlp/ops.h"
#include "repmlp/tensor.h"
#include "test_util.h"

namespace repmlp {
namespace {

using testing::Gen;

std::vector<float> iota_values(std::int64_t n) {
  std::vector<float> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0.0f);
  return v;
}

TEST(Tensor4Test, LengthMustMatchShape) {
  EXPECT_THROW(Tensor4(Shape4{1, 2, 2, 2}, std::vector<float>(7)), DimensionError);
  Tensor4 t(Shape4{2, 3, 4, 5});
  EXPECT_EQ(t.numel(), 120);
}

TEST(Tensor4Test, IndexIsRowMajorNchw) {
  Tensor4 t(Shape4{2, 3, 4, 5}, iota_values(120));
  EXPECT_EQ(t.at(1, 2, 3, 4), 119.0f);
  EXPECT_EQ(t.at(1, 0, 2, 1), static_cast<float>(((1 * 3 + 0) * 4 + 2) * 5 + 1));
}

TEST(ReshapeTest, FlattenKeepsOrder) {
  Tensor4 t(Shape4{1, 2, 2, 2}, iota_values(8));
  Matrix m = to_matrix(t, 1, 8);
  for (int i = 0; i < 8; ++i) EXPECT_EQ(m(0, i), static_cast<float>(i));
}

TEST(ReshapeTest, MoveReshapeKeepsBuffer) {
  Tensor4 t(Shape4{1, 2, 2, 2}, iota_values(8));
  const float* before = t.data();
  Tensor4 r = reshape(std::move(t), Shape4{8, 1, 1, 1});
  EXPECT_EQ(r.data(), before);
}

TEST(ReshapeTest, IdentityMatrixToOneHotMaps) {
  const std::int64_t c = 2, h = 3, w = 2, len = c * h * w;
  Tensor4 maps = to_tensor(Matrix::identity(len), Shape4{len, c, h, w});
  for (std::int64_t i = 0; i < len; ++i) {
    const std::int64_t j = i / (h * w), u = (i / w) % h, v = i % w;
    float sum = 0.0f;
    for (float x : std::span<const float>(maps.data() + i * len, len)) sum += x;
    EXPECT_EQ(sum, 1.0f);
    EXPECT_EQ(maps.at(i, j, u, v), 1.0f);
  }
  Matrix back = to_matrix(maps, len, len);
  EXPECT_EQ(max_abs_diff(back.values(), Matrix::identity(len).values()), 0.0f);
}

TEST(ReshapeTest, RoundTripIsBitExact) {
  Gen gen(7);
  for (int trial = 0; trial < 50; ++trial) {
    Shape4 s{gen.pick(1, 3), gen.pick(1, 4), gen.pick(1, 5), gen.pick(1, 5)};
    Tensor4 t = gen.tensor(s);
    Tensor4 r = reshape(reshape(t, Shape4{s.numel(), 1, 1, 1}), s);
    ASSERT_EQ(r.shape(), s);
    ASSERT_TRUE(std::equal(t.values().begin(), t.values().end(), r.values().begin()));
  }
}

TEST(ReshapeTest, CountMismatchThrows) {
  Tensor4 t(Shape4{1, 2, 2, 2});
  EXPECT_THROW(reshape(t, Shape4{1, 3, 3, 1}), DimensionError);
  EXPECT_THROW(to_matrix(t, 3, 3), DimensionError);
}

TEST(Conv2dTest, ZeroInputGivesZero) {
  Gen gen(1);
  ConvLayer layer = gen.conv(2, 1, 3, 1);
  Tensor4 out = conv2d(Tensor4(Shape4{1, 1, 4, 4}), layer);
  EXPECT_EQ(out.shape(), (Shape4{1, 2, 4, 4}));
  EXPECT_EQ(max_abs(out.values()), 0.0f);
}

TEST(Conv2dTest, UnitKernelIsIdentity) {
  Gen gen(2);
  ConvLayer layer;
  layer.kernel = Tensor4(Shape4{1, 1, 1, 1}, 1.0f);
  Tensor4 in = gen.tensor(Shape4{2, 1, 5, 3});
  Tensor4 out = conv2d(in, layer);
  EXPECT_EQ(max_abs_diff(out.values(), in.values()), 0.0f);
}

TEST(Conv2dTest, AllOnesThreeByThreeOnTwoByTwo) {
  ConvLayer layer;
  layer.kernel = Tensor4(Shape4{1, 1, 3, 3}, 1.0f);
  layer.padding = 1;
  Tensor4 out = conv2d(Tensor4(Shape4{1, 1, 2, 2}, 1.0f), layer);
  ASSERT_EQ(out.shape(), (Shape4{1, 1, 2, 2}));
  for (float v : out.values()) EXPECT_EQ(v, 4.0f);
}

TEST(Conv2dTest, BiasAddedPerChannel) {
  ConvLayer layer;
  layer.kernel = Tensor4(Shape4{2, 1, 1, 1}, 0.0f);
  layer.bias = std::vector<float>{1.5f, -2.0f};
  Tensor4 out = conv2d(Tensor4(Shape4{1, 1, 2, 2}, 3.0f), layer);
  EXPECT_EQ(out.at(0, 0, 1, 1), 1.5f);
  EXPECT_EQ(out.at(0, 1, 0, 0), -2.0f);
}

TEST(Conv2dTest, MatchesReferenceOnRandomShapes) {
  Gen gen(11);
  for (int trial = 0; trial < 60; ++trial) {
    const int g = static_cast<int>(gen.one_of<std::int64_t>({1, 2, 4}));
    const std::int64_t c = g * gen.pick(1, 3);
    const std::int64_t o = g * gen.pick(1, 3);
    const std::int64_t k = gen.pick(1, 5);
    const int p = static_cast<int>(gen.pick(0, 2));
    const int stride = static_cast<int>(gen.pick(1, 3));
    const std::int64_t h = gen.pick(k, 12), w = gen.pick(k, 12);
    ConvLayer layer = gen.conv(o, c, k, p, g, stride, trial % 2 == 0);
    Tensor4 in = gen.tensor(Shape4{gen.pick(1, 3), c, h, w});
    Tensor4 got = conv2d(in, layer);
    Tensor4 want = testing::reference_conv(in, layer);
    ASSERT_EQ(got.shape(), want.shape());
    EXPECT_LE(max_abs_diff(got.values(), want.values()), 1e-5f) << "trial " << trial;
  }
}

TEST(Conv2dTest, LargePointwiseMatchesReference) {
  Gen gen(12);
  ConvLayer layer = gen.conv(37, 70, 1, 0, 1, 1, true);
  Tensor4 in = gen.tensor(Shape4{2, 70, 9, 11});
  EXPECT_LE(max_abs_diff(conv2d(in, layer).values(), testing::reference_conv(in, layer).values()),
            1e-5f);
}

TEST(Conv2dTest, IsLinear) {
  Gen gen(13);
  for (int trial = 0; trial < 30; ++trial) {
    const std::int64_t c = gen.pick(1, 4), k = gen.one_of<std::int64_t>({1, 3, 5});
    ConvLayer layer = gen.conv(gen.pick(1, 4), c, k, static_cast<int>((k - 1) / 2));
    Shape4 shape{2, c, gen.pick(1, 9), gen.pick(1, 9)};
    Tensor4 x = gen.tensor(shape), y = gen.tensor(shape);
    const float a = gen.uniform(-2, 2), b = gen.uniform(-2, 2);
    Tensor4 mix(shape);
    for (std::int64_t i = 0; i < mix.numel(); ++i) {
      mix.data()[i] = a * x.data()[i] + b * y.data()[i];
    }
    Tensor4 lhs = conv2d(mix, layer);
    Tensor4 cx = conv2d(x, layer), cy = conv2d(y, layer);
    float worst = 0.0f;
    for (std::int64_t i = 0; i < lhs.numel(); ++i) {
      const float rhs = a * cx.data()[i] + b * cy.data()[i];
      worst = std::max(worst, std::abs(lhs.data()[i] - rhs) / std::max(1.0f, std::abs(rhs)));
    }
    EXPECT_LE(worst, 1e-5f);
  }
}

TEST(Conv2dTest, GroupedEqualsDenseSlices) {
  Gen gen(14);
  for (int trial = 0; trial < 20; ++trial) {
    const int g = static_cast<int>(gen.pick(2, 4));
    const std::int64_t cg = gen.pick(1, 3), og = gen.pick(1, 3), k = gen.one_of<std::int64_t>({1, 3});
    ConvLayer grouped = gen.conv(g * og, g * cg, k, static_cast<int>(k / 2), g);
    Tensor4 in = gen.tensor(Shape4{2, g * cg, 6, 5});
    Tensor4 out = conv2d(in, grouped);
    for (int gi = 0; gi < g; ++gi) {
      ConvLayer part;
      part.padding = grouped.padding;
      const std::int64_t per = og * cg * k * k;
      part.kernel = Tensor4(Shape4{og, cg, k, k},
                            std::vector<float>(grouped.kernel.data() + gi * per,
                                               grouped.kernel.data() + (gi + 1) * per));
      Tensor4 slice(Shape4{2, cg, 6, 5});
      for (std::int64_t i = 0; i < 2; ++i)
        for (std::int64_t j = 0; j < cg; ++j)
          for (std::int64_t u = 0; u < 6; ++u)
            for (std::int64_t v = 0; v < 5; ++v) slice.at(i, j, u, v) = in.at(i, gi * cg + j, u, v);
      Tensor4 dense = conv2d(slice, part);
      float worst = 0.0f;
      for (std::int64_t i = 0; i < 2; ++i)
        for (std::int64_t j = 0; j < og; ++j)
          for (std::int64_t u = 0; u < 6; ++u)
            for (std::int64_t v = 0; v < 5; ++v)
              worst = std::max(worst, std::abs(dense.at(i, j, u, v) - out.at(i, gi * og + j, u, v)));
      EXPECT_LE(worst, 1e-6f);
    }
  }
}

TEST(Conv2dTest, ChannelMismatchNamesAxis) {
  ConvLayer layer;
  layer.kernel = Tensor4(Shape4{1, 2, 1, 1});
  try {
    conv2d(Tensor4(Shape4{1, 3, 2, 2}), layer);
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos);
  }
}

TEST(Conv2dTest, KernelLargerThanPaddedInputThrows) {
  ConvLayer layer;
  layer.kernel = Tensor4(Shape4{1, 1, 5, 5});
  EXPECT_THROW(conv2d(Tensor4(Shape4{1, 1, 2, 2}), layer), ConfigError);
}

TEST(Conv2dTest, IndivisibleGroupsThrow) {
  ConvLayer layer;
  layer.kernel = Tensor4(Shape4{3, 1, 1, 1});
  layer.groups = 2;
  EXPECT_THROW(conv2d(Tensor4(Shape4{1, 2, 2, 2}), layer), ConfigError);
}

TEST(Conv2dTest, ResultDoesNotDependOnBatchOrThreads) {
  Gen gen(15);
  ConvLayer layer = gen.conv(24, 24, 3, 1, 24, 1, true);
  ConvLayer dense = gen.conv(16, 24, 3, 1);
  Tensor4 in = gen.tensor(Shape4{4, 24, 13, 13});
  Tensor4 single(Shape4{1, 24, 13, 13},
                 std::vector<float>(in.data() + 2 * 24 * 169, in.data() + 3 * 24 * 169));
  for (const ConvLayer* l : {&layer, &dense}) {
    set_num_threads(1);
    Tensor4 a = conv2d(in, *l);
    set_num_threads(3);
    Tensor4 b = conv2d(in, *l);
    Tensor4 one = conv2d(single, *l);
    set_num_threads(1);
    EXPECT_EQ(max_abs_diff(a.values(), b.values()), 0.0f);
    const std::int64_t per = one.numel();
    EXPECT_TRUE(std::equal(one.values().begin(), one.values().end(), a.data() + 2 * per));
  }
}

TEST(FcTest, IdentityWeightReproducesInput) {
  Gen gen(21);
  Tensor4 in = gen.tensor(Shape4{3, 2, 2, 3});
  FcLayer fc;
  fc.weight = Matrix::identity(12);
  Tensor4 out = fc_forward(in, fc);
  EXPECT_EQ(out.shape(), in.shape());
  EXPECT_EQ(max_abs_diff(out.values(), in.values()), 0.0f);
}

TEST(FcTest, HandComputedProduct) {
  FcLayer fc;
  fc.weight = Matrix(2, 2, {1, 1, 0, 3});
  fc.bias = std::vector<float>{0, 0};
  Matrix out = fc_forward(Matrix(1, 2, {1, 2}), fc);
  EXPECT_EQ(out(0, 0), 3.0f);
  EXPECT_EQ(out(0, 1), 6.0f);
}

TEST(FcTest, GroupedScalarSets) {
  FcLayer fc;
  fc.weight = Matrix(2, 1, {2, 3});
  fc.groups = 2;
  Tensor4 out = fc_forward(Tensor4(Shape4{1, 2, 1, 1}, {5, 7}), fc);
  EXPECT_EQ(out.at(0, 0, 0, 0), 10.0f);
  EXPECT_EQ(out.at(0, 1, 0, 0), 21.0f);
}

TEST(FcTest, MatchesReferenceDenseAndGrouped) {
  Gen gen(22);
  for (int trial = 0; trial < 40; ++trial) {
    const int groups = static_cast<int>(gen.pick(1, 4));
    const std::int64_t hw = gen.pick(1, 40);
    FcLayer fc;
    fc.groups = groups;
    fc.weight = groups == 1 ? gen.matrix(gen.pick(1, 70), hw) : gen.matrix(groups * hw, hw);
    if (trial % 2) fc.bias = gen.vec(fc.out_len());
    const std::int64_t rows = gen.pick(1, 9);
    Matrix in = gen.matrix(rows, fc.in_len());
    Matrix out = fc_forward(in, fc);
    for (std::int64_t r = 0; r < rows; ++r) {
      std::vector<float> want;
      for (int g = 0; g < groups; ++g) {
        const std::int64_t seg_out = fc.out_len() / groups;
        Matrix wg(seg_out, fc.weight.cols(),
                  std::vector<float>(fc.weight.data() + g * seg_out * fc.weight.cols(),
                                     fc.weight.data() + (g + 1) * seg_out * fc.weight.cols()));
        std::vector<float> seg(in.data() + r * fc.in_len() + g * fc.weight.cols(),
                               in.data() + r * fc.in_len() + (g + 1) * fc.weight.cols());
        std::vector<float> part = testing::reference_fc(seg, wg, nullptr);
        want.insert(want.end(), part.begin(), part.end());
      }
      if (fc.bias) {
        for (std::size_t i = 0; i < want.size(); ++i) want[i] += (*fc.bias)[i];
      }
      EXPECT_LE(max_abs_diff(out.row(r), want), 2e-5f) << "trial " << trial;
    }
  }
}

TEST(FcTest, LengthMismatchThrows) {
  FcLayer fc;
  fc.weight = Matrix(3, 4);
  EXPECT_THROW(fc_forward(Tensor4(Shape4{1, 1, 1, 5}), fc), DimensionError);
  EXPECT_THROW(fc_forward(Matrix(2, 3), fc), DimensionError);
}

TEST(GemmTest, MatchesNaiveProduct) {
  Gen gen(23);
  for (int trial = 0; trial < 30; ++trial) {
    const std::int64_t m = gen.pick(1, 40), n = gen.pick(1, 150), k = gen.pick(1, 70);
    Matrix a = gen.matrix(m, k), b = gen.matrix(k, n), bt = b.transposed();
    Matrix c(m, n), d(m, n);
    gemm_ab(m, n, k, a.data(), k, b.data(), n, c.data(), n);
    gemm_abt(m, n, k, a.data(), k, bt.data(), k, d.data(), n);
    float worst = 0.0f;
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::int64_t p = 0; p < k; ++p) acc += static_cast<double>(a(i, p)) * b(p, j);
        worst = std::max(worst, std::abs(c(i, j) - static_cast<float>(acc)));
        ASSERT_EQ(c(i, j), d(i, j));
      }
    }
    EXPECT_LE(worst, 1e-5f);
  }
}

TEST(BnTest, IdentityIsNoop) {
  Gen gen(31);
  Tensor4 in = gen.tensor(Shape4{2, 3, 4, 4});
  EXPECT_EQ(max_abs_diff(bn_inference(in, BnParams::identity(3)).values(), in.values()), 0.0f);
}

TEST(BnTest, HandComputedValue) {
  BnParams bn{{1.0f}, {2.0f}, {4.0f}, {0.5f}};
  Tensor4 out = bn_inference(Tensor4(Shape4{1, 1, 1, 1}, 3.0f), bn);
  EXPECT_FLOAT_EQ(out.at(0, 0, 0, 0), 4.5f);
}

TEST(BnTest, CenteredInputGivesBeta) {
  BnParams bn{{0.3f, -1.0f}, {0.7f, 2.0f}, {1.3f, 0.2f}, {0.25f, -4.0f}};
  Tensor4 in(Shape4{2, 2, 3, 3});
  for (std::int64_t i = 0; i < 2; ++i)
    for (std::int64_t j = 0; j < 2; ++j)
      for (std::int64_t u = 0; u < 3; ++u)
        for (std::int64_t v = 0; v < 3; ++v) in.at(i, j, u, v) = bn.mu[static_cast<std::size_t>(j)];
  Tensor4 out = bn_inference(in, bn);
  EXPECT_EQ(out.at(1, 0, 2, 2), 0.25f);
  EXPECT_EQ(out.at(0, 1, 1, 0), -4.0f);
}

TEST(BnTest, NonPositiveSigmaThrows) {
  BnParams bn{{0.0f}, {0.0f}, {1.0f}, {0.0f}};
  EXPECT_THROW(bn_inference(Tensor4(Shape4{1, 1, 1, 1}), bn), ParameterError);
  bn.sigma[0] = -1.0f;
  EXPECT_THROW(bn_inference(Tensor4(Shape4{1, 1, 1, 1}), bn), ParameterError);
}

TEST(BnTest, SigmaIncludesEpsilon) {
  BnParams bn = BnParams::from_running_var({0.0f}, {0.0f}, {1.0f}, {0.0f});
  EXPECT_FLOAT_EQ(bn.sigma[0], std::sqrt(BnParams::kEps));
}

TEST(ActivationTest, Relu) {
  Tensor4 out = activation(Tensor4(Shape4{1, 1, 1, 2}, {-1.0f, 2.0f}), Activation::kRelu);
  EXPECT_EQ(out.at(0, 0, 0, 0), 0.0f);
  EXPECT_EQ(out.at(0, 0, 0, 1), 2.0f);
}

TEST(ActivationTest, GeluKnownValues) {
  EXPECT_EQ(gelu(0.0f), 0.0f);
  EXPECT_NEAR(gelu(1.0f), 0.8413, 1e-4);
  EXPECT_NEAR(gelu(-1.0f), -0.1587, 1e-4);
}

TEST(ActivationTest, GeluMatchesExactCdfForm) {
  Gen gen(32);
  Tensor4 in = gen.tensor(Shape4{1, 1, 1, 1001}, -8.0f, 8.0f);
  Tensor4 out = activation(in, Activation::kGelu);
  for (std::int64_t i = 0; i < in.numel(); ++i) {
    const double x = in.data()[i];
    const double want = 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
    EXPECT_NEAR(out.data()[i], want, 2e-6) << "x = " << x;
    EXPECT_EQ(out.data()[i], gelu(in.data()[i]));
  }
}

TEST(PoolTest, ConstantAndMean) {
  Tensor4 c = global_avg_pool(Tensor4(Shape4{2, 3, 4, 5}, 1.75f));
  EXPECT_EQ(c.shape(), (Shape4{2, 3, 1, 1}));
  for (float v : c.values()) EXPECT_FLOAT_EQ(v, 1.75f);
  Tensor4 m = global_avg_pool(Tensor4(Shape4{1, 1, 2, 2}, {1, 2, 3, 4}));
  EXPECT_FLOAT_EQ(m.at(0, 0, 0, 0), 2.5f);
}

TEST(PoolTest, InvariantToSpatialPermutation) {
  Gen gen(33);
  Tensor4 in = gen.tensor(Shape4{1, 1, 4, 4});
  std::vector<float> rev(in.values().rbegin(), in.values().rend());
  EXPECT_NEAR(global_avg_pool(in).at(0, 0, 0, 0),
              global_avg_pool(Tensor4(in.shape(), rev)).at(0, 0, 0, 0), 1e-6);
}

TEST(PatchTest, FullSizePatchIsIdentity) {
  Gen gen(41);
  Tensor4 in = gen.tensor(Shape4{2, 3, 6, 4});
  Tensor4 out = split_patches(in, 6, 4);
  EXPECT_EQ(out.shape(), in.shape());
  EXPECT_EQ(max_abs_diff(out.values(), in.values()), 0.0f);
}

TEST(PatchTest, PatchCountForWideMap) {
  Tensor4 in(Shape4{1, 2, 256, 512});
  EXPECT_EQ(split_patches(in, 64, 64).n(), 32);
}

TEST(PatchTest, RowMajorPatchOrder) {
  Tensor4 in(Shape4{2, 1, 4, 6}, iota_values(48));
  Tensor4 p = split_patches(in, 2, 3);
  ASSERT_EQ(p.shape(), (Shape4{8, 1, 2, 3}));
  // Sample 1, grid cell (1, 0): top-left pixel (2, 0).
  EXPECT_EQ(p.at(1 * 4 + 1 * 2 + 0, 0, 0, 0), in.at(1, 0, 2, 0));
  EXPECT_EQ(p.at(0 * 4 + 0 * 2 + 1, 0, 1, 2), in.at(0, 0, 1, 5));
}

TEST(PatchTest, RoundTripForAllDivisors) {
  Gen gen(42);
  const std::int64_t h = 12, w = 8;
  Tensor4 in = gen.tensor(Shape4{2, 3, h, w});
  for (std::int64_t ph = 1; ph <= h; ++ph) {
    if (h % ph) continue;
    for (std::int64_t pw = 1; pw <= w; ++pw) {
      if (w % pw) continue;
      Tensor4 back = restore_patches(split_patches(in, ph, pw), h, w);
      ASSERT_EQ(back.shape(), in.shape());
      ASSERT_TRUE(std::equal(in.values().begin(), in.values().end(), back.values().begin()))
          << ph << "x" << pw;
    }
  }
}

TEST(PatchTest, IndivisibleThrows) {
  EXPECT_THROW(split_patches(Tensor4(Shape4{1, 1, 5, 4}), 2, 2), ConfigError);
  EXPECT_THROW(restore_patches(Tensor4(Shape4{3, 1, 2, 2}), 4, 4), DimensionError);
}

}  // namespace
}  // namespace repmlp
