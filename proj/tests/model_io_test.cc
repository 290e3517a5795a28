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
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "repmlp/errors.h"
#include "repmlp/model_io.h"
#include "repmlp/net.h"
#include "repmlp/random.h"
#include "repmlp/reparam.h"
#include "test_util.h"

namespace repmlp {
namespace {

using testing::Gen;
namespace fs = std::filesystem;

NetConfig tiny_config() {
  NetConfig cfg;
  cfg.name = "tiny";
  cfg.input_h = cfg.input_w = 64;
  cfg.blocks = {1, 1, 2, 1};
  cfg.base_channels = 8;
  cfg.share_sets = {1, 2, 4, 8};
  cfg.num_classes = 10;
  return cfg;
}

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("repmlp_model_io_" + name);
}

std::vector<float> all_params(const Network& net) {
  std::vector<float> out;
  for_each_param(net, [&](const std::string&, const std::vector<std::int64_t>&,
                          std::span<const float> d) { out.insert(out.end(), d.begin(), d.end()); });
  return out;
}

bool bit_equal(const std::vector<float>& a, const std::vector<float>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

TEST(ConfigJsonTest, PresetsRoundTrip) {
  for (const std::string& name : preset_names()) {
    const NetConfig cfg = preset(name);
    const NetConfig back = config_from_json(config_to_json(cfg));
    EXPECT_EQ(config_to_json(back), config_to_json(cfg)) << name;
  }
}

TEST(ConfigJsonTest, RandomConfigsRoundTrip) {
  Gen gen(21);
  for (int t = 0; t < 50; ++t) {
    NetConfig cfg;
    cfg.name = "r" + std::to_string(t);
    cfg.input_h = 32 * gen.pick(1, 8);
    cfg.input_w = 32 * gen.pick(1, 8);
    for (auto& b : cfg.blocks) b = gen.pick(1, 3);
    cfg.base_channels = 4 * gen.pick(1, 8);
    for (int i = 0; i < kNumStages; ++i) {
      cfg.share_sets[static_cast<std::size_t>(i)] = gen.one_of<std::int64_t>({1, 2, 4});
    }
    cfg.num_classes = gen.pick(1, 20);
    cfg.downsample = gen.one_of<DownsampleKind>({DownsampleKind::kEmbed2x2, DownsampleKind::kConv3,
                                 DownsampleKind::kConv5});
    cfg.local_kernels = gen.one_of<std::vector<std::int64_t>>({{}, {1}, {3}, {1, 3}, {1, 3, 5}});
    cfg.global_perceptron = gen.pick(0, 1) == 1;
    cfg.validate();
    const std::string text = config_to_json(cfg);
    EXPECT_EQ(config_to_json(config_from_json(text)), text);
  }
}

TEST(ConfigJsonTest, PresetWithOverrides) {
  const NetConfig cfg =
      config_from_json(R"({"preset": "T224", "downsample": "conv3", "global_perceptron": false})");
  EXPECT_EQ(cfg.name, "T224");
  EXPECT_EQ(cfg.blocks, preset("T224").blocks);
  EXPECT_EQ(cfg.downsample, DownsampleKind::kConv3);
  EXPECT_FALSE(cfg.global_perceptron);
}

TEST(ConfigJsonTest, Rejections) {
  EXPECT_THROW(config_from_json("{"), ConfigError);
  EXPECT_THROW(config_from_json("[1, 2]"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"blokcs": [1, 1, 1, 1]})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"base_channels": "wide"})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"input_h": 100})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"preset": "nope"})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"downsample": "conv4"})"), ConfigError);
}

TEST(ConfigJsonTest, ResolveNameOrFile) {
  EXPECT_EQ(resolve_config("B256").base_channels, 96);
  const fs::path p = temp_path("cfg.json");
  std::ofstream(p) << config_to_json(tiny_config());
  EXPECT_EQ(config_to_json(resolve_config(p.string())), config_to_json(tiny_config()));
  fs::remove(p);
  EXPECT_THROW(resolve_config("does-not-exist.json"), ConfigError);
}

TEST(CheckpointTest, RoundTripBothModes) {
  Network train = build_net(tiny_config(), 22);
  Network deploy = convert_net(train);
  for (const Network* net : {&train, &deploy}) {
    const fs::path p = temp_path("rt.bin");
    save_net(*net, p);
    Network back = load_net(p);
    EXPECT_EQ(back.mode, net->mode);
    EXPECT_EQ(config_to_json(back.config), config_to_json(net->config));
    EXPECT_TRUE(bit_equal(all_params(back), all_params(*net)));
    EXPECT_NO_THROW(back.validate());

    Network skeleton = make_skeleton(net->config, net->mode);
    load_net(p, skeleton);
    EXPECT_TRUE(bit_equal(all_params(skeleton), all_params(*net)));
    fs::remove(p);
  }
}

TEST(CheckpointTest, SerializationIsDeterministic) {
  const NetConfig cfg = tiny_config();
  EXPECT_EQ(serialize_net(build_net(cfg, 5)), serialize_net(build_net(cfg, 5)));
}

TEST(CheckpointTest, HeaderDescribesPayload) {
  Network net = build_net(tiny_config(), 23);
  const std::vector<std::uint8_t> bytes = serialize_net(net);
  const CheckpointInfo info = parse_checkpoint_header(bytes);
  EXPECT_EQ(info.header_bytes + info.payload_bytes, bytes.size());
  EXPECT_EQ(std::memcmp(bytes.data(), "RMLPFRG1", 8), 0);
  const std::vector<ParamSpec> layout = parameter_layout(net.config, net.mode);
  ASSERT_EQ(info.entries.size(), layout.size());
  std::uint64_t expect_offset = info.header_bytes;
  for (std::size_t k = 0; k < layout.size(); ++k) {
    EXPECT_EQ(info.entries[k].name, layout[k].name);
    EXPECT_EQ(info.entries[k].dims, layout[k].dims);
    EXPECT_EQ(info.entries[k].offset, expect_offset);
    expect_offset += info.entries[k].bytes();
  }
  // First tensor is the stem kernel, stored verbatim.
  EXPECT_EQ(std::memcmp(bytes.data() + info.entries[0].offset, net.stem.conv.kernel.data(),
                        info.entries[0].bytes()),
            0);
}

TEST(CheckpointTest, ModeAndConfigMismatchRejected) {
  Network train = build_net(tiny_config(), 24);
  const fs::path p = temp_path("mode.bin");
  save_net(convert_net(train), p);
  Network skeleton = make_skeleton(tiny_config(), Mode::kTrain);
  const std::vector<float> before = all_params(skeleton);
  try {
    load_net(p, skeleton);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("mode"), std::string::npos);
  }
  EXPECT_TRUE(bit_equal(all_params(skeleton), before));

  NetConfig other = tiny_config();
  other.num_classes = 11;
  Network wrong = make_skeleton(other, Mode::kDeploy);
  EXPECT_THROW(load_net(p, wrong), ConfigError);
  fs::remove(p);
}

TEST(CheckpointTest, EveryTruncationIsAFormatError) {
  const std::vector<std::uint8_t> bytes = serialize_net(build_net(tiny_config(), 25));
  const CheckpointInfo info = parse_checkpoint_header(bytes);
  std::vector<std::size_t> cuts;
  for (std::size_t n = 0; n <= info.header_bytes + 16; ++n) cuts.push_back(n);
  for (std::size_t n = info.header_bytes + 16; n < bytes.size(); n += 997) cuts.push_back(n);
  cuts.push_back(bytes.size() - 1);
  for (std::size_t n : cuts) {
    std::span<const std::uint8_t> part(bytes.data(), n);
    try {
      (void)deserialize_net(part);
      ADD_FAILURE() << "no error for truncation at " << n;
    } catch (const FormatError& e) {
      EXPECT_LE(e.offset(), n);
    }
  }
}

TEST(CheckpointTest, TruncatedFileLeavesNetUntouched) {
  Network net = build_net(tiny_config(), 26);
  std::vector<std::uint8_t> bytes = serialize_net(net);
  bytes.resize(bytes.size() - 3);
  const fs::path p = temp_path("trunc.bin");
  std::ofstream(p, std::ios::binary)
      .write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  Network target = make_skeleton(net.config, net.mode);
  EXPECT_THROW(load_net(p, target), FormatError);
  for (float v : all_params(target)) {
    if (v != 0.0f && v != 1.0f) FAIL() << "skeleton was modified";
  }
  fs::remove(p);
}

TEST(CheckpointTest, CorruptHeaderOffsets) {
  const std::vector<std::uint8_t> good = serialize_net(build_net(tiny_config(), 27));
  auto offset_of = [](const std::vector<std::uint8_t>& b) {
    try {
      (void)deserialize_net(b);
    } catch (const FormatError& e) {
      return static_cast<std::int64_t>(e.offset());
    }
    return std::int64_t{-1};
  };

  std::vector<std::uint8_t> b = good;
  b[3] = 'X';
  EXPECT_EQ(offset_of(b), 0);

  b = good;
  b[8] = 2;
  EXPECT_EQ(offset_of(b), 8);

  b = good;
  b[12] = 7;
  EXPECT_EQ(offset_of(b), 12);

  const CheckpointInfo info = parse_checkpoint_header(good);
  const CheckpointEntry& first = info.entries[0];
  const std::uint64_t dtype_at = first.record_offset + 4 + first.name.size();
  b = good;
  b[dtype_at] = 3;
  EXPECT_EQ(offset_of(b), static_cast<std::int64_t>(dtype_at));

  // Point the second tensor at the first one's data.
  const CheckpointEntry& second = info.entries[1];
  const std::uint64_t off_at =
      second.record_offset + 4 + second.name.size() + 1 + 4 + 8 * second.dims.size();
  b = good;
  std::memcpy(b.data() + off_at, &first.offset, 8);
  EXPECT_GE(offset_of(b), 0);
  EXPECT_THROW((void)deserialize_net(b), FormatError);

  // Give a later entry the name of an earlier one of equal length.
  bool renamed = false;
  for (std::size_t a = 0; a < info.entries.size() && !renamed; ++a) {
    for (std::size_t z = a + 1; z < info.entries.size() && !renamed; ++z) {
      const CheckpointEntry& ea = info.entries[a];
      const CheckpointEntry& ez = info.entries[z];
      if (ea.name.size() != ez.name.size()) continue;
      b = good;
      std::memcpy(b.data() + ez.record_offset + 4, ea.name.data(), ea.name.size());
      EXPECT_EQ(offset_of(b), static_cast<std::int64_t>(ez.record_offset));
      renamed = true;
    }
  }
  EXPECT_TRUE(renamed);
}

TEST(CheckpointTest, ConversionByteAccounting) {
  const NetConfig cfg = tiny_config();
  Network train = build_net(cfg, 28);
  Network deploy = convert_net(train);
  const std::vector<std::uint8_t> tb = serialize_net(train), db = serialize_net(deploy);
  const CheckpointInfo ti = parse_checkpoint_header(tb), di = parse_checkpoint_header(db);

  // Dropped: every BN and every local conv kernel. Added: a bias for every
  // conv that lost its BN and for every FC3.
  std::int64_t dropped = 0, added = 0;
  auto conv_bn = [&](const ConvBn& l) {
    dropped += l.bn->param_count();
    added += l.conv.out_channels();
  };
  conv_bn(train.stem);
  for (const Stage& st : train.stages) {
    for (const ConvBn& d : st.downsample) conv_bn(d);
    for (const Unit& u : st.units) {
      dropped += u.block.bn3->param_count();
      added += u.block.fc3.out_len();
      for (const ConvBnBranch& br : u.block.local) {
        dropped += br.conv.kernel.numel() + br.bn.param_count();
      }
      conv_bn(u.ffn.expand);
      conv_bn(u.ffn.project);
    }
  }
  EXPECT_EQ(static_cast<std::int64_t>(ti.payload_bytes - di.payload_bytes),
            4 * (dropped - added));
  EXPECT_EQ(static_cast<std::int64_t>(ti.payload_bytes - di.payload_bytes),
            4 * (count_params_flops(cfg, Mode::kTrain).total_params -
                 count_params_flops(cfg, Mode::kDeploy).total_params));
  EXPECT_EQ(static_cast<std::int64_t>(tb.size()) - static_cast<std::int64_t>(db.size()),
            static_cast<std::int64_t>(ti.payload_bytes - di.payload_bytes) +
                static_cast<std::int64_t>(ti.header_bytes) -
                static_cast<std::int64_t>(di.header_bytes));
}

FcLayer identity_fc3(std::int64_t s, std::int64_t hw) {
  FcLayer fc;
  fc.groups = static_cast<int>(s);
  fc.weight = Matrix(s * hw, hw);
  for (std::int64_t k = 0; k < s; ++k)
    for (std::int64_t r = 0; r < hw; ++r) fc.weight(k * hw + r, r) = 1.0f;
  return fc;
}

TEST(HeatmapTest, IdentityIsADelta) {
  const FcLayer fc = identity_fc3(2, 25);
  const Heatmap hm = locality_heatmap(fc, 2, 5, 5, 1, 3, 1);
  EXPECT_EQ(hm.min_nonzero, 1.0);
  for (std::int64_t u = 0; u < 5; ++u) {
    for (std::int64_t v = 0; v < 5; ++v) {
      const double got = hm.log[static_cast<std::size_t>(u * 5 + v)];
      if (u == 3 && v == 1) {
        EXPECT_EQ(got, 0.0);
      } else {
        EXPECT_DOUBLE_EQ(got, std::log(1e-12));
      }
    }
  }
}

TEST(HeatmapTest, LogRescaleByGlobalMinimum) {
  Gen gen(29);
  FcLayer fc;
  fc.groups = 2;
  fc.weight = gen.matrix(2 * 16, 16);
  fc.weight(0, 0) = 1e-3f;
  const Heatmap hm = locality_heatmap(fc, 2, 4, 4, 1, 2, 2);
  const double m = std::abs(fc.weight(0, 0));
  EXPECT_EQ(hm.min_nonzero, m);
  for (std::int64_t k = 0; k < 16; ++k) {
    EXPECT_NEAR(hm.log[static_cast<std::size_t>(k)],
                std::log(std::abs(static_cast<double>(fc.weight(16 + 2 * 4 + 2, k))) / m), 1e-9);
  }
}

TEST(HeatmapTest, IndexErrors) {
  const FcLayer fc = identity_fc3(2, 16);
  EXPECT_THROW(locality_heatmap(fc, 2, 4, 4, 2, 0, 0), IndexError);
  EXPECT_THROW(locality_heatmap(fc, 2, 4, 4, -1, 0, 0), IndexError);
  EXPECT_THROW(locality_heatmap(fc, 2, 4, 4, 0, 4, 0), IndexError);
  EXPECT_THROW(locality_heatmap(fc, 2, 4, 4, 0, 0, 4), IndexError);
  EXPECT_THROW(locality_heatmap(fc, 3, 4, 4, 0, 0, 0), DimensionError);
}

TEST(HeatmapTest, SampleIndicesOfDeepStage3) {
  const RepMlpBlockConfig bc = preset("D256").block_config(2);
  EXPECT_EQ(bc.h, 16);
  EXPECT_EQ(bc.w, 16);
  EXPECT_EQ(bc.s, 16);
  const FcLayer fc = identity_fc3(bc.s, bc.hw());
  // Set 1, point (7, 7) counting from 1.
  const Heatmap hm = locality_heatmap(fc, bc.s, bc.h, bc.w, 0, 6, 6);
  EXPECT_EQ(hm.raw.rows(), 16);
  EXPECT_EQ(hm.raw.cols(), 16);
  EXPECT_EQ(hm.raw(6, 6), 1.0f);
}

RepMlpBlock block_with_strong_3x3(std::uint64_t seed, std::int64_t side) {
  Rng rng(seed);
  RepMlpBlockConfig cfg{.c = 8, .h = side, .w = side, .s = 4};
  RepMlpBlock block = random_train_block(cfg, rng);
  for (ConvBnBranch& br : block.local) {
    if (br.conv.kernel_h() == 3) {
      for (float& v : br.conv.kernel.values()) v = 50.0f + 10.0f * std::abs(v);
    }
  }
  return block;
}

TEST(HeatmapTest, MergedThreeByThreeHoldsTheMaxima) {
  const RepMlpBlock block = block_with_strong_3x3(30, 8);
  const RepMlpBlock merged = convert_block(block);
  const auto& c = block.config;
  for (std::int64_t set = 0; set < c.s; ++set) {
    for (auto [i, j] : std::vector<std::pair<std::int64_t, std::int64_t>>{{3, 4}, {0, 0}, {7, 5}}) {
      const Heatmap hm = locality_heatmap(merged.fc3, c.s, c.h, c.w, set, i, j);
      double inside_min = 1e300, outside_max = -1e300;
      for (std::int64_t u = 0; u < c.h; ++u) {
        for (std::int64_t v = 0; v < c.w; ++v) {
          const double x = hm.log[static_cast<std::size_t>(u * c.w + v)];
          if (std::abs(u - i) <= 1 && std::abs(v - j) <= 1) {
            inside_min = std::min(inside_min, x);
          } else {
            outside_max = std::max(outside_max, x);
          }
        }
      }
      EXPECT_GT(inside_min, outside_max) << "set " << set << " at " << i << "," << j;
    }
  }
}

TEST(HeatmapTest, MergeDeltaConfinedToNeighborhood) {
  Gen gen(31);
  for (int t = 0; t < 20; ++t) {
    Rng rng(100 + static_cast<std::uint64_t>(t));
    const std::int64_t side = gen.pick(3, 9);
    RepMlpBlockConfig cfg{.c = 4, .h = side, .w = side + gen.pick(0, 2), .s = gen.one_of<std::int64_t>({1, 2, 4})};
    cfg.local_kernels = gen.one_of<std::vector<std::int64_t>>({{1, 3}, {3}, {1, 3, 5}, {5}});
    const RepMlpBlock block = random_train_block(cfg, rng);
    const RepMlpBlock merged = convert_block(block);
    FcLayer delta = fuse_bn_grouped_fc(block.fc3, *block.bn3, cfg.hw());
    for (std::int64_t k = 0; k < delta.weight.numel(); ++k) {
      delta.weight.data()[k] = merged.fc3.weight.data()[k] - delta.weight.data()[k];
    }
    std::int64_t kmax = 0;
    for (std::int64_t k : cfg.local_kernels) kmax = std::max(kmax, k);
    const std::int64_t r = kmax / 2;
    const std::int64_t set = gen.pick(0, cfg.s - 1), i = gen.pick(0, cfg.h - 1),
                       j = gen.pick(0, cfg.w - 1);
    const Heatmap hm = locality_heatmap(delta, cfg.s, cfg.h, cfg.w, set, i, j);
    for (std::int64_t u = 0; u < cfg.h; ++u) {
      for (std::int64_t v = 0; v < cfg.w; ++v) {
        if (std::abs(u - i) > r || std::abs(v - j) > r) {
          EXPECT_EQ(hm.raw(u, v), 0.0f) << u << "," << v;
          EXPECT_DOUBLE_EQ(hm.log[static_cast<std::size_t>(u * cfg.w + v)], std::log(1e-12));
        }
      }
    }
    EXPECT_NE(hm.raw(i, j), 0.0f);
  }
}

TEST(HeatmapTest, ExportWritesCsvAndPgm) {
  const RepMlpBlock merged = convert_block(block_with_strong_3x3(32, 6));
  const auto& c = merged.config;
  const fs::path base = temp_path("heat");
  const Heatmap hm = export_locality_heatmap(merged.fc3, c.s, c.h, c.w, 1, 2, 3, base);

  std::ifstream csv(fs::path(base) += ".csv");
  std::string line;
  std::int64_t rows = 0;
  while (std::getline(csv, line)) {
    std::stringstream ss(line);
    std::string cell;
    std::int64_t col = 0;
    while (std::getline(ss, cell, ',')) {
      EXPECT_NEAR(std::stod(cell), hm.log[static_cast<std::size_t>(rows * c.w + col)], 1e-6);
      ++col;
    }
    EXPECT_EQ(col, c.w);
    ++rows;
  }
  EXPECT_EQ(rows, c.h);

  std::ifstream pgm(fs::path(base) += ".pgm", std::ios::binary);
  std::string magic;
  std::int64_t w = 0, h = 0, maxv = 0;
  pgm >> magic >> w >> h >> maxv;
  pgm.get();
  EXPECT_EQ(magic, "P5");
  EXPECT_EQ(w, c.w);
  EXPECT_EQ(h, c.h);
  EXPECT_EQ(maxv, 255);
  std::vector<unsigned char> pix(static_cast<std::size_t>(w * h));
  pgm.read(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(pix.size()));
  EXPECT_EQ(pgm.gcount(), w * h);
  const auto [lo, hi] = std::minmax_element(pix.begin(), pix.end());
  EXPECT_EQ(*lo, 0);
  EXPECT_EQ(*hi, 255);
  // The brightest pixel is the largest log value.
  const auto hi_log = std::max_element(hm.log.begin(), hm.log.end()) - hm.log.begin();
  EXPECT_EQ(pix[static_cast<std::size_t>(hi_log)], 255);
  fs::remove(fs::path(base) += ".csv");
  fs::remove(fs::path(base) += ".pgm");
}

}  // namespace
}  // namespace repmlp
