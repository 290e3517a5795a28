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

// repmlp: build, convert, verify, benchmark and inspect RepMLP networks.
//
// Exit codes: 0 ok, 1 verification failure, 2 usage error.

#include <malloc.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "repmlp/bench.h"
#include "repmlp/errors.h"
#include "repmlp/model_io.h"
#include "repmlp/net.h"
#include "repmlp/ops.h"
#include "repmlp/random.h"
#include "repmlp/reparam.h"
#include "repmlp/verify.h"

namespace repmlp {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerify = 1;
constexpr int kExitUsage = 2;

class UsageError : public Error {
 public:
  using Error::Error;
};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Mode parse_mode(const std::string& s) {
  if (s == "train") return Mode::kTrain;
  if (s == "deploy") return Mode::kDeploy;
  throw UsageError("unknown mode '" + s + "', expected train or deploy");
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

// --- init ------------------------------------------------------------------

struct InitArgs {
  std::string config = "T224";
  std::uint64_t seed = 0;
  std::string out;
  std::string mode = "train";
  bool skeleton = false;
};

int cmd_init(const InitArgs& a) {
  const NetConfig cfg = resolve_config(a.config);
  const Mode mode = parse_mode(a.mode);
  Network net = a.skeleton ? make_skeleton(cfg, mode) : build_net(cfg, a.seed);
  if (!a.skeleton && mode == Mode::kDeploy) net = convert_net(net);
  save_net(net, a.out);
  std::cout << "wrote " << mode_name(net.mode) << " checkpoint of " << cfg.name << " to " << a.out
            << "\n";
  return kExitOk;
}

// --- convert ---------------------------------------------------------------

struct ConvertArgs {
  std::string in;
  std::string out;
  std::uint64_t seed = 0;
  bool per_block = true;
};

int cmd_convert(const ConvertArgs& a) {
  const CheckpointInfo info = read_checkpoint_info(a.in);
  if (info.mode != Mode::kTrain) {
    throw UsageError("input checkpoint has mode flag '" + std::string(mode_name(info.mode)) +
                     "'; convert needs a train checkpoint");
  }
  const Network train = load_net(a.in);
  const Network deploy = convert_net(train);
  const NetConfig& cfg = train.config;
  Rng rng(a.seed ^ 0x5eedu);

  double worst_block = 0.0;
  if (a.per_block) {
    for (int i = 0; i < kNumStages; ++i) {
      const auto& tu = train.stages[static_cast<std::size_t>(i)].units;
      const auto& du = deploy.stages[static_cast<std::size_t>(i)].units;
      for (std::size_t j = 0; j < tu.size(); ++j) {
        const RepMlpBlockConfig& bc = tu[j].block.config;
        const Shape4 shape{2, bc.c, bc.h, bc.w};
        const Tensor4 x(shape, rng.vec(shape.numel(), -1, 1));
        const double d = max_abs_diff(block_forward(tu[j].block, x).values(),
                                      block_forward(du[j].block, x).values());
        worst_block = std::max(worst_block, d);
        std::cout << "stages." << i << ".units." << j << ".block max_abs_diff="
                  << fmt("%.3e", d) << "\n";
      }
    }
  }
  const Shape4 shape{2, cfg.in_channels, cfg.input_h, cfg.input_w};
  const Tensor4 probe(shape, rng.vec(shape.numel(), -1, 1));
  const auto ft = trunk_features(train, probe);
  const auto fd = trunk_features(deploy, probe);
  for (std::size_t i = 0; i < ft.size(); ++i) {
    std::cout << "stage" << i + 1 << ".features max_abs_diff="
              << fmt("%.3e", max_abs_diff(ft[i].values(), fd[i].values())) << "\n";
  }
  const double logits = max_abs_diff(net_forward(train, probe).values(),
                                     net_forward(deploy, probe).values());
  std::cout << "logits max_abs_diff=" << fmt("%.3e", logits) << "\n";
  save_net(deploy, a.out);
  std::cout << "wrote deploy checkpoint to " << a.out << "\n";
  if (logits > 1e-3 || worst_block > 1e-4) {
    std::cerr << "conversion check failed\n";
    return kExitVerify;
  }
  return kExitOk;
}

// --- verify ----------------------------------------------------------------

struct VerifyArgs {
  std::string config = "T224";
  std::uint64_t seed = 0;
  bool exhaustive_small = false;
  bool perturb = false;
  bool skip_net = false;
};

int cmd_verify(const VerifyArgs& a) {
  VerifyOptions opt;
  opt.seed = a.seed;
  opt.exhaustive_small = a.exhaustive_small;
  opt.perturb = a.perturb;
  if (!a.skip_net) opt.net = resolve_config(a.config);
  const VerifyReport report = run_verify(opt);
  std::cout << report.to_text();
  return report.passed() ? kExitOk : kExitVerify;
}

// --- bench -----------------------------------------------------------------

struct BenchArgs {
  std::string configs = "T224";
  std::int64_t batch = 8;
  std::string modes = "train,deploy";
  int warmup = 3;
  int iters = 10;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_bench(const BenchArgs& a) {
  BenchOptions opt;
  opt.batch = a.batch;
  opt.warmup = a.warmup;
  opt.iters = a.iters;
  opt.seed = a.seed;
  opt.modes.clear();
  for (const std::string& m : split(a.modes, ',')) opt.modes.push_back(parse_mode(m));
  std::vector<std::string> names = split(a.configs, ',');
  if (names.size() == 1 && names[0] == "all") names = preset_names();

  std::ostringstream csv;
  csv << bench_csv_header() << "\n";
  std::cout << bench_csv_header() << "\n" << std::flush;
  for (const std::string& name : names) {
    const BenchResult r = run_bench(resolve_config(name), opt);
    for (const BenchRow& row : r.rows) {
      csv << bench_csv_row(row) << "\n";
      std::cout << bench_csv_row(row) << "\n" << std::flush;
    }
  }
  if (!a.out.empty()) {
    std::ofstream f(a.out);
    f << csv.str();
    if (!f) throw UsageError("cannot write " + a.out);
  }
  return kExitOk;
}

// --- count -----------------------------------------------------------------

struct CountArgs {
  std::string config = "T224";
  std::string mode = "deploy";
  bool per_layer = false;
};

int cmd_count(const CountArgs& a) {
  std::cout << count_params_flops(resolve_config(a.config), parse_mode(a.mode))
                   .to_text(a.per_layer);
  return kExitOk;
}

// --- infer -----------------------------------------------------------------

struct InferArgs {
  std::string ckpt;
  std::string input;
  std::int64_t batch = 1;
  std::int64_t height = 0;
  std::int64_t width = 0;
  int topk = 5;
};

int cmd_infer(const InferArgs& a) {
  const Network net = load_net(a.ckpt);
  const NetConfig& cfg = net.config;
  const Shape4 shape{a.batch, cfg.in_channels, a.height ? a.height : cfg.input_h,
                     a.width ? a.width : cfg.input_w};
  if (shape.h != cfg.input_h || shape.w != cfg.input_w) {
    throw UsageError("input must be " + std::to_string(cfg.input_h) + "x" +
                     std::to_string(cfg.input_w) + " for " + cfg.name + ", got " +
                     std::to_string(shape.h) + "x" + std::to_string(shape.w));
  }
  std::ifstream in(a.input, std::ios::binary | std::ios::ate);
  if (!in) throw UsageError("cannot open " + a.input);
  const auto bytes = static_cast<std::int64_t>(in.tellg());
  if (bytes != shape.numel() * 4) {
    throw UsageError("input has " + std::to_string(bytes) + " bytes; expected " +
                     std::to_string(shape.numel()) + " f32 values for NCHW " + shape.str());
  }
  in.seekg(0);
  Tensor4 x(shape);
  in.read(reinterpret_cast<char*>(x.data()), bytes);

  const Matrix logits = net_forward(net, x);
  const int k = std::clamp<int>(a.topk, 1, static_cast<int>(logits.cols()));
  for (std::int64_t i = 0; i < logits.rows(); ++i) {
    auto row = logits.row(i);
    std::vector<std::int64_t> idx(row.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::int64_t p, std::int64_t q) {
      return row[static_cast<std::size_t>(p)] > row[static_cast<std::size_t>(q)];
    });
    std::cout << "sample " << i << ":";
    for (int t = 0; t < k; ++t) {
      const std::int64_t c = idx[static_cast<std::size_t>(t)];
      std::cout << " " << c << "=" << fmt("%.6g", row[static_cast<std::size_t>(c)]);
    }
    std::cout << "\n";
  }
  return kExitOk;
}

// --- inspect ---------------------------------------------------------------

struct InspectArgs {
  std::string ckpt;
  int stage = 3;
  int block = 1;
  int set = 1;
  std::string pos = "1,1";
  std::string kernel = "merged";
  std::string out;
};

int cmd_inspect(const InspectArgs& a) {
  const Network net = load_net(a.ckpt);
  if (a.stage < 1 || a.stage > kNumStages) {
    throw UsageError("--stage must be in 1.." + std::to_string(kNumStages));
  }
  const Stage& st = net.stages[static_cast<std::size_t>(a.stage - 1)];
  if (a.block < 1 || a.block > static_cast<int>(st.units.size())) {
    throw UsageError("--block must be in 1.." + std::to_string(st.units.size()) + " for stage " +
                     std::to_string(a.stage));
  }
  const RepMlpBlock& block = st.units[static_cast<std::size_t>(a.block - 1)].block;
  const RepMlpBlockConfig& bc = block.config;
  const std::vector<std::string> ij = split(a.pos, ',');
  if (ij.size() != 2) throw UsageError("--pos takes i,j");
  const std::int64_t i = std::stoll(ij[0]) - 1, j = std::stoll(ij[1]) - 1;
  if (a.set < 1 || a.set > bc.s) {
    throw UsageError("--set must be in 1.." + std::to_string(bc.s));
  }
  if (i < 0 || i >= bc.h || j < 0 || j >= bc.w) {
    throw UsageError("--pos must be within 1.." + std::to_string(bc.h) + ",1.." +
                     std::to_string(bc.w));
  }

  FcLayer fc;
  if (a.kernel == "merged") {
    fc = block.mode == Mode::kTrain ? convert_block(block).fc3 : block.fc3;
  } else if (a.kernel == "original" || a.kernel == "delta") {
    if (block.mode != Mode::kTrain) {
      throw UsageError("--kernel " + a.kernel + " needs a train checkpoint");
    }
    fc = fuse_bn_grouped_fc(block.fc3, *block.bn3, bc.hw());
    if (a.kernel == "delta") {
      const FcLayer merged = convert_block(block).fc3;
      for (std::int64_t k = 0; k < fc.weight.numel(); ++k) {
        fc.weight.data()[k] = merged.weight.data()[k] - fc.weight.data()[k];
      }
    }
  } else {
    throw UsageError("--kernel must be merged, original or delta");
  }
  const Heatmap hm = export_locality_heatmap(fc, bc.s, bc.h, bc.w, a.set - 1, i, j, a.out);
  std::cout << "stage " << a.stage << " block " << a.block << " set " << a.set << " point ("
            << i + 1 << "," << j + 1 << ") of " << bc.h << "x" << bc.w << ", s=" << bc.s
            << ", min nonzero |w|=" << fmt("%.6g", hm.min_nonzero) << "\n";
  std::cout << "wrote " << a.out << ".csv and " << a.out << ".pgm\n";
  return kExitOk;
}

int run(int argc, char** argv) {
  CLI::App app{"RepMLP re-parameterization toolkit"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads for forward passes")
      ->check(CLI::Range(1, 256));

  InitArgs init;
  auto* c_init = app.add_subcommand("init", "Build a seeded random network and save it");
  c_init->add_option("--config", init.config, "Preset name or JSON config file");
  c_init->add_option("--seed", init.seed);
  c_init->add_option("--mode", init.mode, "train or deploy");
  c_init->add_option("--out", init.out)->required();
  c_init->add_flag("--skeleton", init.skeleton, "Zero weights and identity BN instead of random");

  ConvertArgs conv;
  auto* c_conv = app.add_subcommand("convert", "Merge a train checkpoint into deploy form");
  c_conv->add_option("--in", conv.in)->required()->check(CLI::ExistingFile);
  c_conv->add_option("--out", conv.out)->required();
  c_conv->add_option("--seed", conv.seed, "Probe batch seed");

  VerifyArgs ver;
  auto* c_ver = app.add_subcommand("verify", "Run the equivalence suites");
  c_ver->add_option("--config", ver.config, "Network for the whole-net check");
  c_ver->add_option("--seed", ver.seed);
  c_ver->add_flag("--exhaustive-small", ver.exhaustive_small,
                  "Sweep every small conv against the oracle");
  c_ver->add_flag("--perturb", ver.perturb, "Corrupt one converted weight by 1e-2 per suite");
  c_ver->add_flag("--skip-net", ver.skip_net, "Skip the whole-net check");

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "Time train and deploy forwards");
  c_bench->add_option("--config", bench.configs, "Comma-separated presets/files, or 'all'");
  c_bench->add_option("--batch", bench.batch)->check(CLI::PositiveNumber);
  c_bench->add_option("--modes", bench.modes, "Comma-separated: train,deploy");
  c_bench->add_option("--warmup", bench.warmup)->check(CLI::Range(3, 1000));
  c_bench->add_option("--iters", bench.iters)->check(CLI::Range(10, 100000));
  c_bench->add_option("--seed", bench.seed);
  c_bench->add_option("--out", bench.out, "Also write the CSV here");

  CountArgs count;
  auto* c_count = app.add_subcommand("count", "Parameter and FLOP report");
  c_count->add_option("--config", count.config);
  c_count->add_option("--mode", count.mode, "train or deploy");
  c_count->add_flag("--per-layer", count.per_layer);

  InferArgs infer;
  auto* c_infer = app.add_subcommand("infer", "Top-k classes for a raw f32 NCHW input");
  c_infer->add_option("--ckpt", infer.ckpt)->required()->check(CLI::ExistingFile);
  c_infer->add_option("--input", infer.input)->required();
  c_infer->add_option("--batch", infer.batch)->check(CLI::PositiveNumber);
  c_infer->add_option("--height", infer.height, "Defaults to the native size");
  c_infer->add_option("--width", infer.width, "Defaults to the native size");
  c_infer->add_option("--topk", infer.topk)->check(CLI::PositiveNumber);

  InspectArgs insp;
  auto* c_insp = app.add_subcommand("inspect", "Export an FC3 kernel locality heatmap");
  c_insp->add_option("--ckpt", insp.ckpt)->required()->check(CLI::ExistingFile);
  c_insp->add_option("--stage", insp.stage, "1-based");
  c_insp->add_option("--block", insp.block, "1-based, within the stage");
  c_insp->add_option("--set", insp.set, "1-based share-set");
  c_insp->add_option("--pos", insp.pos, "1-based output point i,j");
  c_insp->add_option("--kernel", insp.kernel, "merged, original or delta");
  c_insp->add_option("--out", insp.out, "Output path without extension")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  set_num_threads(threads);

  try {
    if (*c_init) return cmd_init(init);
    if (*c_conv) return cmd_convert(conv);
    if (*c_ver) return cmd_verify(ver);
    if (*c_bench) return cmd_bench(bench);
    if (*c_count) return cmd_count(count);
    if (*c_infer) return cmd_infer(infer);
    if (*c_insp) return cmd_inspect(insp);
  } catch (const VerificationError& e) {
    std::cerr << "verification failed: " << e.what() << "\n";
    return kExitVerify;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: bad number: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace
}  // namespace repmlp

int main(int argc, char** argv) {
  // Large activations are allocated and freed every layer; keep them in the
  // heap instead of paying for fresh mmap pages each time.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return repmlp::run(argc, argv);
}
