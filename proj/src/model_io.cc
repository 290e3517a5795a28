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

#include "repmlp/model_io.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "repmlp/errors.h"

namespace repmlp {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

using nlohmann::json;

json config_json(const NetConfig& c) {
  return json{{"name", c.name},
              {"blocks", c.blocks},
              {"base_channels", c.base_channels},
              {"share_sets", c.share_sets},
              {"input_h", c.input_h},
              {"input_w", c.input_w},
              {"in_channels", c.in_channels},
              {"num_classes", c.num_classes},
              {"ffn_ratio", c.ffn_ratio},
              {"downsample", std::string(downsample_name(c.downsample))},
              {"local_kernels", c.local_kernels},
              {"gp_reduction", c.gp_reduction},
              {"global_perceptron", c.global_perceptron}};
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void pod(T v) {
    bytes(&v, sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> data) : data_(data) {}

  std::uint64_t pos() const { return pos_; }

  void need(std::uint64_t n, const char* what) const {
    if (n > data_.size() || pos_ > data_.size() - n) {
      throw FormatError(std::string("truncated checkpoint while reading ") + what, pos_);
    }
  }
  template <typename T>
  T pod(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::uint64_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> data_;
  std::uint64_t pos_ = 0;
};

bool same_config(const NetConfig& a, const NetConfig& b) {
  json ja = config_json(a), jb = config_json(b);
  ja.erase("name");
  jb.erase("name");
  return ja == jb;
}

void fill_from(std::span<const std::uint8_t> bytes, const CheckpointInfo& info, Network& net) {
  std::size_t idx = 0;
  for_each_param(net, [&](const std::string& name, const std::vector<std::int64_t>& dims,
                          std::span<float> data) {
    if (idx >= info.entries.size()) {
      throw FormatError("checkpoint is missing tensor " + name, info.header_bytes);
    }
    const CheckpointEntry& e = info.entries[idx++];
    if (e.name != name || e.dims != dims) {
      throw FormatError("checkpoint entry " + e.name + " does not match expected tensor " + name,
                        e.record_offset);
    }
    std::memcpy(data.data(), bytes.data() + e.offset, e.bytes());
  });
  if (idx != info.entries.size()) {
    throw FormatError("checkpoint has unexpected extra tensor " + info.entries[idx].name,
                      info.entries[idx].record_offset);
  }
}

}  // namespace

std::string config_to_json(const NetConfig& config) { return config_json(config).dump(); }

NetConfig config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> known{
      "preset",      "name",       "blocks",       "base_channels", "share_sets",
      "input_h",     "input_w",    "in_channels",  "num_classes",   "ffn_ratio",
      "downsample",  "local_kernels", "gp_reduction", "global_perceptron"};
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config field '" + key + "'");
  }
  NetConfig c;
  if (j.contains("preset")) {
    std::string name;
    read_field(j, "preset", name);
    c = preset(name);
  }
  read_field(j, "name", c.name);
  read_field(j, "blocks", c.blocks);
  read_field(j, "base_channels", c.base_channels);
  read_field(j, "share_sets", c.share_sets);
  read_field(j, "input_h", c.input_h);
  read_field(j, "input_w", c.input_w);
  read_field(j, "in_channels", c.in_channels);
  read_field(j, "num_classes", c.num_classes);
  read_field(j, "ffn_ratio", c.ffn_ratio);
  if (j.contains("downsample")) {
    std::string kind;
    read_field(j, "downsample", kind);
    c.downsample = parse_downsample(kind);
  }
  read_field(j, "local_kernels", c.local_kernels);
  read_field(j, "gp_reduction", c.gp_reduction);
  read_field(j, "global_perceptron", c.global_perceptron);
  c.validate();
  return c;
}

NetConfig resolve_config(std::string_view name_or_path) {
  const auto& names = preset_names();
  if (std::find(names.begin(), names.end(), name_or_path) != names.end()) {
    return preset(name_or_path);
  }
  const std::filesystem::path path(name_or_path);
  if (!std::filesystem::exists(path)) {
    std::string msg = "unknown config '" + std::string(name_or_path) + "'; expected one of";
    for (const auto& n : names) msg += " " + n;
    throw ConfigError(msg + " or a JSON file");
  }
  const std::vector<std::uint8_t> bytes = read_file(path);
  return config_from_json(std::string_view(reinterpret_cast<const char*>(bytes.data()),
                                           bytes.size()));
}

std::uint64_t CheckpointEntry::bytes() const {
  std::uint64_t n = sizeof(float);
  for (std::int64_t d : dims) n *= static_cast<std::uint64_t>(d);
  return n;
}

std::vector<std::uint8_t> serialize_net(const Network& net) {
  std::vector<CheckpointEntry> entries;
  std::vector<std::span<const float>> blobs;
  for_each_param(net, [&](const std::string& name, const std::vector<std::int64_t>& dims,
                          std::span<const float> data) {
    entries.push_back(CheckpointEntry{name, dims, 0, 0});
    blobs.push_back(data);
  });

  Writer w;
  w.bytes(kCheckpointMagic, 8);
  w.pod(kCheckpointVersion);
  w.pod(static_cast<std::uint32_t>(net.mode == Mode::kDeploy ? 1 : 0));
  w.str(config_to_json(net.config));
  w.pod(static_cast<std::uint32_t>(entries.size()));

  std::uint64_t header = w.buffer().size();
  for (const CheckpointEntry& e : entries) {
    header += 4 + e.name.size() + 1 + 4 + 8 * e.dims.size() + 8;
  }
  std::uint64_t offset = header;
  for (const CheckpointEntry& e : entries) {
    w.str(e.name);
    w.pod(std::uint8_t{0});
    w.pod(static_cast<std::uint32_t>(e.dims.size()));
    for (std::int64_t d : e.dims) w.pod(static_cast<std::uint64_t>(d));
    w.pod(offset);
    offset += e.bytes();
  }
  for (std::span<const float> b : blobs) w.bytes(b.data(), b.size_bytes());
  return std::move(w.buffer());
}

void save_net(const Network& net, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = serialize_net(net);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("write failed for " + path.string());
}

CheckpointInfo parse_checkpoint_header(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  CheckpointInfo info;
  if (r.str(8, "magic") != std::string_view(kCheckpointMagic, 8)) {
    throw FormatError("bad magic, not a checkpoint", 0);
  }
  const std::uint64_t version_at = r.pos();
  const auto version = r.pod<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), version_at);
  }
  const std::uint64_t mode_at = r.pos();
  const auto mode = r.pod<std::uint32_t>("mode");
  if (mode > 1) throw FormatError("bad mode flag " + std::to_string(mode), mode_at);
  info.mode = mode == 1 ? Mode::kDeploy : Mode::kTrain;

  const auto config_len = r.pod<std::uint32_t>("config length");
  const std::uint64_t config_at = r.pos();
  const std::string config_text = r.str(config_len, "config");
  try {
    info.config = config_from_json(config_text);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("bad embedded config: ") + e.what(), config_at);
  }

  const auto count = r.pod<std::uint32_t>("entry count");
  std::set<std::string> names;
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointEntry e;
    e.record_offset = r.pos();
    e.name = r.str(r.pod<std::uint32_t>("name length"), "name");
    if (!names.insert(e.name).second) {
      throw FormatError("duplicate tensor name " + e.name, e.record_offset);
    }
    const std::uint64_t dtype_at = r.pos();
    if (r.pod<std::uint8_t>("dtype") != 0) {
      throw FormatError("unsupported dtype for " + e.name, dtype_at);
    }
    const auto rank = r.pod<std::uint32_t>("rank");
    if (rank > 8) throw FormatError("implausible rank for " + e.name, dtype_at + 1);
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint64_t dim_at = r.pos();
      const auto dim = r.pod<std::uint64_t>("dims");
      if (dim > (std::uint64_t{1} << 40)) {
        throw FormatError("implausible dimension for " + e.name, dim_at);
      }
      e.dims.push_back(static_cast<std::int64_t>(dim));
    }
    e.offset = r.pod<std::uint64_t>("offset");
    info.entries.push_back(std::move(e));
  }
  info.header_bytes = r.pos();

  std::vector<const CheckpointEntry*> by_offset;
  for (const CheckpointEntry& e : info.entries) by_offset.push_back(&e);
  std::sort(by_offset.begin(), by_offset.end(),
            [](const auto* a, const auto* b) { return a->offset < b->offset; });
  std::uint64_t end = info.header_bytes;
  for (const CheckpointEntry* e : by_offset) {
    if (e->offset < end) {
      throw FormatError("tensor " + e->name + " overlaps the header or another tensor",
                        e->record_offset);
    }
    if (e->offset > bytes.size() || e->bytes() > bytes.size() - e->offset) {
      throw FormatError("truncated checkpoint: tensor " + e->name + " runs past the end",
                        bytes.size());
    }
    end = e->offset + e->bytes();
    info.payload_bytes += e->bytes();
  }
  return info;
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  return parse_checkpoint_header(read_file(path));
}

Network deserialize_net(std::span<const std::uint8_t> bytes) {
  const CheckpointInfo info = parse_checkpoint_header(bytes);
  Network net = make_skeleton(info.config, info.mode);
  fill_from(bytes, info, net);
  return net;
}

void load_net(const std::filesystem::path& path, Network& net) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  const CheckpointInfo info = parse_checkpoint_header(bytes);
  if (info.mode != net.mode) {
    throw ConfigError("checkpoint mode flag is " + std::string(mode_name(info.mode)) +
                      " but the network is " + std::string(mode_name(net.mode)));
  }
  if (!same_config(info.config, net.config)) {
    throw ConfigError("checkpoint config " + config_to_json(info.config) +
                      " differs from the network config " + config_to_json(net.config));
  }
  Network fresh = make_skeleton(net.config, net.mode);
  fill_from(bytes, info, fresh);
  net = std::move(fresh);
}

Network load_net(const std::filesystem::path& path) { return deserialize_net(read_file(path)); }

Matrix fc3_kernel_slice(const FcLayer& fc3, std::int64_t s, std::int64_t h, std::int64_t w,
                        std::int64_t set, std::int64_t i, std::int64_t j) {
  const std::int64_t hw = h * w;
  if (fc3.weight.rows() != s * hw || fc3.weight.cols() != hw) {
    throw DimensionError("FC3 weight is " + std::to_string(fc3.weight.rows()) + "x" +
                         std::to_string(fc3.weight.cols()) + ", expected " +
                         std::to_string(s * hw) + "x" + std::to_string(hw));
  }
  if (set < 0 || set >= s) {
    throw IndexError("set " + std::to_string(set) + " out of range [0, " + std::to_string(s) + ")");
  }
  if (i < 0 || i >= h || j < 0 || j >= w) {
    throw IndexError("output point (" + std::to_string(i) + ", " + std::to_string(j) +
                     ") out of range for " + std::to_string(h) + "x" + std::to_string(w));
  }
  auto row = fc3.weight.row(set * hw + i * w + j);
  return Matrix(h, w, std::vector<float>(row.begin(), row.end()));
}

float min_nonzero_abs(const Matrix& weight) {
  float m = std::numeric_limits<float>::infinity();
  for (float v : weight.values()) {
    if (v != 0.0f) m = std::min(m, std::abs(v));
  }
  return std::isinf(m) ? 0.0f : m;
}

Heatmap locality_heatmap(const FcLayer& fc3, std::int64_t s, std::int64_t h, std::int64_t w,
                         std::int64_t set, std::int64_t i, std::int64_t j) {
  Heatmap hm;
  hm.raw = fc3_kernel_slice(fc3, s, h, w, set, i, j);
  hm.min_nonzero = min_nonzero_abs(fc3.weight);
  hm.log.reserve(static_cast<std::size_t>(hm.raw.numel()));
  for (float v : hm.raw.values()) {
    if (hm.min_nonzero == 0.0) {
      hm.log.push_back(std::log(Heatmap::kGuard));
    } else {
      const double m = hm.min_nonzero;
      hm.log.push_back(std::log(std::max<double>(std::abs(v), m * Heatmap::kGuard) / m));
    }
  }
  return hm;
}

Heatmap export_locality_heatmap(const FcLayer& fc3, std::int64_t s, std::int64_t h,
                                std::int64_t w, std::int64_t set, std::int64_t i,
                                std::int64_t j, const std::filesystem::path& path) {
  Heatmap hm = locality_heatmap(fc3, s, h, w, set, i, j);

  std::filesystem::path csv = path, pgm = path;
  csv += ".csv";
  pgm += ".pgm";
  std::ofstream c(csv);
  if (!c) throw ConfigError("cannot write " + csv.string());
  c.precision(9);
  for (std::int64_t u = 0; u < h; ++u) {
    for (std::int64_t v = 0; v < w; ++v) {
      if (v) c << ',';
      c << hm.log[static_cast<std::size_t>(u * w + v)];
    }
    c << '\n';
  }

  const auto [lo, hi] = std::minmax_element(hm.log.begin(), hm.log.end());
  const double span = *hi - *lo;
  std::ofstream p(pgm, std::ios::binary);
  if (!p) throw ConfigError("cannot write " + pgm.string());
  p << "P5\n" << w << ' ' << h << "\n255\n";
  for (double v : hm.log) {
    const double t = span > 0 ? (v - *lo) / span : 0.0;
    p.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(t * 255.0))));
  }
  if (!c || !p) throw ConfigError("write failed for heatmap " + path.string());
  return hm;
}

}  // namespace repmlp
