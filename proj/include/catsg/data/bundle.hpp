#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "catsg/core/errors.hpp"
#include "catsg/core/tensor.hpp"

namespace catsg {

static_assert(std::endian::native == std::endian::little,
              "bundle files are little-endian; big-endian hosts unsupported");

using json = nlohmann::json;

// On-disk dataset layout ("series bundle"):
//   <dir>/meta.json
//   <dir>/x.<split>.bin      f32, row-major [sample, time, channel]
//   <dir>/c.<split>.bin
//   <dir>/params.<split>.jsonl   one JSON object per sample
//   <dir>/xcf.<split>.bin    optional counterfactual pair, aligned by sample
//   <dir>/ccf.<split>.bin
// Tensors are stored normalized by the train-split min/max in meta.json.
struct BundleMeta {
  int schema_version = 1;
  std::string dataset_id;
  std::string scenario;  // "VM", "VP", or a real dataset name
  std::vector<std::pair<std::string, int>> splits;  // ordered (name, count)
  int T = 0;
  int D = 0;
  int D_c = 0;
  double dt = 0.0;
  std::vector<std::string> channel_names;  // target channels then context
  std::vector<double> norm_min, norm_max;  // per channel, train-split stats
  std::uint64_t seed = 0;
  bool has_cf = false;
  // real-data extras; empty for synthetic bundles
  std::vector<std::string> context_kinds;       // "cont" | "cat" per c channel
  std::vector<int> vocab_sizes;                 // 0 for continuous channels
  std::map<std::string, std::vector<std::string>> vocabs;

  int split_count(const std::string& name) const {
    for (const auto& [n, c] : splits)
      if (n == name) return c;
    throw DataError("bundle: unknown split '" + name + "'");
  }

  json to_json() const {
    json j;
    j["schema_version"] = schema_version;
    j["dataset_id"] = dataset_id;
    j["scenario"] = scenario;
    json js = json::object();
    for (const auto& [n, c] : splits) js[n] = c;
    j["splits"] = js;
    j["T"] = T;
    j["D"] = D;
    j["D_c"] = D_c;
    j["dt"] = dt;
    j["channel_names"] = channel_names;
    j["normalization"] = {{"min", norm_min}, {"max", norm_max}};
    j["seed"] = seed;
    j["has_cf"] = has_cf;
    if (!context_kinds.empty()) j["context_kinds"] = context_kinds;
    if (!vocab_sizes.empty()) j["vocab_sizes"] = vocab_sizes;
    if (!vocabs.empty()) j["vocabs"] = vocabs;
    return j;
  }

  static BundleMeta from_json(const json& j) {
    BundleMeta m;
    try {
      m.schema_version = j.at("schema_version").get<int>();
      m.dataset_id = j.at("dataset_id").get<std::string>();
      m.scenario = j.at("scenario").get<std::string>();
      for (const std::string name : {"train", "val", "test"})
        if (j.at("splits").contains(name))
          m.splits.emplace_back(name, j.at("splits").at(name).get<int>());
      m.T = j.at("T").get<int>();
      m.D = j.at("D").get<int>();
      m.D_c = j.at("D_c").get<int>();
      m.dt = j.at("dt").get<double>();
      m.channel_names = j.at("channel_names").get<std::vector<std::string>>();
      m.norm_min = j.at("normalization").at("min").get<std::vector<double>>();
      m.norm_max = j.at("normalization").at("max").get<std::vector<double>>();
      m.seed = j.at("seed").get<std::uint64_t>();
      m.has_cf = j.value("has_cf", false);
      if (j.contains("context_kinds"))
        m.context_kinds = j.at("context_kinds").get<std::vector<std::string>>();
      if (j.contains("vocab_sizes"))
        m.vocab_sizes = j.at("vocab_sizes").get<std::vector<int>>();
      if (j.contains("vocabs"))
        m.vocabs = j.at("vocabs")
                       .get<std::map<std::string, std::vector<std::string>>>();
    } catch (const json::exception& e) {
      throw DataError(std::string("bundle: malformed meta.json: ") + e.what());
    }
    CATSG_CHECK(m.schema_version == 1, DataError,
                "bundle: unsupported schema_version");
    CATSG_CHECK(static_cast<int>(m.channel_names.size()) == m.D + m.D_c,
                DataError, "bundle: channel_names does not cover D + D_c");
    CATSG_CHECK(m.norm_min.size() == m.channel_names.size() &&
                    m.norm_max.size() == m.channel_names.size(),
                DataError, "bundle: normalization stats do not cover channels");
    return m;
  }
};

// One split held in memory, [N, C, T].
struct SplitData {
  Tensor<float> x, c;
  std::vector<json> params;
  std::optional<Tensor<float>> xcf, ccf;
};

struct Bundle {
  BundleMeta meta;
  std::map<std::string, SplitData> by_split;

  const SplitData& split(const std::string& name) const {
    auto it = by_split.find(name);
    CATSG_CHECK(it != by_split.end(), DataError,
                "bundle: split '" + name + "' not present");
    return it->second;
  }
};

namespace detail {

inline void write_file_atomic(const std::filesystem::path& path,
                              const std::string& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    CATSG_CHECK(os.good(), IoError, "cannot open " + tmp.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    CATSG_CHECK(os.good(), IoError, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// [N, C, T] in memory -> [sample, time, channel] on disk
inline std::string series_to_disk(const Tensor<float>& t) {
  const int N = t.dim(0), C = t.dim(1), T = t.dim(2);
  std::vector<float> disk(t.numel());
  for (int n = 0; n < N; ++n)
    for (int tt = 0; tt < T; ++tt)
      for (int c = 0; c < C; ++c)
        disk[(static_cast<size_t>(n) * T + tt) * C + c] = t.at(n, c, tt);
  return std::string(reinterpret_cast<const char*>(disk.data()),
                     disk.size() * sizeof(float));
}

inline Tensor<float> series_from_disk(const std::filesystem::path& path, int N,
                                      int C, int T) {
  std::ifstream is(path, std::ios::binary);
  CATSG_CHECK(is.good(), DataError, "cannot open " + path.string());
  std::vector<float> disk(static_cast<size_t>(N) * C * T);
  is.read(reinterpret_cast<char*>(disk.data()),
          static_cast<std::streamsize>(disk.size() * sizeof(float)));
  CATSG_CHECK(is.gcount() ==
                  static_cast<std::streamsize>(disk.size() * sizeof(float)),
              DataError, "truncated tensor file " + path.string());
  char extra;
  CATSG_CHECK(!is.read(&extra, 1), DataError,
              "tensor file larger than meta.json implies: " + path.string());
  Tensor<float> t({N, C, T});
  for (int n = 0; n < N; ++n)
    for (int tt = 0; tt < T; ++tt)
      for (int c = 0; c < C; ++c)
        t.at(n, c, tt) = disk[(static_cast<size_t>(n) * T + tt) * C + c];
  return t;
}

}  // namespace detail

// Writes tensors and params first, meta.json last, each via temp-then-rename,
// so a reader never sees a meta.json describing missing files.
inline void write_bundle(const std::filesystem::path& dir, const Bundle& b) {
  std::filesystem::create_directories(dir);
  const int C_x = b.meta.D, C_c = b.meta.D_c, T = b.meta.T;
  for (const auto& [name, count] : b.meta.splits) {
    const SplitData& sd = b.split(name);
    CATSG_CHECK(sd.x.dim(0) == count && sd.x.dim(1) == C_x && sd.x.dim(2) == T,
                IoError, "bundle: x tensor shape mismatch for split " + name);
    CATSG_CHECK(sd.c.dim(0) == count && sd.c.dim(1) == C_c && sd.c.dim(2) == T,
                IoError, "bundle: c tensor shape mismatch for split " + name);
    detail::write_file_atomic(dir / ("x." + name + ".bin"),
                              detail::series_to_disk(sd.x));
    detail::write_file_atomic(dir / ("c." + name + ".bin"),
                              detail::series_to_disk(sd.c));
    std::string lines;
    for (const auto& p : sd.params) lines += p.dump() + "\n";
    detail::write_file_atomic(dir / ("params." + name + ".jsonl"), lines);
    if (b.meta.has_cf) {
      CATSG_CHECK(sd.xcf && sd.ccf, IoError,
                  "bundle: has_cf set but split " + name + " lacks cf tensors");
      detail::write_file_atomic(dir / ("xcf." + name + ".bin"),
                                detail::series_to_disk(*sd.xcf));
      detail::write_file_atomic(dir / ("ccf." + name + ".bin"),
                                detail::series_to_disk(*sd.ccf));
    }
  }
  detail::write_file_atomic(dir / "meta.json", b.meta.to_json().dump(2) + "\n");
}

inline Bundle read_bundle(const std::filesystem::path& dir) {
  auto meta_path = dir / "meta.json";
  std::ifstream is(meta_path);
  CATSG_CHECK(is.good(), DataError, "no readable meta.json in " + dir.string());
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw DataError("bundle: meta.json parse failure: " + std::string(e.what()));
  }
  Bundle b;
  b.meta = BundleMeta::from_json(j);
  for (const auto& [name, count] : b.meta.splits) {
    SplitData sd;
    sd.x = detail::series_from_disk(dir / ("x." + name + ".bin"), count,
                                    b.meta.D, b.meta.T);
    sd.c = detail::series_from_disk(dir / ("c." + name + ".bin"), count,
                                    b.meta.D_c, b.meta.T);
    std::ifstream ps(dir / ("params." + name + ".jsonl"));
    if (ps.good()) {
      std::string line;
      while (std::getline(ps, line)) {
        if (line.empty()) continue;
        sd.params.push_back(json::parse(line, nullptr, false));
      }
    }
    if (b.meta.has_cf) {
      sd.xcf = detail::series_from_disk(dir / ("xcf." + name + ".bin"), count,
                                        b.meta.D, b.meta.T);
      sd.ccf = detail::series_from_disk(dir / ("ccf." + name + ".bin"), count,
                                        b.meta.D_c, b.meta.T);
    }
    b.by_split.emplace(name, std::move(sd));
  }
  return b;
}

// Normalization helpers. Channel stats are train-split min/max; a degenerate
// channel (max == min) maps to 0.5 so downstream code never divides by zero.
inline float normalize_value(double v, double lo, double hi) {
  if (hi <= lo) return 0.5f;
  return static_cast<float>((v - lo) / (hi - lo));
}

inline double denormalize_value(double v, double lo, double hi) {
  if (hi <= lo) return lo;
  return lo + v * (hi - lo);
}

// De-normalize a [N, C, T] tensor whose channels start at `first_channel`
// within the bundle's channel list (x channels start at 0, c at D).
inline Tensor<double> denormalize(const Tensor<float>& t, const BundleMeta& meta,
                                  int first_channel) {
  Tensor<double> out({t.dim(0), t.dim(1), t.dim(2)});
  for (int n = 0; n < t.dim(0); ++n)
    for (int c = 0; c < t.dim(1); ++c) {
      double lo = meta.norm_min[static_cast<size_t>(first_channel + c)];
      double hi = meta.norm_max[static_cast<size_t>(first_channel + c)];
      for (int tt = 0; tt < t.dim(2); ++tt)
        out.at(n, c, tt) = denormalize_value(t.at(n, c, tt), lo, hi);
    }
  return out;
}

}  // namespace catsg
