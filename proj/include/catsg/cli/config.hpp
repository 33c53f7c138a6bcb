#pragma once

// Run configuration: a single JSON tree with every knob defaulted, merged
// from (defaults <- config file <- dotted command-line overrides), rightmost
// wins. Merging is schema-checked against the default tree, so an unknown
// key or a type change fails fast with its full dotted path. The resolved
// tree is persisted next to stage outputs so a run can be reproduced from
// its artifacts alone.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "catsg/core/errors.hpp"
#include "catsg/core/rng.hpp"
#include "catsg/data/bundle.hpp"
#include "catsg/data/synthetic.hpp"
#include "catsg/diffusion/model.hpp"
#include "catsg/diffusion/train.hpp"
#include "catsg/eval/embedders.hpp"
#include "catsg/eval/metrics.hpp"
#include "catsg/sampling/samplers.hpp"

namespace catsg {

// stage sub-seeds all fan out from the one master seed; Rng(sub_seed(m, n))
// is the same stream as named_stream(m, n)
inline std::uint64_t sub_seed(std::uint64_t master, const std::string& name) {
  return splitmix64(master) ^ fnv1a64(name);
}

inline json default_config() {
  json train = TrainConfig{}.to_json();
  train.erase("seed");      // derived from the master seed, never set directly
  train.erase("run_dir");   // chosen by the stage
  return json{
      {"seed", 42},
      {"ablation", "full"},
      {"dataset",
       {{"kind", "synthetic"},
        {"scenario", "VM"},
        {"counts", {1000, 300, 300}},
        {"T", 64},
        {"dt", 0.25},
        {"with_cf", true},
        {"spec", ""}}},
      {"model",
       {{"n_env", 4},
        {"width", 32},
        {"n_diff", 1000},
        {"tau", 0.1},
        {"n_peaks", 4},
        {"emb_dim", 4},
        {"gn_groups", 8}}},
      {"train", train},
      {"sample",
       {{"mode", "int"},
        {"omega", 1.0},
        {"steps", 20},
        {"sampler", "dpms2"},
        {"clip", 3.0},        // state clamp between solver steps, 0 disables
        {"count", 0},         // 0: every sample in the split
        {"split", "test"}}},
      {"eval",
       {{"metrics", {"mdd", "kl"}},
        {"bins", 50},
        {"eps", 1e-8},
        {"mmd_sigma", 0.0},   // 0: median heuristic
        {"embed",
         {{"d_e", 32},
          {"width", 16},
          {"blocks", 2},
          {"steps", 300},
          {"batch", 64},
          {"lr", 1e-3},
          {"tau", 0.1}}}}},
      {"diagnose", {{"frac", 0.3}, {"grid", 50}, {"bins", 10}}}};
}

namespace detail {

inline std::string join_keys(const json& obj) {
  std::string out;
  for (const auto& [k, v] : obj.items()) {
    if (!out.empty()) out += ", ";
    out += k;
  }
  return out;
}

inline bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  return a.type() == b.type();
}

// schema-checked recursive merge of `patch` onto `base`
inline void merge_config(json& base, const json& patch,
                         const std::string& path) {
  CATSG_CHECK(patch.is_object(), ConfigError,
              "config: expected an object at '" +
                  (path.empty() ? "<root>" : path) + "'");
  for (const auto& [key, value] : patch.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    CATSG_CHECK(base.contains(key), ConfigError,
                "config: unknown key '" + here + "' (valid keys here: " +
                    join_keys(base) + ")");
    json& slot = base[key];
    if (slot.is_object()) {
      merge_config(slot, value, here);
    } else {
      CATSG_CHECK(same_kind(slot, value), ConfigError,
                  "config: type mismatch at '" + here + "': expected " +
                      slot.type_name() + ", got " + value.type_name());
      slot = value;
    }
  }
}

// one dotted override, value already parsed to json
inline void apply_override(json& base, const std::string& dotted,
                           const json& value) {
  json* node = &base;
  std::string path;
  std::istringstream parts(dotted);
  std::string key;
  std::vector<std::string> keys;
  while (std::getline(parts, key, '.')) keys.push_back(key);
  CATSG_CHECK(!keys.empty(), ConfigError, "config: empty override path");
  for (size_t i = 0; i + 1 < keys.size(); ++i) {
    path = path.empty() ? keys[i] : path + "." + keys[i];
    CATSG_CHECK(node->contains(keys[i]) && (*node)[keys[i]].is_object(),
                ConfigError,
                "config: unknown section '" + path + "' (valid keys here: " +
                    join_keys(*node) + ")");
    node = &(*node)[keys[i]];
  }
  json leaf = json::object();
  leaf[keys.back()] = value;
  merge_config(*node, leaf, path);
}

// override values come as flag text; bare words become strings
inline json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return json(text);
  }
}

}  // namespace detail

// defaults <- optional file <- dotted overrides ("a.b.c=value")
inline json resolve_config(const std::filesystem::path& file,
                           const std::vector<std::string>& overrides) {
  json cfg = default_config();
  if (!file.empty()) {
    std::ifstream in(file);
    CATSG_CHECK(in.good(), IoError,
                "config: cannot open " + file.string());
    json user;
    try {
      in >> user;
    } catch (const json::exception& e) {
      throw ConfigError("config: " + file.string() + " is not valid JSON: " +
                        e.what());
    }
    detail::merge_config(cfg, user, "");
  }
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    CATSG_CHECK(eq != std::string::npos && eq > 0, ConfigError,
                "config: override '" + ov + "' is not of the form key=value");
    detail::apply_override(cfg, ov.substr(0, eq),
                           detail::parse_override_value(ov.substr(eq + 1)));
  }
  return cfg;
}

// ------------------------------------------------- typed section accessors

inline ArchConfig arch_from_config(const json& cfg) {
  ArchConfig a;
  const json& m = cfg.at("model");
  a.n_env = m.at("n_env").get<int>();
  a.width = m.at("width").get<int>();
  a.n_diff = m.at("n_diff").get<int>();
  a.tau = m.at("tau").get<double>();
  a.n_peaks = m.at("n_peaks").get<int>();
  a.emb_dim = m.at("emb_dim").get<int>();
  a.gn_groups = m.at("gn_groups").get<int>();
  a.ablation = cfg.at("ablation").get<std::string>();
  a.validate();
  return a;
}

inline TrainConfig train_from_config(const json& cfg) {
  TrainConfig tc = TrainConfig::from_json(cfg.at("train"));
  tc.seed = sub_seed(cfg.at("seed").get<std::uint64_t>(), "train");
  return tc;
}

inline SampleConfig sample_from_config(const json& cfg) {
  const json& s = cfg.at("sample");
  SampleConfig sc;
  sc.mode = s.at("mode").get<std::string>();
  sc.omega = s.at("omega").get<double>();
  sc.steps = s.at("steps").get<int>();
  sc.sampler = s.at("sampler").get<std::string>();
  sc.clip = s.at("clip").get<double>();
  sc.seed = sub_seed(cfg.at("seed").get<std::uint64_t>(), "sample");
  return sc;
}

inline SynthConfig synth_from_config(const json& cfg) {
  const json& d = cfg.at("dataset");
  SynthConfig sc;
  sc.scenario = scenario_from_string(d.at("scenario").get<std::string>());
  const auto counts = d.at("counts").get<std::vector<int>>();
  CATSG_CHECK(counts.size() == 3, ConfigError,
              "dataset.counts must list train, val, test sizes");
  for (int i = 0; i < 3; ++i) sc.counts[i] = counts[static_cast<size_t>(i)];
  sc.T = d.at("T").get<int>();
  sc.dt = d.at("dt").get<double>();
  sc.with_cf = d.at("with_cf").get<bool>();
  sc.seed = sub_seed(cfg.at("seed").get<std::uint64_t>(), "data");
  return sc;
}

inline HistogramSpec hist_from_config(const json& cfg) {
  HistogramSpec h;
  h.bins = cfg.at("eval").at("bins").get<int>();
  h.eps = cfg.at("eval").at("eps").get<double>();
  h.validate();
  return h;
}

inline EmbedderConfig embed_from_config(const json& cfg) {
  const json& e = cfg.at("eval").at("embed");
  EmbedderConfig ec;
  ec.d_e = e.at("d_e").get<int>();
  ec.width = e.at("width").get<int>();
  ec.blocks = e.at("blocks").get<int>();
  ec.steps = e.at("steps").get<int>();
  ec.batch = e.at("batch").get<int>();
  ec.lr = e.at("lr").get<double>();
  ec.tau = e.at("tau").get<double>();
  ec.seed = sub_seed(cfg.at("seed").get<std::uint64_t>(), "embed");
  ec.validate();
  return ec;
}

// canonical dump used for manifests and change detection
inline std::string config_canonical(const json& cfg) { return cfg.dump(2); }

inline std::uint64_t config_hash(const json& cfg) {
  return fnv1a64(config_canonical(cfg));
}

inline void write_config_echo(const std::filesystem::path& dir,
                              const json& cfg) {
  detail::write_file_atomic(dir / "config.json", config_canonical(cfg) + "\n");
}

}  // namespace catsg
