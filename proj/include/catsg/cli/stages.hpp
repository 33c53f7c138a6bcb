#pragma once

// Pipeline stages behind the CLI subcommands. Every stage is a pure
// function of (resolved config, input paths): it writes its artifacts plus
// a config echo into its output directory, and multi-stage drivers track
// progress in a manifest.json so an interrupted sweep resumes instead of
// recomputing finished work.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "catsg/cli/config.hpp"
#include "catsg/data/synthetic.hpp"
#include "catsg/diffusion/checkpoint.hpp"
#include "catsg/eval/diagnostics.hpp"
#include "catsg/ingest/ingest.hpp"

namespace catsg {

namespace fs = std::filesystem;

inline json versions_json() {
  return json{{"catsg", "0.1.0"},
              {"compiler", __VERSION__},
              {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                            std::to_string(EIGEN_MAJOR_VERSION) + "." +
                            std::to_string(EIGEN_MINOR_VERSION)},
              {"json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
}

// Per-directory progress ledger. A manifest is bound to one resolved
// config; if the config changes, previous stage results are stale and the
// ledger restarts empty.
class Manifest {
 public:
  static Manifest open(const fs::path& dir, const json& cfg) {
    fs::create_directories(dir);
    Manifest m;
    m.dir_ = dir;
    const std::string hash = detail::hex16(config_hash(cfg));
    if (fs::exists(m.file())) {
      std::ifstream in(m.file());
      try {
        in >> m.j_;
      } catch (const json::exception&) {
        m.j_ = json();
      }
    }
    if (!m.j_.is_object() || m.j_.value("config_hash", "") != hash) {
      if (m.j_.is_object())
        warn("manifest: config changed under " + dir.string() +
             "; stages will rerun");
      m.j_ = json{{"config_hash", hash},
                  {"versions", versions_json()},
                  {"stages", json::object()}};
    }
    m.save();
    return m;
  }

  bool done(const std::string& stage) const {
    const auto& st = j_.at("stages");
    return st.contains(stage) && st.at(stage).value("status", "") == "done";
  }

  json info(const std::string& stage) const {
    return j_.at("stages").value(stage, json::object());
  }

  void record(const std::string& stage, const std::string& status,
              json extra = json::object()) {
    extra["status"] = status;
    j_["stages"][stage] = std::move(extra);
    save();
  }

  const json& tree() const { return j_; }
  void set(const std::string& key, json value) {
    j_[key] = std::move(value);
    save();
  }

 private:
  fs::path file() const { return dir_ / "manifest.json"; }
  void save() const {
    detail::write_file_atomic(file(), j_.dump(2) + "\n");
  }

  fs::path dir_;
  json j_;
};

// runs fn once, recording wall time and failure point in the manifest
inline json run_stage(Manifest& m, const std::string& stage,
                      const std::function<json()>& fn) {
  if (m.done(stage)) return m.info(stage);
  m.record(stage, "running");
  const auto t0 = std::chrono::steady_clock::now();
  try {
    json info = fn();
    info["seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    m.record(stage, "done", info);
    return m.info(stage);
  } catch (const std::exception& e) {
    m.record(stage, "failed", json{{"error", e.what()}});
    throw;
  }
}

// ----------------------------------------------------------------- stages

inline json stage_gen_data(const json& cfg, const fs::path& out_dir) {
  const SynthConfig sc = synth_from_config(cfg);
  const Bundle b = build_synthetic_bundle(sc);
  write_bundle(out_dir, b);
  write_config_echo(out_dir, cfg);
  json splits = json::object();
  for (const auto& [name, count] : b.meta.splits) splits[name] = count;
  return json{{"dataset_id", b.meta.dataset_id},
              {"out", out_dir.string()},
              {"splits", splits}};
}

inline json stage_ingest(const json& cfg, const std::string& spec_arg,
                         const std::vector<fs::path>& csvs,
                         const fs::path& out_dir) {
  DatasetSpec spec;
  if (fs::exists(spec_arg)) {
    std::ifstream in(spec_arg);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw ConfigError("dataset spec " + spec_arg + " is not valid JSON: " +
                        e.what());
    }
    spec = DatasetSpec::from_json(j);
  } else {
    spec = dataset_preset(spec_arg);
  }
  IngestReport report;
  const Bundle b = ingest_to_bundle(spec, csvs, out_dir, &report);
  write_config_echo(out_dir, cfg);
  detail::write_file_atomic(out_dir / "ingest_report.json",
                            report.to_json().dump(2) + "\n");
  return json{{"dataset_id", b.meta.dataset_id},
              {"out", out_dir.string()},
              {"report", report.to_json()}};
}

inline json stage_train(const json& cfg, const fs::path& data_dir,
                        const fs::path& run_dir) {
  const Bundle bundle = read_bundle(data_dir);
  fs::create_directories(run_dir);

  const ArchConfig arch = arch_from_config(cfg);
  const std::uint64_t master = cfg.at("seed").get<std::uint64_t>();
  Rng init = named_stream(master, "init");
  CatsgModel<float> model(arch, bundle.meta, init);

  TrainConfig tc = train_from_config(cfg);
  tc.run_dir = run_dir.string();
  Trainer<float> trainer(model, bundle, tc);

  const fs::path ckpt = run_dir / "checkpoint.bin";
  const json extra{{"dataset_id", bundle.meta.dataset_id},
                   {"config_hash", detail::hex16(config_hash(cfg))}};
  const TrainResult result = trainer.run([&](int step) {
    save_checkpoint(ckpt, model, step, extra);
  });

  std::string hist;
  for (const auto& r : result.history)
    hist += json{{"step", r.step},
                 {"warmup", r.warmup},
                 {"total", r.total},
                 {"l_eps", r.l_eps},
                 {"l_sw", r.l_sw},
                 {"l_orth", r.l_orth}}
                .dump() +
            "\n";
  detail::write_file_atomic(run_dir / "history.jsonl", hist);
  write_config_echo(run_dir, cfg);
  return json{{"checkpoint", ckpt.string()},
              {"steps", result.steps_done},
              {"dataset_id", bundle.meta.dataset_id}};
}

namespace detail {

inline std::vector<int> head_indices(int count) {
  std::vector<int> idx(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) idx[static_cast<size_t>(i)] = i;
  return idx;
}

// context-channel index by name or numeric string
inline int context_channel(const BundleMeta& meta, const std::string& which) {
  for (int i = 0; i < meta.D_c; ++i)
    if (meta.channel_names[static_cast<size_t>(meta.D + i)] == which) return i;
  try {
    size_t used = 0;
    const int idx = std::stoi(which, &used);
    if (used == which.size() && idx >= 0 && idx < meta.D_c) return idx;
  } catch (const std::exception&) {
  }
  throw ConfigError("no context channel named '" + which + "'");
}

// counterfactual action: {"set": {"channel", "value"}} on a categorical
// channel or {"add": {"channel", "value"}} on a continuous one; applied in
// raw data units to every time step
inline Tensor<float> apply_action(const Tensor<float>& c_norm,
                                  const BundleMeta& meta,
                                  const json& action) {
  CATSG_CHECK(action.is_object() && action.size() == 1 &&
                  (action.contains("set") || action.contains("add")),
              ConfigError,
              "action must be {\"set\": {...}} or {\"add\": {...}}");
  const bool is_set = action.contains("set");
  const json& body = is_set ? action.at("set") : action.at("add");
  const int ch = context_channel(meta, body.at("channel").get<std::string>());
  const std::string kind =
      meta.context_kinds.empty() ? "cont"
                                 : meta.context_kinds[static_cast<size_t>(ch)];

  Tensor<float> out = c_norm;
  if (is_set) {
    CATSG_CHECK(kind == "cat", ConfigError,
                "set actions apply to categorical channels; '" +
                    body.at("channel").get<std::string>() +
                    "' is continuous (use add)");
    float index;
    if (body.at("value").is_string()) {
      const auto& name =
          meta.channel_names[static_cast<size_t>(meta.D + ch)];
      const auto& vocab = meta.vocabs.at(name);
      const auto it = std::find(vocab.begin(), vocab.end(),
                                body.at("value").get<std::string>());
      index = it == vocab.end()
                  ? 0.0f
                  : static_cast<float>(it - vocab.begin()) + 1.0f;
    } else {
      index = body.at("value").get<float>();
    }
    for (int n = 0; n < out.dim(0); ++n)
      for (int t = 0; t < out.dim(2); ++t) out.at(n, ch, t) = index;
  } else {
    CATSG_CHECK(kind == "cont", ConfigError,
                "add actions apply to continuous channels; '" +
                    body.at("channel").get<std::string>() +
                    "' is categorical (use set)");
    const size_t k = static_cast<size_t>(meta.D + ch);
    const double span = meta.norm_max[k] - meta.norm_min[k];
    const float delta =
        static_cast<float>(body.at("value").get<double>() / span);
    for (int n = 0; n < out.dim(0); ++n)
      for (int t = 0; t < out.dim(2); ++t) out.at(n, ch, t) += delta;
  }
  return out;
}

}  // namespace detail

inline json stage_sample(const json& cfg, const fs::path& ckpt_path,
                         const fs::path& data_dir, const fs::path& out_dir,
                         const json& action = json()) {
  CheckpointInfo info;
  auto model = load_checkpoint<float>(ckpt_path, &info);
  const Bundle bundle = read_bundle(data_dir);
  CATSG_CHECK(bundle.meta.T == info.meta.T && bundle.meta.D == info.meta.D &&
                  bundle.meta.D_c == info.meta.D_c,
              DataError,
              "checkpoint and bundle disagree on series dimensions");
  if (bundle.meta.dataset_id != info.meta.dataset_id)
    warn("sampling against '" + bundle.meta.dataset_id +
         "' with a model trained on '" + info.meta.dataset_id + "'");

  const std::string split = cfg.at("sample").at("split").get<std::string>();
  const SplitData& sd = bundle.split(split);
  int count = cfg.at("sample").at("count").get<int>();
  const int avail = sd.x.dim(0);
  if (count <= 0 || count > avail) count = avail;
  const auto idx = detail::head_indices(count);

  SampleConfig scfg = sample_from_config(cfg);
  const Tensor<float> c = detail::rows_subset(sd.c, idx);

  SampleResult res;
  Tensor<float> c_used = c;
  if (scfg.mode == "cf") {
    const Tensor<float> x_fact = detail::rows_subset(sd.x, idx);
    Tensor<float> c_prime;
    if (!action.is_null() && !action.empty()) {
      c_prime = detail::apply_action(c, bundle.meta, action);
    } else {
      CATSG_CHECK(sd.ccf.has_value(), ConfigError,
                  "counterfactual sampling needs --action or a bundle with "
                  "counterfactual pairs");
      c_prime = detail::rows_subset(*sd.ccf, idx);
    }
    res = sample_counterfactual(*model, x_fact, c, c_prime, scfg);
    c_used = c_prime;
  } else if (scfg.mode == "obs") {
    res = sample_observational(*model, c, scfg);
  } else {
    res = sample_interventional(*model, c, scfg);
  }

  fs::create_directories(out_dir);
  detail::write_file_atomic(out_dir / "x.gen.bin",
                            detail::series_to_disk(res.x_norm));
  detail::write_file_atomic(out_dir / "c.used.bin",
                            detail::series_to_disk(c_used));
  const json gen_meta{{"mode", scfg.mode},
                      {"split", split},
                      {"count", count},
                      {"omega", scfg.omega},
                      {"steps", scfg.steps},
                      {"sampler", scfg.sampler},
                      {"clip", scfg.clip},
                      {"seed", scfg.seed},
                      {"posterior_evals", res.posterior_evals},
                      {"dataset_id", bundle.meta.dataset_id},
                      {"T", bundle.meta.T},
                      {"D", bundle.meta.D},
                      {"D_c", bundle.meta.D_c}};
  detail::write_file_atomic(out_dir / "gen_meta.json",
                            gen_meta.dump(2) + "\n");
  write_config_echo(out_dir, cfg);
  return gen_meta;
}

inline json stage_eval(const json& cfg, const fs::path& real_dir,
                       const fs::path& gen_dir, const fs::path& out_path) {
  const Bundle bundle = read_bundle(real_dir);
  std::ifstream gm(gen_dir / "gen_meta.json");
  CATSG_CHECK(gm.good(), DataError,
              "no gen_meta.json under " + gen_dir.string());
  json gen_meta;
  try {
    gm >> gen_meta;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed gen_meta.json: ") + e.what());
  }

  const std::string split = gen_meta.at("split").get<std::string>();
  const std::string mode = gen_meta.at("mode").get<std::string>();
  const int count = gen_meta.at("count").get<int>();
  const SplitData& sd = bundle.split(split);

  const Tensor<float> gen_x = detail::series_from_disk(
      gen_dir / "x.gen.bin", count, bundle.meta.D, bundle.meta.T);
  const Tensor<float> gen_c = detail::series_from_disk(
      gen_dir / "c.used.bin", count, bundle.meta.D_c, bundle.meta.T);

  // counterfactual runs score against the ground-truth counterfactuals
  Tensor<float> real_x = sd.x, real_c = sd.c;
  if (mode == "cf") {
    CATSG_CHECK(sd.xcf.has_value() && sd.ccf.has_value(), DataError,
                "bundle has no counterfactual pairs to evaluate against");
    real_x = *sd.xcf;
    real_c = *sd.ccf;
  }

  std::vector<std::string> metrics =
      cfg.at("eval").at("metrics").get<std::vector<std::string>>();
  const HistogramSpec hist = hist_from_config(cfg);

  json report{{"real", real_dir.string()},
              {"gen", gen_dir.string()},
              {"split", split},
              {"mode", mode}};
  for (const auto& metric : metrics) {
    json entry{{"n_real", real_x.dim(0)}, {"n_gen", gen_x.dim(0)}};
    if (metric == "mdd") {
      entry["value"] = mdd(real_x, gen_x, hist);
      entry["config"] = {{"bins", hist.bins}};
    } else if (metric == "kl") {
      entry["value"] = kl(real_x, gen_x, hist);
      entry["config"] = {{"bins", hist.bins}, {"eps", hist.eps}};
    } else if (metric == "mmd") {
      double sigma = cfg.at("eval").at("mmd_sigma").get<double>();
      if (sigma <= 0.0) sigma = median_bandwidth(real_x, gen_x);
      entry["value"] = mmd2(real_x, gen_x, sigma);
      entry["config"] = {{"sigma", sigma}};
    } else if (metric == "jftsd") {
      const EmbedderConfig ec = embed_from_config(cfg);
      const SplitData& train = bundle.split("train");
      const auto emb = train_embedders(train.x, train.c, ec);
      entry["value"] = jftsd(real_x, real_c, gen_x, gen_c, *emb);
      entry["config"] = {
          {"d_e", ec.d_e}, {"steps", ec.steps}, {"seed", ec.seed}};
    } else {
      throw ConfigError("unknown metric '" + metric +
                        "' (valid: mdd, kl, mmd, jftsd)");
    }
    report[metric] = std::move(entry);
  }
  fs::create_directories(out_path.parent_path().empty()
                             ? fs::path(".")
                             : out_path.parent_path());
  detail::write_file_atomic(out_path, report.dump(2) + "\n");
  return report;
}

namespace detail {

inline std::vector<ScatterSplit> scatter_by_split(const Bundle& b,
                                                  int context_ch) {
  std::vector<ScatterSplit> out;
  for (const auto& [name, n] : b.meta.splits) {
    const SplitData& sd = b.split(name);
    ScatterSplit s;
    s.name = name;
    s.x.resize(static_cast<size_t>(sd.x.dim(0)));
    s.c.resize(static_cast<size_t>(sd.x.dim(0)));
    const size_t ck = static_cast<size_t>(b.meta.D + context_ch);
    for (int i = 0; i < sd.x.dim(0); ++i) {
      double sx = 0.0, sc = 0.0;
      for (int t = 0; t < b.meta.T; ++t) {
        sx += denormalize_value(sd.x.at(i, 0, t), b.meta.norm_min[0],
                                b.meta.norm_max[0]);
        sc += denormalize_value(sd.c.at(i, context_ch, t),
                                b.meta.norm_min[ck], b.meta.norm_max[ck]);
      }
      s.x[static_cast<size_t>(i)] = sx / b.meta.T;
      s.c[static_cast<size_t>(i)] = sc / b.meta.T;
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace detail

inline json stage_diagnose(const json& cfg, const fs::path& data_dir,
                           const std::string& context, const fs::path& out) {
  const Bundle bundle = read_bundle(data_dir);
  const int ch = detail::context_channel(bundle.meta, context);
  const auto splits = detail::scatter_by_split(bundle, ch);

  const double frac = cfg.at("diagnose").at("frac").get<double>();
  const int grid_points = cfg.at("diagnose").at("grid").get<int>();
  const int bins = cfg.at("diagnose").at("bins").get<int>();

  const LowessDiagnostic diag = lowess_diagnostic(splits, frac, grid_points);
  std::string csv = "split,c,fit\n";
  for (const auto& curve : diag.curves)
    for (size_t g = 0; g < diag.grid.size(); ++g)
      csv += curve.split + "," + std::to_string(diag.grid[g]) + "," +
             std::to_string(curve.fit[g]) + "\n";
  detail::write_file_atomic(out, csv);

  const ScatterSplit* train = nullptr;
  for (const auto& s : splits)
    if (s.name == "train") train = &s;
  CATSG_CHECK(train, DataError, "bundle has no train split to fit edges on");
  const auto edges = equal_width_edges(train->c, bins);
  fs::path bins_out = out;
  bins_out.replace_filename(out.stem().string() + "_bins" +
                            out.extension().string());
  std::string bcsv = "split,bin,lo,hi,mean,se,count\n";
  for (const auto& row : binned_means(splits, edges))
    bcsv += row.split + "," + std::to_string(row.bin) + "," +
            std::to_string(row.lo) + "," + std::to_string(row.hi) + "," +
            std::to_string(row.mean) + "," + std::to_string(row.se) + "," +
            std::to_string(row.count) + "\n";
  detail::write_file_atomic(bins_out, bcsv);

  return json{{"curves", out.string()},
              {"bins", bins_out.string()},
              {"channel", bundle.meta
                              .channel_names[static_cast<size_t>(
                                  bundle.meta.D + ch)]}};
}

inline json stage_embed_export(const json& cfg, const fs::path& data_dir,
                               const std::string& split,
                               const fs::path& out) {
  const Bundle bundle = read_bundle(data_dir);
  const EmbedderConfig ec = embed_from_config(cfg);
  const SplitData& train = bundle.split("train");
  const auto emb = train_embedders(train.x, train.c, ec);
  const SplitData& sd = bundle.split(split);
  const Eigen::MatrixXd z = emb->embed_joint(sd.x, sd.c);

  std::string csv = "index";
  for (int j = 0; j < ec.d_e; ++j) csv += ",z_time_" + std::to_string(j);
  for (int j = 0; j < ec.d_e; ++j) csv += ",z_meta_" + std::to_string(j);
  csv += "\n";
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    csv += std::to_string(i);
    for (Eigen::Index j = 0; j < z.cols(); ++j)
      csv += "," + std::to_string(z(i, j));
    csv += "\n";
  }
  detail::write_file_atomic(out, csv);
  return json{{"out", out.string()},
              {"split", split},
              {"rows", static_cast<int>(z.rows())}};
}

// ------------------------------------------------------------------ sweeps

// resolves the dataset for a sweep: an explicit bundle wins, otherwise
// synthetic data is generated (once) under the sweep directory
inline fs::path sweep_dataset(const json& cfg, const fs::path& data_dir,
                              const fs::path& out_dir, Manifest& m) {
  if (!data_dir.empty()) {
    CATSG_CHECK(fs::exists(data_dir / "meta.json"), DataError,
                "no bundle at " + data_dir.string());
    return data_dir;
  }
  const fs::path gen = out_dir / "data";
  run_stage(m, "gen-data", [&] { return stage_gen_data(cfg, gen); });
  return gen;
}

inline json sweep_steps(const json& cfg, const fs::path& data_dir,
                        const fs::path& out_dir) {
  Manifest m = Manifest::open(out_dir, cfg);
  const fs::path data = sweep_dataset(cfg, data_dir, out_dir, m);
  const fs::path run = out_dir / "train";
  run_stage(m, "train", [&] { return stage_train(cfg, data, run); });

  json rows = json::array();
  for (int steps : {5, 10, 20, 50, 100}) {
    const fs::path stage_dir =
        out_dir / ("steps_" + std::to_string(steps));
    json cfg_s = cfg;
    cfg_s["sample"]["steps"] = steps;
    const std::string tag = std::to_string(steps);
    run_stage(m, "sample_" + tag, [&] {
      return stage_sample(cfg_s, run / "checkpoint.bin", data,
                          stage_dir / "gen");
    });
    const json report = run_stage(m, "eval_" + tag, [&] {
      return stage_eval(cfg_s, data, stage_dir / "gen",
                        stage_dir / "report.json");
    });
    rows.push_back(json{{"steps", steps},
                        {"mdd", report.at("mdd").at("value")},
                        {"kl", report.at("kl").at("value")}});
  }

  const json summary{{"kind", "steps"}, {"rows", rows}};
  detail::write_file_atomic(out_dir / "summary.json", summary.dump(2) + "\n");
  std::string csv = "steps,mdd,kl\n";
  for (const auto& r : rows)
    csv += std::to_string(r.at("steps").get<int>()) + "," +
           std::to_string(r.at("mdd").get<double>()) + "," +
           std::to_string(r.at("kl").get<double>()) + "\n";
  detail::write_file_atomic(out_dir / "summary.csv", csv);
  m.set("summary", summary);
  return summary;
}

inline json sweep_ablation(const json& cfg, const fs::path& data_dir,
                           const fs::path& out_dir) {
  Manifest m = Manifest::open(out_dir, cfg);
  const fs::path data = sweep_dataset(cfg, data_dir, out_dir, m);
  {
    const Bundle probe = read_bundle(data);
    CATSG_CHECK(probe.meta.has_cf, DataError,
                "ablation sweep compares counterfactuals; bundle '" +
                    probe.meta.dataset_id + "' has no counterfactual pairs");
  }

  json rows = json::array();
  for (const std::string variant :
       {"full", "rand_env", "no_sw", "frozen_env"}) {
    json cfg_v = cfg;
    cfg_v["ablation"] = variant;
    cfg_v["sample"]["mode"] = "cf";
    const fs::path vdir = out_dir / variant;
    run_stage(m, "train_" + variant, [&] {
      return stage_train(cfg_v, data, vdir / "train");
    });
    run_stage(m, "sample_" + variant, [&] {
      return stage_sample(cfg_v, vdir / "train" / "checkpoint.bin", data,
                          vdir / "gen");
    });
    const json report = run_stage(m, "eval_" + variant, [&] {
      return stage_eval(cfg_v, data, vdir / "gen", vdir / "report.json");
    });
    rows.push_back(json{{"variant", variant},
                        {"cf_mdd", report.at("mdd").at("value")},
                        {"cf_kl", report.at("kl").at("value")}});
  }

  const json summary{{"kind", "ablation"}, {"rows", rows}};
  detail::write_file_atomic(out_dir / "comparison.json",
                            summary.dump(2) + "\n");
  std::string csv = "variant,cf_mdd,cf_kl\n";
  for (const auto& r : rows)
    csv += r.at("variant").get<std::string>() + "," +
           std::to_string(r.at("cf_mdd").get<double>()) + "," +
           std::to_string(r.at("cf_kl").get<double>()) + "\n";
  detail::write_file_atomic(out_dir / "comparison.csv", csv);
  m.set("summary", summary);
  return summary;
}

}  // namespace catsg
