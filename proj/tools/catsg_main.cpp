// catsg command line: synthetic data, ingest, training, sampling,
// evaluation, diagnostics, and sweep drivers over one shared config tree.

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "catsg/cli/stages.hpp"

namespace {

using catsg::ConfigError;

constexpr const char* kUsage = R"(usage: catsg <command> [flags]

commands:
  gen-data      write a synthetic dataset bundle        --out DIR
  ingest        build a bundle from CSV files           --spec NAME|FILE --csv FILE... --out DIR
  train         train a model on a bundle               --data DIR --out DIR
  sample        draw series from a checkpoint           --ckpt FILE --data DIR --out DIR [--action JSON]
  eval          score generated series against a bundle --real DIR --gen DIR [--out FILE]
  diagnose      context/response curves per split       --data DIR --context NAME --out FILE
  embed-export  joint embeddings as CSV                 --data DIR --out FILE [--split NAME]
  sweep         multi-run drivers with resume           --kind steps|ablation --out DIR [--data DIR]

common flags:
  --config FILE             JSON config merged over defaults
  --seed N --scenario S --ablation V
  --mode obs|int|cf --omega W --steps N --sampler dpms2|ddpm --count N --split NAME
  --metrics a,b,c           any of mdd, kl, mmd, jftsd
  --<section>.<key> VALUE   any config leaf, e.g. --train.steps 500
)";

// flags that are shorthand for a config path
const std::map<std::string, std::string> kShortcut = {
    {"seed", "seed"},           {"ablation", "ablation"},
    {"scenario", "dataset.scenario"},
    {"mode", "sample.mode"},    {"omega", "sample.omega"},
    {"steps", "sample.steps"},  {"sampler", "sample.sampler"},
    {"count", "sample.count"},  {"split", "sample.split"},
};

// flags that carry paths or command arguments rather than config values
const std::vector<std::string> kPathFlags = {
    "config", "out", "data", "ckpt", "real", "gen",
    "spec",   "csv", "context", "metrics", "kind", "action"};

struct Args {
  std::string command;
  std::map<std::string, std::string> paths;  // kPathFlags minus csv
  std::vector<std::string> csvs;
  std::vector<std::string> overrides;  // "a.b.c=value"
};

Args parse_args(int argc, char** argv) {
  Args a;
  a.command = argv[1];
  int i = 2;
  while (i < argc) {
    std::string flag = argv[i];
    if (flag.rfind("--", 0) != 0)
      throw ConfigError("unexpected argument '" + flag + "' (flags start with --)");
    flag = flag.substr(2);
    std::string value;
    const auto eq = flag.find('=');
    if (eq != std::string::npos) {
      value = flag.substr(eq + 1);
      flag = flag.substr(0, eq);
      ++i;
    } else {
      if (i + 1 >= argc)
        throw ConfigError("flag --" + flag + " needs a value");
      value = argv[i + 1];
      i += 2;
    }
    if (const auto it = kShortcut.find(flag); it != kShortcut.end()) {
      a.overrides.push_back(it->second + "=" + value);
    } else if (flag == "csv") {
      a.csvs.push_back(value);
    } else if (std::find(kPathFlags.begin(), kPathFlags.end(), flag) !=
               kPathFlags.end()) {
      a.paths[flag] = value;
    } else if (flag.find('.') != std::string::npos) {
      a.overrides.push_back(flag + "=" + value);
    } else {
      std::string known;
      for (const auto& [k, v] : kShortcut) known += " --" + k;
      for (const auto& k : kPathFlags) known += " --" + k;
      throw ConfigError("unknown flag --" + flag + " (known flags:" + known +
                        "; config leaves go by dotted path, e.g. --train.steps)");
    }
  }
  return a;
}

std::string need(const Args& a, const std::string& flag) {
  const auto it = a.paths.find(flag);
  if (it == a.paths.end() || it->second.empty())
    throw ConfigError(a.command + " requires --" + flag);
  return it->second;
}

std::string opt(const Args& a, const std::string& flag,
                const std::string& fallback = "") {
  const auto it = a.paths.find(flag);
  return it == a.paths.end() ? fallback : it->second;
}

int run(int argc, char** argv) {
  if (argc < 2) {
    std::fputs(kUsage, stderr);
    return 2;
  }
  const std::string cmd = argv[1];
  if (cmd == "help" || cmd == "--help" || cmd == "-h") {
    std::fputs(kUsage, stdout);
    return 0;
  }

  Args a = parse_args(argc, argv);
  if (const std::string m = opt(a, "metrics"); !m.empty()) {
    catsg::json arr = catsg::json::array();
    std::string item;
    std::istringstream parts(m);
    while (std::getline(parts, item, ',')) arr.push_back(item);
    a.overrides.push_back("eval.metrics=" + arr.dump());
  }
  const catsg::json cfg = catsg::resolve_config(opt(a, "config"), a.overrides);

  catsg::json result;
  if (cmd == "gen-data") {
    result = catsg::stage_gen_data(cfg, need(a, "out"));
  } else if (cmd == "ingest") {
    std::vector<catsg::fs::path> csvs(a.csvs.begin(), a.csvs.end());
    if (csvs.empty()) throw ConfigError("ingest requires at least one --csv");
    result = catsg::stage_ingest(cfg, need(a, "spec"), csvs, need(a, "out"));
  } else if (cmd == "train") {
    result = catsg::stage_train(cfg, need(a, "data"), need(a, "out"));
  } else if (cmd == "sample") {
    catsg::json action;
    if (const std::string text = opt(a, "action"); !text.empty()) {
      try {
        action = catsg::json::parse(text);
      } catch (const catsg::json::exception& e) {
        throw ConfigError(std::string("--action is not valid JSON: ") +
                          e.what());
      }
    }
    result = catsg::stage_sample(cfg, need(a, "ckpt"), need(a, "data"),
                                 need(a, "out"), action);
  } else if (cmd == "eval") {
    const std::string gen = need(a, "gen");
    const std::string out =
        opt(a, "out", (catsg::fs::path(gen) / "report.json").string());
    result = catsg::stage_eval(cfg, need(a, "real"), gen, out);
  } else if (cmd == "diagnose") {
    result = catsg::stage_diagnose(cfg, need(a, "data"), need(a, "context"),
                                   need(a, "out"));
  } else if (cmd == "embed-export") {
    result = catsg::stage_embed_export(
        cfg, need(a, "data"), cfg.at("sample").at("split").get<std::string>(),
        need(a, "out"));
  } else if (cmd == "sweep") {
    const std::string kind = need(a, "kind");
    if (kind == "steps")
      result = catsg::sweep_steps(cfg, opt(a, "data"), need(a, "out"));
    else if (kind == "ablation")
      result = catsg::sweep_ablation(cfg, opt(a, "data"), need(a, "out"));
    else
      throw ConfigError("sweep --kind must be steps or ablation, not '" +
                        kind + "'");
  } else {
    std::fputs(kUsage, stderr);
    throw ConfigError("unknown command '" + cmd + "'");
  }

  std::fputs((result.dump(2) + "\n").c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const catsg::ConfigError& e) {
    std::fprintf(stderr, "catsg: %s\n", e.what());
    return 2;
  } catch (const catsg::DataError& e) {
    std::fprintf(stderr, "catsg: %s\n", e.what());
    return 3;
  } catch (const catsg::IoError& e) {
    std::fprintf(stderr, "catsg: %s\n", e.what());
    return 3;
  } catch (const catsg::NumericError& e) {
    std::fprintf(stderr, "catsg: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "catsg: %s\n", e.what());
    return 1;
  }
}
