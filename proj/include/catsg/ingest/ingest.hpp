#pragma once

// Real-dataset ingestion: CSV rows -> cleaned typed table -> split by an
// environment proxy rule -> non-overlapping contiguous windows -> encoded
// series bundle. The split proxy (station identity or a thresholded
// variable) never enters the context channels; threshold proxies are kept
// per window in params.jsonl for diagnostics.
//
// Context encoding: continuous channels min-max normalized with train-split
// statistics (val/test may leave [0, 1], unclipped); categorical channels
// become integer vocabulary indices with index 0 reserved for unseen
// values; two phase channels sin(2 pi t / T), cos(2 pi t / T) are appended.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "catsg/core/errors.hpp"
#include "catsg/data/bundle.hpp"
#include "catsg/ingest/csv.hpp"

namespace catsg {

enum class ColumnKind { Continuous, Categorical };

struct ContextColumn {
  std::string name;
  ColumnKind kind = ColumnKind::Continuous;
};

struct SplitRule {
  std::string type;  // "station_partition" | "threshold"
  // station_partition
  std::string group_column;
  std::map<std::string, std::vector<std::string>> stations;  // split -> names
  // threshold: train < lo, val [lo, hi], test > hi
  std::string variable;
  double lo = 0.0, hi = 0.0;
};

struct TimeSpec {
  std::string kind;  // "datetime" (one column) | "ymdh" (four columns)
  std::vector<std::string> columns;
};

struct DatasetSpec {
  std::string name;
  std::string target_column;
  std::vector<ContextColumn> context_columns;
  SplitRule split_rule;
  TimeSpec time;
  int window_len = 24;
  int dt_seconds = 3600;

  void validate() const {
    CATSG_CHECK(!name.empty() && !target_column.empty(), ConfigError,
                "dataset spec needs a name and a target column");
    CATSG_CHECK(window_len >= 2, ConfigError, "window_len must be >= 2");
    CATSG_CHECK(dt_seconds >= 1, ConfigError, "dt_seconds must be positive");
    for (const auto& c : context_columns) {
      CATSG_CHECK(c.name != target_column, ConfigError,
                  "target '" + target_column + "' cannot also be a context");
      CATSG_CHECK(c.name != "phase_sin" && c.name != "phase_cos", ConfigError,
                  "context name collides with a phase channel");
    }
    if (split_rule.type == "station_partition") {
      CATSG_CHECK(!split_rule.group_column.empty(), ConfigError,
                  "station partition needs a group column");
      std::set<std::string> seen;
      for (const auto& [split, names] : split_rule.stations) {
        CATSG_CHECK(!names.empty(), ConfigError,
                    "split '" + split + "' lists no stations");
        for (const auto& s : names)
          CATSG_CHECK(seen.insert(s).second, ConfigError,
                      "station '" + s + "' appears in two splits");
      }
      CATSG_CHECK(split_rule.stations.count("train") &&
                      split_rule.stations.count("val") &&
                      split_rule.stations.count("test"),
                  ConfigError, "station partition must cover train/val/test");
    } else if (split_rule.type == "threshold") {
      CATSG_CHECK(!split_rule.variable.empty(), ConfigError,
                  "threshold rule needs a variable");
      CATSG_CHECK(split_rule.lo <= split_rule.hi, ConfigError,
                  "threshold boundaries must be ordered");
      for (const auto& c : context_columns)
        CATSG_CHECK(c.name != split_rule.variable, ConfigError,
                    "split variable '" + split_rule.variable +
                        "' is a proxy and cannot be a context");
    } else {
      throw ConfigError("unknown split rule '" + split_rule.type + "'");
    }
    if (time.kind == "datetime")
      CATSG_CHECK(time.columns.size() == 1, ConfigError,
                  "datetime time spec needs exactly one column");
    else if (time.kind == "ymdh")
      CATSG_CHECK(time.columns.size() == 4, ConfigError,
                  "ymdh time spec needs year/month/day/hour columns");
    else
      throw ConfigError("unknown time spec kind '" + time.kind + "'");
  }

  json to_json() const {
    json j;
    j["name"] = name;
    j["target_column"] = target_column;
    json cols = json::array();
    for (const auto& c : context_columns)
      cols.push_back({{"name", c.name},
                      {"kind", c.kind == ColumnKind::Categorical
                                   ? "categorical"
                                   : "continuous"}});
    j["context_columns"] = cols;
    json rule;
    rule["type"] = split_rule.type;
    if (split_rule.type == "station_partition") {
      rule["group_column"] = split_rule.group_column;
      rule["splits"] = split_rule.stations;
    } else {
      rule["variable"] = split_rule.variable;
      rule["boundaries"] = {split_rule.lo, split_rule.hi};
    }
    j["split_rule"] = rule;
    j["time"] = {{"kind", time.kind}, {"columns", time.columns}};
    j["window_len"] = window_len;
    j["dt_seconds"] = dt_seconds;
    return j;
  }

  static DatasetSpec from_json(const json& j) {
    DatasetSpec s;
    try {
      s.name = j.at("name").get<std::string>();
      s.target_column = j.at("target_column").get<std::string>();
      for (const auto& c : j.at("context_columns")) {
        const std::string kind = c.at("kind").get<std::string>();
        CATSG_CHECK(kind == "continuous" || kind == "categorical", ConfigError,
                    "context kind must be continuous or categorical");
        s.context_columns.push_back({c.at("name").get<std::string>(),
                                     kind == "categorical"
                                         ? ColumnKind::Categorical
                                         : ColumnKind::Continuous});
      }
      const json& rule = j.at("split_rule");
      s.split_rule.type = rule.at("type").get<std::string>();
      if (s.split_rule.type == "station_partition") {
        s.split_rule.group_column = rule.at("group_column").get<std::string>();
        s.split_rule.stations =
            rule.at("splits")
                .get<std::map<std::string, std::vector<std::string>>>();
      } else if (s.split_rule.type == "threshold") {
        s.split_rule.variable = rule.at("variable").get<std::string>();
        const auto b = rule.at("boundaries").get<std::vector<double>>();
        CATSG_CHECK(b.size() == 2, ConfigError,
                    "threshold rule needs two boundaries");
        s.split_rule.lo = b[0];
        s.split_rule.hi = b[1];
      }
      s.time.kind = j.at("time").at("kind").get<std::string>();
      s.time.columns =
          j.at("time").at("columns").get<std::vector<std::string>>();
      s.window_len = j.value("window_len", 24);
      s.dt_seconds = j.value("dt_seconds", 3600);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("dataset spec: ") + e.what());
    }
    s.validate();
    return s;
  }
};

// bundled presets for the two shipped dataset layouts
inline DatasetSpec dataset_preset(const std::string& name) {
  DatasetSpec s;
  s.name = name;
  if (name == "air_quality") {
    s.target_column = "PM2.5";
    s.context_columns = {{"TEMP", ColumnKind::Continuous},
                         {"PRES", ColumnKind::Continuous},
                         {"DEWP", ColumnKind::Continuous},
                         {"WSPM", ColumnKind::Continuous},
                         {"RAIN", ColumnKind::Continuous},
                         {"wd", ColumnKind::Categorical}};
    s.split_rule.type = "station_partition";
    s.split_rule.group_column = "station";
    s.split_rule.stations = {
        {"train",
         {"Dongsi", "Guanyuan", "Tiantan", "Wanshouxigong", "Aotizhongxin",
          "Nongzhanguan", "Wanliu", "Gucheng"}},
        {"val", {"Changping", "Dingling"}},
        {"test", {"Shunyi", "Huairou"}}};
    s.time = {"ymdh", {"year", "month", "day", "hour"}};
  } else if (name == "traffic") {
    s.target_column = "traffic_volume";
    s.context_columns = {{"rain_1h", ColumnKind::Continuous},
                         {"snow_1h", ColumnKind::Continuous},
                         {"clouds_all", ColumnKind::Continuous},
                         {"weather_main", ColumnKind::Categorical},
                         {"holiday", ColumnKind::Categorical}};
    s.split_rule.type = "threshold";
    s.split_rule.variable = "temp";
    s.split_rule.lo = 12.0;
    s.split_rule.hi = 22.0;
    s.time = {"datetime", {"date_time"}};
  } else {
    throw ConfigError("no dataset preset named '" + name + "'");
  }
  s.validate();
  return s;
}

// cleaned column-typed rows; parallel vectors indexed by row
struct RawTable {
  std::vector<long long> time_s;                         // epoch seconds
  std::map<std::string, std::vector<double>> num;        // numeric columns
  std::map<std::string, std::vector<std::string>> str;   // string columns
  size_t rows() const { return time_s.size(); }
};

struct IngestReport {
  size_t rows_total = 0;
  size_t rows_kept = 0;
  size_t rows_unparseable = 0;
  size_t rows_missing_target = 0;
  size_t rows_unmatched_split = 0;
  size_t values_forward_filled = 0;
  size_t values_mean_imputed = 0;
  std::map<std::string, int> windows;

  json to_json() const {
    return json{{"rows_total", rows_total},
                {"rows_kept", rows_kept},
                {"rows_unparseable", rows_unparseable},
                {"rows_missing_target", rows_missing_target},
                {"rows_unmatched_split", rows_unmatched_split},
                {"values_forward_filled", values_forward_filled},
                {"values_mean_imputed", values_mean_imputed},
                {"windows", windows}};
  }
};

namespace detail {

inline bool is_missing(const std::string& s) {
  return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == "null";
}

inline bool parse_double(const std::string& s, double* out) {
  if (is_missing(s)) return false;
  try {
    size_t used = 0;
    *out = std::stod(s, &used);
    return used == s.size() && std::isfinite(*out);
  } catch (const std::exception&) {
    return false;
  }
}

inline bool civil_to_epoch(int y, int mo, int d, int h, int mi, int sec,
                           long long* out) {
  const std::chrono::year_month_day ymd{
      std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
      std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h < 0 || h > 23 || mi < 0 || mi > 59 || sec < 0 ||
      sec > 60)
    return false;
  const auto days = std::chrono::sys_days{ymd}.time_since_epoch().count();
  *out = static_cast<long long>(days) * 86400 + h * 3600 + mi * 60 + sec;
  return true;
}

inline bool parse_datetime(const std::string& s, long long* out) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  const int got = std::sscanf(s.c_str(), "%d-%d-%d %d:%d:%d", &y, &mo, &d, &h,
                              &mi, &sec);
  if (got < 4) return false;
  return civil_to_epoch(y, mo, d, h, got >= 5 ? mi : 0, got >= 6 ? sec : 0,
                        out);
}

}  // namespace detail

// Parses and cleans the CSV files into one table. Rows with a missing or
// unparseable target (or timestamp) are dropped and counted; missing
// continuous context values are forward-filled within their file, and any
// still missing after that take the column mean.
inline RawTable load_csv_dataset(const DatasetSpec& spec,
                                 const std::vector<std::filesystem::path>& paths,
                                 IngestReport* report) {
  spec.validate();
  CATSG_CHECK(!paths.empty(), ConfigError, "no csv files given");

  std::vector<std::string> num_cols{spec.target_column};
  std::vector<std::string> str_cols;
  for (const auto& c : spec.context_columns)
    (c.kind == ColumnKind::Continuous ? num_cols : str_cols).push_back(c.name);
  if (spec.split_rule.type == "threshold")
    num_cols.push_back(spec.split_rule.variable);
  else
    str_cols.push_back(spec.split_rule.group_column);

  RawTable table;
  for (const auto& col : num_cols) table.num[col];
  for (const auto& col : str_cols) table.str[col];

  for (const auto& path : paths) {
    const CsvTable csv = read_csv_file(path);
    if (csv.header.empty() && csv.rows.empty()) {
      warn("csv: " + path.string() + " is empty");
      continue;
    }
    auto col_index = [&](const std::string& name) {
      const auto it =
          std::find(csv.header.begin(), csv.header.end(), name);
      CATSG_CHECK(it != csv.header.end(), DataError,
                  "csv: " + path.string() + " is missing column '" + name +
                      "'");
      return static_cast<size_t>(it - csv.header.begin());
    };
    std::vector<size_t> time_idx;
    for (const auto& col : spec.time.columns) time_idx.push_back(col_index(col));
    std::map<std::string, size_t> num_idx, str_idx;
    for (const auto& col : num_cols) num_idx[col] = col_index(col);
    for (const auto& col : str_cols) str_idx[col] = col_index(col);

    const size_t first_row_of_file = table.rows();
    for (const auto& row : csv.rows) {
      ++report->rows_total;
      if (row.size() != csv.header.size()) {
        ++report->rows_unparseable;
        continue;
      }
      long long t = 0;
      bool time_ok;
      if (spec.time.kind == "datetime") {
        time_ok = detail::parse_datetime(row[time_idx[0]], &t);
      } else {
        double y, mo, d, h;
        time_ok = detail::parse_double(row[time_idx[0]], &y) &&
                  detail::parse_double(row[time_idx[1]], &mo) &&
                  detail::parse_double(row[time_idx[2]], &d) &&
                  detail::parse_double(row[time_idx[3]], &h) &&
                  detail::civil_to_epoch(static_cast<int>(y),
                                         static_cast<int>(mo),
                                         static_cast<int>(d),
                                         static_cast<int>(h), 0, 0, &t);
      }
      if (!time_ok) {
        ++report->rows_unparseable;
        continue;
      }
      double target = 0.0;
      if (!detail::parse_double(row[num_idx[spec.target_column]], &target)) {
        ++report->rows_missing_target;
        continue;
      }
      table.time_s.push_back(t);
      for (const auto& [col, idx] : num_idx) {
        double v = std::numeric_limits<double>::quiet_NaN();
        detail::parse_double(row[idx], &v);
        table.num[col].push_back(v);
      }
      for (const auto& [col, idx] : str_idx)
        table.str[col].push_back(detail::is_missing(row[idx]) ? ""
                                                              : row[idx]);
    }

    // forward-fill continuous gaps inside this file's stretch of rows
    for (auto& [col, vals] : table.num) {
      if (col == spec.target_column) continue;
      double last = std::numeric_limits<double>::quiet_NaN();
      for (size_t i = first_row_of_file; i < vals.size(); ++i) {
        if (std::isnan(vals[i])) {
          if (!std::isnan(last)) {
            vals[i] = last;
            ++report->values_forward_filled;
          }
        } else {
          last = vals[i];
        }
      }
    }
  }

  // mean-impute whatever forward filling could not reach
  for (auto& [col, vals] : table.num) {
    if (col == spec.target_column) continue;
    double sum = 0.0;
    size_t n = 0;
    for (double v : vals)
      if (!std::isnan(v)) {
        sum += v;
        ++n;
      }
    const double mean = n > 0 ? sum / n : 0.0;
    for (double& v : vals)
      if (std::isnan(v)) {
        v = mean;
        ++report->values_mean_imputed;
      }
  }

  report->rows_kept = table.rows();
  if (table.rows() == 0) warn("csv: no usable rows in any input file");
  return table;
}

// row indices per split; rows matching no split are dropped and counted
inline std::map<std::string, std::vector<size_t>> apply_split(
    const RawTable& table, const SplitRule& rule, IngestReport* report) {
  std::map<std::string, std::vector<size_t>> out{
      {"train", {}}, {"val", {}}, {"test", {}}};
  if (rule.type == "station_partition") {
    const auto& col = table.str.at(rule.group_column);
    std::map<std::string, std::string> split_of;
    for (const auto& [split, names] : rule.stations)
      for (const auto& s : names) split_of[s] = split;
    for (size_t i = 0; i < table.rows(); ++i) {
      const auto it = split_of.find(col[i]);
      if (it == split_of.end())
        ++report->rows_unmatched_split;
      else
        out[it->second].push_back(i);
    }
  } else {
    const auto& col = table.num.at(rule.variable);
    for (size_t i = 0; i < table.rows(); ++i) {
      const double v = col[i];
      if (std::isnan(v))
        ++report->rows_unmatched_split;
      else if (v < rule.lo)
        out["train"].push_back(i);
      else if (v <= rule.hi)
        out["val"].push_back(i);
      else
        out["test"].push_back(i);
    }
  }
  return out;
}

namespace detail {

// chops each group's time-sorted rows into non-overlapping runs of exactly
// window_len consecutive samples (consecutive means dt_seconds apart)
inline std::vector<std::vector<size_t>> cut_windows(
    const RawTable& table, const std::vector<size_t>& rows,
    const std::string& group_column, int window_len, int dt_seconds) {
  std::map<std::string, std::vector<size_t>> groups;
  for (size_t r : rows) {
    const std::string key =
        group_column.empty() ? "" : table.str.at(group_column)[r];
    groups[key].push_back(r);
  }
  std::vector<std::vector<size_t>> windows;
  for (auto& [key, idx] : groups) {
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
      return table.time_s[a] < table.time_s[b];
    });
    size_t run_start = 0;
    auto flush = [&](size_t run_end) {  // [run_start, run_end)
      size_t at = run_start;
      while (run_end - at >= static_cast<size_t>(window_len)) {
        windows.emplace_back(idx.begin() + at, idx.begin() + at + window_len);
        at += static_cast<size_t>(window_len);
      }
    };
    for (size_t i = 1; i <= idx.size(); ++i) {
      if (i == idx.size() ||
          table.time_s[idx[i]] - table.time_s[idx[i - 1]] != dt_seconds) {
        flush(i);
        run_start = i;
      }
    }
  }
  return windows;
}

}  // namespace detail

// Windows each split, fits normalization and vocabularies on the train
// windows, and encodes everything into a series bundle.
inline Bundle window_and_encode(const RawTable& table,
                                const std::map<std::string, std::vector<size_t>>& split_rows,
                                const DatasetSpec& spec,
                                IngestReport* report) {
  const int T = spec.window_len;
  const std::string group_col = spec.split_rule.type == "station_partition"
                                    ? spec.split_rule.group_column
                                    : "";

  std::map<std::string, std::vector<std::vector<size_t>>> win;
  for (const auto& [split, rows] : split_rows) {
    win[split] = detail::cut_windows(table, rows, group_col, T,
                                     spec.dt_seconds);
    CATSG_CHECK(!win[split].empty(), DataError,
                "split '" + split + "' has no complete window of length " +
                    std::to_string(T));
    report->windows[split] = static_cast<int>(win[split].size());
  }

  // train-window statistics: min-max for continuous, vocabulary for
  // categorical (sorted for determinism, index 0 reserved for unseen)
  std::map<std::string, std::pair<double, double>> ranges;
  auto fit_range = [&](const std::string& col) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& w : win["train"])
      for (size_t r : w) {
        lo = std::min(lo, table.num.at(col)[r]);
        hi = std::max(hi, table.num.at(col)[r]);
      }
    if (!(hi > lo)) hi = lo + 1.0;  // constant channel encodes to 0
    ranges[col] = {lo, hi};
  };
  fit_range(spec.target_column);
  std::map<std::string, std::vector<std::string>> vocabs;
  std::map<std::string, std::map<std::string, int>> vocab_index;
  for (const auto& c : spec.context_columns) {
    if (c.kind == ColumnKind::Continuous) {
      fit_range(c.name);
    } else {
      std::set<std::string> uniq;
      for (const auto& w : win["train"])
        for (size_t r : w) {
          const auto& v = table.str.at(c.name)[r];
          if (!v.empty()) uniq.insert(v);
        }
      auto& vocab = vocabs[c.name];
      auto& index = vocab_index[c.name];
      vocab.assign(uniq.begin(), uniq.end());
      for (size_t i = 0; i < vocab.size(); ++i)
        index[vocab[i]] = static_cast<int>(i) + 1;
    }
  }

  Bundle b;
  b.meta.dataset_id = spec.name;
  b.meta.scenario = spec.name;
  b.meta.T = T;
  b.meta.D = 1;
  b.meta.D_c = static_cast<int>(spec.context_columns.size()) + 2;
  b.meta.dt = spec.dt_seconds / 3600.0;
  b.meta.channel_names.push_back(spec.target_column);
  b.meta.norm_min.push_back(ranges[spec.target_column].first);
  b.meta.norm_max.push_back(ranges[spec.target_column].second);
  for (const auto& c : spec.context_columns) {
    b.meta.channel_names.push_back(c.name);
    if (c.kind == ColumnKind::Continuous) {
      b.meta.context_kinds.push_back("cont");
      b.meta.vocab_sizes.push_back(0);
      b.meta.norm_min.push_back(ranges[c.name].first);
      b.meta.norm_max.push_back(ranges[c.name].second);
    } else {
      b.meta.context_kinds.push_back("cat");
      b.meta.vocab_sizes.push_back(static_cast<int>(vocabs[c.name].size()) +
                                   1);
      b.meta.vocabs[c.name] = vocabs[c.name];
      // indices pass through normalization untouched
      b.meta.norm_min.push_back(0.0);
      b.meta.norm_max.push_back(1.0);
    }
  }
  for (const char* phase : {"phase_sin", "phase_cos"}) {
    b.meta.channel_names.push_back(phase);
    b.meta.context_kinds.push_back("cont");
    b.meta.vocab_sizes.push_back(0);
    b.meta.norm_min.push_back(-1.0);
    b.meta.norm_max.push_back(1.0);
  }

  for (const auto& [split, windows] : win) {
    const int N = static_cast<int>(windows.size());
    SplitData sd;
    sd.x = Tensor<float>({N, 1, T});
    sd.c = Tensor<float>({N, b.meta.D_c, T});
    for (int n = 0; n < N; ++n) {
      const auto& rows = windows[static_cast<size_t>(n)];
      for (int t = 0; t < T; ++t) {
        const size_t r = rows[static_cast<size_t>(t)];
        const auto [xlo, xhi] = ranges[spec.target_column];
        sd.x.at(n, 0, t) =
            normalize_value(table.num.at(spec.target_column)[r], xlo, xhi);
        int ch = 0;
        for (const auto& c : spec.context_columns) {
          if (c.kind == ColumnKind::Continuous) {
            const auto [lo, hi] = ranges[c.name];
            sd.c.at(n, ch, t) =
                normalize_value(table.num.at(c.name)[r], lo, hi);
          } else {
            const auto& index = vocab_index[c.name];
            const auto it = index.find(table.str.at(c.name)[r]);
            sd.c.at(n, ch, t) =
                it == index.end() ? 0.0f : static_cast<float>(it->second);
          }
          ++ch;
        }
        const double phase =
            2.0 * std::numbers::pi * static_cast<double>(t) / T;
        sd.c.at(n, ch, t) = normalize_value(std::sin(phase), -1.0, 1.0);
        sd.c.at(n, ch + 1, t) = normalize_value(std::cos(phase), -1.0, 1.0);
      }
      json p{{"t0", table.time_s[rows[0]]}};
      if (!group_col.empty()) p["group"] = table.str.at(group_col)[rows[0]];
      if (spec.split_rule.type == "threshold") {
        double mean = 0.0;
        for (size_t r : rows)
          mean += table.num.at(spec.split_rule.variable)[r];
        p["proxy"] = mean / static_cast<double>(rows.size());
      }
      sd.params.push_back(std::move(p));
    }
    b.meta.splits.emplace_back(split, N);
    b.by_split[split] = std::move(sd);
  }
  // keep the conventional split order in meta regardless of map order
  std::sort(b.meta.splits.begin(), b.meta.splits.end(),
            [](const auto& a, const auto& c) {
              auto rank = [](const std::string& s) {
                return s == "train" ? 0 : s == "val" ? 1 : 2;
              };
              return rank(a.first) < rank(c.first);
            });
  return b;
}

// end-to-end: parse, split, window, encode, write
inline Bundle ingest_to_bundle(const DatasetSpec& spec,
                               const std::vector<std::filesystem::path>& paths,
                               const std::filesystem::path& out_dir,
                               IngestReport* report) {
  IngestReport local;
  IngestReport* rep = report ? report : &local;
  const RawTable table = load_csv_dataset(spec, paths, rep);
  CATSG_CHECK(table.rows() > 0, DataError,
              "ingest produced no usable rows");
  const auto split_rows = apply_split(table, spec.split_rule, rep);
  Bundle b = window_and_encode(table, split_rows, spec, rep);
  write_bundle(out_dir, b);
  return b;
}

}  // namespace catsg
