#pragma once

/// @file io.hpp File formats: dated CSV panels, key=value run configs with
/// a closed key schema, the solve-subcommand problem format, and the
/// serialized result files. All numeric output is formatted
/// deterministically, so a repeated run writes byte-identical files.

#include <Eigen/Dense>

#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "penqp/backtest.hpp"

namespace penqp {

/// Fixed-format double for CSV cells: 12 significant digits, locale-free.
inline std::string format_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", x);
  return std::string(buf);
}

/// Round-trip-exact double for config echo values.
inline std::string format_double_exact(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return std::string(buf);
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, sep)) out.push_back(cell);
  if (!line.empty() && line.back() == sep) out.push_back("");
  return out;
}

inline double parse_number(const std::string& cell, const std::string& where) {
  const std::string t = trim(cell);
  if (t.empty()) throw std::runtime_error(where + ": empty cell");
  std::size_t used = 0;
  double value = 0.0;
  try {
    value = std::stod(t, &used);
  } catch (const std::exception&) {
    throw std::runtime_error(where + ": cannot parse '" + t + "' as a number");
  }
  if (used != t.size())
    throw std::runtime_error(where + ": cannot parse '" + t + "' as a number");
  return value;
}

}  // namespace detail

/// A dated panel: header `date,NAME1,NAME2,...`, one ISO date plus numeric
/// cells per row. Parse errors carry `path:line`.
struct CsvTable {
  std::vector<std::string> columns;  ///< without the leading date column
  std::vector<std::string> dates;
  Eigen::MatrixXd values;
};

inline CsvTable read_dated_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  CsvTable table;
  std::string line;
  std::vector<std::vector<double>> rows;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const std::vector<std::string> cells = detail::split(line, ',');
    const std::string where = path + ":" + std::to_string(line_no);
    if (table.columns.empty() && rows.empty() && table.dates.empty()) {
      if (cells.size() < 2 || detail::trim(cells[0]) != "date")
        throw std::runtime_error(where + ": header must start with 'date' and name one column per series");
      for (std::size_t c = 1; c < cells.size(); ++c) {
        const std::string name = detail::trim(cells[c]);
        if (name.empty()) throw std::runtime_error(where + ": empty column name");
        table.columns.push_back(name);
      }
      continue;
    }
    if (cells.size() != table.columns.size() + 1)
      throw std::runtime_error(where + ": expected " + std::to_string(table.columns.size() + 1) +
                               " cells, found " + std::to_string(cells.size()));
    const std::string date = detail::trim(cells[0]);
    if (date.size() != 10 || date[4] != '-' || date[7] != '-')
      throw std::runtime_error(where + ": '" + date + "' is not an ISO-8601 date");
    table.dates.push_back(date);
    std::vector<double> row;
    row.reserve(table.columns.size());
    for (std::size_t c = 1; c < cells.size(); ++c)
      row.push_back(detail::parse_number(cells[c], where + ": column " + std::to_string(c + 1)));
    rows.push_back(std::move(row));
  }
  if (table.columns.empty()) throw std::runtime_error(path + ": empty table");
  if (rows.empty()) throw std::runtime_error(path + ": no data rows");
  table.values.resize(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(table.columns.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      table.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  return table;
}

/// Returns and features panels joined on an identical date axis.
inline MarketData load_market(const std::string& returns_path, const std::string& features_path) {
  const CsvTable returns = read_dated_csv(returns_path);
  const CsvTable features = read_dated_csv(features_path);
  if (returns.dates.size() != features.dates.size())
    throw std::runtime_error("load_market: " + returns_path + " has " +
                             std::to_string(returns.dates.size()) + " rows but " + features_path +
                             " has " + std::to_string(features.dates.size()));
  for (std::size_t i = 0; i < returns.dates.size(); ++i)
    if (returns.dates[i] != features.dates[i])
      throw std::runtime_error("load_market: date mismatch at row " + std::to_string(i + 1) +
                               ": " + returns.dates[i] + " vs " + features.dates[i]);
  MarketData data;
  data.dates = returns.dates;
  data.labels = returns.columns;
  data.returns = returns.values;
  data.features = features.values;
  data.check();
  return data;
}

/// key=value config lines; '#' starts a comment, blank lines are skipped,
/// duplicate keys are rejected with the offending line number.
inline std::map<std::string, std::string> parse_config_text(const std::string& text,
                                                            const std::string& path) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw std::runtime_error(where + ": expected key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw std::runtime_error(where + ": empty key");
    if (!kv.emplace(key, value).second)
      throw std::runtime_error(where + ": duplicate key '" + key + "'");
  }
  return kv;
}

inline std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

/// Synthetic-market knobs for runs without CSV inputs.
struct SyntheticSpec {
  Eigen::Index universe = 50;
  Eigen::Index weeks = 1600;
  Eigen::Index d_x = 5;
  double noise = 1.0;
};

/// Everything one run needs: the experiment itself plus the data source
/// (CSV paths or a synthetic spec) and the week-count split used when a
/// synthetic run gives no explicit date bounds.
struct RunSpec {
  ExperimentConfig experiment;
  bool synthetic = false;
  SyntheticSpec synth;
  std::string returns_csv, features_csv;
  Eigen::Index train_weeks = 104;
  Eigen::Index test_weeks = 104;
};

namespace detail {

inline long long parse_integer(const std::string& value, const std::string& key) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("config key '" + key + "': cannot parse '" + value +
                             "' as an integer");
  }
}

inline double parse_real(const std::string& value, const std::string& key) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("config key '" + key + "': cannot parse '" + value +
                             "' as a number");
  }
}

inline bool parse_flag(const std::string& value, const std::string& key) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::runtime_error("config key '" + key + "': expected true or false, got '" + value + "'");
}

inline std::vector<PenaltyKind> parse_kinds(const std::string& value) {
  std::vector<PenaltyKind> kinds;
  for (const std::string& part : split(value, ',')) {
    const std::string name = trim(part);
    if (name.empty()) continue;
    kinds.push_back(kind_from_string(name));
  }
  if (kinds.empty()) throw std::runtime_error("config key 'kinds': empty list");
  return kinds;
}

}  // namespace detail

/// Applies parsed key=value pairs onto a RunSpec. The key schema is
/// closed: any unrecognized key is an error naming it.
inline void apply_config(RunSpec& spec, const std::map<std::string, std::string>& kv) {
  ExperimentConfig& ex = spec.experiment;
  for (const auto& [key, value] : kv) {
    if (key == "returns_csv") spec.returns_csv = value;
    else if (key == "features_csv") spec.features_csv = value;
    else if (key == "synthetic") spec.synthetic = detail::parse_flag(value, key);
    else if (key == "universe") spec.synth.universe = detail::parse_integer(value, key);
    else if (key == "weeks") spec.synth.weeks = detail::parse_integer(value, key);
    else if (key == "d_x") spec.synth.d_x = detail::parse_integer(value, key);
    else if (key == "noise") spec.synth.noise = detail::parse_real(value, key);
    else if (key == "train_weeks") spec.train_weeks = detail::parse_integer(value, key);
    else if (key == "test_weeks") spec.test_weeks = detail::parse_integer(value, key);
    else if (key == "n_assets") ex.n_assets = detail::parse_integer(value, key);
    else if (key == "trials") ex.trials = static_cast<int>(detail::parse_integer(value, key));
    else if (key == "train_start") ex.train_start = value;
    else if (key == "train_end") ex.train_end = value;
    else if (key == "test_start") ex.test_start = value;
    else if (key == "test_end") ex.test_end = value;
    else if (key == "constraint_set") {
      if (value == "long_only_fully_invested") ex.constraint_set = ConstraintSet::LongOnlyFullyInvested;
      else if (value == "unconstrained") ex.constraint_set = ConstraintSet::Unconstrained;
      else throw std::runtime_error("config key 'constraint_set': unknown value '" + value + "'");
    } else if (key == "cost") {
      if (value == "min_variance") ex.cost.kind = CostKind::MinVariance;
      else if (value == "sharpe_ratio") ex.cost.kind = CostKind::SharpeRatio;
      else throw std::runtime_error("config key 'cost': unknown value '" + value + "'");
    } else if (key == "risk_free") ex.cost.risk_free = detail::parse_real(value, key);
    else if (key == "kinds") ex.kinds = detail::parse_kinds(value);
    else if (key == "delta") ex.delta = detail::parse_real(value, key);
    else if (key == "lookback_weeks") ex.lookback_weeks = detail::parse_integer(value, key);
    else if (key == "rolling_window_weeks") ex.rolling_window_weeks = detail::parse_integer(value, key);
    else if (key == "seed") ex.seed = static_cast<std::uint64_t>(detail::parse_integer(value, key));
    else if (key == "protocol") {
      if (value == "factor_model") ex.protocol = MomentProtocol::FactorModel;
      else if (value == "sample_covariance") ex.protocol = MomentProtocol::SampleCovariance;
      else throw std::runtime_error("config key 'protocol': unknown value '" + value + "'");
    } else if (key == "learning_rate") ex.train.learning_rate = detail::parse_real(value, key);
    else if (key == "iterations") ex.train.iterations = static_cast<int>(detail::parse_integer(value, key));
    else if (key == "batch_fraction") ex.train.batch_fraction = detail::parse_real(value, key);
    else if (key == "threads") ex.threads = static_cast<int>(detail::parse_integer(value, key));
    else if (key == "solver_eps_abs") ex.train.solver.eps_abs = detail::parse_real(value, key);
    else if (key == "solver_eps_rel") ex.train.solver.eps_rel = detail::parse_real(value, key);
    else if (key == "solver_max_iter") ex.train.solver.max_iter = static_cast<int>(detail::parse_integer(value, key));
    else if (key == "tikhonov_eps") ex.train.tikhonov_eps = detail::parse_real(value, key);
    else throw std::runtime_error("unknown config key '" + key + "'");
  }
  ex.train.delta = ex.delta;
}

/// The exact key=value pairs that reproduce this RunSpec through
/// apply_config. Doubles serialize round-trip exactly.
inline std::map<std::string, std::string> serialize_config(const RunSpec& spec) {
  const ExperimentConfig& ex = spec.experiment;
  std::map<std::string, std::string> kv;
  kv["returns_csv"] = spec.returns_csv;
  kv["features_csv"] = spec.features_csv;
  kv["synthetic"] = spec.synthetic ? "true" : "false";
  kv["universe"] = std::to_string(spec.synth.universe);
  kv["weeks"] = std::to_string(spec.synth.weeks);
  kv["d_x"] = std::to_string(spec.synth.d_x);
  kv["noise"] = format_double_exact(spec.synth.noise);
  kv["train_weeks"] = std::to_string(spec.train_weeks);
  kv["test_weeks"] = std::to_string(spec.test_weeks);
  kv["n_assets"] = std::to_string(ex.n_assets);
  kv["trials"] = std::to_string(ex.trials);
  kv["train_start"] = ex.train_start;
  kv["train_end"] = ex.train_end;
  kv["test_start"] = ex.test_start;
  kv["test_end"] = ex.test_end;
  kv["constraint_set"] = ex.constraint_set == ConstraintSet::LongOnlyFullyInvested
                             ? "long_only_fully_invested"
                             : "unconstrained";
  kv["cost"] = ex.cost.kind == CostKind::MinVariance ? "min_variance" : "sharpe_ratio";
  kv["risk_free"] = format_double_exact(ex.cost.risk_free);
  std::string kinds;
  for (const PenaltyKind kind : ex.kinds) {
    if (!kinds.empty()) kinds += ",";
    kinds += kind_to_string(kind);
  }
  kv["kinds"] = kinds;
  kv["delta"] = format_double_exact(ex.delta);
  kv["lookback_weeks"] = std::to_string(ex.lookback_weeks);
  kv["rolling_window_weeks"] = std::to_string(ex.rolling_window_weeks);
  kv["seed"] = std::to_string(ex.seed);
  kv["protocol"] =
      ex.protocol == MomentProtocol::FactorModel ? "factor_model" : "sample_covariance";
  kv["learning_rate"] = format_double_exact(ex.train.learning_rate);
  kv["iterations"] = std::to_string(ex.train.iterations);
  kv["batch_fraction"] = format_double_exact(ex.train.batch_fraction);
  kv["threads"] = std::to_string(ex.threads);
  kv["solver_eps_abs"] = format_double_exact(ex.train.solver.eps_abs);
  kv["solver_eps_rel"] = format_double_exact(ex.train.solver.eps_rel);
  kv["solver_max_iter"] = std::to_string(ex.train.solver.max_iter);
  kv["tikhonov_eps"] = format_double_exact(ex.train.tikhonov_eps);
  return kv;
}

/// Fills empty date bounds for a synthetic run: the train range starts at
/// the first week with a full lookback and spans train_weeks, the test
/// range follows immediately and spans up to test_weeks. Partially given
/// bounds are rejected rather than guessed around.
inline void fill_synthetic_ranges(RunSpec& spec, const MarketData& data) {
  ExperimentConfig& ex = spec.experiment;
  const bool any = !ex.train_start.empty() || !ex.train_end.empty() || !ex.test_start.empty() ||
                   !ex.test_end.empty();
  const bool all = !ex.train_start.empty() && !ex.train_end.empty() && !ex.test_start.empty() &&
                   !ex.test_end.empty();
  if (any && !all)
    throw std::runtime_error(
        "config: give all four of train_start/train_end/test_start/test_end or none");
  if (all) return;
  const Eigen::Index train_begin = ex.lookback_weeks;
  const Eigen::Index train_end = train_begin + spec.train_weeks - 1;
  const Eigen::Index test_begin = train_end + 1;
  const Eigen::Index test_end =
      std::min<Eigen::Index>(test_begin + spec.test_weeks - 1, data.weeks() - 1);
  if (test_end < test_begin || test_begin >= data.weeks())
    throw std::runtime_error("config: not enough weeks for the requested train/test split");
  ex.train_start = data.dates[static_cast<std::size_t>(train_begin)];
  ex.train_end = data.dates[static_cast<std::size_t>(train_end)];
  ex.test_start = data.dates[static_cast<std::size_t>(test_begin)];
  ex.test_end = data.dates[static_cast<std::size_t>(test_end)];
}

// ---------------------------------------------------------------------------
// Result serialization. Builders return strings so callers and tests can
// inspect content without touching the filesystem.

inline std::string weights_csv(
    const std::vector<std::pair<PenaltyKind, std::vector<TrialResult>>>& results,
    const std::vector<std::string>& labels) {
  std::ostringstream out;
  out << "model,trial,date,asset,weight\n";
  for (const auto& [kind, trials] : results)
    for (const TrialResult& trial : trials)
      for (Eigen::Index k = 0; k < trial.weights.rows(); ++k)
        for (Eigen::Index j = 0; j < trial.weights.cols(); ++j)
          out << kind_to_string(kind) << ',' << trial.trial_index << ','
              << trial.test_dates[static_cast<std::size_t>(k)] << ','
              << labels[static_cast<std::size_t>(trial.universe[static_cast<std::size_t>(j)])]
              << ',' << format_double(trial.weights(k, j)) << '\n';
  return out.str();
}

inline std::string metrics_csv(
    const std::vector<std::pair<PenaltyKind, std::vector<TrialResult>>>& results) {
  std::ostringstream out;
  out << "trial,model,mean,vol,sharpe\n";
  for (const auto& [kind, trials] : results)
    for (const TrialResult& trial : trials)
      out << trial.trial_index << ',' << kind_to_string(kind) << ','
          << format_double(trial.metrics.ann_mean) << ',' << format_double(trial.metrics.ann_vol)
          << ',' << format_double(trial.metrics.ann_sharpe) << '\n';
  return out.str();
}

/// Rolling excess metrics of each parameterized model over Nominal within
/// the same trial, dated at each window's last rebalance. Rows appear only
/// when a Nominal run exists and the window fits the test range.
inline std::string rolling_csv(
    const std::vector<std::pair<PenaltyKind, std::vector<TrialResult>>>& results,
    Eigen::Index window) {
  std::ostringstream out;
  out << "model,trial,date,excess_volatility,excess_sharpe\n";
  const std::vector<TrialResult>* nominal = nullptr;
  for (const auto& [kind, trials] : results)
    if (kind == PenaltyKind::Nominal) nominal = &trials;
  if (nominal == nullptr) return out.str();
  for (const auto& [kind, trials] : results) {
    if (kind == PenaltyKind::Nominal) continue;
    for (std::size_t t = 0; t < trials.size(); ++t) {
      const TrialResult& trial = trials[t];
      const TrialResult& base = (*nominal)[t];
      if (window < 2 || window > trial.portfolio_returns.size()) continue;
      const Eigen::VectorXd vol = rolling_excess_metric(
          trial.portfolio_returns, base.portfolio_returns, window, RollingMetric::Volatility);
      const Eigen::VectorXd sharpe = rolling_excess_metric(
          trial.portfolio_returns, base.portfolio_returns, window, RollingMetric::Sharpe);
      for (Eigen::Index i = 0; i < vol.size(); ++i)
        out << kind_to_string(kind) << ',' << trial.trial_index << ','
            << trial.test_dates[static_cast<std::size_t>(window - 1 + i)] << ','
            << format_double(vol(i)) << ',' << format_double(sharpe(i)) << '\n';
    }
  }
  return out.str();
}

inline std::string training_curve_csv(
    const std::vector<std::pair<PenaltyKind, std::vector<TrialResult>>>& results) {
  std::ostringstream out;
  out << "model,trial,iteration,cost,grad_gamma1,grad_gamma2,grad_theta1,grad_theta2,gamma1,gamma2\n";
  for (const auto& [kind, trials] : results)
    for (const TrialResult& trial : trials)
      for (const TrainRecord& rec : trial.trace)
        out << kind_to_string(kind) << ',' << trial.trial_index << ',' << rec.iteration << ','
            << format_double(rec.cost) << ',' << format_double(rec.grad_gamma1) << ','
            << format_double(rec.grad_gamma2) << ',' << format_double(rec.grad_theta1) << ','
            << format_double(rec.grad_theta2) << ',' << format_double(rec.gamma1) << ','
            << format_double(rec.gamma2) << '\n';
  return out.str();
}

inline nlohmann::ordered_json summary_json(const BacktestReport& report, const RunSpec& spec) {
  nlohmann::ordered_json j;
  j["seed"] = spec.experiment.seed;
  j["trials"] = report.trials;
  nlohmann::ordered_json config;
  for (const auto& [key, value] : serialize_config(spec)) config[key] = value;
  j["config"] = std::move(config);
  nlohmann::ordered_json models = nlohmann::ordered_json::array();
  for (const KindAggregate& row : report.rows) {
    nlohmann::ordered_json r;
    r["model"] = kind_to_string(row.kind);
    const auto stat = [](const MetricStat& s) {
      nlohmann::ordered_json v;
      v["mean"] = s.mean;
      v["se"] = s.se;
      return v;
    };
    r["ann_mean"] = stat(row.ann_mean);
    r["ann_vol"] = stat(row.ann_vol);
    r["ann_sharpe"] = stat(row.ann_sharpe);
    r["variance"] = stat(row.variance);
    if (row.has_percent) {
      nlohmann::ordered_json p;
      p["mean"] = row.percent_mean;
      p["median"] = row.percent_median;
      p["q1"] = row.percent_q1;
      p["q3"] = row.percent_q3;
      p["per_trial"] = row.percent_per_trial;
      r["percent_variance_vs_nominal"] = std::move(p);
    } else {
      r["percent_variance_vs_nominal"] = nullptr;
    }
    models.push_back(std::move(r));
  }
  j["models"] = std::move(models);
  return j;
}

/// Reads a metrics.csv back into per-model trial metrics, in first-seen
/// model order, so reports can be re-aggregated without recomputing runs.
inline std::vector<std::pair<PenaltyKind, std::vector<TrialMetrics>>> read_metrics_csv(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<std::pair<PenaltyKind, std::vector<TrialMetrics>>> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    if (line_no == 1) {
      if (line != "trial,model,mean,vol,sharpe")
        throw std::runtime_error(where + ": unexpected metrics header '" + line + "'");
      continue;
    }
    const std::vector<std::string> cells = detail::split(line, ',');
    if (cells.size() != 5) throw std::runtime_error(where + ": expected 5 cells");
    const PenaltyKind kind = kind_from_string(detail::trim(cells[1]));
    TrialMetrics m;
    m.ann_mean = detail::parse_number(cells[2], where);
    m.ann_vol = detail::parse_number(cells[3], where);
    m.ann_sharpe = detail::parse_number(cells[4], where);
    m.variance = m.ann_vol * m.ann_vol;
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const auto& row) { return row.first == kind; });
    if (it == out.end()) {
      out.emplace_back(kind, std::vector<TrialMetrics>{});
      it = std::prev(out.end());
    }
    it->second.push_back(m);
  }
  if (out.empty()) throw std::runtime_error(path + ": no metric rows");
  return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << content;
  if (!out) throw std::runtime_error("failed writing " + path);
}

// ---------------------------------------------------------------------------
// Problem files for the solve subcommand: named sections, one per line for
// scalars ("kappa: 1.0") or followed by comma/space-separated numeric rows
// ("v:" then matrix rows). Unknown sections are rejected.

struct SolveSpec {
  Eigen::MatrixXd v;       ///< quadratic term (the solve uses (1/2) z'Vz)
  Eigen::VectorXd y_hat;
  double kappa = 0.0;
  Eigen::MatrixXd e;       ///< L1 structure rows; identity when omitted
  Eigen::MatrixXd a, g;
  Eigen::VectorXd b, h, lower, upper;
};

inline SolveSpec read_solve_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::map<std::string, std::vector<std::vector<double>>> sections;
  std::string current;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(line_no);
    const std::size_t colon = line.find(':');
    if (colon != std::string::npos &&
        line.find_first_of("0123456789+-.") > colon) {
      current = detail::trim(line.substr(0, colon));
      if (current.empty()) throw std::runtime_error(where + ": empty section name");
      if (sections.count(current))
        throw std::runtime_error(where + ": duplicate section '" + current + "'");
      sections[current] = {};
      line = detail::trim(line.substr(colon + 1));
      if (line.empty()) continue;
    }
    if (current.empty()) throw std::runtime_error(where + ": data before any section header");
    std::vector<double> row;
    std::string norm = line;
    for (char& ch : norm)
      if (ch == ',' || ch == '\t') ch = ' ';
    std::istringstream cells(norm);
    std::string cell;
    while (cells >> cell) row.push_back(detail::parse_number(cell, where));
    if (!row.empty()) sections[current].push_back(std::move(row));
  }

  const auto matrix_of = [&](const std::vector<std::vector<double>>& rows,
                             const std::string& name) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()),
                      rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != rows[0].size())
        throw std::runtime_error(path + ": section '" + name + "' has ragged rows");
      for (std::size_t c = 0; c < rows[r].size(); ++c)
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
    return m;
  };
  const auto vector_of = [&](const std::vector<std::vector<double>>& rows,
                             const std::string& name) {
    std::vector<double> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    Eigen::VectorXd v(static_cast<Eigen::Index>(flat.size()));
    for (std::size_t i = 0; i < flat.size(); ++i) v(static_cast<Eigen::Index>(i)) = flat[i];
    if (v.size() == 0) throw std::runtime_error(path + ": section '" + name + "' is empty");
    return v;
  };

  SolveSpec spec;
  bool have_v = false, have_y = false;
  for (const auto& [name, rows] : sections) {
    if (name == "v") { spec.v = matrix_of(rows, name); have_v = true; }
    else if (name == "y_hat") { spec.y_hat = vector_of(rows, name); have_y = true; }
    else if (name == "kappa") {
      if (rows.size() != 1 || rows[0].size() != 1)
        throw std::runtime_error(path + ": section 'kappa' must be a single number");
      spec.kappa = rows[0][0];
    }
    else if (name == "e") spec.e = matrix_of(rows, name);
    else if (name == "a") spec.a = matrix_of(rows, name);
    else if (name == "b") spec.b = vector_of(rows, name);
    else if (name == "g") spec.g = matrix_of(rows, name);
    else if (name == "h") spec.h = vector_of(rows, name);
    else if (name == "lower") spec.lower = vector_of(rows, name);
    else if (name == "upper") spec.upper = vector_of(rows, name);
    else throw std::runtime_error(path + ": unknown section '" + name + "'");
  }
  if (!have_v || !have_y)
    throw std::runtime_error(path + ": sections 'v' and 'y_hat' are required");
  const Eigen::Index d = spec.y_hat.size();
  if (spec.v.rows() != d || spec.v.cols() != d)
    throw std::runtime_error(path + ": 'v' must be square and match 'y_hat'");
  if (spec.kappa > 0.0 && spec.e.size() == 0) spec.e = Eigen::MatrixXd::Identity(d, d);
  return spec;
}

}  // namespace penqp
