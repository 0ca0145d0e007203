#pragma once

/// @file backtest.hpp Randomized-universe walk-forward experiment harness:
/// weekly rebalancing with strictly lagged information, per-trial penalty
/// training on a preceding window, out-of-sample metrics, rolling excess
/// series, and cross-trial aggregation. Also a seeded synthetic market
/// generator with a planted factor structure.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "penqp/parallel.hpp"
#include "penqp/penalty.hpp"
#include "penqp/prediction.hpp"
#include "penqp/trainer.hpp"

namespace penqp {

/// splitmix64 step: advances state and returns one well-mixed word. Used
/// wherever a cheap deterministic stream derived from (seed, index) pairs
/// is needed, so trials stay independent and reorderable.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Civil-date helpers (Gregorian, proleptic) for generating weekly date
// axes. days counts from 1970-01-01.
inline std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = static_cast<unsigned>((153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1);
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline void civil_from_days(std::int64_t days, int& y, int& m, int& d) {
  days += 719468;
  const std::int64_t era = (days >= 0 ? days : days - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(days - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y = static_cast<int>(yy + (m <= 2));
}

inline std::string iso_date(std::int64_t days) {
  int y = 0, m = 0, d = 0;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", y, m, d);
  return std::string(buf);
}

/// Aligned weekly panel: per-period decimal returns for the full asset
/// universe plus the feature columns used by the prediction layer.
struct MarketData {
  std::vector<std::string> dates;  ///< ISO-8601, strictly increasing
  Eigen::MatrixXd returns;         ///< weeks x universe
  Eigen::MatrixXd features;        ///< weeks x d_x
  std::vector<std::string> labels; ///< one per universe column

  Eigen::Index weeks() const { return returns.rows(); }
  Eigen::Index universe() const { return returns.cols(); }

  void check() const {
    const Eigen::Index m = weeks();
    if (static_cast<Eigen::Index>(dates.size()) != m)
      throw std::invalid_argument("MarketData: date axis and return rows disagree");
    if (features.rows() != m)
      throw std::invalid_argument("MarketData: features and returns share the date index");
    if (static_cast<Eigen::Index>(labels.size()) != universe())
      throw std::invalid_argument("MarketData: one label per asset column");
    for (std::size_t i = 1; i < dates.size(); ++i)
      if (!(dates[i - 1] < dates[i]))
        throw std::invalid_argument("MarketData: dates must be strictly increasing at row " +
                                    std::to_string(i));
    if (!returns.allFinite() || !features.allFinite())
      throw std::invalid_argument("MarketData: non-finite entries");
  }
};

enum class ConstraintSet { LongOnlyFullyInvested, Unconstrained };
enum class MomentProtocol { FactorModel, SampleCovariance };

/// Full experiment manifest. Date ranges are inclusive ISO bounds resolved
/// against the data's date axis.
struct ExperimentConfig {
  Eigen::Index n_assets = 50;
  int trials = 30;
  std::string train_start, train_end, test_start, test_end;
  ConstraintSet constraint_set = ConstraintSet::LongOnlyFullyInvested;
  DecisionCost cost;
  std::vector<PenaltyKind> kinds{PenaltyKind::Nominal};
  double delta = 20.0;
  Eigen::Index lookback_weeks = 52;
  Eigen::Index rolling_window_weeks = 156;
  std::uint64_t seed = 0;
  MomentProtocol protocol = MomentProtocol::FactorModel;
  TrainConfig train;
  int threads = 1;  ///< trial-level parallelism
};

/// Annualized out-of-sample summary of one trial (weekly figures scaled by
/// 52 for means and sqrt(52) for volatility; variance = vol squared).
struct TrialMetrics {
  double ann_mean = 0.0;
  double ann_vol = 0.0;
  double ann_sharpe = 0.0;
  double variance = 0.0;
};

struct TrialResult {
  int trial_index = 0;
  PenaltyKind kind = PenaltyKind::Nominal;
  std::vector<Eigen::Index> universe;    ///< sampled asset columns
  std::vector<std::string> test_dates;   ///< one per rebalance
  Eigen::MatrixXd weights;               ///< test weeks x n_assets
  Eigen::VectorXd portfolio_returns;     ///< realized z' y per test week
  TrialMetrics metrics;
  PenaltyParams params;                  ///< trained (or fixed) parameters
  TrainTrace trace;                      ///< empty when parameters were fixed
};

/// n distinct asset columns, a pure function of (seed, trial_index) and
/// constant within a trial. Sorted ascending, so the full-universe draw is
/// the canonical index set.
inline std::vector<Eigen::Index> sample_universe(Eigen::Index universe_size, Eigen::Index n,
                                                 int trial_index, std::uint64_t seed) {
  if (n > universe_size)
    throw std::invalid_argument("sample_universe: asked for more assets than the universe holds");
  if (n < 1) throw std::invalid_argument("sample_universe: need at least one asset");
  std::vector<Eigen::Index> pool(static_cast<std::size_t>(universe_size));
  std::iota(pool.begin(), pool.end(), Eigen::Index{0});
  std::uint64_t state = seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(trial_index + 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto span = static_cast<std::uint64_t>(universe_size - i);
    const auto j = i + static_cast<Eigen::Index>(splitmix64(state) % span);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(n));
  std::sort(pool.begin(), pool.end());
  return pool;
}

/// Resolves an inclusive ISO date range to row indices: first row with
/// date >= start, last row with date <= end.
inline std::pair<Eigen::Index, Eigen::Index> resolve_date_range(const std::vector<std::string>& dates,
                                                                const std::string& start,
                                                                const std::string& end) {
  if (start.empty() || end.empty())
    throw std::invalid_argument("resolve_date_range: empty date bound");
  const auto lo = std::lower_bound(dates.begin(), dates.end(), start);
  const auto hi = std::upper_bound(dates.begin(), dates.end(), end);
  if (lo == dates.end() || hi == dates.begin() || lo >= hi)
    throw std::invalid_argument("resolve_date_range: no rows between " + start + " and " + end);
  return {static_cast<Eigen::Index>(lo - dates.begin()),
          static_cast<Eigen::Index>(hi - dates.begin()) - 1};
}

/// Sample covariance of rows [begin, begin+len) de-meaned within the
/// window, divisor len-1, eigenvalue floor 1e-10.
inline Eigen::MatrixXd window_covariance(const Eigen::MatrixXd& series, Eigen::Index begin,
                                         Eigen::Index len) {
  if (len < 2 || begin < 0 || begin + len > series.rows())
    throw std::invalid_argument("window_covariance: window out of range");
  const Eigen::MatrixXd block = series.middleRows(begin, len);
  const Eigen::MatrixXd centered = block.rowwise() - block.colwise().mean();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(len - 1);
  return floor_eigenvalues(cov, 1e-10);
}

/// Frozen per-trial state: the sampled universe, the prediction model fit
/// on the train range only, and the sliced panels the weekly walk reads.
struct TrialPrep {
  std::vector<Eigen::Index> universe;
  RegressionModel model;
  PenaltyContext context;  ///< train-range feature-covariance root and beta_hat
  Eigen::MatrixXd y;       ///< weeks x n_assets, sliced to the universe
  Eigen::MatrixXd x;       ///< weeks x d_x
  Eigen::Index train_begin = 0, train_end = 0;
  Eigen::Index test_begin = 0, test_end = 0;
  Eigen::Index first_train_eval = 0;  ///< first train week with a full lookback
};

/// Predicted moments for one week using information through week - 1 only:
/// the regression input is the previous week's features, and the
/// covariance window ends at week - 1.
inline void week_moments(const TrialPrep& prep, const ExperimentConfig& config, Eigen::Index week,
                         Eigen::VectorXd& y_hat_out, Eigen::MatrixXd& v_hat_out) {
  const Eigen::Index lb = config.lookback_weeks;
  if (week < lb)
    throw std::invalid_argument("week_moments: insufficient history before week " +
                                std::to_string(week));
  const Eigen::VectorXd x_prev = prep.x.row(week - 1).transpose();
  if (config.protocol == MomentProtocol::FactorModel) {
    const Eigen::MatrixXd w_hat = window_covariance(prep.x, week - lb, lb);
    const MomentEstimates est = predict_moments(prep.model, x_prev, w_hat);
    y_hat_out = est.y_hat;
    v_hat_out = est.V_hat;
  } else {
    y_hat_out = prep.model.beta.transpose() * x_prev + prep.model.intercept;
    v_hat_out = window_covariance(prep.y, week - lb, lb);
  }
}

inline TrialPrep prepare_trial(const MarketData& data, const ExperimentConfig& config,
                               int trial_index) {
  data.check();
  TrialPrep prep;
  prep.universe = sample_universe(data.universe(), config.n_assets, trial_index, config.seed);

  prep.y.resize(data.weeks(), config.n_assets);
  for (Eigen::Index j = 0; j < config.n_assets; ++j)
    prep.y.col(j) = data.returns.col(prep.universe[static_cast<std::size_t>(j)]);
  prep.x = data.features;

  std::tie(prep.train_begin, prep.train_end) =
      resolve_date_range(data.dates, config.train_start, config.train_end);
  std::tie(prep.test_begin, prep.test_end) =
      resolve_date_range(data.dates, config.test_start, config.test_end);
  if (prep.train_end >= prep.test_begin)
    throw std::invalid_argument("prepare_trial: train range must precede the test range");
  if (prep.train_begin < 1)
    throw std::invalid_argument("prepare_trial: the lagged regression needs one week before the train range");

  // Returns regress on the previous week's features.
  const Eigen::Index rows = prep.train_end - prep.train_begin + 1;
  const Eigen::MatrixXd x_lagged = prep.x.middleRows(prep.train_begin - 1, rows);
  const Eigen::MatrixXd y_train = prep.y.middleRows(prep.train_begin, rows);
  prep.model = fit_beta(x_lagged, y_train);

  prep.context.beta_hat = prep.model.beta;
  prep.context.w_sqrt = matrix_sqrt_psd(
      window_covariance(prep.x, prep.train_begin, rows));

  prep.first_train_eval = std::max(prep.train_begin, config.lookback_weeks);
  if (prep.train_end - prep.first_train_eval + 1 < 2)
    throw std::invalid_argument("prepare_trial: train range too short after the lookback warmup");
  if (prep.test_begin < config.lookback_weeks)
    throw std::invalid_argument("prepare_trial: test range starts before a full lookback");
  return prep;
}

/// Training window for the outer loop: one entry per train week with a
/// full lookback, moments built from strictly lagged information.
inline TrainingData make_training_data(const TrialPrep& prep, const ExperimentConfig& config) {
  TrainingData td;
  const Eigen::Index m = prep.train_end - prep.first_train_eval + 1;
  td.realized.resize(m, config.n_assets);
  td.y_hat.reserve(static_cast<std::size_t>(m));
  td.v_hat.reserve(static_cast<std::size_t>(m));
  for (Eigen::Index k = 0; k < m; ++k) {
    const Eigen::Index week = prep.first_train_eval + k;
    Eigen::VectorXd y_hat;
    Eigen::MatrixXd v_hat;
    week_moments(prep, config, week, y_hat, v_hat);
    td.y_hat.push_back(std::move(y_hat));
    td.v_hat.push_back(std::move(v_hat));
    td.realized.row(k) = prep.y.row(week);
  }
  return td;
}

inline FeasibleSet constraint_feasible_set(ConstraintSet set, Eigen::Index d) {
  return set == ConstraintSet::LongOnlyFullyInvested ? long_only_fully_invested(d)
                                                     : unconstrained_set(d);
}

inline TrialMetrics compute_trial_metrics(const Eigen::VectorXd& returns, const DecisionCost& cost) {
  TrialMetrics m;
  const double n = static_cast<double>(returns.size());
  const double mean_w = returns.mean();
  const double sd_w = returns.size() > 1
                          ? std::sqrt((returns.array() - mean_w).square().sum() / (n - 1.0))
                          : 0.0;
  m.ann_mean = 52.0 * mean_w;
  m.ann_vol = std::sqrt(52.0) * sd_w;
  m.variance = m.ann_vol * m.ann_vol;
  m.ann_sharpe = m.ann_vol > 0.0 ? (m.ann_mean - 52.0 * cost.risk_free) / m.ann_vol : 0.0;
  return m;
}

/// One full trial: fit the prediction layer and (unless fixed_params pins
/// them) train the penalty parameters on the train range, then rebalance
/// weekly over the test range with frozen parameters, each week using only
/// information through the week before.
inline TrialResult run_trial(const MarketData& data, const ExperimentConfig& config,
                             PenaltyKind kind, int trial_index,
                             const PenaltyParams* fixed_params = nullptr) {
  const TrialPrep prep = prepare_trial(data, config, trial_index);
  const FeasibleSet fs = constraint_feasible_set(config.constraint_set, config.n_assets);
  const bool needs_context = kind == PenaltyKind::L2Cov || kind == PenaltyKind::L2CovP;
  const PenaltyContext* context = needs_context ? &prep.context : nullptr;

  TrialResult result;
  result.trial_index = trial_index;
  result.kind = kind;
  result.universe = prep.universe;

  if (fixed_params != nullptr) {
    result.params = *fixed_params;
  } else {
    TrainConfig tc = config.train;
    tc.delta = config.delta;
    // Independent parameter-init stream per (seed, trial, kind).
    std::uint64_t state = config.seed ^ (0xD1B54A32D192ED03ULL *
                                         static_cast<std::uint64_t>(trial_index + 1));
    state ^= 0x2545F4914F6CDD1DULL * (static_cast<std::uint64_t>(kind) + 1);
    tc.seed = splitmix64(state);
    const TrainingData td = make_training_data(prep, config);
    TrainResult trained = train(td, kind, config.cost, tc, fs, context);
    result.params = std::move(trained.params);
    result.trace = std::move(trained.trace);
  }

  const PenaltyStructures structures =
      build_structures(kind, result.params, config.n_assets, context);
  const bool dual_route = structures.kappa > 1e-12;
  Eigen::MatrixXd g_rows;
  Eigen::VectorXd h_rows;
  if (dual_route) box_to_inequalities(fs, g_rows, h_rows);

  const Eigen::Index test_len = prep.test_end - prep.test_begin + 1;
  result.weights.resize(test_len, config.n_assets);
  result.portfolio_returns.resize(test_len);
  result.test_dates.reserve(static_cast<std::size_t>(test_len));

  AdmmSolution warm;
  for (Eigen::Index k = 0; k < test_len; ++k) {
    const Eigen::Index week = prep.test_begin + k;
    Eigen::VectorXd y_hat;
    Eigen::MatrixXd v_hat;
    week_moments(prep, config, week, y_hat, v_hat);
    const Eigen::MatrixXd v_gamma2 = assemble_v_gamma2(v_hat, config.delta, structures);
    // Reported weights must be feasible to 1e-6; solve the walk tighter
    // than the training inner loop regardless of its settings.
    AdmmSettings settings = config.train.solver;
    settings.eps_abs = std::min(settings.eps_abs, 1e-10);
    settings.eps_rel = std::min(settings.eps_rel, 1e-8);
    Eigen::VectorXd z;
    const AdmmSolution* ws = warm.z_star.size() > 0 ? &warm : nullptr;
    try {
      if (dual_route) {
        L1PenalizedProblem l1;
        l1.V_gamma2 = v_gamma2;
        l1.y_hat = y_hat;
        l1.E = structures.E;
        l1.kappa = structures.kappa;
        l1.A = fs.A;
        l1.b = fs.b;
        l1.G = g_rows;
        l1.h = h_rows;
        const DualL1Problem dual = build_dual(l1);
        settings.rho = std::max(dual.Q_dual.diagonal().mean(), 1e-8);
        if (ws != nullptr && ws->z_star.size() != dual.dual_dim()) ws = nullptr;
        const DualSolution sol = solve_dual_qp(dual, l1, settings, ws);
        if (!sol.admm.converged) throw std::runtime_error("dual solve did not converge");
        z = sol.z_star;
        warm = sol.admm;
      } else {
        QpProblem box;
        box.Q = v_gamma2;
        box.p = -y_hat;
        box.A = fs.A;
        box.b = fs.b;
        box.lower = fs.lower;
        box.upper = fs.upper;
        settings.rho = std::max(v_gamma2.diagonal().mean(), 1e-8);
        if (ws != nullptr && ws->z_star.size() != config.n_assets) ws = nullptr;
        const AdmmSolution sol = admm_solve(box, settings, ws);
        if (!sol.converged) throw std::runtime_error("solve did not converge");
        z = sol.z_star;
        warm = sol;
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("run_trial: week " + data.dates[static_cast<std::size_t>(week)] +
                               ": " + e.what());
    }
    result.weights.row(k) = z.transpose();
    result.portfolio_returns(k) = z.dot(prep.y.row(week).transpose());
    result.test_dates.push_back(data.dates[static_cast<std::size_t>(week)]);
  }
  result.metrics = compute_trial_metrics(result.portfolio_returns, config.cost);
  return result;
}

enum class RollingMetric { Volatility, Sharpe };

/// Trailing-window excess metric of series a over series b, annualized.
/// Windows with zero spread score a zero metric rather than dividing by
/// zero, so identical flat series difference to exactly zero.
inline Eigen::VectorXd rolling_excess_metric(const Eigen::VectorXd& series_a,
                                             const Eigen::VectorXd& series_b, Eigen::Index window,
                                             RollingMetric metric) {
  if (series_a.size() != series_b.size())
    throw std::invalid_argument("rolling_excess_metric: series are misaligned");
  if (window < 2 || window > series_a.size())
    throw std::invalid_argument("rolling_excess_metric: window out of range");
  const auto one = [&](const Eigen::VectorXd& s, Eigen::Index t) {
    const Eigen::VectorXd w = s.segment(t - window + 1, window);
    const double mean = w.mean();
    const double sd =
        std::sqrt((w.array() - mean).square().sum() / static_cast<double>(window - 1));
    if (metric == RollingMetric::Volatility) return std::sqrt(52.0) * sd;
    return sd > 0.0 ? std::sqrt(52.0) * mean / sd : 0.0;
  };
  Eigen::VectorXd out(series_a.size() - window + 1);
  for (Eigen::Index t = window - 1; t < series_a.size(); ++t)
    out(t - window + 1) = one(series_a, t) - one(series_b, t);
  return out;
}

struct MetricStat {
  double mean = 0.0;
  double se = 0.0;  ///< sd over trials (divisor n-1) / sqrt(n)
};

struct KindAggregate {
  PenaltyKind kind = PenaltyKind::Nominal;
  MetricStat ann_mean, ann_vol, ann_sharpe, variance;
  bool has_percent = false;  ///< percent-vs-Nominal defined (Nominal present, nonzero)
  double percent_mean = 0.0, percent_median = 0.0, percent_q1 = 0.0, percent_q3 = 0.0;
  std::vector<double> percent_per_trial;  ///< variance change vs Nominal, per trial
};

struct BacktestReport {
  int trials = 0;
  std::vector<KindAggregate> rows;
};

namespace detail {

inline MetricStat stat_over_trials(const std::vector<double>& xs) {
  MetricStat st;
  const double n = static_cast<double>(xs.size());
  for (const double x : xs) st.mean += x;
  st.mean /= n;
  if (xs.size() > 1) {
    double ss = 0.0;
    for (const double x : xs) ss += (x - st.mean) * (x - st.mean);
    st.se = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return st;
}

/// Linear-interpolation quantile of a sorted sample.
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - std::floor(pos);
  return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace detail

/// Cross-trial aggregation: per-kind means and standard errors of the
/// annualized metrics, plus per-trial percent variance change against the
/// Nominal kind (omitted when Nominal is absent or has a zero-variance
/// trial).
inline BacktestReport aggregate_report(
    const std::vector<std::pair<PenaltyKind, std::vector<TrialMetrics>>>& per_kind) {
  BacktestReport report;
  if (per_kind.empty()) throw std::invalid_argument("aggregate_report: no results");
  report.trials = static_cast<int>(per_kind.front().second.size());
  if (report.trials < 2) throw std::invalid_argument("aggregate_report: need at least two trials");
  for (const auto& [kind, metrics] : per_kind)
    if (static_cast<int>(metrics.size()) != report.trials)
      throw std::invalid_argument("aggregate_report: ragged trial counts");

  const std::vector<TrialMetrics>* nominal = nullptr;
  for (const auto& [kind, metrics] : per_kind)
    if (kind == PenaltyKind::Nominal) nominal = &metrics;

  for (const auto& [kind, metrics] : per_kind) {
    KindAggregate row;
    row.kind = kind;
    std::vector<double> means, vols, sharpes, variances;
    for (const TrialMetrics& m : metrics) {
      means.push_back(m.ann_mean);
      vols.push_back(m.ann_vol);
      sharpes.push_back(m.ann_sharpe);
      variances.push_back(m.variance);
    }
    row.ann_mean = detail::stat_over_trials(means);
    row.ann_vol = detail::stat_over_trials(vols);
    row.ann_sharpe = detail::stat_over_trials(sharpes);
    row.variance = detail::stat_over_trials(variances);

    if (nominal != nullptr && kind != PenaltyKind::Nominal) {
      row.has_percent = true;
      for (int t = 0; t < report.trials; ++t) {
        const double base = (*nominal)[static_cast<std::size_t>(t)].variance;
        if (base == 0.0) {
          row.has_percent = false;
          row.percent_per_trial.clear();
          break;
        }
        row.percent_per_trial.push_back(
            (metrics[static_cast<std::size_t>(t)].variance - base) / base);
      }
      if (row.has_percent) {
        std::vector<double> sorted = row.percent_per_trial;
        std::sort(sorted.begin(), sorted.end());
        row.percent_mean = detail::stat_over_trials(sorted).mean;
        row.percent_median = detail::quantile_sorted(sorted, 0.5);
        row.percent_q1 = detail::quantile_sorted(sorted, 0.25);
        row.percent_q3 = detail::quantile_sorted(sorted, 0.75);
      }
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

/// All trials for all configured kinds. Trials run under the parallel map;
/// results are ordered (kind, trial), independent of scheduling.
inline std::vector<std::pair<PenaltyKind, std::vector<TrialResult>>> run_experiment(
    const MarketData& data, const ExperimentConfig& config) {
  std::vector<std::pair<PenaltyKind, std::vector<TrialResult>>> out;
  for (const PenaltyKind kind : config.kinds) {
    std::vector<TrialResult> trials(static_cast<std::size_t>(config.trials));
    parallel_for(static_cast<std::size_t>(config.trials), config.threads, [&](std::size_t t) {
      trials[t] = run_trial(data, config, kind, static_cast<int>(t));
    });
    out.emplace_back(kind, std::move(trials));
  }
  return out;
}

/// Synthetic weekly market with a planted lag-one factor structure:
/// returns_t = beta' features_{t-1} + residual, persistent AR(1) features
/// with a slowly modulated innovation scale, and heterogeneous residual
/// volatilities scaled by `noise` (0 gives an exactly linear market).
struct SyntheticMarket {
  MarketData data;
  Eigen::MatrixXd planted_beta;  ///< d_x x universe
  Eigen::VectorXd residual_vol;  ///< per asset, before the noise scale
};

inline SyntheticMarket generate_synthetic(Eigen::Index universe, Eigen::Index weeks,
                                          Eigen::Index d_x, std::uint64_t seed, double noise) {
  if (universe < 1 || weeks < 3 || d_x < 1)
    throw std::invalid_argument("generate_synthetic: dimensions must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  SyntheticMarket out;
  out.planted_beta.resize(d_x, universe);
  const double beta_scale = 0.02 / std::sqrt(static_cast<double>(d_x));
  for (Eigen::Index j = 0; j < universe; ++j)
    for (Eigen::Index f = 0; f < d_x; ++f) out.planted_beta(f, j) = beta_scale * gauss(rng);
  out.residual_vol.resize(universe);
  for (Eigen::Index j = 0; j < universe; ++j) out.residual_vol(j) = 0.01 + 0.02 * uni(rng);

  // Persistent features with a slowly varying innovation scale, so rolling
  // feature-covariance estimates chase a moving target.
  const double phi = 0.9;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(weeks, d_x);
  Eigen::VectorXd state = Eigen::VectorXd::Zero(d_x);
  for (Eigen::Index t = 0; t < weeks; ++t) {
    constexpr double two_pi = 6.283185307179586;
    const double scale = 1.0 + 0.4 * std::sin(two_pi * static_cast<double>(t) / 156.0);
    for (Eigen::Index f = 0; f < d_x; ++f)
      state(f) = phi * state(f) + std::sqrt(1.0 - phi * phi) * scale * gauss(rng);
    x.row(t) = state.transpose();
  }

  Eigen::MatrixXd y(weeks, universe);
  for (Eigen::Index t = 0; t < weeks; ++t) {
    Eigen::VectorXd row = Eigen::VectorXd::Zero(universe);
    if (t > 0) row = out.planted_beta.transpose() * x.row(t - 1).transpose();
    for (Eigen::Index j = 0; j < universe; ++j)
      row(j) += noise * out.residual_vol(j) * gauss(rng);
    y.row(t) = row.transpose();
  }

  out.data.returns = std::move(y);
  out.data.features = std::move(x);
  const std::int64_t day0 = days_from_civil(1990, 1, 5);
  out.data.dates.reserve(static_cast<std::size_t>(weeks));
  for (Eigen::Index t = 0; t < weeks; ++t) out.data.dates.push_back(iso_date(day0 + 7 * t));
  out.data.labels.reserve(static_cast<std::size_t>(universe));
  for (Eigen::Index j = 0; j < universe; ++j) out.data.labels.push_back("A" + std::to_string(j));
  return out;
}

}  // namespace penqp
