#pragma once

/// @file trainer.hpp The outer learning loop: evaluate a realized decision
/// cost over a window of per-period penalized mean-variance solves,
/// backpropagate through the QP layers down to raw penalty parameters, and
/// update them with ADAM. Also a finite-difference checker for the full
/// pipeline gradient.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "penqp/l1_dual.hpp"
#include "penqp/parallel.hpp"
#include "penqp/penalty.hpp"
#include "penqp/qp.hpp"
#include "penqp/qp_grad.hpp"

namespace penqp {

enum class CostKind { MinVariance, SharpeRatio };

/// Realized training loss over a window of portfolio decisions: the
/// population variance of the return series, or the negated Sharpe ratio
/// against a per-period risk-free rate.
struct DecisionCost {
  CostKind kind = CostKind::MinVariance;
  double risk_free = 0.0;  ///< per period; ignored by MinVariance
};

inline Eigen::VectorXd portfolio_return_series(const Eigen::MatrixXd& weights,
                                               const Eigen::MatrixXd& returns) {
  if (weights.rows() != returns.rows() || weights.cols() != returns.cols())
    throw std::invalid_argument("portfolio_return_series: weights and returns shapes differ");
  if (weights.rows() < 1)
    throw std::invalid_argument("portfolio_return_series: need at least one period");
  return (weights.array() * returns.array()).rowwise().sum();
}

inline double cost_value(const Eigen::MatrixXd& weights, const Eigen::MatrixXd& returns,
                         const DecisionCost& cost) {
  if (!std::isfinite(cost.risk_free))
    throw std::invalid_argument("cost_value: risk_free must be finite");
  const Eigen::VectorXd r = portfolio_return_series(weights, returns);
  const double m = static_cast<double>(r.size());
  const double mu = r.mean();
  const double var = (r.array() - mu).square().sum() / m;  // population variance
  if (cost.kind == CostKind::MinVariance) return var;
  if (r.size() < 2)
    throw std::invalid_argument("cost_value: the Sharpe cost needs at least two periods");
  const double sigma = std::sqrt(var);
  // Relative floor: a constant series carries rounding noise ~1e-17 in the
  // de-meaned residuals, so an exact zero test never fires.
  if (sigma <= 1e-14 * std::max(1.0, r.cwiseAbs().maxCoeff()))
    throw std::runtime_error("cost_value: zero return volatility makes the Sharpe cost degenerate");
  return -(mu - cost.risk_free) / sigma;
}

/// Closed-form d(cost)/d(weights), one row per period. For the variance
/// cost, row i is (2/m)(r_i - mu) y_i; the Sharpe cost chains the quotient
/// rule through mu and sigma.
inline Eigen::MatrixXd cost_gradient(const Eigen::MatrixXd& weights, const Eigen::MatrixXd& returns,
                                     const DecisionCost& cost) {
  if (!std::isfinite(cost.risk_free))
    throw std::invalid_argument("cost_gradient: risk_free must be finite");
  const Eigen::VectorXd r = portfolio_return_series(weights, returns);
  const Eigen::Index m = r.size();
  const double md = static_cast<double>(m);
  const double mu = r.mean();
  Eigen::MatrixXd grad(m, weights.cols());
  if (cost.kind == CostKind::MinVariance) {
    for (Eigen::Index i = 0; i < m; ++i) grad.row(i) = (2.0 / md) * (r(i) - mu) * returns.row(i);
    return grad;
  }
  if (m < 2) throw std::invalid_argument("cost_gradient: the Sharpe cost needs at least two periods");
  const double var = (r.array() - mu).square().sum() / md;
  const double sigma = std::sqrt(var);
  if (sigma <= 1e-14 * std::max(1.0, r.cwiseAbs().maxCoeff()))
    throw std::runtime_error("cost_gradient: zero return volatility makes the Sharpe cost degenerate");
  for (Eigen::Index i = 0; i < m; ++i) {
    const double coef =
        -1.0 / (md * sigma) + (mu - cost.risk_free) * (r(i) - mu) / (md * sigma * sigma * sigma);
    grad.row(i) = coef * returns.row(i);
  }
  return grad;
}

/// Equality rows plus elementwise bounds. This covers the experiment
/// constraint sets; the dual route re-encodes finite bounds as general
/// inequality rows.
struct FeasibleSet {
  Eigen::MatrixXd A;      ///< d_eq x d, may have 0 rows
  Eigen::VectorXd b;
  Eigen::VectorXd lower;  ///< -inf where absent
  Eigen::VectorXd upper;  ///< +inf where absent
};

inline FeasibleSet long_only_fully_invested(Eigen::Index d) {
  FeasibleSet fs;
  fs.A = Eigen::MatrixXd::Ones(1, d);
  fs.b = Eigen::VectorXd::Ones(1);
  fs.lower = Eigen::VectorXd::Zero(d);
  fs.upper = Eigen::VectorXd::Constant(d, std::numeric_limits<double>::infinity());
  return fs;
}

inline FeasibleSet unconstrained_set(Eigen::Index d) {
  FeasibleSet fs;
  fs.A.resize(0, d);
  fs.b.resize(0);
  fs.lower = Eigen::VectorXd::Constant(d, -std::numeric_limits<double>::infinity());
  fs.upper = Eigen::VectorXd::Constant(d, std::numeric_limits<double>::infinity());
  return fs;
}

/// Finite bounds as stacked inequality rows G z <= h (lower rows first).
inline void box_to_inequalities(const FeasibleSet& fs, Eigen::MatrixXd& g_out,
                                Eigen::VectorXd& h_out) {
  const Eigen::Index d = fs.lower.size();
  std::vector<std::pair<Eigen::Index, double>> rows;  // (signed coordinate, bound)
  for (Eigen::Index i = 0; i < d; ++i)
    if (std::isfinite(fs.lower(i))) rows.emplace_back(i, fs.lower(i));
  const std::size_t n_lower = rows.size();
  for (Eigen::Index i = 0; i < d; ++i)
    if (std::isfinite(fs.upper(i))) rows.emplace_back(i, fs.upper(i));
  g_out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()), d);
  h_out.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const bool is_lower = r < n_lower;
    g_out(static_cast<Eigen::Index>(r), rows[r].first) = is_lower ? -1.0 : 1.0;
    h_out(static_cast<Eigen::Index>(r)) = is_lower ? -rows[r].second : rows[r].second;
  }
}

/// One training window: per-period predicted moments plus the realized
/// returns the decision cost is evaluated against.
struct TrainingData {
  std::vector<Eigen::VectorXd> y_hat;  ///< predicted means, one per period
  std::vector<Eigen::MatrixXd> v_hat;  ///< predicted covariances, one per period
  Eigen::MatrixXd realized;            ///< periods x d_z realized returns

  Eigen::Index periods() const { return realized.rows(); }
  Eigen::Index dim() const { return realized.cols(); }

  void check_shapes() const {
    const Eigen::Index m = periods();
    const Eigen::Index d = dim();
    if (static_cast<Eigen::Index>(y_hat.size()) != m ||
        static_cast<Eigen::Index>(v_hat.size()) != m)
      throw std::invalid_argument("TrainingData: moment lists and realized rows disagree");
    for (Eigen::Index i = 0; i < m; ++i)
      if (y_hat[i].size() != d || v_hat[i].rows() != d || v_hat[i].cols() != d)
        throw std::invalid_argument("TrainingData: moment dimensions disagree at period " +
                                    std::to_string(i));
  }
};

/// Knobs shared by every pipeline evaluation (one forward pass over the
/// window, optionally with gradients).
struct PipelineOptions {
  double delta = 20.0;        ///< risk aversion
  AdmmSettings solver;        ///< inner solver tolerances; rho is overridden per problem
  double tikhonov_eps = 1e-6;
  int threads = 1;
};

struct PipelineResult {
  double cost = 0.0;
  Eigen::MatrixXd weights;       ///< one row per evaluated period
  PenaltyGradients param_grads;  ///< raw-space; populated when gradients were requested
};

namespace detail {

/// Forward state of one period's solve, kept for the backward pass.
struct PeriodSolve {
  bool used_dual = false;
  QpProblem box;
  AdmmSolution primal;
  L1PenalizedProblem l1;
  DualSolution dual;
};

}  // namespace detail

/// One pass over the window: per period, assemble V_gamma2, solve the
/// penalized problem (dual route when the effective L1 weight exceeds
/// 1e-12, else the plain box path), evaluate the decision cost, and
/// optionally push its gradient back to raw penalty parameters.
///
/// `warm`, when given, must hold one slot per period of `data`; slots are
/// consumed as warm starts and overwritten with the new solutions.
/// `subset`, when given, restricts the evaluation to those period indices;
/// the cost then treats the subset as its own series.
inline PipelineResult evaluate_pipeline(const TrainingData& data, PenaltyKind kind,
                                        const PenaltyParams& params, const DecisionCost& cost,
                                        const FeasibleSet& fs, const PipelineOptions& opts,
                                        bool want_gradients,
                                        std::vector<AdmmSolution>* warm = nullptr,
                                        const PenaltyContext* context = nullptr,
                                        const std::vector<Eigen::Index>* subset = nullptr) {
  data.check_shapes();
  const Eigen::Index d = data.dim();
  if (fs.lower.size() != d || fs.upper.size() != d)
    throw std::invalid_argument("evaluate_pipeline: feasible-set dimension mismatch");
  if (warm != nullptr && static_cast<Eigen::Index>(warm->size()) != data.periods())
    throw std::invalid_argument("evaluate_pipeline: warm cache needs one slot per period");

  std::vector<Eigen::Index> all_periods;
  if (subset == nullptr) {
    all_periods.resize(static_cast<std::size_t>(data.periods()));
    std::iota(all_periods.begin(), all_periods.end(), Eigen::Index{0});
    subset = &all_periods;
  }
  const std::size_t n = subset->size();
  if (n == 0) throw std::invalid_argument("evaluate_pipeline: empty period subset");

  const PenaltyStructures structures = build_structures(kind, params, d, context);
  const bool dual_route = structures.kappa > 1e-12;

  Eigen::MatrixXd g_rows;
  Eigen::VectorXd h_rows;
  if (dual_route) box_to_inequalities(fs, g_rows, h_rows);

  std::vector<detail::PeriodSolve> solves(n);
  parallel_for(n, opts.threads, [&](std::size_t s) {
    const Eigen::Index i = (*subset)[s];
    const Eigen::MatrixXd v_gamma2 = assemble_v_gamma2(data.v_hat[i], opts.delta, structures);
    AdmmSettings settings = opts.solver;
    detail::PeriodSolve& ps = solves[s];
    const AdmmSolution* ws = (warm != nullptr && (*warm)[i].z_star.size() > 0) ? &(*warm)[i] : nullptr;
    if (dual_route) {
      ps.used_dual = true;
      ps.l1.V_gamma2 = v_gamma2;
      ps.l1.y_hat = data.y_hat[i];
      ps.l1.E = structures.E;
      ps.l1.kappa = structures.kappa;
      ps.l1.A = fs.A;
      ps.l1.b = fs.b;
      ps.l1.G = g_rows;
      ps.l1.h = h_rows;
      const DualL1Problem dual = build_dual(ps.l1);
      // TODO: the mean-diagonal rho stalls on badly scaled duals (large
      // universes can exceed 1e6 iterations mid-training); try residual
      // balancing on the warm-start solve and freezing the result.
      settings.rho = std::max(dual.Q_dual.diagonal().mean(), 1e-8);
      if (ws != nullptr && ws->z_star.size() != dual.dual_dim()) ws = nullptr;
      ps.dual = solve_dual_qp(dual, ps.l1, settings, ws);
      if (!ps.dual.admm.converged)
        throw std::runtime_error("evaluate_pipeline: dual solve failed to converge at period " +
                                 std::to_string(i));
    } else {
      ps.box.Q = v_gamma2;
      ps.box.p = -data.y_hat[i];
      ps.box.A = fs.A;
      ps.box.b = fs.b;
      ps.box.lower = fs.lower;
      ps.box.upper = fs.upper;
      settings.rho = std::max(v_gamma2.diagonal().mean(), 1e-8);
      if (ws != nullptr && ws->z_star.size() != d) ws = nullptr;
      ps.primal = admm_solve(ps.box, settings, ws);
      if (!ps.primal.converged)
        throw std::runtime_error("evaluate_pipeline: solve failed to converge at period " +
                                 std::to_string(i));
    }
    if (warm != nullptr) (*warm)[i] = ps.used_dual ? ps.dual.admm : ps.primal;
  });

  PipelineResult out;
  out.weights.resize(static_cast<Eigen::Index>(n), d);
  Eigen::MatrixXd rets(static_cast<Eigen::Index>(n), d);
  for (std::size_t s = 0; s < n; ++s) {
    const auto row = static_cast<Eigen::Index>(s);
    out.weights.row(row) = solves[s].used_dual ? solves[s].dual.z_star.transpose()
                                               : solves[s].primal.z_star.transpose();
    rets.row(row) = data.realized.row((*subset)[s]);
  }
  out.cost = cost_value(out.weights, rets, cost);
  if (!want_gradients) return out;

  const Eigen::MatrixXd dc = cost_gradient(out.weights, rets, cost);
  struct Contribution {
    Eigen::MatrixXd grad_v;
    double grad_kappa = 0.0;
    Eigen::MatrixXd grad_e;
  };
  std::vector<Contribution> contrib(n);
  parallel_for(n, opts.threads, [&](std::size_t s) {
    const detail::PeriodSolve& ps = solves[s];
    const Eigen::VectorXd dc_dz = dc.row(static_cast<Eigen::Index>(s)).transpose();
    if (ps.used_dual) {
      const L1Gradients g = l1_backward(ps.l1, ps.dual, dc_dz, opts.tikhonov_eps);
      contrib[s] = {g.grad_V, g.grad_kappa, g.grad_E};
    } else {
      const QpGradients g = admm_fixed_point_backward(ps.primal, ps.box, dc_dz, opts.tikhonov_eps);
      contrib[s] = {g.grad_Q, 0.0, Eigen::MatrixXd::Zero(structures.E.rows(), d)};
    }
  });

  // Ordered reduction keeps the sums independent of worker scheduling.
  Eigen::MatrixXd grad_v = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd grad_e = Eigen::MatrixXd::Zero(structures.E.rows(), d);
  double grad_kappa = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    grad_v += contrib[s].grad_v;
    grad_kappa += contrib[s].grad_kappa;
    if (grad_e.rows() > 0) grad_e += contrib[s].grad_e;
  }
  out.param_grads = penalty_backward(kind, params, grad_v, grad_kappa, grad_e, context);
  return out;
}

struct TrainConfig {
  double learning_rate = 0.10;
  int iterations = 100;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double delta = 20.0;          ///< risk aversion
  double batch_fraction = 1.0;  ///< fraction of periods per iteration
  std::uint64_t seed = 0;
  AdmmSettings solver;
  double tikhonov_eps = 1e-6;
  int threads = 1;

  void check() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw std::invalid_argument("TrainConfig: learning_rate must be nonnegative");
    if (iterations < 0) throw std::invalid_argument("TrainConfig: iterations must be nonnegative");
    if (!(batch_fraction > 0.0) || batch_fraction > 1.0)
      throw std::invalid_argument("TrainConfig: batch_fraction must be in (0, 1]");
    if (!(delta > 0.0)) throw std::invalid_argument("TrainConfig: delta must be positive");
  }
};

/// One row per evaluated iterate: record 0 is the initial point, record t
/// the parameters after t ADAM steps. Gradient columns are infinity norms
/// of the raw-space blocks; gamma1/gamma2 are the effective values.
struct TrainRecord {
  int iteration = 0;
  double cost = 0.0;
  double grad_gamma1 = 0.0;
  double grad_gamma2 = 0.0;
  double grad_theta1 = 0.0;
  double grad_theta2 = 0.0;
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  double wall_time_s = 0.0;  ///< cumulative, not serialized
};
using TrainTrace = std::vector<TrainRecord>;

struct TrainResult {
  PenaltyParams params;
  TrainTrace trace;
};

namespace detail {

struct AdamState {
  double m_g1 = 0.0, v_g1 = 0.0, m_g2 = 0.0, v_g2 = 0.0;
  Eigen::VectorXd m_t1, v_t1;
  Eigen::MatrixXd m_t2, v_t2;
  int step_count = 0;
};

inline AdamState make_adam_state(const PenaltyParams& params) {
  AdamState st;
  st.m_t1 = Eigen::VectorXd::Zero(params.theta1_raw.size());
  st.v_t1 = Eigen::VectorXd::Zero(params.theta1_raw.size());
  st.m_t2 = Eigen::MatrixXd::Zero(params.theta2_raw.rows(), params.theta2_raw.cols());
  st.v_t2 = Eigen::MatrixXd::Zero(params.theta2_raw.rows(), params.theta2_raw.cols());
  return st;
}

inline void adam_step(PenaltyParams& params, const PenaltyGradients& grads, AdamState& state,
                      const TrainConfig& config) {
  state.step_count += 1;
  const double bias1 = 1.0 - std::pow(config.adam_beta1, state.step_count);
  const double bias2 = 1.0 - std::pow(config.adam_beta2, state.step_count);
  const auto update = [&](double& x, double g, double& m, double& v) {
    m = config.adam_beta1 * m + (1.0 - config.adam_beta1) * g;
    v = config.adam_beta2 * v + (1.0 - config.adam_beta2) * g * g;
    x -= config.learning_rate * (m / bias1) / (std::sqrt(v / bias2) + config.adam_eps);
  };
  update(params.gamma1_raw, grads.grad_gamma1_raw, state.m_g1, state.v_g1);
  update(params.gamma2_raw, grads.grad_gamma2_raw, state.m_g2, state.v_g2);
  for (Eigen::Index i = 0; i < params.theta1_raw.size(); ++i)
    update(params.theta1_raw(i), grads.grad_theta1_raw(i), state.m_t1(i), state.v_t1(i));
  for (Eigen::Index c = 0; c < params.theta2_raw.cols(); ++c)
    for (Eigen::Index r = 0; r < params.theta2_raw.rows(); ++r)
      update(params.theta2_raw(r, c), grads.grad_theta2_raw(r, c), state.m_t2(r, c),
             state.v_t2(r, c));
}

inline double inf_norm_or_zero(const Eigen::VectorXd& v) {
  return v.size() > 0 ? v.cwiseAbs().maxCoeff() : 0.0;
}
inline double inf_norm_or_zero(const Eigen::MatrixXd& m) {
  return m.size() > 0 ? m.cwiseAbs().maxCoeff() : 0.0;
}

}  // namespace detail

/// Full-batch (or seeded-subsample) ADAM on the raw penalty parameters.
/// The trace holds iterations + 1 records: the initial point and one per
/// completed step. Warm starts carry each period's solution across outer
/// iterations. Nominal has nothing to train; its trace is the single
/// constant-cost record.
inline TrainResult train(const TrainingData& data, PenaltyKind kind, const DecisionCost& cost,
                         const TrainConfig& config, const FeasibleSet& fs,
                         const PenaltyContext* context = nullptr) {
  config.check();
  data.check_shapes();
  const Eigen::Index d = data.dim();
  const Eigen::Index m = data.periods();
  std::mt19937_64 rng(config.seed);
  const Eigen::Index d_x = context != nullptr ? context->beta_hat.rows() : d;

  TrainResult out;
  out.params = init_params(kind, d, d_x, rng);

  PipelineOptions opts;
  opts.delta = config.delta;
  opts.solver = config.solver;
  opts.tikhonov_eps = config.tikhonov_eps;
  opts.threads = config.threads;

  const auto start = std::chrono::steady_clock::now();
  const auto elapsed = [&start]() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  };
  const auto record_at = [&](int iteration, const PipelineResult& eval) {
    TrainRecord rec;
    rec.iteration = iteration;
    rec.cost = eval.cost;
    rec.grad_gamma1 = std::abs(eval.param_grads.grad_gamma1_raw);
    rec.grad_gamma2 = std::abs(eval.param_grads.grad_gamma2_raw);
    rec.grad_theta1 = detail::inf_norm_or_zero(eval.param_grads.grad_theta1_raw);
    rec.grad_theta2 = detail::inf_norm_or_zero(eval.param_grads.grad_theta2_raw);
    const PenaltyEffective eff = transform_params(out.params);
    rec.gamma1 = eff.gamma1;
    rec.gamma2 = eff.gamma2;
    rec.wall_time_s = elapsed();
    return rec;
  };

  if (kind == PenaltyKind::Nominal) {
    const PipelineResult eval =
        evaluate_pipeline(data, kind, out.params, cost, fs, opts, false, nullptr, context);
    out.trace.push_back(record_at(0, eval));
    return out;
  }

  std::vector<AdmmSolution> warm(static_cast<std::size_t>(m));
  detail::AdamState state = detail::make_adam_state(out.params);
  const auto batch = static_cast<Eigen::Index>(
      std::max<double>(1.0, std::floor(config.batch_fraction * static_cast<double>(m))));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  for (int it = 0; it <= config.iterations; ++it) {
    std::vector<Eigen::Index> chosen;
    const std::vector<Eigen::Index>* subset = nullptr;
    if (batch < m) {
      // Fisher-Yates with the run generator; sorted so the batch series
      // keeps period order.
      for (Eigen::Index i = m - 1; i > 0; --i) {
        const auto j = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(i + 1));
        std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
      }
      chosen.assign(order.begin(), order.begin() + batch);
      std::sort(chosen.begin(), chosen.end());
      subset = &chosen;
    }
    const PipelineResult eval =
        evaluate_pipeline(data, kind, out.params, cost, fs, opts, true, &warm, context, subset);
    if (!std::isfinite(eval.cost))
      throw std::runtime_error("train: non-finite cost at iteration " + std::to_string(it));
    out.trace.push_back(record_at(it, eval));
    if (it < config.iterations) detail::adam_step(out.params, eval.param_grads, state, config);
  }
  return out;
}

enum class ParamBlock { Gamma1, Gamma2, Theta1, Theta2 };

inline const char* param_block_name(ParamBlock block) {
  switch (block) {
    case ParamBlock::Gamma1: return "gamma1";
    case ParamBlock::Gamma2: return "gamma2";
    case ParamBlock::Theta1: return "theta1";
    case ParamBlock::Theta2: return "theta2";
  }
  return "?";
}

/// Central finite differences of the full pipeline cost against the
/// analytic raw-space gradient of one parameter block. Returns the max
/// over entries of |analytic - fd| / max(|fd|, 1e-8); a block the kind
/// does not use scores 0. Perturbed solves warm-start from the base
/// solutions, so parameters with no influence difference to exactly zero.
inline double grad_check(const TrainingData& data, PenaltyKind kind, const PenaltyParams& params,
                         const DecisionCost& cost, const FeasibleSet& fs,
                         const PipelineOptions& opts, ParamBlock block, double step = 1e-5,
                         const PenaltyContext* context = nullptr) {
  std::vector<AdmmSolution> base_warm(static_cast<std::size_t>(data.periods()));
  const PipelineResult base =
      evaluate_pipeline(data, kind, params, cost, fs, opts, true, &base_warm, context);
  if (!std::isfinite(base.cost)) throw std::runtime_error("grad_check: non-finite base cost");

  const auto cost_at = [&](const PenaltyParams& p) {
    std::vector<AdmmSolution> warm = base_warm;
    return evaluate_pipeline(data, kind, p, cost, fs, opts, false, &warm, context).cost;
  };
  const auto rel_err = [](double analytic, double fd) {
    return std::abs(analytic - fd) / std::max(std::abs(fd), 1e-8);
  };

  PenaltyParams p = params;
  double worst = 0.0;
  const auto check_slot = [&](double& slot, double analytic) {
    const double saved = slot;
    slot = saved + step;
    const double up = cost_at(p);
    slot = saved - step;
    const double down = cost_at(p);
    slot = saved;
    worst = std::max(worst, rel_err(analytic, (up - down) / (2.0 * step)));
  };

  switch (block) {
    case ParamBlock::Gamma1:
      if (!kind_has_l1(kind)) return 0.0;
      check_slot(p.gamma1_raw, base.param_grads.grad_gamma1_raw);
      break;
    case ParamBlock::Gamma2:
      if (!kind_has_l2(kind)) return 0.0;
      check_slot(p.gamma2_raw, base.param_grads.grad_gamma2_raw);
      break;
    case ParamBlock::Theta1:
      if (params.theta1_raw.size() == 0) return 0.0;
      for (Eigen::Index i = 0; i < p.theta1_raw.size(); ++i)
        check_slot(p.theta1_raw(i), base.param_grads.grad_theta1_raw(i));
      break;
    case ParamBlock::Theta2:
      if (params.theta2_raw.size() == 0) return 0.0;
      for (Eigen::Index c = 0; c < p.theta2_raw.cols(); ++c)
        for (Eigen::Index r = 0; r < p.theta2_raw.rows(); ++r)
          check_slot(p.theta2_raw(r, c), base.param_grads.grad_theta2_raw(r, c));
      break;
  }
  return worst;
}

}  // namespace penqp
