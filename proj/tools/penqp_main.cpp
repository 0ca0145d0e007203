// Command-line front end: solve a single penalized allocation problem,
// finite-difference-check the pipeline gradients, fit penalty parameters,
// run the randomized-universe walk-forward experiment, and re-aggregate
// saved metrics.
//
// Exit codes: 0 success, 1 usage or input parse failure, 2 numerical
// failure (solver non-convergence, non-finite cost, failed check).

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "penqp/penqp.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

Eigen::MatrixXd random_spd(Eigen::Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd a(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) a(i, j) = gauss(rng);
  return a.transpose() * a / static_cast<double>(d) +
         0.5 * Eigen::MatrixXd::Identity(d, d);
}

std::string join_doubles(const Eigen::VectorXd& v) {
  std::string out;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) out += ' ';
    out += penqp::format_double(v(i));
  }
  return out;
}

int cmd_solve(const std::string& path) {
  penqp::SolveSpec spec;
  try {
    spec = penqp::read_solve_spec(path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  const Eigen::Index d = spec.y_hat.size();
  penqp::AdmmSettings settings;
  settings.eps_abs = 1e-10;
  settings.eps_rel = 1e-9;
  settings.max_iter = 200000;
  try {
    if (spec.kappa > 0.0) {
      penqp::L1PenalizedProblem problem;
      problem.V_gamma2 = spec.v;
      problem.y_hat = spec.y_hat;
      problem.E = spec.e;
      problem.kappa = spec.kappa;
      problem.A = spec.a.size() > 0 ? spec.a : Eigen::MatrixXd(0, d);
      problem.b = spec.b.size() > 0 ? spec.b : Eigen::VectorXd(0);
      // Box bounds fold into inequality rows on the dual route.
      std::vector<std::pair<Eigen::RowVectorXd, double>> rows;
      for (Eigen::Index i = 0; spec.g.size() > 0 && i < spec.g.rows(); ++i)
        rows.emplace_back(spec.g.row(i), spec.h(i));
      for (Eigen::Index i = 0; spec.lower.size() > 0 && i < d; ++i)
        if (std::isfinite(spec.lower(i)))
          rows.emplace_back(-Eigen::RowVectorXd::Unit(d, i), -spec.lower(i));
      for (Eigen::Index i = 0; spec.upper.size() > 0 && i < d; ++i)
        if (std::isfinite(spec.upper(i)))
          rows.emplace_back(Eigen::RowVectorXd::Unit(d, i), spec.upper(i));
      problem.G.resize(static_cast<Eigen::Index>(rows.size()), d);
      problem.h.resize(static_cast<Eigen::Index>(rows.size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        problem.G.row(static_cast<Eigen::Index>(r)) = rows[r].first;
        problem.h(static_cast<Eigen::Index>(r)) = rows[r].second;
      }
      const penqp::DualL1Problem dual = penqp::build_dual(problem);
      settings.rho = std::max(dual.Q_dual.diagonal().mean(), 1e-8);
      const penqp::DualSolution sol = penqp::solve_dual_qp(dual, problem, settings);
      if (!sol.admm.converged) {
        std::cerr << "error: solver did not converge in " << settings.max_iter << " iterations\n";
        return kExitNumerical;
      }
      std::cout << "z_star: " << join_doubles(sol.z_star) << '\n';
      std::cout << "objective: " << penqp::format_double(penqp::l1_primal_objective(problem, sol.z_star))
                << '\n';
      std::cout << "duality_gap: " << penqp::format_double(penqp::duality_gap(problem, sol)) << '\n';
      std::cout << "iterations: " << sol.admm.iterations << '\n';
    } else {
      penqp::QpProblem problem;
      problem.Q = spec.v;
      problem.p = -spec.y_hat;
      problem.A = spec.a.size() > 0 ? spec.a : Eigen::MatrixXd(0, d);
      problem.b = spec.b.size() > 0 ? spec.b : Eigen::VectorXd(0);
      problem.lower = spec.lower.size() > 0
                          ? spec.lower
                          : Eigen::VectorXd::Constant(d, -std::numeric_limits<double>::infinity());
      problem.upper = spec.upper.size() > 0
                          ? spec.upper
                          : Eigen::VectorXd::Constant(d, std::numeric_limits<double>::infinity());
      if (spec.g.size() > 0)
        throw std::invalid_argument("inequality rows 'g'/'h' need kappa > 0; use bounds instead");
      settings.rho = std::max(problem.Q.diagonal().mean(), 1e-8);
      const penqp::AdmmSolution sol = penqp::admm_solve(problem, settings);
      if (!sol.converged) {
        std::cerr << "error: solver did not converge in " << settings.max_iter << " iterations\n";
        return kExitNumerical;
      }
      std::cout << "z_star: " << join_doubles(sol.z_star) << '\n';
      const double obj = 0.5 * sol.z_star.dot(problem.Q * sol.z_star) + problem.p.dot(sol.z_star);
      std::cout << "objective: " << penqp::format_double(obj) << '\n';
      if (problem.A.rows() > 0)
        std::cout << "equality_residual: "
                  << penqp::format_double(
                         (problem.A * sol.z_star - problem.b).cwiseAbs().maxCoeff())
                  << '\n';
      std::cout << "primal_residual: " << penqp::format_double(sol.primal_residual) << '\n';
      std::cout << "dual_residual: " << penqp::format_double(sol.dual_residual) << '\n';
      std::cout << "iterations: " << sol.iterations << '\n';
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& kinds_csv, double step, double tol,
                  int instances) {
  std::vector<penqp::PenaltyKind> kinds;
  try {
    if (kinds_csv.empty()) {
      for (const char* name : {"nominal", "l2", "l2-cov", "l1", "en", "l2-p", "l2-cov-p", "l1-p",
                               "en-p"})
        kinds.push_back(penqp::kind_from_string(name));
    } else {
      kinds = penqp::detail::parse_kinds(kinds_csv);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  const Eigen::Index d = 4, m = 3;
  penqp::FeasibleSet fs = penqp::unconstrained_set(d);
  fs.A = Eigen::MatrixXd::Ones(1, d);
  fs.b = Eigen::VectorXd::Ones(1);

  penqp::PipelineOptions opts;
  opts.delta = 1.0;
  opts.solver.eps_abs = 1e-12;
  opts.solver.eps_rel = 0.0;
  opts.solver.max_iter = 200000;
  opts.tikhonov_eps = 1e-8;
  const penqp::DecisionCost cost;

  bool all_ok = true;
  try {
    for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
      const penqp::PenaltyKind kind = kinds[ki];
      double worst[4] = {0.0, 0.0, 0.0, 0.0};
      for (int inst = 0; inst < instances; ++inst) {
        // Seeded instance with a rejection rule so every block is actually
        // identifiable: all portfolio entries away from zero (finite
        // differences straddling the L1 dead zone measure nothing), at
        // least one short position for the identity-transform L1 kinds
        // (all-long weights under the sum-to-one constraint make the L1
        // term identically one, giving a structurally zero gamma1
        // gradient), and every learnable gradient entry large enough to
        // stand clear of the re-solve noise floor in the quotients. That
        // floor is relative to the cost magnitude, so the guard scales
        // with it.
        penqp::TrainingData td;
        penqp::PenaltyParams params;
        penqp::PenaltyContext context;
        bool accepted = false;
        for (int attempt = 0; attempt < 200 && !accepted; ++attempt) {
          std::uint64_t mix = seed ^ (0x9E3779B97F4A7C15ULL * (ki * 1000 + inst * 10 + 1));
          mix ^= static_cast<std::uint64_t>(attempt) * 0xBF58476D1CE4E5B9ULL;
          std::mt19937_64 rng(penqp::splitmix64(mix));
          std::normal_distribution<double> gauss(0.0, 1.0);
          td = penqp::TrainingData{};
          td.realized.resize(m, d);
          for (Eigen::Index i = 0; i < m; ++i)
            for (Eigen::Index j = 0; j < d; ++j) td.realized(i, j) = gauss(rng);
          for (Eigen::Index i = 0; i < m; ++i) {
            td.v_hat.push_back(random_spd(d, rng));
            Eigen::VectorXd y(d);
            for (Eigen::Index j = 0; j < d; ++j) y(j) = gauss(rng);
            td.y_hat.push_back(y);
          }
          context.beta_hat.resize(d, d);
          for (Eigen::Index i = 0; i < d; ++i)
            for (Eigen::Index j = 0; j < d; ++j) context.beta_hat(i, j) = gauss(rng);
          context.w_sqrt = penqp::matrix_sqrt_psd(random_spd(d, rng));
          params = penqp::init_params(kind, d, d, rng);
          if (penqp::kind_has_l1(kind)) params.gamma1_raw = std::log(0.3);
          if (penqp::kind_has_l2(kind)) params.gamma2_raw = std::log(0.3);
          // Lift theta away from both the relu kink and the tiny-gradient
          // regime; U[0, 1] draws can land close enough to zero that the
          // per-entry quotients are noise-dominated.
          if (params.theta1_raw.size() > 0) params.theta1_raw.array() += 0.25;
          if (params.theta2_raw.size() > 0) params.theta2_raw.array() += 0.25;
          const penqp::PipelineResult base =
              penqp::evaluate_pipeline(td, kind, params, cost, fs, opts, true, nullptr, &context);
          accepted = base.weights.cwiseAbs().minCoeff() >= 1e-2;
          if (kind == penqp::PenaltyKind::L1 || kind == penqp::PenaltyKind::ElasticNet)
            accepted = accepted && base.weights.minCoeff() <= -1e-2;
          const double floor = 3e-3 * std::max(1.0, std::abs(base.cost));
          const auto& g = base.param_grads;
          if (penqp::kind_has_l1(kind))
            accepted = accepted && std::abs(g.grad_gamma1_raw) >= floor;
          if (penqp::kind_has_l2(kind))
            accepted = accepted && std::abs(g.grad_gamma2_raw) >= floor;
          if (params.theta1_raw.size() > 0)
            accepted = accepted && g.grad_theta1_raw.cwiseAbs().minCoeff() >= floor;
          if (params.theta2_raw.size() > 0)
            accepted = accepted && g.grad_theta2_raw.cwiseAbs().minCoeff() >= floor;
        }
        if (!accepted) throw std::runtime_error("gradcheck: no identifiable instance found");
        for (const auto block :
             {penqp::ParamBlock::Gamma1, penqp::ParamBlock::Gamma2, penqp::ParamBlock::Theta1,
              penqp::ParamBlock::Theta2}) {
          const double err =
              penqp::grad_check(td, kind, params, cost, fs, opts, block, step, &context);
          worst[static_cast<int>(block)] = std::max(worst[static_cast<int>(block)], err);
        }
      }
      for (const auto block :
           {penqp::ParamBlock::Gamma1, penqp::ParamBlock::Gamma2, penqp::ParamBlock::Theta1,
            penqp::ParamBlock::Theta2}) {
        const double err = worst[static_cast<int>(block)];
        const bool ok = err <= tol;
        all_ok = all_ok && ok;
        std::printf("%-10s %-7s max rel err %.3e %s\n", penqp::kind_to_string(kind),
                    penqp::param_block_name(block), err, ok ? "ok" : "FAIL");
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
  return all_ok ? kExitOk : kExitNumerical;
}

void print_report(const penqp::BacktestReport& report) {
  std::printf("%-10s %12s %12s %12s %22s\n", "model", "ann_mean", "ann_vol", "sharpe",
              "med var vs nominal");
  for (const penqp::KindAggregate& row : report.rows) {
    std::string pct = "n/a";
    if (row.has_percent) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%+.2f%%", 100.0 * row.percent_median);
      pct = buf;
    }
    std::printf("%-10s %12.6f %12.6f %12.6f %22s\n", penqp::kind_to_string(row.kind),
                row.ann_mean.mean, row.ann_vol.mean, row.ann_sharpe.mean, pct.c_str());
  }
}

struct RunOptions {
  std::string config_path;
  std::string output_dir = ".";
  std::uint64_t seed = 0;
  int threads = 1;
  bool synthetic = false;
  std::string kinds_csv;
  bool seed_given = false, threads_given = false;
};

int cmd_run(const RunOptions& opt, bool train_only) {
  penqp::RunSpec spec;
  penqp::MarketData data;
  try {
    if (!opt.config_path.empty())
      penqp::apply_config(spec, penqp::parse_config_file(opt.config_path));
    if (opt.synthetic) spec.synthetic = true;
    if (opt.seed_given) spec.experiment.seed = opt.seed;
    if (opt.threads_given) spec.experiment.threads = opt.threads;
    if (!opt.kinds_csv.empty()) spec.experiment.kinds = penqp::detail::parse_kinds(opt.kinds_csv);
    spec.experiment.train.delta = spec.experiment.delta;

    if (spec.synthetic) {
      data = penqp::generate_synthetic(spec.synth.universe, spec.synth.weeks, spec.synth.d_x,
                                       spec.experiment.seed, spec.synth.noise)
                 .data;
    } else {
      if (spec.returns_csv.empty() || spec.features_csv.empty())
        throw std::runtime_error(
            "config: returns_csv and features_csv are required unless synthetic=true");
      data = penqp::load_market(spec.returns_csv, spec.features_csv);
    }
    penqp::fill_synthetic_ranges(spec, data);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (train_only) spec.experiment.trials = 1;
    const auto results = penqp::run_experiment(data, spec.experiment);
    std::filesystem::create_directories(opt.output_dir);
    const auto out_path = [&](const char* name) {
      return (std::filesystem::path(opt.output_dir) / name).string();
    };
    penqp::write_text_file(out_path("training_curve.csv"), penqp::training_curve_csv(results));
    if (train_only) {
      for (const auto& [kind, trials] : results)
        for (const penqp::TrialResult& t : trials)
          if (!t.trace.empty())
            std::printf("%-10s final cost %.6e gamma1 %.6g gamma2 %.6g\n",
                        penqp::kind_to_string(kind), t.trace.back().cost, t.trace.back().gamma1,
                        t.trace.back().gamma2);
      return kExitOk;
    }
    penqp::write_text_file(out_path("weights.csv"), penqp::weights_csv(results, data.labels));
    penqp::write_text_file(out_path("metrics.csv"), penqp::metrics_csv(results));
    penqp::write_text_file(out_path("rolling.csv"),
                           penqp::rolling_csv(results, spec.experiment.rolling_window_weeks));
    std::vector<std::pair<penqp::PenaltyKind, std::vector<penqp::TrialMetrics>>> per_kind;
    for (const auto& [kind, trials] : results) {
      std::vector<penqp::TrialMetrics> ms;
      for (const penqp::TrialResult& t : trials) ms.push_back(t.metrics);
      per_kind.emplace_back(kind, std::move(ms));
    }
    const penqp::BacktestReport report = penqp::aggregate_report(per_kind);
    penqp::write_text_file(out_path("summary.json"),
                           penqp::summary_json(report, spec).dump(2) + "\n");
    print_report(report);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitOk;
}

int cmd_report(const std::string& output_dir) {
  try {
    const auto metrics =
        penqp::read_metrics_csv((std::filesystem::path(output_dir) / "metrics.csv").string());
    print_report(penqp::aggregate_report(metrics));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Norm-penalized mean-variance portfolio construction and evaluation"};
  app.require_subcommand(1);

  auto* solve = app.add_subcommand("solve", "Solve one penalized allocation problem from a file");
  std::string problem_path;
  solve->add_option("problem", problem_path, "Problem file (sections v, y_hat, kappa, ...)")
      ->required();

  auto* gradcheck =
      app.add_subcommand("gradcheck", "Finite-difference check of the pipeline gradients");
  std::uint64_t gc_seed = 0;
  std::string gc_kinds;
  double gc_step = 1e-5, gc_tol = 1e-4;
  int gc_instances = 3;
  gradcheck->add_option("--seed", gc_seed, "Root seed");
  gradcheck->add_option("--kinds", gc_kinds, "Comma-separated penalty kinds (default all)");
  gradcheck->add_option("--step", gc_step, "Central-difference step");
  gradcheck->add_option("--tol", gc_tol, "Largest accepted relative error");
  gradcheck->add_option("--instances", gc_instances, "Seeded instances per kind");

  RunOptions run_opt;
  const auto add_run_options = [&](CLI::App* sub) {
    sub->add_option("--config", run_opt.config_path, "key=value config file");
    sub->add_option("--output-dir", run_opt.output_dir, "Directory for result files");
    sub->add_option("--seed", run_opt.seed, "Root seed (overrides the config)");
    sub->add_option("--threads", run_opt.threads, "Trial-level worker threads (overrides the config)");
    sub->add_flag("--synthetic", run_opt.synthetic, "Use the built-in synthetic market");
    sub->add_option("--kinds", run_opt.kinds_csv, "Comma-separated penalty kinds (overrides the config)");
  };
  auto* train = app.add_subcommand("train", "Fit penalty parameters and write the training curve");
  add_run_options(train);
  auto* backtest =
      app.add_subcommand("backtest", "Run the randomized-universe walk-forward experiment");
  add_run_options(backtest);

  auto* report = app.add_subcommand("report", "Re-aggregate a saved metrics.csv");
  std::string report_dir = ".";
  report->add_option("--output-dir", report_dir, "Directory holding metrics.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  if (*solve) return cmd_solve(problem_path);
  if (*gradcheck) return cmd_gradcheck(gc_seed, gc_kinds, gc_step, gc_tol, gc_instances);
  if (*train || *backtest) {
    CLI::App* sub = *train ? train : backtest;
    run_opt.seed_given = sub->count("--seed") > 0;
    run_opt.threads_given = sub->count("--threads") > 0;
    return cmd_run(run_opt, static_cast<bool>(*train));
  }
  if (*report) return cmd_report(report_dir);
  return kExitUsage;
}
