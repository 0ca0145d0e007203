#pragma once

/// @file fixtures.hpp Seeded instance generators shared by the gradient
/// certification suites. Unlike oracles.hpp these call the library solver:
/// instances are accepted or rejected by the geometry of their computed
/// solution (strict complementarity margins, clamped-coordinate counts),
/// which is what makes the finite-difference comparisons well posed.

#include <Eigen/Dense>

#include <random>

#include "oracles.hpp"
#include "penqp/qp.hpp"
#include "penqp/qp_grad.hpp"

namespace testutil {

// Near machine precision so finite-difference quotients over h = 1e-5 see
// solver noise well below the 1e-4 certification tolerance.
inline penqp::AdmmSettings tight_settings() {
  penqp::AdmmSettings st;
  st.eps_abs = 1e-13;
  st.eps_rel = 0.0;
  st.max_iter = 200000;
  return st;
}

// Random inequality-form instance with a strictly complementary optimum:
// every active row has a multiplier >= margin and every inactive row has
// slack <= -margin, so the oracle's active set is stable under the
// finite-difference perturbations.
struct GeneralInstance {
  penqp::InequalityQp qp;
  GeneralQpSolution sol;
};

inline GeneralInstance random_general_instance(std::mt19937_64& rng) {
  const double margin = 1e-3;
  for (;;) {
    const Eigen::Index d = 3 + static_cast<Eigen::Index>(rng() % 3);
    const Eigen::Index m = static_cast<Eigen::Index>(rng() % 2);
    const Eigen::Index q = 2 + static_cast<Eigen::Index>(rng() % 3);
    penqp::InequalityQp qp;
    qp.Q = random_spd(d, rng);
    qp.p = random_gaussian_vector(d, rng);
    const Eigen::VectorXd z0 = random_gaussian_vector(d, rng);
    if (m > 0) {
      qp.A = random_full_row_rank(m, d, rng);
      qp.b = qp.A * z0;
    } else {
      qp.A.resize(0, d);
      qp.b.resize(0);
    }
    qp.G = random_gaussian(q, d, rng);
    std::uniform_real_distribution<double> slack_dist(-0.5, 0.5);
    qp.h.resize(q);
    for (Eigen::Index i = 0; i < q; ++i) qp.h(i) = qp.G.row(i).dot(z0) + slack_dist(rng) + 0.05;

    const auto sol = active_set_general_solve(qp.Q, qp.p, qp.A, qp.b, qp.G, qp.h);
    if (!sol) continue;
    bool clean = true;
    const Eigen::VectorXd slack = qp.G * sol->z - qp.h;
    for (Eigen::Index i = 0; i < q && clean; ++i) {
      const bool active = sol->lambda(i) > 0.0;
      if (active && sol->lambda(i) < margin) clean = false;
      if (!active && slack(i) > -margin) clean = false;
    }
    if (clean) return {qp, *sol};
  }
}

// Classification of an equality+box instance by its solution geometry.
// Interior instances (no clamped coordinate) identify the data blocks
// Q, p, A, b: every gradient entry is generically nonzero. Clamped
// instances identify the bound blocks: clamped coordinates carry the
// nonzero bound gradients while slack coordinates have exactly zero
// gradient and, under a warm-started re-solve, exactly zero FD.
enum class BoxGeometry { Interior, SomeClamped };

inline penqp::QpProblem random_clean_box_instance(std::mt19937_64& rng, BoxGeometry want,
                                                  penqp::AdmmSolution& sol_out) {
  const double margin = 1e-3;
  for (;;) {
    const Eigen::Index d = 3 + static_cast<Eigen::Index>(rng() % 3);
    const Eigen::Index m = static_cast<Eigen::Index>(rng() % 2);
    const penqp::QpProblem pr = random_box_qp(d, m, rng);
    const penqp::AdmmSolution sol = penqp::admm_solve(pr, tight_settings());
    if (!sol.converged) continue;
    bool clean = true;
    int clamped = 0;
    for (Eigen::Index i = 0; i < d && clean; ++i) {
      const double gap_lo = sol.z_star(i) - pr.lower(i);
      const double gap_hi = pr.upper(i) - sol.z_star(i);
      const bool at_lo = gap_lo < 1e-9;
      const bool at_hi = gap_hi < 1e-9;
      if (at_lo || at_hi) ++clamped;
      if (at_lo && sol.lambda_minus(i) < margin) clean = false;
      if (at_hi && sol.lambda_plus(i) < margin) clean = false;
      if (!at_lo && gap_lo < margin) clean = false;
      if (!at_hi && gap_hi < margin) clean = false;
    }
    if (!clean) continue;
    if (want == BoxGeometry::Interior && clamped != 0) continue;
    if (want == BoxGeometry::SomeClamped && clamped == 0) continue;
    sol_out = sol;
    return pr;
  }
}

// Smallest magnitude over the entries of the data-block gradients. Used to
// reject instances with accidentally tiny gradient entries, for which the
// per-entry relative error compares FD noise against the 1e-8 floor.
inline double min_data_gradient_entry(const penqp::QpGradients& g, bool with_eq) {
  double lo = g.grad_p.cwiseAbs().minCoeff();
  lo = std::min(lo, g.grad_Q.cwiseAbs().minCoeff());
  if (with_eq && g.grad_A.size() > 0) {
    lo = std::min(lo, g.grad_A.cwiseAbs().minCoeff());
    lo = std::min(lo, g.grad_b.cwiseAbs().minCoeff());
  }
  return lo;
}

}  // namespace testutil
