#pragma once

/// @file l1_dual.hpp Dual route for L1-penalized, linearly constrained QPs.
/// The primal
///   minimize (1/2) z'Vz - y'z + kappa*||E z||_1  s.t.  A z = b,  G z <= h
/// has a box-constrained QP dual over stacked multipliers u = (v, eta,
/// lambda) for the blocks (E z = w, equalities, inequalities):
///   minimize (1/2) u'(M V^-1 M')u + q'u  with  M = [E; A; G],
///   q = (-E V^-1 y, -A V^-1 y + b, -G V^-1 y + h),
///   v in [-kappa, kappa], eta free, lambda >= 0.
/// The primal optimum is recovered from the multipliers as
///   z* = V^-1 (y - E'v* - A'eta* - G'lambda*),
/// and gradients flow back through both the recovery map and the dual QP.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <stdexcept>

#include "penqp/qp.hpp"
#include "penqp/qp_grad.hpp"

namespace penqp {

/// L1-penalized problem data. kappa is the collapsed weight alpha*gamma1;
/// splitting its gradient between the two factors is the caller's concern.
struct L1PenalizedProblem {
  Eigen::MatrixXd V_gamma2;  ///< d_z x d_z, symmetric positive definite
  Eigen::VectorXd y_hat;
  Eigen::MatrixXd E;  ///< d_E x d_z sparsifying transform, may have 0 rows
  double kappa = 0.0;
  Eigen::MatrixXd A;  ///< d_eq x d_z, may have 0 rows
  Eigen::VectorXd b;
  Eigen::MatrixXd G;  ///< d_iq x d_z, may have 0 rows
  Eigen::VectorXd h;

  Eigen::Index dim() const { return V_gamma2.rows(); }

  void check_shapes() const {
    const Eigen::Index d = dim();
    if (V_gamma2.cols() != d || y_hat.size() != d)
      throw std::invalid_argument("L1PenalizedProblem: V/y_hat shape mismatch");
    if (E.rows() > 0 && E.cols() != d) throw std::invalid_argument("L1PenalizedProblem: E shape mismatch");
    if (A.rows() > 0 && A.cols() != d) throw std::invalid_argument("L1PenalizedProblem: A shape mismatch");
    if (b.size() != A.rows()) throw std::invalid_argument("L1PenalizedProblem: b size mismatch");
    if (G.rows() > 0 && G.cols() != d) throw std::invalid_argument("L1PenalizedProblem: G shape mismatch");
    if (h.size() != G.rows()) throw std::invalid_argument("L1PenalizedProblem: h size mismatch");
    if (!(kappa >= 0.0)) throw std::invalid_argument("L1PenalizedProblem: kappa must be nonnegative");
  }
};

/// Box-constrained dual QP with the Cholesky factor of V cached for the
/// recovery solve. block_dims = (d_E, d_eq, d_iq) partitions the dual axis.
struct DualL1Problem {
  Eigen::MatrixXd Q_dual;
  Eigen::VectorXd q_dual;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  std::array<Eigen::Index, 3> block_dims{0, 0, 0};
  Eigen::LLT<Eigen::MatrixXd> chol_V;

  Eigen::Index dual_dim() const { return Q_dual.rows(); }
};

/// Dual optimum split into blocks, the recovered primal point, and the raw
/// ADMM solution of the dual QP (kept for warm starts and backward passes).
struct DualSolution {
  Eigen::VectorXd v_star;
  Eigen::VectorXd eta_star;
  Eigen::VectorXd lambda_star;
  Eigen::VectorXd z_star;
  AdmmSolution admm;
};

/// Gradients of a scalar cost with respect to every L1PenalizedProblem
/// field, accumulated over the recovery map and the dual QP layer.
struct L1Gradients {
  Eigen::MatrixXd grad_V;  ///< symmetric
  Eigen::VectorXd grad_y_hat;
  Eigen::MatrixXd grad_E;
  double grad_kappa = 0.0;
  Eigen::MatrixXd grad_A;
  Eigen::VectorXd grad_b;
  Eigen::MatrixXd grad_G;
  Eigen::VectorXd grad_h;
};

/// Assembles the box-constrained dual of an L1-penalized problem. Absent
/// E/A/G blocks shrink the dual dimension. Requires kappa > 0; a zero
/// penalty has no v-block and belongs on the plain QP path.
inline DualL1Problem build_dual(const L1PenalizedProblem& problem) {
  problem.check_shapes();
  if (!(problem.kappa > 0.0))
    throw std::invalid_argument("build_dual: kappa must be positive (use the plain QP path for kappa = 0)");

  DualL1Problem dual;
  dual.chol_V = problem.V_gamma2.llt();
  if (dual.chol_V.info() != Eigen::Success)
    throw std::invalid_argument("build_dual: V_gamma2 is not positive definite (Cholesky failed)");

  const Eigen::Index k = problem.E.rows();
  const Eigen::Index m = problem.A.rows();
  const Eigen::Index q = problem.G.rows();
  const Eigen::Index n = k + m + q;
  dual.block_dims = {k, m, q};

  Eigen::MatrixXd mstack(n, problem.dim());
  mstack.topRows(k) = problem.E;
  mstack.middleRows(k, m) = problem.A;
  mstack.bottomRows(q) = problem.G;

  const Eigen::MatrixXd vinv_mt = dual.chol_V.solve(mstack.transpose());
  dual.Q_dual = mstack * vinv_mt;
  dual.Q_dual = (0.5 * (dual.Q_dual + dual.Q_dual.transpose())).eval();  // kill roundoff asymmetry

  const Eigen::VectorXd vinv_y = dual.chol_V.solve(problem.y_hat);
  dual.q_dual = -(mstack * vinv_y);
  dual.q_dual.segment(k, m) += problem.b;
  dual.q_dual.tail(q) += problem.h;

  dual.lower.setConstant(n, -kInfinity);
  dual.upper.setConstant(n, kInfinity);
  dual.lower.head(k).setConstant(-problem.kappa);
  dual.upper.head(k).setConstant(problem.kappa);
  dual.lower.tail(q).setZero();
  return dual;
}

/// Solves the dual QP with ADMM and recovers the primal point through the
/// cached Cholesky factor. A stalled dual solve is reported through
/// admm.converged rather than an exception so outer training loops can
/// tolerate slightly inexact inner solves.
/// Solves a prebuilt dual (as produced by build_dual for this problem) and
/// recovers the primal point. Split out so callers can inspect the dual,
/// e.g. to pick a splitting penalty from its diagonal, without building it
/// twice.
inline DualSolution solve_dual_qp(const DualL1Problem& dual, const L1PenalizedProblem& problem,
                                  const AdmmSettings& settings = {},
                                  const AdmmSolution* warm_start = nullptr) {
  QpProblem box;
  box.Q = dual.Q_dual;
  box.p = dual.q_dual;
  box.A.resize(0, dual.dual_dim());
  box.b.resize(0);
  box.lower = dual.lower;
  box.upper = dual.upper;

  DualSolution sol;
  sol.admm = admm_solve(box, settings, warm_start);

  const auto [k, m, q] = dual.block_dims;
  sol.v_star = sol.admm.z_star.head(k);
  sol.eta_star = sol.admm.z_star.segment(k, m);
  sol.lambda_star = sol.admm.z_star.tail(q);

  Eigen::VectorXd rhs = problem.y_hat;
  if (k > 0) rhs -= problem.E.transpose() * sol.v_star;
  if (m > 0) rhs -= problem.A.transpose() * sol.eta_star;
  if (q > 0) rhs -= problem.G.transpose() * sol.lambda_star;
  sol.z_star = dual.chol_V.solve(rhs);
  return sol;
}

inline DualSolution solve_l1_qp(const L1PenalizedProblem& problem, const AdmmSettings& settings = {},
                                const AdmmSolution* warm_start = nullptr) {
  return solve_dual_qp(build_dual(problem), problem, settings, warm_start);
}

/// Primal objective (1/2) z'Vz - y'z + kappa*||E z||_1 at z.
inline double l1_primal_objective(const L1PenalizedProblem& problem, const Eigen::VectorXd& z) {
  double obj = 0.5 * z.dot(problem.V_gamma2 * z) - problem.y_hat.dot(z);
  if (problem.E.rows() > 0) obj += problem.kappa * (problem.E * z).lpNorm<1>();
  return obj;
}

/// Gap between the primal objective at the recovered z* and the Lagrangian
/// lower bound at (v*, eta*, lambda*). Nonnegative up to solver tolerance;
/// small values certify both solutions at once. The lower bound at the
/// minimizing z simplifies to -(1/2) z*'Vz* - eta*'b - lambda*'h.
inline double duality_gap(const L1PenalizedProblem& problem, const DualSolution& solution) {
  problem.check_shapes();
  if (!(problem.kappa > 0.0))
    throw std::invalid_argument("duality_gap: undefined for kappa = 0 (rejected upstream)");
  const Eigen::VectorXd& z = solution.z_star;
  if (problem.A.rows() > 0 && (problem.A * z - problem.b).lpNorm<Eigen::Infinity>() > 1e-6)
    throw std::runtime_error("duality_gap: recovered point violates the equality constraints");
  if (problem.G.rows() > 0 && ((problem.G * z - problem.h).array() > 1e-6).any())
    throw std::runtime_error("duality_gap: recovered point violates the inequality constraints");
  if (solution.v_star.size() > 0 &&
      solution.v_star.lpNorm<Eigen::Infinity>() > problem.kappa + 1e-8)
    throw std::runtime_error("duality_gap: dual point violates the kappa box");

  double lower_bound = -0.5 * z.dot(problem.V_gamma2 * z);
  if (problem.A.rows() > 0) lower_bound -= solution.eta_star.dot(problem.b);
  if (problem.G.rows() > 0) lower_bound -= solution.lambda_star.dot(problem.h);
  return l1_primal_objective(problem, z) - lower_bound;
}

/// Gradients of c with cotangent dc_dz at the recovered primal optimum.
/// Three contributions are summed per input: the recovery map's explicit
/// dependence on (V, y, E, A, G), the dual QP solution's dependence on its
/// assembled data (pushed through admm_fixed_point_backward), and the
/// kappa box bounds of the v-block.
inline L1Gradients l1_backward(const L1PenalizedProblem& problem, const DualSolution& solution,
                               const Eigen::VectorXd& dc_dz, double tikhonov_eps = 1e-6) {
  problem.check_shapes();
  if (dc_dz.size() != problem.dim()) throw std::invalid_argument("l1_backward: dc_dz size mismatch");
  const DualL1Problem dual = build_dual(problem);
  const auto [k, m, q] = dual.block_dims;
  const Eigen::Index n = k + m + q;
  const Eigen::Index d = problem.dim();

  Eigen::MatrixXd mstack(n, d);
  mstack.topRows(k) = problem.E;
  mstack.middleRows(k, m) = problem.A;
  mstack.bottomRows(q) = problem.G;
  Eigen::VectorXd u_star(n);
  u_star.head(k) = solution.v_star;
  u_star.segment(k, m) = solution.eta_star;
  u_star.tail(q) = solution.lambda_star;

  L1Gradients out;
  out.grad_V = Eigen::MatrixXd::Zero(d, d);
  out.grad_y_hat = Eigen::VectorXd::Zero(d);
  out.grad_E = Eigen::MatrixXd::Zero(k, d);
  out.grad_A = Eigen::MatrixXd::Zero(m, d);
  out.grad_b = Eigen::VectorXd::Zero(m);
  out.grad_G = Eigen::MatrixXd::Zero(q, d);
  out.grad_h = Eigen::VectorXd::Zero(q);

  // Recovery map z* = V^-1 (y - M'u*): explicit dependence.
  const Eigen::VectorXd u = dual.chol_V.solve(dc_dz);
  out.grad_y_hat += u;
  out.grad_V -= u * solution.z_star.transpose();
  Eigen::MatrixXd grad_m = -u_star * u.transpose();

  // Dual-variable cotangent g_u = -M V^-1 dc_dz through the dual box QP.
  const Eigen::VectorXd g_u = -(mstack * u);
  QpProblem box;
  box.Q = dual.Q_dual;
  box.p = dual.q_dual;
  box.A.resize(0, n);
  box.b.resize(0);
  box.lower = dual.lower;
  box.upper = dual.upper;
  const QpGradients gd = admm_fixed_point_backward(solution.admm, box, g_u, tikhonov_eps);

  // Q_dual = M V^-1 M' and q_dual = -M V^-1 y + (0, b, h) pulled back to
  // the primal-side inputs.
  const Eigen::MatrixXd vinv_mt = dual.chol_V.solve(mstack.transpose());  // d x n
  const Eigen::VectorXd vinv_y = dual.chol_V.solve(problem.y_hat);
  grad_m += 2.0 * gd.grad_Q * vinv_mt.transpose();
  out.grad_V -= vinv_mt * gd.grad_Q * vinv_mt.transpose();
  grad_m -= gd.grad_p * vinv_y.transpose();
  out.grad_V += (vinv_mt * gd.grad_p) * vinv_y.transpose();
  out.grad_y_hat -= vinv_mt * gd.grad_p;
  out.grad_b += gd.grad_p.segment(k, m);
  out.grad_h += gd.grad_p.tail(q);

  // kappa enters only through the v-block box [-kappa, kappa].
  out.grad_kappa = gd.grad_upper.head(k).sum() - gd.grad_lower.head(k).sum();

  out.grad_E += grad_m.topRows(k);
  out.grad_A += grad_m.middleRows(k, m);
  out.grad_G += grad_m.bottomRows(q);
  out.grad_V = (0.5 * (out.grad_V + out.grad_V.transpose())).eval();

  if (!out.grad_V.allFinite() || !out.grad_y_hat.allFinite() || !grad_m.allFinite() ||
      !std::isfinite(out.grad_kappa))
    throw std::runtime_error("l1_backward: non-finite gradient accumulation");
  return out;
}

}  // namespace penqp
