#pragma once

/// @file qp_grad.hpp Backward passes for QP layers: implicit differentiation
/// of the KKT system for general inequality-constrained QPs, and implicit
/// differentiation of the ADMM fixed-point map for equality-plus-box QPs.
/// Both return gradients of a scalar cost c with respect to the problem data
/// given the cotangent dc/dz at the optimum.

#include <Eigen/Dense>

#include <stdexcept>

#include "penqp/qp.hpp"

namespace penqp {

/// Inequality-form QP data for the KKT backward pass:
///   minimize (1/2) z'Qz + p'z  s.t.  A z = b,  G z <= h.
struct InequalityQp {
  Eigen::MatrixXd Q;
  Eigen::VectorXd p;
  Eigen::MatrixXd A;  ///< d_eq x d, may have 0 rows
  Eigen::VectorXd b;
  Eigen::MatrixXd G;  ///< d_iq x d, may have 0 rows
  Eigen::VectorXd h;

  Eigen::Index dim() const { return Q.rows(); }

  void check_shapes() const {
    const Eigen::Index d = Q.rows();
    if (Q.cols() != d || p.size() != d) throw std::invalid_argument("InequalityQp: Q/p shape mismatch");
    if (A.rows() > 0 && A.cols() != d) throw std::invalid_argument("InequalityQp: A shape mismatch");
    if (b.size() != A.rows()) throw std::invalid_argument("InequalityQp: b size mismatch");
    if (G.rows() > 0 && G.cols() != d) throw std::invalid_argument("InequalityQp: G shape mismatch");
    if (h.size() != G.rows()) throw std::invalid_argument("InequalityQp: h size mismatch");
  }
};

/// Solution of the adjoint KKT system.
struct KktBackwardResult {
  Eigen::VectorXd d_z;
  Eigen::VectorXd d_lambda;
  Eigen::VectorXd d_eta;
};

/// Gradients of the scalar cost with respect to QP data. grad_G/grad_h are
/// filled by the KKT route (empty otherwise); grad_lower/grad_upper by the
/// ADMM route (empty otherwise). grad_Q is symmetric by construction.
struct QpGradients {
  Eigen::MatrixXd grad_Q;
  Eigen::VectorXd grad_p;
  Eigen::MatrixXd grad_A;
  Eigen::VectorXd grad_b;
  Eigen::MatrixXd grad_G;
  Eigen::VectorXd grad_h;
  Eigen::VectorXd grad_lower;
  Eigen::VectorXd grad_upper;
};

/// Implicit differentiation through the KKT conditions of an inequality-form
/// QP at a strictly complementary optimum (z*, lambda*, eta*).
///
/// Solves the adjoint system J' [d_z; d_lambda; d_eta] = [-dc_dz; 0; 0],
/// where J is the Jacobian of the KKT residuals
///   (Qz + p + G'lambda + A'eta, diag(lambda)(Gz - h), Az - b),
/// so J' carries G' diag(lambda*) in its first block row. Gradients follow
/// from the residuals' data dependence:
///   grad_Q = sym(d_z z*'), grad_p = d_z,
///   grad_A = d_eta z*' + eta* d_z', grad_b = -d_eta,
///   grad_G = diag(lambda*) d_lambda z*' + lambda* d_z', grad_h = -diag(lambda*) d_lambda.
/// All rows are kept as written (no active-set pruning); loss of strict
/// complementarity makes J singular and raises an error.
inline QpGradients kkt_backward(const Eigen::VectorXd& z_star, const Eigen::VectorXd& lambda_star,
                                const Eigen::VectorXd& eta_star, const InequalityQp& qp,
                                const Eigen::VectorXd& dc_dz) {
  qp.check_shapes();
  const Eigen::Index d = qp.dim();
  const Eigen::Index m = qp.A.rows();
  const Eigen::Index q = qp.G.rows();
  if (z_star.size() != d || dc_dz.size() != d || lambda_star.size() != q || eta_star.size() != m)
    throw std::invalid_argument("kkt_backward: point/cotangent dimension mismatch");
  if ((lambda_star.array() < -1e-9).any())
    throw std::invalid_argument("kkt_backward: negative inequality multiplier");

  // Optimality check: stationarity and complementary slackness within 1e-5.
  const Eigen::VectorXd station = qp.Q * z_star + qp.p + qp.G.transpose() * lambda_star +
                                  qp.A.transpose() * eta_star;
  if (station.lpNorm<Eigen::Infinity>() > 1e-5)
    throw std::invalid_argument("kkt_backward: point does not satisfy stationarity within 1e-5");
  if (q > 0) {
    const Eigen::VectorXd slack = qp.G * z_star - qp.h;
    if ((lambda_star.array() * slack.array()).abs().maxCoeff() > 1e-5)
      throw std::invalid_argument("kkt_backward: complementary slackness violated beyond 1e-5");
  }

  const Eigen::Index n = d + q + m;
  Eigen::MatrixXd jt = Eigen::MatrixXd::Zero(n, n);
  jt.topLeftCorner(d, d) = qp.Q;
  if (q > 0) {
    jt.block(0, d, d, q) = qp.G.transpose() * lambda_star.asDiagonal();
    jt.block(d, 0, q, d) = qp.G;
    jt.block(d, d, q, q) = (qp.G * z_star - qp.h).asDiagonal();
  }
  if (m > 0) {
    jt.block(0, d + q, d, m) = qp.A.transpose();
    jt.block(d + q, 0, m, d) = qp.A;
  }

  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs.head(d) = -dc_dz;

  Eigen::FullPivLU<Eigen::MatrixXd> lu(jt);
  if (!lu.isInvertible())
    throw std::runtime_error(
        "kkt_backward: adjoint KKT matrix is singular (strict complementarity likely fails); "
        "use the Tikhonov-regularized fixed-point backward instead");
  const Eigen::VectorXd sol = lu.solve(rhs);
  const Eigen::VectorXd d_zv = sol.head(d);
  const Eigen::VectorXd d_lambda = sol.segment(d, q);
  const Eigen::VectorXd d_eta = sol.tail(m);

  QpGradients g;
  g.grad_Q = 0.5 * (d_zv * z_star.transpose() + z_star * d_zv.transpose());
  g.grad_p = d_zv;
  g.grad_A = d_eta * z_star.transpose() + eta_star * d_zv.transpose();
  g.grad_b = -d_eta;
  if (q > 0) {
    const Eigen::VectorXd scaled = lambda_star.cwiseProduct(d_lambda);
    g.grad_G = scaled * z_star.transpose() + lambda_star * d_zv.transpose();
    g.grad_h = -scaled;
  } else {
    g.grad_G.resize(0, d);
    g.grad_h.resize(0);
  }
  g.grad_lower.resize(0);
  g.grad_upper.resize(0);
  return g;
}

/// Implicit differentiation through the converged ADMM fixed point of an
/// equality-plus-box QP.
///
/// With P = z* + mu* and the diagonal projection derivative DPi
/// (1 where lower_i < P_i < upper_i strictly, 0 otherwise, including exact
/// boundary ties), the adjoint system is
///
///   S' [d_z; d_eta] = [DPi 0; 0 I] [-dc_dz; 0],
///   S  = [DPi 0; 0 I] [Q + rho I, A'; A, 0] + [-rho (2 DPi - I), 0; 0, 0] + eps I,
///
/// with Tikhonov eps always added before factorization. Data gradients are
///   grad_Q = sym(d_z z*'), grad_p = d_z, grad_A = d_eta z*' + eta* d_z',
///   grad_b = -d_eta,
/// and bound gradients come from rescaling the box multipliers:
///   d_lambda = diag(rho mu~)^{-1} (-dc_dz - Q d_z - A' d_eta),
///   grad_lower = diag(lambda-*) d_lambda, grad_upper = -diag(lambda+*) d_lambda,
/// where mu~ replaces mu* by 1 on slack coordinates. Slackness is decided by
/// DPi rather than an exact mu* == 0 test: converged mu* carries
/// residual-level noise on slack coordinates, and dividing by it would
/// amplify the Tikhonov term into spurious bound gradients, so slack
/// coordinates use the unit fallback and zeroed multipliers.
inline QpGradients admm_fixed_point_backward(const AdmmSolution& solution, const QpProblem& problem,
                                             const Eigen::VectorXd& dc_dz,
                                             double tikhonov_eps = 1e-6) {
  problem.check_shapes();
  const Eigen::Index d = problem.dim();
  const Eigen::Index m = problem.num_eq();
  if (!solution.converged)
    throw std::invalid_argument("admm_fixed_point_backward: forward solution did not converge");
  if (solution.z_star.size() != d || solution.mu_star.size() != d || solution.eta_star.size() != m)
    throw std::invalid_argument("admm_fixed_point_backward: solution/problem dimension mismatch");
  if (dc_dz.size() != d)
    throw std::invalid_argument("admm_fixed_point_backward: cotangent dimension mismatch");
  if (!(tikhonov_eps >= 1e-8 && tikhonov_eps <= 1e-4))
    throw std::invalid_argument("admm_fixed_point_backward: tikhonov_eps outside [1e-8, 1e-4]");

  const double rho = solution.rho;
  const Eigen::VectorXd proj_point = solution.z_star + solution.mu_star;
  Eigen::VectorXd dpi(d);
  for (Eigen::Index i = 0; i < d; ++i)
    dpi(i) = (problem.lower(i) < proj_point(i) && proj_point(i) < problem.upper(i)) ? 1.0 : 0.0;

  const Eigen::Index n = d + m;
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
  // Top block rows: DPi (Q + rho I) - rho (2 DPi - I) = DPi Q + rho (I - DPi).
  s.topLeftCorner(d, d) = dpi.asDiagonal() * problem.Q;
  s.topLeftCorner(d, d).diagonal() += rho * (Eigen::VectorXd::Ones(d) - dpi);
  if (m > 0) {
    s.block(0, d, d, m) = dpi.asDiagonal() * problem.A.transpose();
    s.block(d, 0, m, d) = problem.A;
  }
  s.diagonal().array() += tikhonov_eps;

  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
  rhs.head(d) = -dpi.cwiseProduct(dc_dz);

  Eigen::FullPivLU<Eigen::MatrixXd> lu(s);
  if (!lu.isInvertible())
    throw std::runtime_error("admm_fixed_point_backward: adjoint system singular despite Tikhonov");
  const Eigen::VectorXd sol = lu.solve(rhs);
  if (!sol.allFinite())
    throw std::runtime_error("admm_fixed_point_backward: non-finite adjoint solution");
  const Eigen::VectorXd d_zv = sol.head(d);
  const Eigen::VectorXd d_eta = sol.tail(m);

  QpGradients g;
  g.grad_Q = 0.5 * (d_zv * solution.z_star.transpose() + solution.z_star * d_zv.transpose());
  g.grad_p = d_zv;
  g.grad_A = d_eta * solution.z_star.transpose() + solution.eta_star * d_zv.transpose();
  g.grad_b = -d_eta;
  g.grad_G.resize(0, d);
  g.grad_h.resize(0);

  const Eigen::VectorXd numer = -dc_dz - problem.Q * d_zv - problem.A.transpose() * d_eta;
  Eigen::VectorXd d_lambda(d), lm(d), lp(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const bool slack = dpi(i) == 1.0;
    const double mu_tilde = (!slack && solution.mu_star(i) != 0.0) ? solution.mu_star(i) : 1.0;
    d_lambda(i) = numer(i) / (rho * mu_tilde);
    lm(i) = slack ? 0.0 : solution.lambda_minus(i);
    lp(i) = slack ? 0.0 : solution.lambda_plus(i);
  }
  g.grad_lower = lm.cwiseProduct(d_lambda);
  g.grad_upper = -lp.cwiseProduct(d_lambda);
  return g;
}

}  // namespace penqp
