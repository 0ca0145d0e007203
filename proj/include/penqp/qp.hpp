#pragma once

/// @file qp.hpp Quadratic programs with equality constraints and box bounds:
/// problem representation, a dense KKT reference solver, and an ADMM solver
/// based on operator splitting with a single factorization per solve.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace penqp {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Convex quadratic program
///
///   minimize    (1/2) z'Qz + p'z
///   subject to  A z = b
///               lower <= z <= upper   (entries may be -inf / +inf)
///
/// Q must be symmetric positive semidefinite and A full row rank when
/// nonempty. `validate()` checks these invariants; the solvers check the
/// cheap ones on entry and surface rank problems as factorization errors.
struct QpProblem {
  Eigen::MatrixXd Q;      ///< d x d symmetric PSD curvature
  Eigen::VectorXd p;      ///< d linear term
  Eigen::MatrixXd A;      ///< d_eq x d equality constraints, may have 0 rows
  Eigen::VectorXd b;      ///< d_eq equality right-hand side
  Eigen::VectorXd lower;  ///< d lower bounds, -inf allowed
  Eigen::VectorXd upper;  ///< d upper bounds, +inf allowed

  Eigen::Index dim() const { return Q.rows(); }
  Eigen::Index num_eq() const { return A.rows(); }

  /// Cheap structural checks: shapes, bound ordering, finite Q/p/A/b.
  void check_shapes() const {
    const Eigen::Index d = Q.rows();
    if (Q.cols() != d) throw std::invalid_argument("QpProblem: Q must be square");
    if (p.size() != d) throw std::invalid_argument("QpProblem: p size mismatch");
    if (A.rows() > 0 && A.cols() != d) throw std::invalid_argument("QpProblem: A column count mismatch");
    if (b.size() != A.rows()) throw std::invalid_argument("QpProblem: b size mismatch");
    if (lower.size() != d || upper.size() != d) throw std::invalid_argument("QpProblem: bound size mismatch");
    if (!Q.allFinite() || !p.allFinite() || !A.allFinite() || !b.allFinite())
      throw std::invalid_argument("QpProblem: non-finite entries in Q/p/A/b");
    if ((lower.array() > upper.array()).any())
      throw std::invalid_argument("QpProblem: lower > upper for some coordinate");
    if (lower.hasNaN() || upper.hasNaN()) throw std::invalid_argument("QpProblem: NaN bound");
  }

  /// Full invariant check, including the O(d^3) spectral and rank tests.
  /// Intended for API boundaries, not for inner solve loops.
  void validate() const {
    check_shapes();
    if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-10)
      throw std::invalid_argument("QpProblem: Q is not symmetric within 1e-10");
    if (dim() > 0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (Q + Q.transpose()),
                                                        Eigen::EigenvaluesOnly);
      if (es.eigenvalues().minCoeff() < -1e-8)
        throw std::invalid_argument("QpProblem: Q is not positive semidefinite");
    }
    if (A.rows() > 0) {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A.transpose());
      if (qr.rank() < A.rows())
        throw std::invalid_argument("QpProblem: A is rank-deficient (redundant equality rows)");
    }
  }
};

/// ADMM solver controls. rho is the splitting penalty, held constant over
/// the whole solve so the converged iterate is a fixed point of one map.
struct AdmmSettings {
  double rho = 1.0;
  double eps_abs = 1e-8;
  double eps_rel = 1e-6;
  int max_iter = 10000;

  void check() const {
    if (!(rho > 0.0)) throw std::invalid_argument("AdmmSettings: rho must be positive");
    if (!(eps_abs > 0.0) || !(eps_rel >= 0.0))
      throw std::invalid_argument("AdmmSettings: tolerances must be positive");
    if (max_iter <= 0) throw std::invalid_argument("AdmmSettings: max_iter must be positive");
  }
};

/// Converged ADMM state. Beyond the primal optimum this keeps the internal
/// iterates (z_tilde, mu) and the splitting penalty rho that produced them;
/// the fixed-point backward pass needs all of them.
struct AdmmSolution {
  Eigen::VectorXd z_star;        ///< primal optimum (box-feasible iterate)
  Eigen::VectorXd z_tilde_star;  ///< last equality-step iterate
  Eigen::VectorXd mu_star;       ///< scaled dual of the box constraints
  Eigen::VectorXd eta_star;      ///< equality multipliers
  Eigen::VectorXd lambda_minus;  ///< multipliers of z >= lower, = -min(rho mu, 0)
  Eigen::VectorXd lambda_plus;   ///< multipliers of z <= upper, = max(rho mu, 0)
  int iterations = 0;
  double primal_residual = kInfinity;
  double dual_residual = kInfinity;
  bool converged = false;
  double rho = 1.0;  ///< penalty the iterates were produced with
};

/// Elementwise clamp of x into [lower, upper]; infinite bounds are no-ops.
inline Eigen::VectorXd project_box(const Eigen::VectorXd& x, const Eigen::VectorXd& lower,
                                   const Eigen::VectorXd& upper) {
  if (x.size() != lower.size() || x.size() != upper.size())
    throw std::invalid_argument("project_box: dimension mismatch");
  if ((lower.array() > upper.array()).any())
    throw std::invalid_argument("project_box: lower > upper");
  return x.cwiseMax(lower).cwiseMin(upper);
}

/// (1/2) z'Qz + p'z.
inline double objective_value(const QpProblem& problem, const Eigen::VectorXd& z) {
  if (z.size() != problem.Q.rows() || z.size() != problem.p.size())
    throw std::invalid_argument("objective_value: dimension mismatch");
  return 0.5 * z.dot(problem.Q * z) + problem.p.dot(z);
}

/// Solution of the equality-constrained stationarity system.
struct KktPoint {
  Eigen::VectorXd z;
  Eigen::VectorXd eta;
};

/// Dense solve of [Q A'; A 0] [z; eta] = [-p; b]. Ignores box bounds; with
/// empty A this is z = -Q^{-1} p. Unique solution requires Q + A'A positive
/// definite.
inline KktPoint kkt_reference_solve(const Eigen::MatrixXd& Q, const Eigen::VectorXd& p,
                                    const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  const Eigen::Index d = Q.rows();
  const Eigen::Index m = A.rows();
  if (Q.cols() != d || p.size() != d || (m > 0 && A.cols() != d) || b.size() != m)
    throw std::invalid_argument("kkt_reference_solve: dimension mismatch");

  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(d + m, d + m);
  kkt.topLeftCorner(d, d) = Q;
  if (m > 0) {
    kkt.topRightCorner(d, m) = A.transpose();
    kkt.bottomLeftCorner(m, d) = A;
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
  if (!lu.isInvertible()) {
    std::string which = "reduced Hessian block (Q singular on the feasible subspace)";
    if (m > 0) {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(A.transpose());
      if (qr.rank() < m) which = "equality block (A rank-deficient)";
    }
    throw std::runtime_error("kkt_reference_solve: singular KKT matrix, " + which);
  }
  Eigen::VectorXd rhs(d + m);
  rhs.head(d) = -p;
  rhs.tail(m) = b;
  const Eigen::VectorXd sol = lu.solve(rhs);
  return KktPoint{sol.head(d), sol.tail(m)};
}

/// ADMM for the equality-plus-box QP. Each iteration solves one KKT system
/// with the iteration-invariant matrix [Q + rho I, A'; A, 0] (factorized
/// once), projects onto the box, and updates the scaled dual mu.
///
/// Stopping: ||z_tilde - z||_inf <= eps_abs + eps_rel ||z||_inf and
/// rho ||z - z_prev||_inf <= eps_abs + eps_rel rho ||mu||_inf. Iteration
/// exhaustion returns converged = false rather than throwing; diverging
/// (non-finite) iterates throw.
///
/// A warm start seeds (z, mu) from a previous solution; mu is rescaled when
/// the previous solve used a different rho, preserving the implied
/// multipliers lambda = rho mu.
inline AdmmSolution admm_solve(const QpProblem& problem, const AdmmSettings& settings = {},
                               const AdmmSolution* warm_start = nullptr) {
  problem.check_shapes();
  settings.check();
  const Eigen::Index d = problem.dim();
  const Eigen::Index m = problem.num_eq();
  const double rho = settings.rho;

  // Box-only problems have an SPD step matrix Q + rho I; Cholesky is much
  // cheaper than the pivoted LU the indefinite saddle system needs.
  Eigen::FullPivLU<Eigen::MatrixXd> lu;
  Eigen::LLT<Eigen::MatrixXd> chol;
  if (m == 0) {
    chol.compute(problem.Q + rho * Eigen::MatrixXd::Identity(d, d));
    if (chol.info() != Eigen::Success)
      throw std::runtime_error("admm_solve: Q + rho I is not positive definite (Q must be PSD)");
  } else {
    Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(d + m, d + m);
    kkt.topLeftCorner(d, d) = problem.Q + rho * Eigen::MatrixXd::Identity(d, d);
    kkt.topRightCorner(d, m) = problem.A.transpose();
    kkt.bottomLeftCorner(m, d) = problem.A;
    lu.compute(kkt);
    if (!lu.isInvertible())
      throw std::runtime_error(
          "admm_solve: singular step matrix (A rank-deficient; remove redundant equality rows)");
  }

  Eigen::VectorXd z = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
  if (warm_start != nullptr && warm_start->z_star.size() == d && warm_start->mu_star.size() == d) {
    z = warm_start->z_star;
    mu = warm_start->mu_star * (warm_start->rho / rho);
  }

  AdmmSolution out;
  out.rho = rho;
  Eigen::VectorXd rhs(d + m);
  Eigen::VectorXd sol(d + m), z_tilde(d), z_next(d), eta(m);

  for (int k = 1; k <= settings.max_iter; ++k) {
    rhs.head(d) = -problem.p + rho * (z - mu);
    if (m == 0) {
      z_tilde = chol.solve(rhs.head(d));
    } else {
      rhs.tail(m) = problem.b;
      sol = lu.solve(rhs);
      z_tilde = sol.head(d);
      eta = sol.tail(m);
    }

    z_next = (z_tilde + mu).cwiseMax(problem.lower).cwiseMin(problem.upper);
    const double primal_res = (z_tilde - z_next).lpNorm<Eigen::Infinity>();
    const double dual_res = rho * (z_next - z).lpNorm<Eigen::Infinity>();
    mu += z_tilde - z_next;
    z = z_next;

    if (!z.allFinite() || !mu.allFinite())
      throw std::runtime_error("admm_solve: iterates diverged to non-finite values");

    out.iterations = k;
    out.primal_residual = primal_res;
    out.dual_residual = dual_res;
    const bool primal_ok = primal_res <= settings.eps_abs + settings.eps_rel * z.lpNorm<Eigen::Infinity>();
    const bool dual_ok =
        dual_res <= settings.eps_abs + settings.eps_rel * rho * mu.lpNorm<Eigen::Infinity>();
    if (primal_ok && dual_ok) {
      out.converged = true;
      break;
    }
  }

  out.z_star = z;
  out.z_tilde_star = z_tilde;
  out.mu_star = mu;
  out.eta_star = eta;
  out.lambda_minus = (-(rho * mu.array()).min(0.0)).matrix();
  out.lambda_plus = ((rho * mu.array()).max(0.0)).matrix();
  return out;
}

}  // namespace penqp
