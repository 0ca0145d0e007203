#pragma once

/// @file penalty.hpp Norm-penalty models for the portfolio program: nine
/// penalty kinds, the unconstrained-to-effective parameter transforms, the
/// penalized covariance assembly
///   V_gamma2 = delta * V_hat + (1 - alpha) * gamma2 * D'D,
/// and the closed-form backward mappings from grad(V_gamma2) to the penalty
/// parameters.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace penqp {

/// The nine penalty models. User-defined kinds (L2, L2Cov, L1, ElasticNet)
/// train only the gamma scalars; parameterized kinds (suffix P) also train
/// theta; Nominal trains nothing.
enum class PenaltyKind {
  Nominal,
  L2,
  L2Cov,
  L1,
  ElasticNet,
  L2P,
  L2CovP,
  L1P,
  ElasticNetP,
};

inline const char* kind_to_string(PenaltyKind kind) {
  switch (kind) {
    case PenaltyKind::Nominal: return "nominal";
    case PenaltyKind::L2: return "l2";
    case PenaltyKind::L2Cov: return "l2-cov";
    case PenaltyKind::L1: return "l1";
    case PenaltyKind::ElasticNet: return "en";
    case PenaltyKind::L2P: return "l2-p";
    case PenaltyKind::L2CovP: return "l2-cov-p";
    case PenaltyKind::L1P: return "l1-p";
    case PenaltyKind::ElasticNetP: return "en-p";
  }
  throw std::invalid_argument("kind_to_string: unknown kind");
}

inline PenaltyKind kind_from_string(const std::string& name) {
  if (name == "nominal") return PenaltyKind::Nominal;
  if (name == "l2") return PenaltyKind::L2;
  if (name == "l2-cov") return PenaltyKind::L2Cov;
  if (name == "l1") return PenaltyKind::L1;
  if (name == "en") return PenaltyKind::ElasticNet;
  if (name == "l2-p") return PenaltyKind::L2P;
  if (name == "l2-cov-p") return PenaltyKind::L2CovP;
  if (name == "l1-p") return PenaltyKind::L1P;
  if (name == "en-p") return PenaltyKind::ElasticNetP;
  throw std::invalid_argument("kind_from_string: unknown penalty kind '" + name + "'");
}

/// Mixing coefficient between the L1 (alpha) and L2 (1 - alpha) terms.
/// Pure-L1 kinds use 1, pure-L2 kinds use 0, elastic nets use 0.5.
inline double alpha_for_kind(PenaltyKind kind) {
  switch (kind) {
    case PenaltyKind::L1:
    case PenaltyKind::L1P:
      return 1.0;
    case PenaltyKind::ElasticNet:
    case PenaltyKind::ElasticNetP:
      return 0.5;
    default:
      return 0.0;
  }
}

inline bool kind_has_l1(PenaltyKind kind) {
  return kind == PenaltyKind::L1 || kind == PenaltyKind::L1P ||
         kind == PenaltyKind::ElasticNet || kind == PenaltyKind::ElasticNetP;
}

inline bool kind_has_l2(PenaltyKind kind) {
  return kind != PenaltyKind::Nominal && !(kind == PenaltyKind::L1 || kind == PenaltyKind::L1P);
}

inline bool kind_is_parameterized(PenaltyKind kind) {
  return kind == PenaltyKind::L2P || kind == PenaltyKind::L2CovP || kind == PenaltyKind::L1P ||
         kind == PenaltyKind::ElasticNetP;
}

inline bool kind_needs_covariance_context(PenaltyKind kind) {
  return kind == PenaltyKind::L2Cov || kind == PenaltyKind::L2CovP;
}

/// Unconstrained parameter state. Effective values are always obtained
/// through the transforms below, so gamma > 0 and theta >= 0 hold for any
/// raw values. theta2_raw is a column vector for the diagonal kinds and a
/// d_x by d_z matrix for L2CovP. alpha is fixed per kind, never trained.
struct PenaltyParams {
  double gamma1_raw = -4.0;
  double gamma2_raw = -4.0;
  Eigen::VectorXd theta1_raw;
  Eigen::MatrixXd theta2_raw;
  double alpha = 0.0;
};

inline double exp_transform(double raw) { return std::exp(raw); }

/// relu with derivative 0 at exactly 0: dead parameters stay dead.
inline double relu_transform(double raw) { return raw > 0.0 ? raw : 0.0; }
inline double relu_derivative(double raw) { return raw > 0.0 ? 1.0 : 0.0; }

/// Effective (positive / nonnegative) parameter values.
struct PenaltyEffective {
  double gamma1 = 0.0;
  double gamma2 = 0.0;
  Eigen::VectorXd theta1;
  Eigen::MatrixXd theta2;
};

inline PenaltyEffective transform_params(const PenaltyParams& raw) {
  PenaltyEffective eff;
  eff.gamma1 = exp_transform(raw.gamma1_raw);
  eff.gamma2 = exp_transform(raw.gamma2_raw);
  eff.theta1 = raw.theta1_raw.unaryExpr([](double x) { return relu_transform(x); });
  eff.theta2 = raw.theta2_raw.unaryExpr([](double x) { return relu_transform(x); });
  return eff;
}

/// Fixed inputs for the covariance-structured kinds: the feature loading
/// estimate beta_hat (d_x by d_z) and the symmetric square root of the
/// feature covariance (d_x by d_x).
struct PenaltyContext {
  Eigen::MatrixXd beta_hat;
  Eigen::MatrixXd w_sqrt;
};

/// Concrete penalty matrices for one parameter snapshot. An absent block
/// has zero rows; kappa and l2_weight fold alpha into the gamma scalars.
struct PenaltyStructures {
  Eigen::MatrixXd E;  ///< 0 rows when the kind has no L1 term
  Eigen::MatrixXd D;  ///< 0 rows when the kind has no L2 term
  double kappa = 0.0;      ///< alpha * gamma1
  double l2_weight = 0.0;  ///< (1 - alpha) * gamma2

  bool has_l1() const { return E.rows() > 0; }
  bool has_l2() const { return D.rows() > 0; }
};

/// Symmetric PSD square root with an eigenvalue floor applied before the
/// root, so rank-deficient rolling covariances stay usable.
inline Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& w, double eig_floor = 1e-10) {
  if (w.rows() != w.cols()) throw std::invalid_argument("matrix_sqrt_psd: matrix must be square");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w);
  if (es.info() != Eigen::Success) throw std::runtime_error("matrix_sqrt_psd: eigendecomposition failed");
  const Eigen::VectorXd roots =
      es.eigenvalues().unaryExpr([eig_floor](double x) { return std::sqrt(std::max(x, eig_floor)); });
  return es.eigenvectors() * roots.asDiagonal() * es.eigenvectors().transpose();
}

/// Penalty matrices for one kind at one parameter snapshot. d_z is the
/// decision dimension; context is required for L2Cov and L2CovP.
inline PenaltyStructures build_structures(PenaltyKind kind, const PenaltyParams& params,
                                          Eigen::Index d_z,
                                          const PenaltyContext* context = nullptr) {
  const PenaltyEffective eff = transform_params(params);
  PenaltyStructures s;
  s.E.resize(0, d_z);
  s.D.resize(0, d_z);
  const double alpha = alpha_for_kind(kind);
  if (kind_has_l1(kind)) s.kappa = alpha * eff.gamma1;
  if (kind_has_l2(kind)) s.l2_weight = (1.0 - alpha) * eff.gamma2;

  if (kind_needs_covariance_context(kind)) {
    if (context == nullptr)
      throw std::invalid_argument("build_structures: covariance-structured kind needs beta_hat/W_sqrt context");
    if (context->w_sqrt.rows() != context->w_sqrt.cols() ||
        context->w_sqrt.cols() != context->beta_hat.rows())
      throw std::invalid_argument("build_structures: W_sqrt/beta_hat dimension mismatch");
  }

  switch (kind) {
    case PenaltyKind::Nominal:
      break;
    case PenaltyKind::L2:
      s.D = Eigen::MatrixXd::Identity(d_z, d_z);
      break;
    case PenaltyKind::L2Cov:
      if (context->beta_hat.cols() != d_z)
        throw std::invalid_argument("build_structures: beta_hat column count must equal d_z");
      s.D = context->w_sqrt * context->beta_hat;
      break;
    case PenaltyKind::L1:
      s.E = Eigen::MatrixXd::Identity(d_z, d_z);
      break;
    case PenaltyKind::ElasticNet:
      s.E = Eigen::MatrixXd::Identity(d_z, d_z);
      s.D = Eigen::MatrixXd::Identity(d_z, d_z);
      break;
    case PenaltyKind::L2P:
      if (eff.theta2.rows() != d_z || eff.theta2.cols() != 1)
        throw std::invalid_argument("build_structures: L2P needs theta2 as a d_z vector");
      s.D = eff.theta2.col(0).asDiagonal();
      break;
    case PenaltyKind::L2CovP:
      if (eff.theta2.rows() != context->w_sqrt.cols() || eff.theta2.cols() != d_z)
        throw std::invalid_argument("build_structures: L2CovP needs theta2 as a d_x by d_z matrix");
      s.D = context->w_sqrt * eff.theta2;
      break;
    case PenaltyKind::L1P:
      if (eff.theta1.size() != d_z)
        throw std::invalid_argument("build_structures: L1P needs theta1 as a d_z vector");
      s.E = eff.theta1.asDiagonal();
      break;
    case PenaltyKind::ElasticNetP:
      if (eff.theta1.size() != d_z)
        throw std::invalid_argument("build_structures: ENP needs theta1 as a d_z vector");
      if (eff.theta2.rows() != d_z || eff.theta2.cols() != 1)
        throw std::invalid_argument("build_structures: ENP needs theta2 as a d_z vector");
      s.E = eff.theta1.asDiagonal();
      s.D = eff.theta2.col(0).asDiagonal();
      break;
  }
  return s;
}

/// Penalized covariance delta * V_hat + l2_weight * D'D. Symmetric positive
/// definite for positive-definite V_hat; guarded anyway.
inline Eigen::MatrixXd assemble_v_gamma2(const Eigen::MatrixXd& v_hat, double delta,
                                         const PenaltyStructures& structures) {
  if (v_hat.rows() != v_hat.cols()) throw std::invalid_argument("assemble_v_gamma2: V_hat must be square");
  if (!(delta > 0.0)) throw std::invalid_argument("assemble_v_gamma2: delta must be positive");
  Eigen::MatrixXd v = delta * v_hat;
  if (structures.has_l2()) {
    if (structures.D.cols() != v.cols())
      throw std::invalid_argument("assemble_v_gamma2: D column count mismatch");
    v += structures.l2_weight * (structures.D.transpose() * structures.D);
  }
  v = (0.5 * (v + v.transpose())).eval();
  if (v.llt().info() != Eigen::Success)
    throw std::runtime_error("assemble_v_gamma2: assembled matrix is not positive definite");
  return v;
}

/// Closed-form pullback of a cotangent on V_gamma2 to the L2 penalty
/// inputs: grad_gamma2 = (1 - alpha) tr(grad_V D'D) and
/// grad_D = gamma2 (1 - alpha) (D grad_V + D grad_V').
struct L2PenaltyGradients {
  double grad_gamma2 = 0.0;
  Eigen::MatrixXd grad_D;
};

inline L2PenaltyGradients l2_penalty_backward(const Eigen::MatrixXd& grad_v_gamma2,
                                              const PenaltyStructures& structures, double alpha,
                                              double gamma2) {
  L2PenaltyGradients out;
  out.grad_D.resize(structures.D.rows(), structures.D.cols());
  out.grad_D.setZero();
  if (!structures.has_l2()) return out;
  if (grad_v_gamma2.rows() != structures.D.cols() || grad_v_gamma2.cols() != structures.D.cols())
    throw std::invalid_argument("l2_penalty_backward: grad_V_gamma2 dimension mismatch");
  const double one_minus_alpha = 1.0 - alpha;
  out.grad_gamma2 =
      one_minus_alpha * (grad_v_gamma2 * (structures.D.transpose() * structures.D)).trace();
  out.grad_D = gamma2 * one_minus_alpha *
               (structures.D * grad_v_gamma2 + structures.D * grad_v_gamma2.transpose());
  return out;
}

/// Raw-space gradients for the trainable parameters of one kind.
struct PenaltyGradients {
  double grad_gamma1_raw = 0.0;
  double grad_gamma2_raw = 0.0;
  Eigen::VectorXd grad_theta1_raw;
  Eigen::MatrixXd grad_theta2_raw;
};

/// Chains solver-level gradients (on kappa, E, and V_gamma2) through the
/// structure assembly and the exp/relu transforms down to the raw
/// parameters. grad_E may be empty when the kind has no L1 term.
inline PenaltyGradients penalty_backward(PenaltyKind kind, const PenaltyParams& params,
                                         const Eigen::MatrixXd& grad_v_gamma2, double grad_kappa,
                                         const Eigen::MatrixXd& grad_E,
                                         const PenaltyContext* context = nullptr) {
  const PenaltyEffective eff = transform_params(params);
  const double alpha = alpha_for_kind(kind);
  const Eigen::Index d_z = grad_v_gamma2.rows();
  const PenaltyStructures structures = build_structures(kind, params, d_z, context);

  PenaltyGradients out;
  out.grad_theta1_raw = Eigen::VectorXd::Zero(params.theta1_raw.size());
  out.grad_theta2_raw = Eigen::MatrixXd::Zero(params.theta2_raw.rows(), params.theta2_raw.cols());

  if (kind_has_l1(kind)) {
    // kappa = alpha * gamma1, gamma1 = exp(gamma1_raw).
    out.grad_gamma1_raw = grad_kappa * alpha * eff.gamma1;
  }
  if (kind_has_l2(kind)) {
    const L2PenaltyGradients l2 = l2_penalty_backward(grad_v_gamma2, structures, alpha, eff.gamma2);
    // gamma2 = exp(gamma2_raw).
    out.grad_gamma2_raw = l2.grad_gamma2 * eff.gamma2;
    if (kind == PenaltyKind::L2P || kind == PenaltyKind::ElasticNetP) {
      for (Eigen::Index i = 0; i < d_z; ++i)
        out.grad_theta2_raw(i, 0) = l2.grad_D(i, i) * relu_derivative(params.theta2_raw(i, 0));
    } else if (kind == PenaltyKind::L2CovP) {
      const Eigen::MatrixXd grad_theta2 = context->w_sqrt.transpose() * l2.grad_D;
      out.grad_theta2_raw = grad_theta2.binaryExpr(
          params.theta2_raw, [](double g, double raw) { return g * relu_derivative(raw); });
    }
  }
  if (kind == PenaltyKind::L1P || kind == PenaltyKind::ElasticNetP) {
    if (grad_E.rows() != d_z || grad_E.cols() != d_z)
      throw std::invalid_argument("penalty_backward: grad_E dimension mismatch");
    for (Eigen::Index i = 0; i < d_z; ++i)
      out.grad_theta1_raw(i) = grad_E(i, i) * relu_derivative(params.theta1_raw(i));
  }
  return out;
}

/// Fresh parameter state for one kind: gamma raws at -4, theta raws
/// uniform on [0, 1] from the supplied generator, alpha fixed by the kind.
inline PenaltyParams init_params(PenaltyKind kind, Eigen::Index d_z, Eigen::Index d_x,
                                 std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  PenaltyParams params;
  params.alpha = alpha_for_kind(kind);
  params.theta1_raw.resize(0);
  params.theta2_raw.resize(0, 0);
  if (kind == PenaltyKind::L1P || kind == PenaltyKind::ElasticNetP) {
    params.theta1_raw.resize(d_z);
    for (Eigen::Index i = 0; i < d_z; ++i) params.theta1_raw(i) = uniform(rng);
  }
  if (kind == PenaltyKind::L2P || kind == PenaltyKind::ElasticNetP) {
    params.theta2_raw.resize(d_z, 1);
    for (Eigen::Index i = 0; i < d_z; ++i) params.theta2_raw(i, 0) = uniform(rng);
  } else if (kind == PenaltyKind::L2CovP) {
    params.theta2_raw.resize(d_x, d_z);
    for (Eigen::Index j = 0; j < d_z; ++j)
      for (Eigen::Index i = 0; i < d_x; ++i) params.theta2_raw(i, j) = uniform(rng);
  }
  return params;
}

}  // namespace penqp
