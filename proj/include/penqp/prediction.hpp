#pragma once

/// @file prediction.hpp Least-squares prediction layer: multi-output OLS
/// for return-on-feature loadings, plug-in moment estimates
///   y_hat = beta'x + intercept,  V_hat = beta' W_hat beta + F_hat,
/// and trailing-window covariance estimation for the experiment harness.

#include <Eigen/Dense>

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace penqp {

/// Fitted linear model mapping features to per-period asset returns.
/// residual_var holds the diagonal of F (mean squared residual per output,
/// unfloored, so an exact fit reports exactly zero).
struct RegressionModel {
  Eigen::MatrixXd beta;          ///< d_x x d_y
  Eigen::VectorXd intercept;     ///< d_y, zero when fitted without intercept
  Eigen::VectorXd residual_var;  ///< d_y
  bool has_intercept = true;
};

/// Plug-in moment estimates at one feature vector.
struct MomentEstimates {
  Eigen::VectorXd y_hat;
  Eigen::MatrixXd V_hat;  ///< symmetric, eigenvalues >= 1e-10
  Eigen::MatrixXd W_hat;  ///< feature covariance used in the assembly
};

/// Ordinary least squares of Y on X column-wise, with an intercept unless
/// disabled. Rank deficiency is reported with the offending column indices
/// so collinear features can be located directly.
inline RegressionModel fit_beta(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                                bool intercept = true) {
  const Eigen::Index m = x.rows();
  const Eigen::Index d_x = x.cols();
  if (y.rows() != m) throw std::invalid_argument("fit_beta: X and Y row counts differ");
  if (m <= d_x + 1) throw std::invalid_argument("fit_beta: need more rows than features plus intercept");

  const Eigen::Index cols = d_x + (intercept ? 1 : 0);
  Eigen::MatrixXd design(m, cols);
  if (intercept) {
    design.col(0).setOnes();
    design.rightCols(d_x) = x;
  } else {
    design = x;
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < cols) {
    // The permutation sorts dependent columns last; translate back to the
    // caller's column numbering (the intercept column is named as such).
    const auto perm = qr.colsPermutation().indices();
    std::ostringstream msg;
    msg << "fit_beta: design matrix is rank-deficient; collinear columns:";
    for (Eigen::Index i = qr.rank(); i < cols; ++i) {
      const Eigen::Index col = perm(i);
      if (intercept && col == 0)
        msg << " intercept";
      else
        msg << ' ' << (intercept ? col - 1 : col);
    }
    throw std::runtime_error(msg.str());
  }

  const Eigen::MatrixXd coeffs = qr.solve(y);
  RegressionModel model;
  model.has_intercept = intercept;
  if (intercept) {
    model.intercept = coeffs.row(0).transpose();
    model.beta = coeffs.bottomRows(d_x);
  } else {
    model.intercept = Eigen::VectorXd::Zero(y.cols());
    model.beta = coeffs;
  }
  const Eigen::MatrixXd residuals = y - design * coeffs;
  model.residual_var = residuals.array().square().colwise().mean().transpose();
  return model;
}

/// Symmetric eigenvalue floor: reconstructs with eigenvalues clamped from
/// below, keeping the result symmetric PD for a positive floor.
inline Eigen::MatrixXd floor_eigenvalues(const Eigen::MatrixXd& m, double floor) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw std::runtime_error("floor_eigenvalues: eigendecomposition failed");
  if (es.eigenvalues().minCoeff() >= floor) return 0.5 * (m + m.transpose());
  const Eigen::VectorXd clamped = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * clamped.asDiagonal() * es.eigenvectors().transpose();
}

/// Moment estimates at one feature vector: y_hat = beta'x + intercept and
/// V_hat = beta' W_hat beta + diag(max(residual_var, 1e-8)), eigenvalue
/// floored so downstream Cholesky factorizations always succeed.
inline MomentEstimates predict_moments(const RegressionModel& model, const Eigen::VectorXd& x,
                                       const Eigen::MatrixXd& w_hat) {
  if (x.size() != model.beta.rows()) throw std::invalid_argument("predict_moments: feature size mismatch");
  if (w_hat.rows() != model.beta.rows() || w_hat.cols() != model.beta.rows())
    throw std::invalid_argument("predict_moments: W_hat dimension mismatch");
  MomentEstimates est;
  est.y_hat = model.beta.transpose() * x + model.intercept;
  const Eigen::VectorXd f_diag = model.residual_var.cwiseMax(1e-8);
  Eigen::MatrixXd v = model.beta.transpose() * w_hat * model.beta;
  v.diagonal() += f_diag;
  est.V_hat = floor_eigenvalues(v, 1e-10);
  est.W_hat = w_hat;
  return est;
}

/// Trailing-window sample covariances of a series (rows are periods). One
/// matrix per window ending at row t for t = window-1 .. m-1, de-meaned
/// within the window, divisor window-1, eigenvalue floor 1e-10.
inline std::vector<Eigen::MatrixXd> rolling_covariance(const Eigen::MatrixXd& series,
                                                       Eigen::Index window) {
  const Eigen::Index m = series.rows();
  if (window < 2) throw std::invalid_argument("rolling_covariance: window must be at least 2");
  if (m < window) throw std::invalid_argument("rolling_covariance: series shorter than the window");
  std::vector<Eigen::MatrixXd> out;
  out.reserve(static_cast<std::size_t>(m - window + 1));
  for (Eigen::Index t = window - 1; t < m; ++t) {
    const Eigen::MatrixXd block = series.middleRows(t - window + 1, window);
    const Eigen::RowVectorXd mean = block.colwise().mean();
    const Eigen::MatrixXd centered = block.rowwise() - mean;
    Eigen::MatrixXd cov =
        (centered.transpose() * centered) / static_cast<double>(window - 1);
    out.push_back(floor_eigenvalues(cov, 1e-10));
  }
  return out;
}

}  // namespace penqp
