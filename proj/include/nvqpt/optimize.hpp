#pragma once

// Small dense optimizers shared by the fitting and tomography code.

#include <cstdint>
#include <functional>
#include <random>
#include <span>

#include <Eigen/Dense>

namespace nvqpt::opt {

using Objective = std::function<double(const Eigen::VectorXd&)>;
using Residuals = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct NelderMeadOptions {
  double f_tol = 1e-10;      ///< absolute spread of simplex values
  double x_tol = 1e-10;      ///< max vertex distance from best vertex
  int max_evaluations = 200000;
  double initial_step = 0.1;
  /// Restarts from the incumbent after convergence, until one fails to improve.
  int max_restarts = 4;
};

struct MinimizeResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
};

/// Nelder-Mead with dimension-adaptive coefficients (Gao & Han).
MinimizeResult nelder_mead(const Objective& f, const Eigen::VectorXd& x0, const NelderMeadOptions& options = {});

struct LevenbergMarquardtOptions {
  int max_iterations = 2000;
  double step_tol = 1e-8;  ///< relative parameter step
  double initial_lambda = 1e-3;
};

struct LeastSquaresResult {
  Eigen::VectorXd x;
  Eigen::VectorXd residuals;
  Eigen::MatrixXd jacobian;
  double chi_square = 0.0;  ///< sum of squared residuals
  int iterations = 0;
  bool converged = false;
};

/// Central-difference Jacobian; `scale` sets the per-parameter step size.
Eigen::MatrixXd numeric_jacobian(const Residuals& r, const Eigen::VectorXd& x, const Eigen::VectorXd& scale);

/// Minimizes sum r_i(x)^2 with a numerically differenced Jacobian.
LeastSquaresResult levenberg_marquardt(const Residuals& r, const Eigen::VectorXd& x0, const Eigen::VectorXd& scale,
                                       const LevenbergMarquardtOptions& options = {});

struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double sigma_intercept = 0.0;
  double sigma_slope = 0.0;
  double covariance = 0.0;
};

/// Weighted straight line y = intercept + slope * x. Zero or empty sigmas mean
/// unit weights, with errors then scaled by the residual variance.
LineFit fit_line(std::span<const double> x, std::span<const double> y, std::span<const double> sigma = {});

/// Independent deterministic stream for item `index` of a run seeded by `master`.
std::mt19937_64 substream(std::uint64_t master, std::uint64_t index);

}  // namespace nvqpt::opt
