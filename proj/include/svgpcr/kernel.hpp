#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace svgpcr {

// Factorization / conditioning failures carry a diagnosis in what().
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Squared-exponential kernel k(x,y) = variance * exp(-||x-y||^2 / (2 lengthscale^2)).
// Both hyperparameters are stored on the log scale so that unconstrained
// gradient steps keep them positive.
struct SEKernelParams {
  double log_variance = 0.0;
  double log_lengthscale = 0.0;

  double variance() const { return std::exp(log_variance); }
  double lengthscale() const { return std::exp(log_lengthscale); }

  static SEKernelParams from_values(double variance, double lengthscale) {
    if (!(variance > 0.0) || !(lengthscale > 0.0)) {
      throw std::invalid_argument("SEKernelParams: variance and lengthscale must be positive");
    }
    SEKernelParams p;
    p.log_variance = std::log(variance);
    p.log_lengthscale = std::log(lengthscale);
    return p;
  }
};

struct CholeskyFactor {
  Eigen::MatrixXd L;  // lower triangular, strictly positive diagonal
  double jitter_used = 0.0;
};

// Cross-kernel matrix, entry (i,j) = k(A.row(i), B.row(j)).
// The OpenMP build parallelizes over rows of A; both variants evaluate every
// entry through the same scalar routine, so results are bitwise identical.
Eigen::MatrixXd kernel_matrix(const SEKernelParams& params, const Eigen::MatrixXd& A,
                              const Eigen::MatrixXd& B);
Eigen::MatrixXd kernel_matrix_serial(const SEKernelParams& params, const Eigen::MatrixXd& A,
                                     const Eigen::MatrixXd& B);

// Reverse-mode sensitivities of sum(K_bar .* K) for K = kernel_matrix(params, A, B).
// d_A / d_B are only filled when requested (B is often a fixed data batch).
struct KernelAdjoint {
  double d_log_variance = 0.0;
  double d_log_lengthscale = 0.0;
  Eigen::MatrixXd d_A;
  Eigen::MatrixXd d_B;
};

KernelAdjoint kernel_matrix_vjp(const SEKernelParams& params, const Eigen::MatrixXd& A,
                                const Eigen::MatrixXd& B, const Eigen::MatrixXd& K,
                                const Eigen::MatrixXd& K_bar, bool need_d_A, bool need_d_B);

// Cholesky of K + jitter*I. Starts at base_jitter and escalates tenfold up to
// 1e-2 until the factorization succeeds; the jitter actually used is recorded.
CholeskyFactor cholesky_with_jitter(const Eigen::MatrixXd& K, double base_jitter);

// Adjoint of the Cholesky factorization: given L and dF/dL, returns the
// symmetric dF/dK (Murray 2016, level-2 formulation).
Eigen::MatrixXd cholesky_vjp(const Eigen::MatrixXd& L, const Eigen::MatrixXd& L_bar);

}  // namespace svgpcr
