#pragma once

#include <Eigen/Dense>
#include <vector>

#include "svgpcr/kernel.hpp"

namespace svgpcr {

// One shared set of inducing inputs and K independent inducing-output
// posteriors q(u_k) = N(mean.col(k), S_k), S_k = tril(k) tril(k)^T.
// The scale factors are stored unconstrained: strict lower triangle verbatim,
// diagonal through log (so S_k stays positive definite under gradient steps).
struct VariationalGP {
  Eigen::MatrixXd inducing_inputs;         // M x D
  SEKernelParams kernel;
  Eigen::MatrixXd mean;                    // M x K
  std::vector<Eigen::MatrixXd> scale_raw;  // K dense M x M, upper part ignored
  double jitter = 1e-6;

  int num_inducing() const { return static_cast<int>(inducing_inputs.rows()); }
  int input_dim() const { return static_cast<int>(inducing_inputs.cols()); }
  int num_classes() const { return static_cast<int>(mean.cols()); }

  // Lower-triangular Cholesky factor of S_k with the diagonal exponentiated.
  Eigen::MatrixXd scale_tril(int k) const;

  // mean = 0, S_k = I (raw zeros), kernel variance 1, lengthscale sqrt(D).
  static VariationalGP initial(const Eigen::MatrixXd& inducing_inputs, int num_classes,
                               double jitter = 1e-6);
};

// Everything the backward pass reuses from a forward evaluation at a batch.
struct GPForwardCache {
  Eigen::MatrixXd K_mm;            // kernel gram at inducing inputs, before jitter
  Eigen::MatrixXd L;               // chol(K_mm + jitter I)
  Eigen::MatrixXd K_mx;            // M x N cross gram
  Eigen::MatrixXd A;               // L^-1 K_mx
  Eigen::MatrixXd w;               // L^-1 mean (M x K)
  std::vector<Eigen::MatrixXd> C;  // K of M x M: L^-1 tril_k
  std::vector<Eigen::MatrixXd> D;  // K of N x M: A^T C_k
  Eigen::MatrixXd marginal_mean;   // N x K
  Eigen::MatrixXd marginal_var;    // N x K
  Eigen::VectorXd kl;              // per-class KL(q(u_k) || N(0, K_mm + jitter I))
};

// Marginals of q(f_k(x_n)) for a batch plus the inducing KL terms:
//   mean = A^T w_k,  var = gamma - colsum(A .* A) + rowsum(D_k .* D_k),
//   KL_k = (|C_k|_F^2 + |w_k|^2 - M)/2 - sum_i log C_k(i,i).
GPForwardCache gp_forward(const VariationalGP& gp, const Eigen::MatrixXd& X);

struct GPGradients {
  Eigen::MatrixXd d_mean;                    // M x K
  std::vector<Eigen::MatrixXd> d_scale_raw;  // K of M x M (lower part meaningful)
  Eigen::MatrixXd d_inducing;                // M x D
  double d_log_variance = 0.0;
  double d_log_lengthscale = 0.0;
};

// Reverse-mode pullback through gp_forward. mean_bar/var_bar are N x K
// adjoints of the marginal moments; kl_bar multiplies every KL_k (the
// objective subtracts the KLs, so callers typically pass -1).
GPGradients gp_backward(const VariationalGP& gp, const Eigen::MatrixXd& X,
                        const GPForwardCache& cache, const Eigen::MatrixXd& mean_bar,
                        const Eigen::MatrixXd& var_bar, double kl_bar);

// Prediction-path marginals (no KL, no cache kept).
struct MarginalMoments {
  Eigen::MatrixXd mean;  // N x K
  Eigen::MatrixXd var;   // N x K
};
MarginalMoments predict_latent(const VariationalGP& gp, const Eigen::MatrixXd& X);

// KL(N(m, S) || N(0, K)) for explicit dense inputs; independent of the
// cached-factor path above. K must admit a jitter-free factorization when the
// caller expects exact-zero behaviour at S == K, m == 0.
double gaussian_kl(const Eigen::VectorXd& m, const Eigen::MatrixXd& S, const Eigen::MatrixXd& K);

}  // namespace svgpcr
