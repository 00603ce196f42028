#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <vector>

namespace svgpcr {

// Gauss-Hermite rule for integrals of the form
//   int exp(-x^2) f(x) dx  ~=  sum_h weights[h] * f(nodes[h])
// (physicists' convention: weights sum to sqrt(pi)).
struct QuadratureRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
};

// Nodes/weights via the symmetric-tridiagonal (Golub-Welsch) eigenproblem.
// Throws std::invalid_argument unless 2 <= order <= 128.
QuadratureRule gauss_hermite(int order);

// Robust-max classification likelihood: a latent vector f in R^K maps to
//   p(y = k | f) = 1 - epsilon        if k == argmax(f)
//                  epsilon / (K - 1)  otherwise.
struct RobustMax {
  int num_classes = 0;
  double epsilon = 1e-3;
  int quadrature_points = 20;

  RobustMax(int num_classes_, double epsilon_ = 1e-3, int quadrature_points_ = 20);

  double log_hit() const;   // log(1 - epsilon)
  double log_miss() const;  // log(epsilon / (K - 1))
};

// p_nk = P(argmax_j f_j = k) for f_j ~ N(mean(n,j), var(n,j)) independent.
// Reduces the K-dim integral to 1-D quadrature over f_k. Rows sum to ~1.
// mean, var: N x K (var strictly positive). Result: N x K, clamped to [0, 1].
Eigen::MatrixXd prob_argmax(const RobustMax& lik, const Eigen::MatrixXd& mean,
                            const Eigen::MatrixXd& var);
Eigen::MatrixXd prob_argmax_serial(const RobustMax& lik, const Eigen::MatrixXd& mean,
                                   const Eigen::MatrixXd& var);

// E_q[log p(y = k | f_n)] for every (n, k):
//   VE(n, k) = p_nk * log(1 - eps) + (1 - p_nk) * log(eps / (K - 1)).
Eigen::MatrixXd variational_expectation(const RobustMax& lik, const Eigen::MatrixXd& mean,
                                        const Eigen::MatrixXd& var);
Eigen::MatrixXd variational_expectation_serial(const RobustMax& lik, const Eigen::MatrixXd& mean,
                                               const Eigen::MatrixXd& var);

// Forward p_nk together with its adjoints. d_mean[k] / d_var[k] are N x K
// matrices holding d p(n, k) / d mean(n, j) and d p(n, k) / d var(n, j).
struct ArgmaxProbGradients {
  Eigen::MatrixXd prob;                 // N x K
  std::vector<Eigen::MatrixXd> d_mean;  // K entries, each N x K
  std::vector<Eigen::MatrixXd> d_var;   // K entries, each N x K
};

ArgmaxProbGradients prob_argmax_with_gradients(const RobustMax& lik, const Eigen::MatrixXd& mean,
                                               const Eigen::MatrixXd& var);

// Posterior class probabilities: rows of prob_argmax pushed through the
// robust-max link and renormalized (rows sum to exactly 1).
Eigen::MatrixXd predict_class_probs(const RobustMax& lik, const Eigen::MatrixXd& mean,
                                    const Eigen::MatrixXd& var);

}  // namespace svgpcr
