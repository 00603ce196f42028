#include "svgpcr/likelihood.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "svgpcr/kernel.hpp"  // NumericalError

namespace svgpcr {

namespace {

constexpr double kSqrtPi = 1.7724538509055160273;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }
inline double std_normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

void check_moment_inputs(const Eigen::MatrixXd& mean, const Eigen::MatrixXd& var,
                         int num_classes) {
  if (mean.rows() != var.rows() || mean.cols() != var.cols()) {
    throw std::invalid_argument("likelihood: mean/var shape mismatch");
  }
  if (mean.cols() != num_classes) {
    throw std::invalid_argument("likelihood: moment columns must equal num_classes");
  }
  if (!mean.allFinite() || !var.allFinite()) {
    throw NumericalError("likelihood: non-finite moments");
  }
  if ((var.array() <= 0.0).any()) {
    throw NumericalError("likelihood: variances must be strictly positive");
  }
}

// Hazard pdf/cdf of the standard normal; asymptotic series in the far left
// tail where cdf underflows.
inline double normal_hazard(double t) {
  if (t > -30.0) return std_normal_pdf(t) / std_normal_cdf(t);
  const double u = 1.0 / (t * t);
  return -t / (1.0 - u * (1.0 - u * (3.0 - 15.0 * u)));
}

// Laplace fit of the argmax integrand N(y | mu_k, v_k) * prod_j Phi((y-mu_j)/s_j).
// Its log is strictly concave with curvature <= -1/v_k, so Newton lands on the
// unique mode and the fitted scale never exceeds s_k. Centering the quadrature
// here instead of at (mu_k, v_k) keeps the rule accurate when the product of
// cdfs concentrates mass away from the k-th marginal (many near-tied classes).
struct LaplaceFit {
  double center;
  double scale;
};

LaplaceFit argmax_integrand_mode(const Eigen::MatrixXd& mean, const Eigen::MatrixXd& var,
                                 Eigen::Index n, Eigen::Index k) {
  const int K = static_cast<int>(mean.cols());
  const double mu_k = mean(n, k);
  const double v_k = var(n, k);
  const double cap = 3.0 * std::sqrt(v_k);
  double c = mu_k;
  double h2 = -1.0 / v_k;
  for (int iter = 0; iter < 100; ++iter) {
    double h1 = -(c - mu_k) / v_k;
    h2 = -1.0 / v_k;
    for (int j = 0; j < K; ++j) {
      if (j == k) continue;
      const double s_j = std::sqrt(var(n, j));
      const double t = (c - mean(n, j)) / s_j;
      const double lam = normal_hazard(t);
      h1 += lam / s_j;
      h2 -= lam * (t + lam) / var(n, j);
    }
    const double step = std::min(cap, std::max(-cap, -h1 / h2));
    c += step;
    if (std::abs(step) < 1e-12 * (1.0 + std::abs(c))) break;
  }
  return {c, std::sqrt(-1.0 / h2)};
}

// Inner loop shared by all prob_argmax variants: probability that class k
// attains the max for row n, by quadrature over f_k recentered on the mode.
double row_class_prob(const QuadratureRule& quad, const Eigen::MatrixXd& mean,
                      const Eigen::MatrixXd& var, Eigen::Index n, Eigen::Index k) {
  const int K = static_cast<int>(mean.cols());
  const double mu_k = mean(n, k);
  const double v_k = var(n, k);
  const LaplaceFit fit = argmax_integrand_mode(mean, var, n, k);
  const double sq2s = std::sqrt(2.0) * fit.scale;
  const double pre = fit.scale / (std::sqrt(v_k) * kSqrtPi);
  double acc = 0.0;
  for (Eigen::Index h = 0; h < quad.nodes.size(); ++h) {
    const double x_h = quad.nodes[h];
    const double y = fit.center + sq2s * x_h;
    const double d = y - mu_k;
    double prod = 1.0;
    for (int j = 0; j < K; ++j) {
      if (j == k) continue;
      prod *= std_normal_cdf((y - mean(n, j)) / std::sqrt(var(n, j)));
    }
    acc += quad.weights[h] * std::exp(x_h * x_h - 0.5 * d * d / v_k) * prod;
  }
  return std::min(1.0, std::max(0.0, pre * acc));
}

}  // namespace

QuadratureRule gauss_hermite(int order) {
  if (order < 2 || order > 128) {
    throw std::invalid_argument("gauss_hermite: order must lie in [2, 128]");
  }
  // Jacobi matrix of the Hermite recurrence: zero diagonal, off-diagonal
  // beta_i = sqrt(i / 2). Nodes are its eigenvalues, weights sqrt(pi) * v0^2.
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(order, order);
  for (int i = 1; i < order; ++i) {
    const double b = std::sqrt(0.5 * i);
    J(i, i - 1) = b;
    J(i - 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  if (es.info() != Eigen::Success) {
    throw std::runtime_error("gauss_hermite: eigen decomposition failed");
  }
  QuadratureRule rule;
  rule.nodes = es.eigenvalues();
  rule.weights.resize(order);
  for (int i = 0; i < order; ++i) {
    const double v0 = es.eigenvectors()(0, i);
    rule.weights[i] = kSqrtPi * v0 * v0;
  }
  return rule;
}

RobustMax::RobustMax(int num_classes_, double epsilon_, int quadrature_points_)
    : num_classes(num_classes_), epsilon(epsilon_), quadrature_points(quadrature_points_) {
  if (num_classes < 2) throw std::invalid_argument("RobustMax: need at least two classes");
  if (!(epsilon > 0.0) || !(epsilon < 1.0)) {
    throw std::invalid_argument("RobustMax: epsilon must lie in (0, 1)");
  }
  if (quadrature_points < 2 || quadrature_points > 128) {
    throw std::invalid_argument("RobustMax: quadrature_points must lie in [2, 128]");
  }
}

double RobustMax::log_hit() const { return std::log1p(-epsilon); }
double RobustMax::log_miss() const { return std::log(epsilon / (num_classes - 1)); }

Eigen::MatrixXd prob_argmax_serial(const RobustMax& lik, const Eigen::MatrixXd& mean,
                                   const Eigen::MatrixXd& var) {
  check_moment_inputs(mean, var, lik.num_classes);
  const QuadratureRule quad = gauss_hermite(lik.quadrature_points);
  Eigen::MatrixXd prob(mean.rows(), mean.cols());
  for (Eigen::Index n = 0; n < mean.rows(); ++n) {
    for (Eigen::Index k = 0; k < mean.cols(); ++k) {
      prob(n, k) = row_class_prob(quad, mean, var, n, k);
    }
  }
  return prob;
}

Eigen::MatrixXd prob_argmax(const RobustMax& lik, const Eigen::MatrixXd& mean,
                            const Eigen::MatrixXd& var) {
  check_moment_inputs(mean, var, lik.num_classes);
  const QuadratureRule quad = gauss_hermite(lik.quadrature_points);
  Eigen::MatrixXd prob(mean.rows(), mean.cols());
  const Eigen::Index N = mean.rows();
#pragma omp parallel for schedule(static)
  for (Eigen::Index n = 0; n < N; ++n) {
    for (Eigen::Index k = 0; k < mean.cols(); ++k) {
      prob(n, k) = row_class_prob(quad, mean, var, n, k);
    }
  }
  return prob;
}

Eigen::MatrixXd variational_expectation_serial(const RobustMax& lik, const Eigen::MatrixXd& mean,
                                               const Eigen::MatrixXd& var) {
  const Eigen::MatrixXd p = prob_argmax_serial(lik, mean, var);
  return (p.array() * lik.log_hit() + (1.0 - p.array()) * lik.log_miss()).matrix();
}

Eigen::MatrixXd variational_expectation(const RobustMax& lik, const Eigen::MatrixXd& mean,
                                        const Eigen::MatrixXd& var) {
  const Eigen::MatrixXd p = prob_argmax(lik, mean, var);
  return (p.array() * lik.log_hit() + (1.0 - p.array()) * lik.log_miss()).matrix();
}

ArgmaxProbGradients prob_argmax_with_gradients(const RobustMax& lik, const Eigen::MatrixXd& mean,
                                               const Eigen::MatrixXd& var) {
  check_moment_inputs(mean, var, lik.num_classes);
  const QuadratureRule quad = gauss_hermite(lik.quadrature_points);
  const Eigen::Index N = mean.rows();
  const int K = lik.num_classes;
  const Eigen::Index H = quad.nodes.size();

  ArgmaxProbGradients out;
  out.prob.resize(N, K);
  out.d_mean.assign(K, Eigen::MatrixXd::Zero(N, K));
  out.d_var.assign(K, Eigen::MatrixXd::Zero(N, K));

#pragma omp parallel for schedule(static)
  for (Eigen::Index n = 0; n < N; ++n) {
    // Scratch, one row at a time: per-node cdf factors and the prefix/suffix
    // trick so a single near-zero factor never forces a division.
    Eigen::VectorXd cdf(K), pdf(K), t(K), prefix(K + 1), suffix(K + 1);
    for (int k = 0; k < K; ++k) {
      const double mu_k = mean(n, k);
      const double var_k = var(n, k);
      const LaplaceFit fit = argmax_integrand_mode(mean, var, n, k);
      const double sq2s = std::sqrt(2.0) * fit.scale;
      const double pre = fit.scale / (std::sqrt(var_k) * kSqrtPi);
      double p_acc = 0.0;
      double d_mu_k = 0.0;
      double d_var_k = 0.0;
      Eigen::VectorXd d_mu_j = Eigen::VectorXd::Zero(K);
      Eigen::VectorXd d_var_j = Eigen::VectorXd::Zero(K);
      // The fitted center/scale stay fixed here: the estimate's sensitivity to
      // them is on the order of the quadrature error, far below the gradient
      // tolerances, and the integrand derivatives below are exact.
      for (Eigen::Index h = 0; h < H; ++h) {
        const double x_h = quad.nodes[h];
        const double w_h = quad.weights[h];
        const double y = fit.center + sq2s * x_h;
        const double d = y - mu_k;
        const double e_h = std::exp(x_h * x_h - 0.5 * d * d / var_k);
        for (int j = 0; j < K; ++j) {
          if (j == k) {
            cdf[j] = 1.0;
            pdf[j] = 0.0;
            t[j] = 0.0;
            continue;
          }
          const double s_j = std::sqrt(var(n, j));
          t[j] = (y - mean(n, j)) / s_j;
          cdf[j] = std_normal_cdf(t[j]);
          pdf[j] = std_normal_pdf(t[j]) / s_j;  // includes the 1/s_j chain factor
        }
        prefix[0] = 1.0;
        for (int j = 0; j < K; ++j) prefix[j + 1] = prefix[j] * cdf[j];
        suffix[K] = 1.0;
        for (int j = K - 1; j >= 0; --j) suffix[j] = suffix[j + 1] * cdf[j];
        const double prod_all = prefix[K];
        p_acc += w_h * e_h * prod_all;
        const double base = w_h * e_h;
        // The Gaussian density factor depends on (mu_k, var_k); each cdf
        // factor on (mu_j, var_j).
        d_mu_k += base * prod_all * (d / var_k);
        d_var_k += base * prod_all * (0.5 * d * d / (var_k * var_k));
        for (int j = 0; j < K; ++j) {
          if (j == k) continue;
          const double rest = prefix[j] * suffix[j + 1];  // product without factor j
          const double g = base * rest * pdf[j];
          d_mu_j[j] -= g;
          d_var_j[j] -= g * t[j] * std::sqrt(var(n, j)) / (2.0 * var(n, j));
        }
      }
      const double p_hat = pre * p_acc;
      out.prob(n, k) = std::min(1.0, std::max(0.0, p_hat));
      out.d_mean[k](n, k) = pre * d_mu_k;
      out.d_var[k](n, k) = pre * d_var_k - p_hat / (2.0 * var_k);
      for (int j = 0; j < K; ++j) {
        if (j == k) continue;
        out.d_mean[k](n, j) = pre * d_mu_j[j];
        out.d_var[k](n, j) = pre * d_var_j[j];
      }
    }
  }
  return out;
}

Eigen::MatrixXd predict_class_probs(const RobustMax& lik, const Eigen::MatrixXd& mean,
                                    const Eigen::MatrixXd& var) {
  const Eigen::MatrixXd p = prob_argmax(lik, mean, var);
  const double hit = 1.0 - lik.epsilon;
  const double miss = lik.epsilon / (lik.num_classes - 1);
  Eigen::MatrixXd probs =
      (p.array() * hit + (1.0 - p.array()) * miss).matrix();
  // Quadrature rows sum to ~1 but not exactly; renormalize for valid output.
  for (Eigen::Index n = 0; n < probs.rows(); ++n) {
    probs.row(n) /= probs.row(n).sum();
  }
  return probs;
}

}  // namespace svgpcr
