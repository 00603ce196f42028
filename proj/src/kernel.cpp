#include "svgpcr/kernel.hpp"

#include <cmath>
#include <sstream>

namespace svgpcr {

namespace {

inline double sq_dist(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, Eigen::Index i,
                      Eigen::Index j) {
  double s = 0.0;
  for (Eigen::Index d = 0; d < A.cols(); ++d) {
    const double diff = A(i, d) - B(j, d);
    s += diff * diff;
  }
  return s;
}

void check_finite(const Eigen::MatrixXd& X, const char* name) {
  if (!X.allFinite()) {
    throw NumericalError(std::string("kernel_matrix: non-finite entries in ") + name);
  }
}

}  // namespace

Eigen::MatrixXd kernel_matrix_serial(const SEKernelParams& params, const Eigen::MatrixXd& A,
                                     const Eigen::MatrixXd& B) {
  if (A.cols() != B.cols() || A.cols() < 1) {
    throw std::invalid_argument("kernel_matrix: input dimension mismatch");
  }
  check_finite(A, "A");
  check_finite(B, "B");
  const double gamma = params.variance();
  const double inv_two_sq = 0.5 / (params.lengthscale() * params.lengthscale());
  Eigen::MatrixXd K(A.rows(), B.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    for (Eigen::Index j = 0; j < B.rows(); ++j) {
      K(i, j) = gamma * std::exp(-sq_dist(A, B, i, j) * inv_two_sq);
    }
  }
  return K;
}

Eigen::MatrixXd kernel_matrix(const SEKernelParams& params, const Eigen::MatrixXd& A,
                              const Eigen::MatrixXd& B) {
  if (A.cols() != B.cols() || A.cols() < 1) {
    throw std::invalid_argument("kernel_matrix: input dimension mismatch");
  }
  check_finite(A, "A");
  check_finite(B, "B");
  const double gamma = params.variance();
  const double inv_two_sq = 0.5 / (params.lengthscale() * params.lengthscale());
  Eigen::MatrixXd K(A.rows(), B.rows());
  const Eigen::Index n = A.rows();
#pragma omp parallel for schedule(static)
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < B.rows(); ++j) {
      K(i, j) = gamma * std::exp(-sq_dist(A, B, i, j) * inv_two_sq);
    }
  }
  return K;
}

KernelAdjoint kernel_matrix_vjp(const SEKernelParams& params, const Eigen::MatrixXd& A,
                                const Eigen::MatrixXd& B, const Eigen::MatrixXd& K,
                                const Eigen::MatrixXd& K_bar, bool need_d_A, bool need_d_B) {
  // dK/dlog(gamma)     = K
  // dK/dlog(sigma)     = K * ||a-b||^2 / sigma^2
  // dK/da_i            = K * (b_j - a_i) / sigma^2
  const double inv_sq = 1.0 / (params.lengthscale() * params.lengthscale());
  KernelAdjoint adj;
  adj.d_log_variance = (K_bar.array() * K.array()).sum();
  if (need_d_A) adj.d_A = Eigen::MatrixXd::Zero(A.rows(), A.cols());
  if (need_d_B) adj.d_B = Eigen::MatrixXd::Zero(B.rows(), B.cols());
  double d_log_ls = 0.0;
  const Eigen::Index n = A.rows();
#pragma omp parallel for schedule(static) reduction(+ : d_log_ls)
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < B.rows(); ++j) {
      const double w = K_bar(i, j) * K(i, j);
      if (w == 0.0) continue;
      d_log_ls += w * sq_dist(A, B, i, j) * inv_sq;
      if (need_d_A) {
        for (Eigen::Index d = 0; d < A.cols(); ++d) {
          adj.d_A(i, d) += w * (B(j, d) - A(i, d)) * inv_sq;
        }
      }
    }
  }
  // d_B column accumulation runs over i, so it stays outside the row-parallel loop
  if (need_d_B) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < B.rows(); ++j) {
        const double w = K_bar(i, j) * K(i, j);
        if (w == 0.0) continue;
        for (Eigen::Index d = 0; d < B.cols(); ++d) {
          adj.d_B(j, d) += w * (A(i, d) - B(j, d)) * inv_sq;
        }
      }
    }
  }
  adj.d_log_lengthscale = d_log_ls;
  return adj;
}

CholeskyFactor cholesky_with_jitter(const Eigen::MatrixXd& K, double base_jitter) {
  if (K.rows() != K.cols()) {
    throw std::invalid_argument("cholesky_with_jitter: matrix must be square");
  }
  if (!K.allFinite()) throw NumericalError("cholesky_with_jitter: non-finite input");
  const double sym_err = (K - K.transpose()).cwiseAbs().maxCoeff();
  const double scale = std::max(1.0, K.cwiseAbs().maxCoeff());
  if (sym_err > 1e-8 * scale) {
    throw std::invalid_argument("cholesky_with_jitter: matrix is not symmetric");
  }
  constexpr double kMaxJitter = 1e-2;
  double jitter = base_jitter;
  while (true) {
    Eigen::MatrixXd Kj = K;
    Kj.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(Kj);
    if (llt.info() == Eigen::Success) {
      CholeskyFactor f;
      f.L = llt.matrixL();
      f.jitter_used = jitter;
      return f;
    }
    if (jitter >= kMaxJitter) break;
    jitter = (jitter <= 0.0) ? 1e-10 : jitter * 10.0;
    jitter = std::min(jitter, kMaxJitter);
  }
  std::ostringstream msg;
  msg << "cholesky_with_jitter: factorization failed up to jitter " << kMaxJitter << " (n = "
      << K.rows() << ", diag range [" << K.diagonal().minCoeff() << ", "
      << K.diagonal().maxCoeff() << "])";
  throw NumericalError(msg.str());
}

Eigen::MatrixXd cholesky_vjp(const Eigen::MatrixXd& L, const Eigen::MatrixXd& L_bar) {
  // P = Phi(L^T L_bar) with Phi = lower triangle, halved diagonal;
  // K_bar = (L^-T P L^-1), symmetrized.
  const Eigen::Index m = L.rows();
  Eigen::MatrixXd P = (L.transpose() * L_bar).eval();
  P = P.triangularView<Eigen::Lower>();
  P.diagonal() *= 0.5;
  Eigen::MatrixXd S =
      L.transpose().triangularView<Eigen::Upper>().solve(P);     // L^-T P
  S = L.transpose().triangularView<Eigen::Upper>().solve(S.transpose()).transpose();  // .. L^-1
  Eigen::MatrixXd K_bar(m, m);
  K_bar = 0.5 * (S + S.transpose());
  return K_bar;
}

}  // namespace svgpcr
