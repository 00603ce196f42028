#include "svgpcr/sparse_gp.hpp"

#include <cmath>

namespace svgpcr {

Eigen::MatrixXd VariationalGP::scale_tril(int k) const {
  const Eigen::MatrixXd& raw = scale_raw.at(k);
  Eigen::MatrixXd tril = raw.triangularView<Eigen::StrictlyLower>();
  for (Eigen::Index i = 0; i < raw.rows(); ++i) tril(i, i) = std::exp(raw(i, i));
  return tril;
}

VariationalGP VariationalGP::initial(const Eigen::MatrixXd& inducing_inputs, int num_classes,
                                     double jitter) {
  if (inducing_inputs.rows() < 1 || inducing_inputs.cols() < 1) {
    throw std::invalid_argument("VariationalGP::initial: empty inducing inputs");
  }
  if (num_classes < 2) {
    throw std::invalid_argument("VariationalGP::initial: need at least two classes");
  }
  VariationalGP gp;
  gp.inducing_inputs = inducing_inputs;
  gp.kernel = SEKernelParams::from_values(1.0, std::sqrt(double(inducing_inputs.cols())));
  gp.mean = Eigen::MatrixXd::Zero(inducing_inputs.rows(), num_classes);
  gp.scale_raw.assign(num_classes,
                      Eigen::MatrixXd::Zero(inducing_inputs.rows(), inducing_inputs.rows()));
  gp.jitter = jitter;
  return gp;
}

GPForwardCache gp_forward(const VariationalGP& gp, const Eigen::MatrixXd& X) {
  if (X.cols() != gp.inducing_inputs.cols()) {
    throw std::invalid_argument("gp_forward: feature dimension mismatch");
  }
  const int M = gp.num_inducing();
  const int K = gp.num_classes();
  const Eigen::Index N = X.rows();

  GPForwardCache c;
  c.K_mm = kernel_matrix(gp.kernel, gp.inducing_inputs, gp.inducing_inputs);
  Eigen::MatrixXd K_jittered = c.K_mm;
  K_jittered.diagonal().array() += gp.jitter;
  // Factor once; every per-class quantity reuses the same triangular solves.
  Eigen::LLT<Eigen::MatrixXd> llt(K_jittered);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("gp_forward: inducing gram matrix is not positive definite");
  }
  c.L = llt.matrixL();
  c.K_mx = kernel_matrix(gp.kernel, gp.inducing_inputs, X);
  c.A = c.L.triangularView<Eigen::Lower>().solve(c.K_mx);
  c.w = c.L.triangularView<Eigen::Lower>().solve(gp.mean);

  c.marginal_mean = c.A.transpose() * c.w;
  const Eigen::VectorXd prior_minus_fitc =
      Eigen::VectorXd::Constant(N, gp.kernel.variance()) -
      c.A.cwiseProduct(c.A).colwise().sum().transpose();

  c.C.resize(K);
  c.D.resize(K);
  c.marginal_var.resize(N, K);
  c.kl.resize(K);
  for (int k = 0; k < K; ++k) {
    const Eigen::MatrixXd tril = gp.scale_tril(k);
    c.C[k] = c.L.triangularView<Eigen::Lower>().solve(tril);
    c.D[k] = c.A.transpose() * c.C[k];
    c.marginal_var.col(k) = prior_minus_fitc + c.D[k].cwiseProduct(c.D[k]).rowwise().sum();
    c.kl[k] = 0.5 * (c.C[k].squaredNorm() + c.w.col(k).squaredNorm() - M) -
              c.C[k].diagonal().array().log().sum();
  }
  if ((c.marginal_var.array() <= 0.0).any()) {
    throw NumericalError("gp_forward: non-positive marginal variance");
  }
  return c;
}

GPGradients gp_backward(const VariationalGP& gp, const Eigen::MatrixXd& X,
                        const GPForwardCache& cache, const Eigen::MatrixXd& mean_bar,
                        const Eigen::MatrixXd& var_bar, double kl_bar) {
  const int K = gp.num_classes();
  const Eigen::Index N = X.rows();
  if (mean_bar.rows() != N || mean_bar.cols() != K || var_bar.rows() != N ||
      var_bar.cols() != K) {
    throw std::invalid_argument("gp_backward: adjoint shape mismatch");
  }
  const auto lower = [](const Eigen::MatrixXd& m) {
    return m.triangularView<Eigen::Lower>().toDenseMatrix();
  };
  auto solve_LT = [&](const Eigen::MatrixXd& b) {
    return cache.L.transpose().triangularView<Eigen::Upper>().solve(b).eval();
  };

  GPGradients g;
  g.d_mean.resize(gp.num_inducing(), K);
  g.d_scale_raw.resize(K);

  Eigen::MatrixXd L_bar = Eigen::MatrixXd::Zero(cache.L.rows(), cache.L.cols());
  // A accumulates adjoints from the marginal mean, the -colsum(A.*A) variance
  // term, and every D_k; resolve it into K_mx / L only after the class loop.
  Eigen::MatrixXd A_bar = Eigen::MatrixXd::Zero(cache.A.rows(), cache.A.cols());
  const Eigen::VectorXd var_bar_rowsum = var_bar.rowwise().sum();
  A_bar -= 2.0 * cache.A * var_bar_rowsum.asDiagonal();

  for (int k = 0; k < K; ++k) {
    // KL_k and the variance rowsum(D_k.*D_k) term.
    Eigen::MatrixXd C_bar = kl_bar * cache.C[k];
    C_bar.diagonal() -= kl_bar * cache.C[k].diagonal().cwiseInverse();
    Eigen::MatrixXd D_bar = 2.0 * var_bar.col(k).asDiagonal() * cache.D[k];
    C_bar += cache.A * D_bar;
    A_bar += cache.C[k] * D_bar.transpose();

    Eigen::VectorXd w_bar = cache.A * mean_bar.col(k) + kl_bar * cache.w.col(k);

    // Solve vjp (Y = L^-1 B): B_bar = L^-T Y_bar, L_bar -= B_bar Y^T. The
    // L adjoint needs B_bar before masking; the parameter is lower-only.
    const Eigen::MatrixXd C_rhs_bar = solve_LT(C_bar);
    L_bar -= lower(C_rhs_bar * cache.C[k].transpose());
    g.d_mean.col(k) = solve_LT(w_bar);
    L_bar -= lower(g.d_mean.col(k) * cache.w.col(k).transpose());
    A_bar += cache.w.col(k) * mean_bar.col(k).transpose();

    // Undo the diagonal log bijection of the stored factor.
    const Eigen::MatrixXd tril = gp.scale_tril(k);
    g.d_scale_raw[k] = lower(C_rhs_bar);
    g.d_scale_raw[k].diagonal() =
        C_rhs_bar.diagonal().cwiseProduct(tril.diagonal());
  }

  const Eigen::MatrixXd K_mx_bar = solve_LT(A_bar);
  L_bar -= lower(K_mx_bar * cache.A.transpose());

  const KernelAdjoint cross =
      kernel_matrix_vjp(gp.kernel, gp.inducing_inputs, X, cache.K_mx, K_mx_bar, true, false);
  const Eigen::MatrixXd K_mm_bar = cholesky_vjp(cache.L, L_bar);
  const KernelAdjoint self = kernel_matrix_vjp(gp.kernel, gp.inducing_inputs, gp.inducing_inputs,
                                               cache.K_mm, K_mm_bar, true, true);

  g.d_inducing = cross.d_A + self.d_A + self.d_B;
  g.d_log_variance = cross.d_log_variance + self.d_log_variance +
                     gp.kernel.variance() * var_bar.sum();
  g.d_log_lengthscale = cross.d_log_lengthscale + self.d_log_lengthscale;
  return g;
}

MarginalMoments predict_latent(const VariationalGP& gp, const Eigen::MatrixXd& X) {
  const GPForwardCache c = gp_forward(gp, X);
  return {c.marginal_mean, c.marginal_var};
}

double gaussian_kl(const Eigen::VectorXd& m, const Eigen::MatrixXd& S, const Eigen::MatrixXd& K) {
  const Eigen::Index M = m.size();
  if (S.rows() != M || S.cols() != M || K.rows() != M || K.cols() != M) {
    throw std::invalid_argument("gaussian_kl: dimension mismatch");
  }
  const CholeskyFactor Lk = cholesky_with_jitter(K, 0.0);
  const CholeskyFactor Ls = cholesky_with_jitter(S, 0.0);
  const Eigen::MatrixXd C = Lk.L.triangularView<Eigen::Lower>().solve(Ls.L);
  const Eigen::VectorXd w = Lk.L.triangularView<Eigen::Lower>().solve(m);
  return 0.5 * (C.squaredNorm() + w.squaredNorm() - M) - C.diagonal().array().log().sum();
}

}  // namespace svgpcr
