#include "svgpcr/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace svgpcr {

namespace {

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& X, const std::vector<std::int64_t>& batch) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(batch.size()), X.cols());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b] < 0 || batch[b] >= X.rows()) {
      throw std::invalid_argument("batch index out of range");
    }
    out.row(static_cast<Eigen::Index>(b)) = X.row(batch[b]);
  }
  return out;
}

RobustMax make_likelihood(const ModelState& state, const TrainConfig& config) {
  return RobustMax(state.num_classes(), config.robustmax_epsilon, config.quadrature_points);
}

// Shared assembly for the value-only and value-plus-gradient paths. q is
// taken as-is from state (the trainer refreshes batch rows beforehand).
std::pair<ElboBreakdown, ElboGradients> evaluate_batch(const ModelState& state,
                                                       const Eigen::MatrixXd& X,
                                                       const AnnotationSet& ann,
                                                       const std::vector<std::int64_t>& batch,
                                                       const TrainConfig& config,
                                                       bool want_gradients) {
  if (batch.empty()) throw std::invalid_argument("evaluate_batch: empty batch");
  if (state.q.rows() != X.rows() || state.q.cols() != state.num_classes()) {
    throw std::invalid_argument("evaluate_batch: responsibility table shape mismatch");
  }
  const Eigen::Index B = static_cast<Eigen::Index>(batch.size());
  const int K = state.num_classes();
  const RobustMax lik = make_likelihood(state, config);
  const Eigen::MatrixXd X_batch = gather_rows(X, batch);

  const GPForwardCache cache = gp_forward(state.gp, X_batch);

  ElboBreakdown bd;
  bd.scale = static_cast<double>(X.rows()) / static_cast<double>(B);

  Eigen::MatrixXd q_batch(B, K);
  for (Eigen::Index b = 0; b < B; ++b) q_batch.row(b) = state.q.row(batch[b]);

  const double delta = lik.log_hit() - lik.log_miss();
  ElboGradients grads;

  if (want_gradients) {
    const ArgmaxProbGradients pg =
        prob_argmax_with_gradients(lik, cache.marginal_mean, cache.marginal_var);
    const Eigen::MatrixXd ve =
        (pg.prob.array() * lik.log_hit() + (1.0 - pg.prob.array()) * lik.log_miss()).matrix();
    bd.likelihood = (q_batch.array() * ve.array()).sum();

    // d(total)/d p(b,k) = scale * q(b,k) * (log_hit - log_miss), then through
    // the quadrature moment sensitivities.
    const Eigen::MatrixXd coef = bd.scale * delta * q_batch;
    Eigen::MatrixXd mean_bar = Eigen::MatrixXd::Zero(B, K);
    Eigen::MatrixXd var_bar = Eigen::MatrixXd::Zero(B, K);
    for (int k = 0; k < K; ++k) {
      mean_bar += coef.col(k).asDiagonal() * pg.d_mean[k];
      var_bar += coef.col(k).asDiagonal() * pg.d_var[k];
    }
    grads.gp = gp_backward(state.gp, X_batch, cache, mean_bar, var_bar, -1.0);
  } else {
    const Eigen::MatrixXd ve = variational_expectation(lik, cache.marginal_mean,
                                                       cache.marginal_var);
    bd.likelihood = (q_batch.array() * ve.array()).sum();
  }

  bd.gaussian_kl = cache.kl.sum();
  bd.entropy = -negative_entropy(state.q, batch);

  if (state.crowd.num_annotators() > 0) {
    const std::vector<Eigen::MatrixXd> elog = state.crowd.expected_log();
    bd.annotation = annotation_term(elog, state.q, ann, batch);
    bd.dirichlet_kl = state.crowd.kl_to_prior();
    if (want_gradients) {
      std::vector<Eigen::MatrixXd> G(static_cast<std::size_t>(state.crowd.num_annotators()),
                                     Eigen::MatrixXd::Zero(K, K));
      for (const std::int64_t n : batch) {
        for (const AnnotationRecord& r : ann.records(n)) {
          G[static_cast<std::size_t>(r.annotator)].row(r.label) +=
              bd.scale * r.count * state.q.row(n);
        }
      }
      grads.d_log_alpha = state.crowd.backward(G);
    }
  }
  return {bd, grads};
}

}  // namespace

ElboBreakdown elbo_minibatch(const ModelState& state, const Eigen::MatrixXd& X,
                             const AnnotationSet& ann, const std::vector<std::int64_t>& batch,
                             const TrainConfig& config) {
  return evaluate_batch(state, X, ann, batch, config, false).first;
}

std::pair<ElboBreakdown, ElboGradients> elbo_with_gradients(
    const ModelState& state, const Eigen::MatrixXd& X, const AnnotationSet& ann,
    const std::vector<std::int64_t>& batch, const TrainConfig& config) {
  return evaluate_batch(state, X, ann, batch, config, true);
}

void refresh_responsibilities(ModelState& state, const Eigen::MatrixXd& X,
                              const AnnotationSet& ann, const std::vector<std::int64_t>& batch,
                              const TrainConfig& config) {
  if (state.gold()) return;
  const RobustMax lik = make_likelihood(state, config);
  const Eigen::MatrixXd X_batch = gather_rows(X, batch);
  const MarginalMoments mm = predict_latent(state.gp, X_batch);
  const Eigen::MatrixXd ve = variational_expectation(lik, mm.mean, mm.var);
  const Eigen::MatrixXd q_batch =
      update_responsibilities(state.crowd.expected_log(), ve, ann, batch);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    state.q.row(batch[b]) = q_batch.row(static_cast<Eigen::Index>(b));
  }
}

// --- parameter flattening -----------------------------------------------------

std::int64_t parameter_count(const ModelState& state) {
  const std::int64_t M = state.gp.num_inducing();
  const std::int64_t K = state.num_classes();
  const std::int64_t D = state.gp.input_dim();
  const std::int64_t A = state.crowd.num_annotators();
  return M * K + K * M * (M + 1) / 2 + M * D + 2 + A * K * K;
}

Eigen::VectorXd flatten_parameters(const ModelState& state) {
  Eigen::VectorXd theta(parameter_count(state));
  std::int64_t at = 0;
  const auto put_matrix = [&](const Eigen::MatrixXd& m) {
    std::copy(m.data(), m.data() + m.size(), theta.data() + at);
    at += m.size();
  };
  put_matrix(state.gp.mean);
  for (int k = 0; k < state.num_classes(); ++k) {
    const Eigen::MatrixXd& raw = state.gp.scale_raw[static_cast<std::size_t>(k)];
    for (Eigen::Index j = 0; j < raw.cols(); ++j) {
      for (Eigen::Index i = j; i < raw.rows(); ++i) theta[at++] = raw(i, j);
    }
  }
  put_matrix(state.gp.inducing_inputs);
  theta[at++] = state.gp.kernel.log_variance;
  theta[at++] = state.gp.kernel.log_lengthscale;
  for (int a = 0; a < state.crowd.num_annotators(); ++a) put_matrix(state.crowd.log_alpha(a));
  return theta;
}

void unflatten_parameters(const Eigen::VectorXd& theta, ModelState& state) {
  if (theta.size() != parameter_count(state)) {
    throw std::invalid_argument("unflatten_parameters: size mismatch");
  }
  std::int64_t at = 0;
  const auto take_matrix = [&](Eigen::MatrixXd& m) {
    std::copy(theta.data() + at, theta.data() + at + m.size(), m.data());
    at += m.size();
  };
  take_matrix(state.gp.mean);
  for (int k = 0; k < state.num_classes(); ++k) {
    Eigen::MatrixXd& raw = state.gp.scale_raw[static_cast<std::size_t>(k)];
    for (Eigen::Index j = 0; j < raw.cols(); ++j) {
      for (Eigen::Index i = j; i < raw.rows(); ++i) raw(i, j) = theta[at++];
    }
  }
  take_matrix(state.gp.inducing_inputs);
  state.gp.kernel.log_variance = theta[at++];
  state.gp.kernel.log_lengthscale = theta[at++];
  for (int a = 0; a < state.crowd.num_annotators(); ++a) take_matrix(state.crowd.log_alpha(a));
}

Eigen::VectorXd flatten_gradients(const ModelState& state, const ElboGradients& g) {
  Eigen::VectorXd grad(parameter_count(state));
  std::int64_t at = 0;
  const auto put_matrix = [&](const Eigen::MatrixXd& m) {
    std::copy(m.data(), m.data() + m.size(), grad.data() + at);
    at += m.size();
  };
  put_matrix(g.gp.d_mean);
  for (int k = 0; k < state.num_classes(); ++k) {
    const Eigen::MatrixXd& raw = g.gp.d_scale_raw[static_cast<std::size_t>(k)];
    for (Eigen::Index j = 0; j < raw.cols(); ++j) {
      for (Eigen::Index i = j; i < raw.rows(); ++i) grad[at++] = raw(i, j);
    }
  }
  put_matrix(g.gp.d_inducing);
  grad[at++] = g.gp.d_log_variance;
  grad[at++] = g.gp.d_log_lengthscale;
  for (int a = 0; a < state.crowd.num_annotators(); ++a) {
    put_matrix(g.d_log_alpha.at(static_cast<std::size_t>(a)));
  }
  return grad;
}

// --- optimizer ------------------------------------------------------------------

AdamOptimizer::AdamOptimizer(std::int64_t dim, double learning_rate, double beta1, double beta2,
                             double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_ = Eigen::VectorXd::Zero(dim);
  v_ = Eigen::VectorXd::Zero(dim);
}

void AdamOptimizer::step(Eigen::VectorXd& params, const Eigen::VectorXd& gradient) {
  if (params.size() != m_.size() || gradient.size() != m_.size()) {
    throw std::invalid_argument("AdamOptimizer::step: size mismatch");
  }
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * gradient;
  v_ = beta2_ * v_ + (1.0 - beta2_) * gradient.cwiseProduct(gradient);
  const double mc = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double vc = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() +=
      lr_ * (m_.array() / mc) / ((v_.array() / vc).sqrt() + eps_);
}

AdamState AdamOptimizer::state() const { return {t_, m_, v_}; }

void AdamOptimizer::restore(const AdamState& s) {
  if (s.first_moment.size() != m_.size() || s.second_moment.size() != v_.size()) {
    throw std::invalid_argument("AdamOptimizer::restore: size mismatch");
  }
  t_ = s.step;
  m_ = s.first_moment;
  v_ = s.second_moment;
}

// --- training loop ----------------------------------------------------------------

namespace {

TrainResult run_loop(ModelState state, const Eigen::MatrixXd& X, const AnnotationSet& ann,
                     const TrainConfig& config, MinibatchSampler sampler, AdamOptimizer adam,
                     std::int64_t steps_taken) {
  const std::int64_t total_steps = config.epochs * sampler.steps_per_epoch();
  Eigen::VectorXd params = flatten_parameters(state);

  TrainResult result;
  const auto t0 = std::chrono::steady_clock::now();
  std::int64_t step = steps_taken;
  for (; step < total_steps; ++step) {
    const std::vector<std::int64_t> batch = sampler.next();
    ElboBreakdown bd;
    Eigen::VectorXd grad;
    try {
      refresh_responsibilities(state, X, ann, batch, config);
      auto [bd_, grads] = elbo_with_gradients(state, X, ann, batch, config);
      bd = bd_;
      grad = flatten_gradients(state, grads);
    } catch (const NumericalError&) {
      result.aborted_non_finite = true;
      break;
    }
    if (!grad.allFinite() || !std::isfinite(bd.total())) {
      result.aborted_non_finite = true;
      break;
    }
    const Eigen::VectorXd before = params;
    adam.step(params, grad);
    if (!params.allFinite()) {
      params = before;
      result.aborted_non_finite = true;
      break;
    }
    unflatten_parameters(params, state);

    if ((step + 1) % config.eval_every == 0 || step + 1 == total_steps) {
      const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
      result.log.push_back({step + 1, bd, dt.count()});
    }
  }
  result.steps_taken = step;

  // Leave every responsibility row consistent with the final parameters.
  if (!state.gold() && !result.aborted_non_finite) {
    std::vector<std::int64_t> chunk;
    chunk.reserve(static_cast<std::size_t>(config.minibatch_size));
    for (std::int64_t n = 0; n < X.rows(); ++n) {
      chunk.push_back(n);
      if (static_cast<int>(chunk.size()) == config.minibatch_size || n + 1 == X.rows()) {
        refresh_responsibilities(state, X, ann, chunk, config);
        chunk.clear();
      }
    }
  }

  Checkpoint& ckpt = result.checkpoint;
  ckpt.config = config;
  ckpt.gp = state.gp;
  ckpt.crowd = state.crowd;
  ckpt.annotator_external_ids = ann.external_annotator_ids();
  ckpt.responsibilities = state.q;
  ckpt.gold_labels = state.gold_labels;
  ckpt.adam = adam.state();
  ckpt.sampler = sampler.state();
  ckpt.steps_taken = result.steps_taken;
  return result;
}

ModelState fresh_state(const Eigen::MatrixXd& X, const AnnotationSet& ann, int num_classes,
                       const std::vector<int>& gold_labels, const TrainConfig& config,
                       std::mt19937_64& master) {
  const std::int64_t N = X.rows();
  if (config.num_inducing > N) {
    throw std::invalid_argument("config: num_inducing exceeds the number of instances");
  }
  std::vector<std::int64_t> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), 0);
  shuffle_inplace(order, master);
  Eigen::MatrixXd inducing(config.num_inducing, X.cols());
  for (int m = 0; m < config.num_inducing; ++m) inducing.row(m) = X.row(order[m]);

  ModelState state;
  state.gp = VariationalGP::initial(inducing, num_classes, config.jitter);
  state.gold_labels = gold_labels;
  if (gold_labels.empty()) {
    state.crowd = CrowdModel(ann.num_annotators(), num_classes,
                             CrowdModel::uniform_prior(num_classes, config.prior_diag_boost));
    state.q = Eigen::MatrixXd::Constant(N, num_classes, 1.0 / num_classes);
  } else {
    if (static_cast<std::int64_t>(gold_labels.size()) != N) {
      throw std::invalid_argument("train_gold: label count must match feature rows");
    }
    state.crowd = CrowdModel(0, num_classes, CrowdModel::uniform_prior(num_classes));
    state.q = Eigen::MatrixXd::Zero(N, num_classes);
    for (std::int64_t n = 0; n < N; ++n) {
      const int y = gold_labels[static_cast<std::size_t>(n)];
      if (y < 0 || y >= num_classes) throw std::invalid_argument("train_gold: label out of range");
      state.q(n, y) = 1.0;
    }
  }
  return state;
}

}  // namespace

TrainResult train(const Eigen::MatrixXd& X, const AnnotationSet& ann, const TrainConfig& config) {
  config.validate(X.rows());
  if (ann.num_instances() != X.rows()) {
    throw std::invalid_argument("train: annotation set covers a different instance count");
  }
  if (ann.num_annotators() < 1) throw std::invalid_argument("train: no annotators");
  std::mt19937_64 master(config.seed);
  ModelState state = fresh_state(X, ann, ann.num_classes(), {}, config, master);
  MinibatchSampler sampler(X.rows(), config.minibatch_size, master());
  AdamOptimizer adam(parameter_count(state), config.learning_rate, config.adam_beta1,
                     config.adam_beta2, config.adam_eps);
  return run_loop(std::move(state), X, ann, config, std::move(sampler), std::move(adam), 0);
}

TrainResult train_gold(const Eigen::MatrixXd& X, const std::vector<int>& labels, int num_classes,
                       const TrainConfig& config) {
  config.validate(X.rows());
  std::mt19937_64 master(config.seed);
  const AnnotationSet empty(X.rows(), num_classes);
  ModelState state = fresh_state(X, empty, num_classes, labels, config, master);
  MinibatchSampler sampler(X.rows(), config.minibatch_size, master());
  AdamOptimizer adam(parameter_count(state), config.learning_rate, config.adam_beta1,
                     config.adam_beta2, config.adam_eps);
  return run_loop(std::move(state), X, empty, config, std::move(sampler), std::move(adam), 0);
}

TrainResult resume(const Checkpoint& ckpt, const Eigen::MatrixXd& X, const AnnotationSet& ann) {
  const TrainConfig& config = ckpt.config;
  config.validate(X.rows());
  if (ckpt.responsibilities.rows() != X.rows()) {
    throw std::invalid_argument("resume: checkpoint was trained on a different instance count");
  }
  if (ckpt.gold_labels.empty() && ann.external_annotator_ids() != ckpt.annotator_external_ids) {
    throw std::invalid_argument("resume: annotator set differs from the checkpoint");
  }
  ModelState state;
  state.gp = ckpt.gp;
  state.crowd = ckpt.crowd;
  state.q = ckpt.responsibilities;
  state.gold_labels = ckpt.gold_labels;

  MinibatchSampler sampler(X.rows(), config.minibatch_size, 0);
  sampler.restore(ckpt.sampler);
  AdamOptimizer adam(parameter_count(state), config.learning_rate, config.adam_beta1,
                     config.adam_beta2, config.adam_eps);
  adam.restore(ckpt.adam);
  return run_loop(std::move(state), X, ann, config, std::move(sampler), std::move(adam),
                  ckpt.steps_taken);
}

Eigen::MatrixXd predict_probs(const VariationalGP& gp, const Eigen::MatrixXd& X, double epsilon,
                              int quadrature_points) {
  const RobustMax lik(gp.num_classes(), epsilon, quadrature_points);
  const MarginalMoments mm = predict_latent(gp, X);
  return predict_class_probs(lik, mm.mean, mm.var);
}

}  // namespace svgpcr
