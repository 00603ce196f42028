#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "svgpcr/crowd.hpp"
#include "svgpcr/data_io.hpp"
#include "svgpcr/likelihood.hpp"
#include "svgpcr/sparse_gp.hpp"
#include "svgpcr/train_config.hpp"

namespace svgpcr {

// Everything the objective touches. q rows are refreshed in closed form for
// each batch (they are local variables); the rest moves by gradient steps.
// Non-empty gold_labels pin q to one-hot rows and disable the crowd layer,
// which reduces the objective to a plain sparse-GP classifier bound.
struct ModelState {
  VariationalGP gp;
  CrowdModel crowd{0, 2, CrowdModel::uniform_prior(2)};
  Eigen::MatrixXd q;  // N x K
  std::vector<int> gold_labels;

  bool gold() const { return !gold_labels.empty(); }
  int num_classes() const { return gp.num_classes(); }
};

// One evaluation of the bound on a batch. The three data terms are the plain
// batch sums; total() applies the population/batch scale to them and
// subtracts the (unscaled) KL terms. entropy is -sum q log q >= 0.
struct ElboBreakdown {
  double annotation = 0.0;
  double likelihood = 0.0;
  double entropy = 0.0;
  double gaussian_kl = 0.0;
  double dirichlet_kl = 0.0;
  double scale = 1.0;

  double total() const {
    return scale * (annotation + likelihood + entropy) - gaussian_kl - dirichlet_kl;
  }
};

struct ElboGradients {
  GPGradients gp;
  std::vector<Eigen::MatrixXd> d_log_alpha;  // per annotator, K x K
};

// Bound value on a batch with the responsibilities held as they are in state.
// X is the full feature table; scale = X.rows() / batch size.
ElboBreakdown elbo_minibatch(const ModelState& state, const Eigen::MatrixXd& X,
                             const AnnotationSet& ann, const std::vector<std::int64_t>& batch,
                             const TrainConfig& config);

// Same evaluation plus gradients for every trained parameter (q still fixed).
std::pair<ElboBreakdown, ElboGradients> elbo_with_gradients(const ModelState& state,
                                                            const Eigen::MatrixXd& X,
                                                            const AnnotationSet& ann,
                                                            const std::vector<std::int64_t>& batch,
                                                            const TrainConfig& config);

// Closed-form coordinate update of q for the batch rows (no-op under gold
// labels). Writing the exact per-row optimum makes the partial gradients
// above equal the total ones at the refreshed point.
void refresh_responsibilities(ModelState& state, const Eigen::MatrixXd& X,
                              const AnnotationSet& ann, const std::vector<std::int64_t>& batch,
                              const TrainConfig& config);

// Flat parameter order: gp.mean | lower(scale_raw_k) per class | inducing |
// log kernel variance | log lengthscale | log alpha per annotator.
std::int64_t parameter_count(const ModelState& state);
Eigen::VectorXd flatten_parameters(const ModelState& state);
void unflatten_parameters(const Eigen::VectorXd& theta, ModelState& state);
Eigen::VectorXd flatten_gradients(const ModelState& state, const ElboGradients& g);

class AdamOptimizer {
 public:
  AdamOptimizer(std::int64_t dim, double learning_rate, double beta1, double beta2, double eps);

  // Ascent step: params += lr * mhat / (sqrt(vhat) + eps).
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& gradient);

  AdamState state() const;
  void restore(const AdamState& s);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  Eigen::VectorXd m_, v_;
};

struct TrainLogRow {
  std::int64_t step = 0;  // 1-based, after the update
  ElboBreakdown breakdown;
  double elapsed_seconds = 0.0;  // wall clock; the only non-reproducible field
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainLogRow> log;
  bool aborted_non_finite = false;
  std::int64_t steps_taken = 0;
};

// Stochastic ascent: per step, draw the next epoch chunk, refresh its q rows,
// take one Adam step on all parameters. Inducing inputs start at a seeded
// subset of the data. A non-finite gradient/update stops training with the
// last finite state intact.
TrainResult train(const Eigen::MatrixXd& X, const AnnotationSet& ann, const TrainConfig& config);

// Same loop trained directly on true labels (crowd layer off); the
// noise-free comparison point.
TrainResult train_gold(const Eigen::MatrixXd& X, const std::vector<int>& labels, int num_classes,
                       const TrainConfig& config);

// Continue a run until checkpoint.config.epochs worth of steps have been
// taken; bit-for-bit identical to never having stopped.
TrainResult resume(const Checkpoint& ckpt, const Eigen::MatrixXd& X, const AnnotationSet& ann);

// Class probabilities at new inputs from a trained GP.
Eigen::MatrixXd predict_probs(const VariationalGP& gp, const Eigen::MatrixXd& X, double epsilon,
                              int quadrature_points);

}  // namespace svgpcr
