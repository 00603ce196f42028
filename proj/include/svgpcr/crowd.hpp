#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace svgpcr {

struct AnnotationRecord {
  int annotator = 0;  // dense index in [0, A)
  int label = 0;      // class in [0, K)
  int count = 1;      // repeated identical votes accumulate here
};

// Annotations grouped by instance. Annotator ids arriving from files are
// remapped to dense indices; the external ids are kept for reporting.
class AnnotationSet {
 public:
  AnnotationSet(std::int64_t num_instances, int num_classes);

  // Accumulates count onto an existing (annotator, label) record if present.
  void add(std::int64_t instance, int annotator_dense, int label, int count = 1);

  const std::vector<AnnotationRecord>& records(std::int64_t instance) const {
    return by_instance_.at(static_cast<std::size_t>(instance));
  }
  std::int64_t num_instances() const { return static_cast<std::int64_t>(by_instance_.size()); }
  int num_classes() const { return num_classes_; }
  int num_annotators() const { return num_annotators_; }
  std::int64_t total_count() const { return total_count_; }

  std::vector<std::int64_t>& external_annotator_ids() { return external_ids_; }
  const std::vector<std::int64_t>& external_annotator_ids() const { return external_ids_; }

 private:
  std::vector<std::vector<AnnotationRecord>> by_instance_;
  std::vector<std::int64_t> external_ids_;
  int num_classes_ = 0;
  int num_annotators_ = 0;
  std::int64_t total_count_ = 0;
};

// Dirichlet posteriors over per-annotator confusion matrices. Column j of
// annotator a's K x K matrix parameterizes the distribution of reported
// labels when the true class is j, so posterior means are column-stochastic.
// Concentrations are stored as logs to keep them positive under gradients.
class CrowdModel {
 public:
  CrowdModel(int num_annotators, int num_classes, Eigen::MatrixXd prior);

  // All-ones prior, optionally with extra mass on the diagonal.
  static Eigen::MatrixXd uniform_prior(int num_classes, double diag_boost = 0.0);

  int num_annotators() const { return static_cast<int>(log_alpha_.size()); }
  int num_classes() const { return num_classes_; }
  const Eigen::MatrixXd& prior() const { return prior_; }

  const Eigen::MatrixXd& log_alpha(int a) const { return log_alpha_.at(a); }
  Eigen::MatrixXd& log_alpha(int a) { return log_alpha_.at(a); }
  Eigen::MatrixXd alpha(int a) const { return log_alpha_.at(a).array().exp(); }

  Eigen::MatrixXd posterior_mean(int a) const;      // columns sum to 1
  Eigen::MatrixXd posterior_variance(int a) const;  // entrywise Dirichlet variance

  // E[log r_ij] = digamma(alpha_ij) - digamma(column sum), per annotator.
  std::vector<Eigen::MatrixXd> expected_log() const;

  // Sum over annotators and columns of KL(Dir(alpha) || Dir(prior)).
  double kl_to_prior() const;

  // Gradient wrt log(alpha) of  sum_a <G_a, expected_log_a> - kl_to_prior(),
  // where G_a is the accumulated weight on each expected-log entry.
  std::vector<Eigen::MatrixXd> backward(const std::vector<Eigen::MatrixXd>& elog_bar) const;

 private:
  int num_classes_ = 0;
  Eigen::MatrixXd prior_;
  std::vector<Eigen::MatrixXd> log_alpha_;
};

// KL(Dir(a) || Dir(b)) for positive concentration vectors.
double dirichlet_kl(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// Sum over batch annotations of count * sum_k q(n, k) * elog[a](label, k).
// q is the full N x K responsibility table, indexed by instance id.
double annotation_term(const std::vector<Eigen::MatrixXd>& elog, const Eigen::MatrixXd& q,
                       const AnnotationSet& ann, const std::vector<std::int64_t>& batch);

// Closed-form coordinate update of the label responsibilities for a batch:
//   log q(row, k) = gp_expectation(row, k) + sum_records count * elog[a](label, k)
// normalized per row with log-sum-exp. gp_expectation rows align with batch.
Eigen::MatrixXd update_responsibilities(const std::vector<Eigen::MatrixXd>& elog,
                                        const Eigen::MatrixXd& gp_expectation,
                                        const AnnotationSet& ann,
                                        const std::vector<std::int64_t>& batch);

// Exact conjugate full-data update: alpha_ij = prior_ij + sum_n q(n, j) * count
// over records with label i by annotator a. Serves as a fixed-point reference
// for the gradient path.
void update_alpha(CrowdModel& model, const Eigen::MatrixXd& q, const AnnotationSet& ann);

// sum over batch rows of sum_k q log q (0 log 0 := 0); lies in [-B log K, 0].
double negative_entropy(const Eigen::MatrixXd& q, const std::vector<std::int64_t>& batch);

}  // namespace svgpcr
