#pragma once

#include <Eigen/Dense>
#include <vector>

namespace svgpcr {

struct ClassifierScore {
  double global = 0.0;
  Eigen::VectorXd per_class;  // restricted to instances of each true class
};

// Fraction of rows whose argmax (ties to the lowest index) matches truth,
// plus per-class accuracies. Rows of pred_probs must be stochastic.
ClassifierScore accuracy(const Eigen::MatrixXd& pred_probs, const std::vector<int>& truth);

// Mean probability assigned to the true class, globally and per class.
ClassifierScore mean_likelihood(const Eigen::MatrixXd& pred_probs, const std::vector<int>& truth);

// Mean log probability of the true class (floored at log(1e-300)).
double mean_log_likelihood(const Eigen::MatrixXd& pred_probs, const std::vector<int>& truth);

// Rank-based (Mann-Whitney) AUC with half credit for ties. Requires both
// classes present in truth.
double auc(const Eigen::VectorXd& scores, const std::vector<int>& truth);

struct RecoveryError {
  double max_abs = 0.0;
  double mean_abs = 0.0;
};

// Entrywise |estimated - truth| per annotator, reduced to max and mean.
std::vector<RecoveryError> confusion_recovery_error(
    const std::vector<Eigen::MatrixXd>& estimated, const std::vector<Eigen::MatrixXd>& truth);

}  // namespace svgpcr
