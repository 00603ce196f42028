#include "svgpcr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace svgpcr {

namespace {
int check_labels(const Eigen::MatrixXd& pred_probs, const std::vector<int>& truth) {
  if (pred_probs.rows() != static_cast<Eigen::Index>(truth.size()) || pred_probs.rows() == 0) {
    throw std::invalid_argument("metrics: prediction/truth length mismatch");
  }
  const int K = static_cast<int>(pred_probs.cols());
  for (int y : truth) {
    if (y < 0 || y >= K) throw std::invalid_argument("metrics: label out of range");
  }
  return K;
}

int argmax_lowest(const Eigen::MatrixXd& probs, Eigen::Index n) {
  int best = 0;
  for (int k = 1; k < probs.cols(); ++k) {
    if (probs(n, k) > probs(n, best)) best = k;
  }
  return best;
}
}  // namespace

ClassifierScore accuracy(const Eigen::MatrixXd& pred_probs, const std::vector<int>& truth) {
  const int K = check_labels(pred_probs, truth);
  Eigen::VectorXd hits = Eigen::VectorXd::Zero(K), counts = Eigen::VectorXd::Zero(K);
  for (Eigen::Index n = 0; n < pred_probs.rows(); ++n) {
    const int y = truth[static_cast<std::size_t>(n)];
    counts[y] += 1.0;
    if (argmax_lowest(pred_probs, n) == y) hits[y] += 1.0;
  }
  ClassifierScore s;
  s.global = hits.sum() / counts.sum();
  s.per_class = Eigen::VectorXd::Constant(K, std::nan(""));
  for (int k = 0; k < K; ++k) {
    if (counts[k] > 0.0) s.per_class[k] = hits[k] / counts[k];
  }
  return s;
}

ClassifierScore mean_likelihood(const Eigen::MatrixXd& pred_probs, const std::vector<int>& truth) {
  const int K = check_labels(pred_probs, truth);
  Eigen::VectorXd mass = Eigen::VectorXd::Zero(K), counts = Eigen::VectorXd::Zero(K);
  for (Eigen::Index n = 0; n < pred_probs.rows(); ++n) {
    const int y = truth[static_cast<std::size_t>(n)];
    counts[y] += 1.0;
    mass[y] += pred_probs(n, y);
  }
  ClassifierScore s;
  s.global = mass.sum() / counts.sum();
  s.per_class = Eigen::VectorXd::Constant(K, std::nan(""));
  for (int k = 0; k < K; ++k) {
    if (counts[k] > 0.0) s.per_class[k] = mass[k] / counts[k];
  }
  return s;
}

double mean_log_likelihood(const Eigen::MatrixXd& pred_probs, const std::vector<int>& truth) {
  check_labels(pred_probs, truth);
  double total = 0.0;
  for (Eigen::Index n = 0; n < pred_probs.rows(); ++n) {
    total += std::log(std::max(pred_probs(n, truth[static_cast<std::size_t>(n)]), 1e-300));
  }
  return total / static_cast<double>(pred_probs.rows());
}

double auc(const Eigen::VectorXd& scores, const std::vector<int>& truth) {
  if (scores.size() != static_cast<Eigen::Index>(truth.size()) || scores.size() == 0) {
    throw std::invalid_argument("auc: score/truth length mismatch");
  }
  std::int64_t pos = 0, neg = 0;
  for (int y : truth) {
    if (y == 1) {
      ++pos;
    } else if (y == 0) {
      ++neg;
    } else {
      throw std::invalid_argument("auc: truth must be binary 0/1");
    }
  }
  if (pos == 0 || neg == 0) {
    throw std::invalid_argument("auc: both classes must be present");
  }
  // Average rank of positives (midranks for ties) gives the Mann-Whitney U.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
    for (std::size_t t = i; t <= j; ++t) {
      if (truth[static_cast<std::size_t>(order[t])] == 1) pos_rank_sum += midrank;
    }
    i = j + 1;
  }
  const double u = pos_rank_sum - 0.5 * static_cast<double>(pos) * (pos + 1.0);
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

std::vector<RecoveryError> confusion_recovery_error(
    const std::vector<Eigen::MatrixXd>& estimated, const std::vector<Eigen::MatrixXd>& truth) {
  if (estimated.size() != truth.size()) {
    throw std::invalid_argument("confusion_recovery_error: annotator count mismatch");
  }
  std::vector<RecoveryError> out(estimated.size());
  for (std::size_t a = 0; a < estimated.size(); ++a) {
    if (estimated[a].rows() != truth[a].rows() || estimated[a].cols() != truth[a].cols()) {
      throw std::invalid_argument("confusion_recovery_error: shape mismatch");
    }
    const Eigen::ArrayXXd diff = (estimated[a] - truth[a]).array().abs();
    out[a] = {diff.maxCoeff(), diff.mean()};
  }
  return out;
}

}  // namespace svgpcr
