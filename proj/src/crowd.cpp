#include "svgpcr/crowd.hpp"

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <cmath>

namespace svgpcr {

namespace {
using boost::math::digamma;
using boost::math::trigamma;

double log_beta(const Eigen::VectorXd& a) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) s += std::lgamma(a[i]);
  return s - std::lgamma(a.sum());
}
}  // namespace

AnnotationSet::AnnotationSet(std::int64_t num_instances, int num_classes)
    : num_classes_(num_classes) {
  if (num_instances < 0) throw std::invalid_argument("AnnotationSet: negative instance count");
  if (num_classes < 2) throw std::invalid_argument("AnnotationSet: need at least two classes");
  by_instance_.resize(static_cast<std::size_t>(num_instances));
}

void AnnotationSet::add(std::int64_t instance, int annotator_dense, int label, int count) {
  if (instance < 0 || instance >= num_instances()) {
    throw std::invalid_argument("AnnotationSet: instance id out of range");
  }
  if (label < 0 || label >= num_classes_) {
    throw std::invalid_argument("AnnotationSet: label out of range");
  }
  if (annotator_dense < 0) throw std::invalid_argument("AnnotationSet: negative annotator");
  if (count < 1) throw std::invalid_argument("AnnotationSet: count must be positive");
  num_annotators_ = std::max(num_annotators_, annotator_dense + 1);
  auto& recs = by_instance_[static_cast<std::size_t>(instance)];
  for (auto& r : recs) {
    if (r.annotator == annotator_dense && r.label == label) {
      r.count += count;
      total_count_ += count;
      return;
    }
  }
  recs.push_back({annotator_dense, label, count});
  total_count_ += count;
}

CrowdModel::CrowdModel(int num_annotators, int num_classes, Eigen::MatrixXd prior)
    : num_classes_(num_classes), prior_(std::move(prior)) {
  if (num_annotators < 0) throw std::invalid_argument("CrowdModel: negative annotator count");
  if (num_classes < 2) throw std::invalid_argument("CrowdModel: need at least two classes");
  if (prior_.rows() != num_classes || prior_.cols() != num_classes) {
    throw std::invalid_argument("CrowdModel: prior must be K x K");
  }
  if ((prior_.array() <= 0.0).any()) {
    throw std::invalid_argument("CrowdModel: prior concentrations must be positive");
  }
  // Start at the prior plus a diagonal nudge, which breaks the label-switching
  // symmetry between the crowd layer and the classifier.
  Eigen::MatrixXd init = prior_;
  init.diagonal().array() += 0.1;
  log_alpha_.assign(static_cast<std::size_t>(num_annotators), init.array().log().matrix());
}

Eigen::MatrixXd CrowdModel::uniform_prior(int num_classes, double diag_boost) {
  if (diag_boost < 0.0) throw std::invalid_argument("uniform_prior: negative diagonal boost");
  Eigen::MatrixXd p = Eigen::MatrixXd::Ones(num_classes, num_classes);
  p.diagonal().array() += diag_boost;
  return p;
}

Eigen::MatrixXd CrowdModel::posterior_mean(int a) const {
  const Eigen::MatrixXd al = alpha(a);
  return al.array().rowwise() / al.colwise().sum().array();
}

Eigen::MatrixXd CrowdModel::posterior_variance(int a) const {
  const Eigen::MatrixXd al = alpha(a);
  Eigen::MatrixXd var(al.rows(), al.cols());
  for (Eigen::Index j = 0; j < al.cols(); ++j) {
    const double s = al.col(j).sum();
    var.col(j) = al.col(j).array() * (s - al.col(j).array()) / (s * s * (s + 1.0));
  }
  return var;
}

std::vector<Eigen::MatrixXd> CrowdModel::expected_log() const {
  std::vector<Eigen::MatrixXd> elog(log_alpha_.size());
  for (std::size_t a = 0; a < log_alpha_.size(); ++a) {
    const Eigen::MatrixXd al = alpha(static_cast<int>(a));
    Eigen::MatrixXd e(num_classes_, num_classes_);
    for (Eigen::Index j = 0; j < al.cols(); ++j) {
      const double dg_sum = digamma(al.col(j).sum());
      for (Eigen::Index i = 0; i < al.rows(); ++i) e(i, j) = digamma(al(i, j)) - dg_sum;
    }
    elog[a] = std::move(e);
  }
  return elog;
}

double dirichlet_kl(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() == 0) {
    throw std::invalid_argument("dirichlet_kl: size mismatch");
  }
  if ((a.array() <= 0.0).any() || (b.array() <= 0.0).any()) {
    throw std::invalid_argument("dirichlet_kl: concentrations must be positive");
  }
  const double dg_sum = digamma(a.sum());
  double kl = log_beta(b) - log_beta(a);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    kl += (a[i] - b[i]) * (digamma(a[i]) - dg_sum);
  }
  return kl;
}

double CrowdModel::kl_to_prior() const {
  double total = 0.0;
  for (int a = 0; a < num_annotators(); ++a) {
    const Eigen::MatrixXd al = alpha(a);
    for (Eigen::Index j = 0; j < al.cols(); ++j) total += dirichlet_kl(al.col(j), prior_.col(j));
  }
  return total;
}

std::vector<Eigen::MatrixXd> CrowdModel::backward(
    const std::vector<Eigen::MatrixXd>& elog_bar) const {
  if (elog_bar.size() != log_alpha_.size()) {
    throw std::invalid_argument("CrowdModel::backward: adjoint count mismatch");
  }
  std::vector<Eigen::MatrixXd> grad(log_alpha_.size());
  for (int a = 0; a < num_annotators(); ++a) {
    const Eigen::MatrixXd al = alpha(a);
    const Eigen::MatrixXd& G = elog_bar[static_cast<std::size_t>(a)];
    Eigen::MatrixXd d(num_classes_, num_classes_);
    for (Eigen::Index j = 0; j < al.cols(); ++j) {
      const double col_sum = al.col(j).sum();
      const double tg_sum = trigamma(col_sum);
      const double g_col = G.col(j).sum();
      const double excess = (al.col(j) - prior_.col(j)).sum();
      for (Eigen::Index i = 0; i < al.rows(); ++i) {
        // <G, dElog/dalpha_ij> minus dKL/dalpha_ij, then the log bijection.
        const double d_elog = G(i, j) * trigamma(al(i, j)) - tg_sum * g_col;
        const double d_kl = (al(i, j) - prior_(i, j)) * trigamma(al(i, j)) - tg_sum * excess;
        d(i, j) = (d_elog - d_kl) * al(i, j);
      }
    }
    grad[static_cast<std::size_t>(a)] = std::move(d);
  }
  return grad;
}

double annotation_term(const std::vector<Eigen::MatrixXd>& elog, const Eigen::MatrixXd& q,
                       const AnnotationSet& ann, const std::vector<std::int64_t>& batch) {
  double total = 0.0;
  for (const std::int64_t n : batch) {
    for (const AnnotationRecord& r : ann.records(n)) {
      const Eigen::MatrixXd& e = elog.at(static_cast<std::size_t>(r.annotator));
      total += r.count * q.row(n).dot(e.row(r.label));
    }
  }
  return total;
}

Eigen::MatrixXd update_responsibilities(const std::vector<Eigen::MatrixXd>& elog,
                                        const Eigen::MatrixXd& gp_expectation,
                                        const AnnotationSet& ann,
                                        const std::vector<std::int64_t>& batch) {
  const Eigen::Index B = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index K = gp_expectation.cols();
  if (gp_expectation.rows() != B) {
    throw std::invalid_argument("update_responsibilities: batch/expectation row mismatch");
  }
  Eigen::MatrixXd q(B, K);
#pragma omp parallel for schedule(static)
  for (Eigen::Index b = 0; b < B; ++b) {
    Eigen::RowVectorXd score = gp_expectation.row(b);
    for (const AnnotationRecord& r : ann.records(batch[static_cast<std::size_t>(b)])) {
      score += r.count * elog.at(static_cast<std::size_t>(r.annotator)).row(r.label);
    }
    const double top = score.maxCoeff();
    const Eigen::RowVectorXd shifted = (score.array() - top).exp();
    q.row(b) = shifted / shifted.sum();
  }
  return q;
}

void update_alpha(CrowdModel& model, const Eigen::MatrixXd& q, const AnnotationSet& ann) {
  if (q.rows() != ann.num_instances() || q.cols() != model.num_classes()) {
    throw std::invalid_argument("update_alpha: responsibility shape mismatch");
  }
  std::vector<Eigen::MatrixXd> counts(
      static_cast<std::size_t>(model.num_annotators()),
      Eigen::MatrixXd::Zero(model.num_classes(), model.num_classes()));
  for (std::int64_t n = 0; n < ann.num_instances(); ++n) {
    for (const AnnotationRecord& r : ann.records(n)) {
      counts.at(static_cast<std::size_t>(r.annotator)).row(r.label) += r.count * q.row(n);
    }
  }
  for (int a = 0; a < model.num_annotators(); ++a) {
    model.log_alpha(a) =
        (model.prior() + counts[static_cast<std::size_t>(a)]).array().log().matrix();
  }
}

double negative_entropy(const Eigen::MatrixXd& q, const std::vector<std::int64_t>& batch) {
  double total = 0.0;
  for (const std::int64_t n : batch) {
    for (Eigen::Index k = 0; k < q.cols(); ++k) {
      const double v = q(n, k);
      if (v > 0.0) total += v * std::log(v);
    }
  }
  return total;
}

}  // namespace svgpcr
