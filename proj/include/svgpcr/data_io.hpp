#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "svgpcr/crowd.hpp"
#include "svgpcr/rng.hpp"
#include "svgpcr/sparse_gp.hpp"
#include "svgpcr/train_config.hpp"

namespace svgpcr {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class HeaderMode { Auto, Present, Absent };

// Features: one instance per row. CSV (optional header) or the binary layout
// written by save_features_binary. load_features sniffs the format.
Eigen::MatrixXd load_features(const std::string& path, HeaderMode header = HeaderMode::Auto);
Eigen::MatrixXd load_features_csv(const std::string& path, HeaderMode header = HeaderMode::Auto);
Eigen::MatrixXd load_features_binary(const std::string& path);
void save_features_csv(const std::string& path, const Eigen::MatrixXd& X);
void save_features_binary(const std::string& path, const Eigen::MatrixXd& X);

// annotations.csv columns: instance_id, annotator_id, label. Instance ids are
// feature-row indices; annotator ids are arbitrary integers and get remapped
// to dense indices (external ids retained on the AnnotationSet). Duplicate
// triples accumulate count. num_classes -1 means infer as max label + 1.
AnnotationSet load_annotations(const std::string& path, std::int64_t num_instances,
                               int num_classes = -1);
void save_annotations_csv(const std::string& path, const AnnotationSet& ann);

// Single-column integer label files (header "label").
std::vector<int> load_labels(const std::string& path, std::int64_t expected_rows = -1);
void save_labels_csv(const std::string& path, const std::vector<int>& labels);

// Generic numeric matrix with an explicit header row, full double precision.
void save_matrix_csv(const std::string& path, const Eigen::MatrixXd& m,
                     const std::vector<std::string>& column_names);

// Seeded epoch sampler: shuffles 0..n-1 once per epoch and hands out
// consecutive chunks; the last chunk of an epoch may be short.
struct SamplerState {
  std::vector<std::int64_t> permutation;
  std::int64_t cursor = 0;
  std::string rng;
};

class MinibatchSampler {
 public:
  MinibatchSampler(std::int64_t n, int batch_size, std::uint64_t seed);

  std::vector<std::int64_t> next();
  std::int64_t steps_per_epoch() const;
  std::int64_t population() const { return n_; }

  SamplerState state() const;
  void restore(const SamplerState& s);

 private:
  std::int64_t n_ = 0;
  int batch_size_ = 0;
  std::mt19937_64 rng_;
  std::vector<std::int64_t> permutation_;
  std::int64_t cursor_ = 0;
};

// Full training snapshot; load(save(x)) is bitwise and resuming reproduces
// the uninterrupted run exactly.
struct AdamState {
  std::int64_t step = 0;
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
};

struct Checkpoint {
  TrainConfig config;
  VariationalGP gp;
  CrowdModel crowd{0, 2, CrowdModel::uniform_prior(2)};
  std::vector<std::int64_t> annotator_external_ids;
  Eigen::MatrixXd responsibilities;  // N x K
  std::vector<int> gold_labels;      // empty unless trained on fixed labels
  AdamState adam;
  SamplerState sampler;
  std::int64_t steps_taken = 0;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace svgpcr
