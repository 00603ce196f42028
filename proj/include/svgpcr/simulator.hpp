#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "svgpcr/crowd.hpp"
#include "svgpcr/rng.hpp"

namespace svgpcr {

// Recipe for one synthetic annotator. "reliable" puts accuracy p on each
// diagonal entry with the remaining mass split randomly down the column;
// "spammer" answers uniformly regardless of the true class; "adversarial"
// reports class (j + shift) mod K with probability p when the truth is j.
struct AnnotatorSpec {
  enum class Kind { Reliable, Spammer, Adversarial, Explicit };
  Kind kind = Kind::Reliable;
  double p = 0.95;
  int shift = 1;
  double coverage = 1.0;           // fraction of instances this annotator labels
  Eigen::MatrixXd explicit_matrix;  // used when kind == Explicit

  static AnnotatorSpec reliable(double p, double coverage = 1.0);
  static AnnotatorSpec spammer(double coverage = 1.0);
  static AnnotatorSpec adversarial(int shift, double p, double coverage = 1.0);
  static AnnotatorSpec explicit_conf(Eigen::MatrixXd matrix, double coverage = 1.0);

  // The five-annotator benchmark lineup: 95% / 90% / 80% accurate, a spammer,
  // and an adversarial shift-by-one annotator at 90%.
  static std::vector<AnnotatorSpec> benchmark_panel();
};

// Column-stochastic K x K confusion matrix for one spec.
Eigen::MatrixXd build_confusion(const AnnotatorSpec& spec, int num_classes, std::mt19937_64& rng);

struct SimulatedAnnotations {
  AnnotationSet annotations;
  std::vector<Eigen::MatrixXd> true_confusions;  // one per annotator
};

// Pushes true labels through each annotator's confusion matrix. Each
// annotator labels exactly round(coverage * N) instances, chosen by a seeded
// shuffle; covered instances receive one draw from the matrix column of
// their true class.
SimulatedAnnotations generate_annotations(const std::vector<int>& true_labels, int num_classes,
                                          const std::vector<AnnotatorSpec>& specs,
                                          std::uint64_t seed);

struct ToyDataset {
  Eigen::MatrixXd features;  // N x D
  std::vector<int> labels;   // N, balanced within 1 across classes
};

// Class-conditional unit-variance Gaussian blobs with centers `separation`
// apart (on a circle in the first two dimensions; extra dimensions are pure
// noise). D = 1 places centers on a line.
ToyDataset make_blobs(std::int64_t n, int num_classes, int dim, std::uint64_t seed,
                      double separation = 6.0);

// Two interleaved half-circles (K = 2, D = 2) with Gaussian jitter.
ToyDataset make_two_moons(std::int64_t n, std::uint64_t seed, double noise = 0.1);

ToyDataset make_toy_dataset(const std::string& kind, std::int64_t n, int num_classes,
                            std::uint64_t seed);

}  // namespace svgpcr
