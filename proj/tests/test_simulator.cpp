#include <cmath>
#include <random>

#include "doctest.h"
#include "svgpcr/simulator.hpp"

using svgpcr::AnnotatorSpec;

TEST_SUITE("simulator") {

TEST_CASE("confusion matrix construction") {
  std::mt19937_64 rng(1);

  const Eigen::MatrixXd spam = svgpcr::build_confusion(AnnotatorSpec::spammer(), 10, rng);
  CHECK((spam.array() - 0.1).abs().maxCoeff() < 1e-12);

  const Eigen::MatrixXd good = svgpcr::build_confusion(AnnotatorSpec::reliable(0.95), 4, rng);
  for (int j = 0; j < 4; ++j) {
    CHECK(std::abs(good(j, j) - 0.95) < 1e-12);
    CHECK(std::abs(good.col(j).sum() - 1.0) < 1e-12);
  }
  CHECK((good.array() >= 0.0).all());

  const Eigen::MatrixXd flip = svgpcr::build_confusion(AnnotatorSpec::adversarial(1, 0.9), 10, rng);
  CHECK(std::abs(flip((9 + 1) % 10, 9) - 0.9) < 1e-12);
  CHECK(std::abs(flip(0, 9) - 0.9) < 1e-12);
  for (int j = 0; j < 10; ++j) {
    CHECK(std::abs(flip((j + 1) % 10, j) - 0.9) < 1e-12);
    CHECK(std::abs(flip.col(j).sum() - 1.0) < 1e-12);
  }

  Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(3, 3);
  const Eigen::MatrixXd exact =
      svgpcr::build_confusion(AnnotatorSpec::explicit_conf(eye), 3, rng);
  CHECK((exact - eye).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("full coverage produces one vote per annotator per instance") {
  const svgpcr::ToyDataset data = svgpcr::make_blobs(200, 4, 2, 3);
  std::vector<AnnotatorSpec> specs(5, AnnotatorSpec::reliable(0.9));
  const svgpcr::SimulatedAnnotations sim =
      svgpcr::generate_annotations(data.labels, 4, specs, 7);
  CHECK(sim.annotations.total_count() == 5 * 200);
  CHECK(sim.annotations.num_annotators() == 5);
  CHECK(static_cast<int>(sim.true_confusions.size()) == 5);
}

TEST_CASE("partial coverage rounds to the nearest count") {
  const svgpcr::ToyDataset data = svgpcr::make_blobs(100, 2, 2, 5);
  const svgpcr::SimulatedAnnotations sim = svgpcr::generate_annotations(
      data.labels, 2, {AnnotatorSpec::reliable(0.9, 0.3)}, 11);
  CHECK(sim.annotations.total_count() == 30);
}

TEST_CASE("an identity annotator reproduces the true labels") {
  const svgpcr::ToyDataset data = svgpcr::make_blobs(150, 3, 2, 9);
  const svgpcr::SimulatedAnnotations sim = svgpcr::generate_annotations(
      data.labels, 3, {AnnotatorSpec::explicit_conf(Eigen::MatrixXd::Identity(3, 3))}, 13);
  for (int n = 0; n < 150; ++n) {
    REQUIRE(sim.annotations.records(n).size() == 1);
    CHECK(sim.annotations.records(n)[0].label == data.labels[static_cast<std::size_t>(n)]);
  }
}

TEST_CASE("empirical confusion frequencies approach the matrix") {
  const std::int64_t n = 100000;
  const svgpcr::ToyDataset data = svgpcr::make_blobs(n, 3, 2, 15);
  const svgpcr::SimulatedAnnotations sim =
      svgpcr::generate_annotations(data.labels, 3, {AnnotatorSpec::reliable(0.8)}, 17);

  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(3, 3);
  for (std::int64_t i = 0; i < n; ++i) {
    for (const svgpcr::AnnotationRecord& r : sim.annotations.records(i)) {
      counts(r.label, data.labels[static_cast<std::size_t>(i)]) += r.count;
    }
  }
  for (int j = 0; j < 3; ++j) counts.col(j) /= counts.col(j).sum();
  CHECK((counts - sim.true_confusions[0]).cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("blob datasets are balanced and reproducible") {
  const svgpcr::ToyDataset data = svgpcr::make_blobs(300, 3, 2, 21);
  REQUIRE(data.features.rows() == 300);
  REQUIRE(data.features.cols() == 2);
  int per_class[3] = {0, 0, 0};
  for (int label : data.labels) per_class[label]++;
  CHECK(per_class[0] == 100);
  CHECK(per_class[1] == 100);
  CHECK(per_class[2] == 100);

  const svgpcr::ToyDataset again = svgpcr::make_blobs(300, 3, 2, 21);
  CHECK((data.features - again.features).cwiseAbs().maxCoeff() == 0.0);
  CHECK(data.labels == again.labels);

  const svgpcr::ToyDataset other = svgpcr::make_blobs(300, 3, 2, 22);
  CHECK((data.features - other.features).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("annotation generation is seed deterministic") {
  const svgpcr::ToyDataset data = svgpcr::make_blobs(120, 3, 2, 23);
  const std::vector<AnnotatorSpec> panel = AnnotatorSpec::benchmark_panel();
  const svgpcr::SimulatedAnnotations a = svgpcr::generate_annotations(data.labels, 3, panel, 31);
  const svgpcr::SimulatedAnnotations b = svgpcr::generate_annotations(data.labels, 3, panel, 31);
  REQUIRE(a.annotations.total_count() == b.annotations.total_count());
  for (int n = 0; n < 120; ++n) {
    const auto& ra = a.annotations.records(n);
    const auto& rb = b.annotations.records(n);
    REQUIRE(ra.size() == rb.size());
    for (std::size_t i = 0; i < ra.size(); ++i) {
      CHECK(ra[i].annotator == rb[i].annotator);
      CHECK(ra[i].label == rb[i].label);
      CHECK(ra[i].count == rb[i].count);
    }
  }
}

TEST_CASE("default separation keeps blobs nearly linearly separable") {
  const svgpcr::ToyDataset data = svgpcr::make_blobs(1000, 4, 2, 25);
  Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(4, 2);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(4);
  for (int i = 0; i < 1000; ++i) {
    centroids.row(data.labels[static_cast<std::size_t>(i)]) += data.features.row(i);
    counts[data.labels[static_cast<std::size_t>(i)]] += 1.0;
  }
  for (int k = 0; k < 4; ++k) centroids.row(k) /= counts[k];

  int correct = 0;
  for (int i = 0; i < 1000; ++i) {
    int best = 0;
    double best_d = (data.features.row(i) - centroids.row(0)).squaredNorm();
    for (int k = 1; k < 4; ++k) {
      const double d = (data.features.row(i) - centroids.row(k)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    correct += (best == data.labels[static_cast<std::size_t>(i)]) ? 1 : 0;
  }
  CHECK(correct >= 990);
}

TEST_CASE("two moons and the named dataset dispatcher") {
  const svgpcr::ToyDataset moons = svgpcr::make_two_moons(200, 27);
  CHECK(moons.features.rows() == 200);
  CHECK(moons.features.cols() == 2);
  int ones = 0;
  for (int label : moons.labels) ones += label;
  CHECK(ones == 100);

  const svgpcr::ToyDataset via_name = svgpcr::make_toy_dataset("gaussians", 90, 3, 4);
  CHECK(via_name.features.rows() == 90);
  CHECK_THROWS_AS(svgpcr::make_toy_dataset("nonsense", 10, 2, 1), std::invalid_argument);
}

}  // TEST_SUITE
