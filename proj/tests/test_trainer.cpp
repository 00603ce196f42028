#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "svgpcr/metrics.hpp"
#include "svgpcr/simulator.hpp"
#include "svgpcr/trainer.hpp"
#include "test_helpers.hpp"

using testutil::all_rows;
using testutil::make_random_problem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("full-batch bound equals the direct-summation oracle") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const testutil::RandomProblem p = make_random_problem(6, 2, 2, 2, 2, seed);
    const svgpcr::ElboBreakdown bd =
        svgpcr::elbo_minibatch(p.state, p.X, p.ann, all_rows(6), p.config);
    const oracle::BruteForceTerms ref = oracle::brute_force_elbo(testutil::to_brute_force(p));
    CHECK(bd.scale == 1.0);
    CHECK(std::abs(bd.annotation - ref.annotation) < 1e-10);
    CHECK(std::abs(bd.likelihood - ref.likelihood) < 1e-10);
    CHECK(std::abs(bd.entropy - ref.entropy) < 1e-10);
    CHECK(std::abs(bd.gaussian_kl - ref.gaussian_kl) < 1e-10);
    CHECK(std::abs(bd.dirichlet_kl - ref.dirichlet_kl) < 1e-10);
    CHECK(std::abs(bd.total() - ref.total) < 1e-10);
  }
}

TEST_CASE("no annotations and uniform responsibilities zero the annotation term") {
  testutil::RandomProblem p = make_random_problem(5, 2, 3, 1, 2, 7);
  p.ann = svgpcr::AnnotationSet(5, 3);
  p.state.q.setConstant(1.0 / 3.0);
  const svgpcr::ElboBreakdown bd =
      svgpcr::elbo_minibatch(p.state, p.X, p.ann, all_rows(5), p.config);
  CHECK(bd.annotation == 0.0);
}

TEST_CASE("minibatch estimates average exactly to the full-batch bound") {
  const testutil::RandomProblem p = make_random_problem(6, 2, 2, 2, 2, 11);
  svgpcr::TrainConfig config = p.config;
  const double full = svgpcr::elbo_minibatch(p.state, p.X, p.ann, all_rows(6), config).total();

  config.minibatch_size = 3;
  double sum = 0.0;
  int batches = 0;
  std::vector<std::int64_t> batch(3);
  for (std::int64_t a = 0; a < 6; ++a) {
    for (std::int64_t b = a + 1; b < 6; ++b) {
      for (std::int64_t c = b + 1; c < 6; ++c) {
        batch = {a, b, c};
        sum += svgpcr::elbo_minibatch(p.state, p.X, p.ann, batch, config).total();
        ++batches;
      }
    }
  }
  CHECK(batches == 20);
  CHECK(std::abs(sum / batches - full) < 1e-9);
}

TEST_CASE("every parameter-group gradient survives a finite-difference audit") {
  const testutil::RandomProblem p = make_random_problem(7, 3, 3, 2, 2, 13);
  const auto [bd, grads] = svgpcr::elbo_with_gradients(p.state, p.X, p.ann, all_rows(7), p.config);
  (void)bd;
  const Eigen::VectorXd analytic = svgpcr::flatten_gradients(p.state, grads);
  const testutil::GroupRanges r = testutil::group_ranges(p.state);
  CHECK(testutil::max_gradient_error(p, analytic, 0, r.mean_end) < 1e-3);
  CHECK(testutil::max_gradient_error(p, analytic, r.mean_end, r.scale_end) < 1e-3);
  CHECK(testutil::max_gradient_error(p, analytic, r.scale_end, r.inducing_end) < 1e-3);
  CHECK(testutil::max_gradient_error(p, analytic, r.inducing_end, r.kernel_end) < 1e-3);
  CHECK(testutil::max_gradient_error(p, analytic, r.kernel_end, r.alpha_end) < 1e-3);
}

TEST_CASE("flatten and unflatten are inverse") {
  const testutil::RandomProblem p = make_random_problem(5, 3, 3, 2, 2, 17);
  const Eigen::VectorXd theta = svgpcr::flatten_parameters(p.state);
  CHECK(theta.size() == svgpcr::parameter_count(p.state));
  svgpcr::ModelState other = make_random_problem(5, 3, 3, 2, 2, 18).state;
  svgpcr::unflatten_parameters(theta, other);
  const Eigen::VectorXd round_trip = svgpcr::flatten_parameters(other);
  CHECK((theta - round_trip).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("refreshed responsibilities are the per-row optimum") {
  testutil::RandomProblem p = make_random_problem(6, 3, 3, 2, 2, 19);
  const std::vector<std::int64_t> batch = all_rows(6);
  svgpcr::refresh_responsibilities(p.state, p.X, p.ann, batch, p.config);
  const double base = svgpcr::elbo_minibatch(p.state, p.X, p.ann, batch, p.config).total();

  // Any random stochastic perturbation of a row can only lower the bound.
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    svgpcr::ModelState probe = p.state;
    const int row = static_cast<int>(rng() % 6);
    double sum = 0.0;
    for (int j = 0; j < 3; ++j) {
      probe.q(row, j) = 0.05 + unif(rng);
      sum += probe.q(row, j);
    }
    probe.q.row(row) /= sum;
    const double perturbed = svgpcr::elbo_minibatch(probe, p.X, p.ann, batch, p.config).total();
    CHECK(perturbed <= base + 1e-12);
  }
}

TEST_CASE("small crowd run reconstructs most labels") {
  const svgpcr::ToyDataset data = svgpcr::make_blobs(200, 3, 2, 5);
  const std::vector<svgpcr::AnnotatorSpec> panel = {
      svgpcr::AnnotatorSpec::reliable(0.9),
      svgpcr::AnnotatorSpec::reliable(0.8),
      svgpcr::AnnotatorSpec::spammer(),
  };
  const svgpcr::SimulatedAnnotations sim = svgpcr::generate_annotations(data.labels, 3, panel, 6);

  svgpcr::TrainConfig config;
  config.minibatch_size = 50;
  config.epochs = 60;
  config.num_inducing = 8;
  config.learning_rate = 0.05;
  config.seed = 1;
  const svgpcr::TrainResult result = svgpcr::train(data.features, sim.annotations, config);
  CHECK_FALSE(result.aborted_non_finite);

  const svgpcr::ClassifierScore score =
      svgpcr::accuracy(result.checkpoint.responsibilities, data.labels);
  CHECK(score.global >= 0.95);

  // Smoothed objective is monotone up to 1% slack: compare successive
  // averages over 50-step windows.
  std::vector<double> totals;
  for (const svgpcr::TrainLogRow& row : result.log) totals.push_back(row.breakdown.total());
  REQUIRE(totals.size() >= 100);
  double previous = 0.0;
  bool first = true;
  for (std::size_t start = 0; start + 50 <= totals.size(); start += 50) {
    double mean = 0.0;
    for (std::size_t i = start; i < start + 50; ++i) mean += totals[i];
    mean /= 50.0;
    if (!first) CHECK(mean >= previous - 0.01 * std::abs(previous));
    first = false;
    previous = mean;
  }
}

TEST_CASE("training twice with one seed is bitwise identical") {
  const svgpcr::ToyDataset data = svgpcr::make_blobs(120, 3, 2, 9);
  const svgpcr::SimulatedAnnotations sim = svgpcr::generate_annotations(
      data.labels, 3, {svgpcr::AnnotatorSpec::reliable(0.85), svgpcr::AnnotatorSpec::spammer()}, 10);

  svgpcr::TrainConfig config;
  config.minibatch_size = 40;
  config.epochs = 10;
  config.num_inducing = 6;
  config.seed = 42;

  const svgpcr::TrainResult first = svgpcr::train(data.features, sim.annotations, config);
  const svgpcr::TrainResult second = svgpcr::train(data.features, sim.annotations, config);

  const std::string path_a = testutil::unique_path("ckpt_a.bin");
  const std::string path_b = testutil::unique_path("ckpt_b.bin");
  svgpcr::save_checkpoint(path_a, first.checkpoint);
  svgpcr::save_checkpoint(path_b, second.checkpoint);
  CHECK(slurp(path_a) == slurp(path_b));
  std::remove(path_a.c_str());
  std::remove(path_b.c_str());

  REQUIRE(first.log.size() == second.log.size());
  for (std::size_t i = 0; i < first.log.size(); ++i) {
    CHECK(first.log[i].breakdown.total() == second.log[i].breakdown.total());
  }
}

TEST_CASE("interrupting and resuming reproduces the uninterrupted run") {
  const svgpcr::ToyDataset data = svgpcr::make_blobs(100, 2, 2, 21);
  const svgpcr::SimulatedAnnotations sim = svgpcr::generate_annotations(
      data.labels, 2, {svgpcr::AnnotatorSpec::reliable(0.8), svgpcr::AnnotatorSpec::spammer()}, 22);

  svgpcr::TrainConfig config;
  config.minibatch_size = 25;  // 4 steps per epoch
  config.epochs = 25;          // 100 steps total
  config.num_inducing = 5;
  config.seed = 3;

  const svgpcr::TrainResult straight = svgpcr::train(data.features, sim.annotations, config);
  REQUIRE(straight.steps_taken == 100);

  svgpcr::TrainConfig half = config;
  half.epochs = 13;  // 52 steps, then resume to 100
  const svgpcr::TrainResult part_one = svgpcr::train(data.features, sim.annotations, half);
  svgpcr::Checkpoint midpoint = part_one.checkpoint;

  // Round-trip through disk, as a real interruption would.
  const std::string path = testutil::unique_path("resume.bin");
  svgpcr::save_checkpoint(path, midpoint);
  svgpcr::Checkpoint loaded = svgpcr::load_checkpoint(path);
  std::remove(path.c_str());
  loaded.config.epochs = config.epochs;

  const svgpcr::TrainResult finished = svgpcr::resume(loaded, data.features, sim.annotations);
  CHECK(part_one.steps_taken == 52);
  // Cumulative, like the straight run: the resumed result stands in for it.
  CHECK(finished.steps_taken == 100);

  const std::string path_a = testutil::unique_path("straight.bin");
  const std::string path_b = testutil::unique_path("resumed.bin");
  svgpcr::save_checkpoint(path_a, straight.checkpoint);
  svgpcr::save_checkpoint(path_b, finished.checkpoint);
  CHECK(slurp(path_a) == slurp(path_b));
  std::remove(path_a.c_str());
  std::remove(path_b.c_str());
}

TEST_CASE("gold-label training pins responsibilities and drops the crowd block") {
  const svgpcr::ToyDataset data = svgpcr::make_blobs(90, 3, 2, 31);
  svgpcr::TrainConfig config;
  config.minibatch_size = 30;
  config.epochs = 20;
  config.num_inducing = 6;
  config.seed = 5;
  const svgpcr::TrainResult result = svgpcr::train_gold(data.features, data.labels, 3, config);
  CHECK_FALSE(result.aborted_non_finite);
  CHECK(result.checkpoint.gold_labels == data.labels);
  for (int i = 0; i < 90; ++i) {
    CHECK(result.checkpoint.responsibilities(i, data.labels[static_cast<std::size_t>(i)]) == 1.0);
  }
  for (const svgpcr::TrainLogRow& row : result.log) {
    CHECK(row.breakdown.annotation == 0.0);
    CHECK(row.breakdown.entropy == 0.0);
    CHECK(row.breakdown.dirichlet_kl == 0.0);
  }
}

TEST_CASE("a blown-up step aborts with the last finite state intact") {
  const svgpcr::ToyDataset data = svgpcr::make_blobs(60, 2, 2, 33);
  const svgpcr::SimulatedAnnotations sim =
      svgpcr::generate_annotations(data.labels, 2, {svgpcr::AnnotatorSpec::reliable(0.9)}, 34);
  svgpcr::TrainConfig config;
  config.minibatch_size = 20;
  config.epochs = 5;
  config.num_inducing = 4;
  config.learning_rate = 1e300;  // guarantees a non-finite evaluation
  const svgpcr::TrainResult result = svgpcr::train(data.features, sim.annotations, config);
  CHECK(result.aborted_non_finite);
  CHECK(result.steps_taken < 15);
  CHECK(svgpcr::flatten_parameters({result.checkpoint.gp, result.checkpoint.crowd,
                                    result.checkpoint.responsibilities,
                                    result.checkpoint.gold_labels})
            .allFinite());
}

}  // TEST_SUITE
