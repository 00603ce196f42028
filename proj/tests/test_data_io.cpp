#include <cstdio>
#include <fstream>
#include <set>
#include <string>

#include "doctest.h"
#include "svgpcr/data_io.hpp"
#include "test_helpers.hpp"

using svgpcr::DataError;

namespace {

std::string write_temp(const std::string& stem, const std::string& content) {
  const std::string path = testutil::unique_path(stem);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  REQUIRE(out.good());
  out << content;
  return path;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("data_io") {

TEST_CASE("feature csv with and without header") {
  const std::string with_header = write_temp("feat.csv", "x0,x1\n1,2\n3,4\n5,6\n");
  const Eigen::MatrixXd a = svgpcr::load_features(with_header);
  REQUIRE(a.rows() == 3);
  REQUIRE(a.cols() == 2);
  CHECK(a(0, 0) == 1.0);
  CHECK(a(2, 1) == 6.0);

  const std::string headerless = write_temp("feat2.csv", "1,2\n3,4\n5,6\n");
  const Eigen::MatrixXd b = svgpcr::load_features(headerless);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);

  std::remove(with_header.c_str());
  std::remove(headerless.c_str());
}

TEST_CASE("feature csv failure modes name the offending cell") {
  const std::string empty = write_temp("empty.csv", "");
  CHECK_THROWS_AS(svgpcr::load_features(empty), DataError);
  std::remove(empty.c_str());

  const std::string bad = write_temp("bad.csv", "x0,x1\n1,2\n3,oops\n");
  const std::string msg = message_of([&] { svgpcr::load_features(bad); });
  CHECK(msg.find("row 3") != std::string::npos);
  CHECK(msg.find("oops") != std::string::npos);
  std::remove(bad.c_str());

  const std::string nan_cell = write_temp("nan.csv", "x0,x1\n1,2\nnan,4\n");
  const std::string msg2 = message_of([&] { svgpcr::load_features(nan_cell); });
  CHECK(msg2.find("row 3") != std::string::npos);
  std::remove(nan_cell.c_str());

  const std::string ragged = write_temp("ragged.csv", "1,2\n3\n");
  CHECK_THROWS_AS(svgpcr::load_features(ragged), DataError);
  std::remove(ragged.c_str());
}

TEST_CASE("feature binary round trip is bitwise") {
  Eigen::MatrixXd x(3, 2);
  x << 0.1, -1.5, 3.25, 1e-17, -2.75, 9.5;
  const std::string path = testutil::unique_path("feat.bin");
  svgpcr::save_features_binary(path, x);
  const Eigen::MatrixXd back = svgpcr::load_features(path);  // format sniffed
  CHECK((x - back).cwiseAbs().maxCoeff() == 0.0);

  // Corruption in the middle trips the integrity check.
  std::string bytes = slurp(path);
  bytes[bytes.size() / 2] ^= 0x40;
  const std::string corrupt = write_temp("feat_bad.bin", bytes);
  const std::string msg = message_of([&] { svgpcr::load_features(corrupt); });
  CHECK(msg.find("integrity") != std::string::npos);

  std::remove(path.c_str());
  std::remove(corrupt.c_str());
}

TEST_CASE("annotations parse, remap annotators, and accumulate duplicates") {
  const std::string path = write_temp(
      "ann.csv", "instance_id,annotator_id,label\n0,7,1\n1,3,0\n0,7,1\n2,7,0\n");
  const svgpcr::AnnotationSet ann = svgpcr::load_annotations(path, 4);
  std::remove(path.c_str());

  CHECK(ann.num_instances() == 4);
  CHECK(ann.num_annotators() == 2);
  CHECK(ann.num_classes() == 2);  // inferred as max label + 1
  CHECK(ann.total_count() == 4);

  // External ids in first-appearance order.
  REQUIRE(ann.external_annotator_ids().size() == 2);
  CHECK(ann.external_annotator_ids()[0] == 7);
  CHECK(ann.external_annotator_ids()[1] == 3);

  // The duplicate (0, 7, 1) rows folded into one record with count 2.
  REQUIRE(ann.records(0).size() == 1);
  CHECK(ann.records(0)[0].annotator == 0);
  CHECK(ann.records(0)[0].label == 1);
  CHECK(ann.records(0)[0].count == 2);
  CHECK(ann.records(3).empty());
}

TEST_CASE("annotation failure modes") {
  const std::string negative = write_temp("ann_neg.csv", "0,0,-1\n");
  CHECK_THROWS_AS(svgpcr::load_annotations(negative, 2), DataError);
  std::remove(negative.c_str());

  const std::string dangling = write_temp("ann_dangling.csv", "5,0,1\n");
  const std::string msg = message_of([&] { svgpcr::load_annotations(dangling, 3); });
  CHECK(msg.find("instance_id 5") != std::string::npos);
  std::remove(dangling.c_str());

  const std::string high = write_temp("ann_high.csv", "0,0,3\n");
  CHECK_THROWS_AS(svgpcr::load_annotations(high, 2, 3), DataError);
  std::remove(high.c_str());
}

TEST_CASE("annotation csv round trip") {
  svgpcr::AnnotationSet ann(3, 3);
  ann.add(0, 0, 2);
  ann.add(1, 1, 0, 2);
  ann.external_annotator_ids() = {11, 4};
  const std::string path = testutil::unique_path("ann_rt.csv");
  svgpcr::save_annotations_csv(path, ann);
  const svgpcr::AnnotationSet back = svgpcr::load_annotations(path, 3, 3);
  std::remove(path.c_str());
  CHECK(back.total_count() == 3);
  CHECK(back.external_annotator_ids() == std::vector<std::int64_t>{11, 4});
  CHECK(back.records(1)[0].count == 2);
}

TEST_CASE("label files round trip and validate") {
  const std::vector<int> labels = {0, 2, 1, 1};
  const std::string path = testutil::unique_path("labels.csv");
  svgpcr::save_labels_csv(path, labels);
  CHECK(svgpcr::load_labels(path) == labels);
  CHECK_THROWS_AS(svgpcr::load_labels(path, 7), DataError);
  std::remove(path.c_str());
}

TEST_CASE("epoch sampler covers everything in uneven chunks") {
  svgpcr::MinibatchSampler sampler(5, 2, 99);
  CHECK(sampler.steps_per_epoch() == 3);
  for (int epoch = 0; epoch < 3; ++epoch) {
    const auto b1 = sampler.next();
    const auto b2 = sampler.next();
    const auto b3 = sampler.next();
    CHECK(b1.size() == 2);
    CHECK(b2.size() == 2);
    CHECK(b3.size() == 1);
    std::set<std::int64_t> seen(b1.begin(), b1.end());
    seen.insert(b2.begin(), b2.end());
    seen.insert(b3.begin(), b3.end());
    CHECK(seen == std::set<std::int64_t>{0, 1, 2, 3, 4});
  }
}

TEST_CASE("sampler determinism and state round trip") {
  svgpcr::MinibatchSampler a(50, 8, 1234);
  svgpcr::MinibatchSampler b(50, 8, 1234);
  for (int i = 0; i < 20; ++i) CHECK(a.next() == b.next());

  const svgpcr::SamplerState snap = a.state();
  std::vector<std::vector<std::int64_t>> expected;
  for (int i = 0; i < 10; ++i) expected.push_back(a.next());
  svgpcr::MinibatchSampler c(50, 8, 0);
  c.restore(snap);
  for (int i = 0; i < 10; ++i) CHECK(c.next() == expected[static_cast<std::size_t>(i)]);
}

TEST_CASE("checkpoint save-load-save is byte identical") {
  const testutil::RandomProblem p = testutil::make_random_problem(6, 3, 3, 2, 2, 77);
  svgpcr::Checkpoint ckpt;
  ckpt.config = p.config;
  ckpt.config.epochs = 17;
  ckpt.gp = p.state.gp;
  ckpt.crowd = p.state.crowd;
  ckpt.annotator_external_ids = {5, 9};
  ckpt.responsibilities = p.state.q;
  ckpt.adam.step = 12;
  ckpt.adam.first_moment = Eigen::VectorXd::LinSpaced(10, -1.0, 1.0);
  ckpt.adam.second_moment = Eigen::VectorXd::LinSpaced(10, 0.1, 2.0);
  svgpcr::MinibatchSampler sampler(6, 2, 4);
  sampler.next();
  ckpt.sampler = sampler.state();
  ckpt.steps_taken = 12;

  const std::string path1 = testutil::unique_path("ckpt1.bin");
  const std::string path2 = testutil::unique_path("ckpt2.bin");
  svgpcr::save_checkpoint(path1, ckpt);
  const svgpcr::Checkpoint loaded = svgpcr::load_checkpoint(path1);
  svgpcr::save_checkpoint(path2, loaded);
  CHECK(slurp(path1) == slurp(path2));

  CHECK(loaded.config.epochs == 17);
  CHECK(loaded.steps_taken == 12);
  CHECK(loaded.annotator_external_ids == ckpt.annotator_external_ids);
  CHECK((loaded.gp.mean - ckpt.gp.mean).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.responsibilities - ckpt.responsibilities).cwiseAbs().maxCoeff() == 0.0);
  CHECK(loaded.sampler.permutation == ckpt.sampler.permutation);
  CHECK(loaded.sampler.cursor == ckpt.sampler.cursor);
  CHECK(loaded.sampler.rng == ckpt.sampler.rng);

  // Truncation is detected.
  const std::string bytes = slurp(path1);
  const std::string cut = write_temp("ckpt_cut.bin", bytes.substr(0, bytes.size() - 10));
  const std::string msg = message_of([&] { svgpcr::load_checkpoint(cut); });
  CHECK(msg.find("integrity") != std::string::npos);

  std::remove(path1.c_str());
  std::remove(path2.c_str());
  std::remove(cut.c_str());
}

TEST_CASE("config validation") {
  svgpcr::TrainConfig config;
  config.minibatch_size = 10;
  CHECK_THROWS_AS(config.validate(5), std::invalid_argument);  // batch larger than data
  config.minibatch_size = 5;
  CHECK_NOTHROW(config.validate(5));
  config.learning_rate = 0.0;
  CHECK_THROWS_AS(config.validate(5), std::invalid_argument);
}

}  // TEST_SUITE
