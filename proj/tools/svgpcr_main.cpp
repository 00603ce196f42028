#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "svgpcr/data_io.hpp"
#include "svgpcr/metrics.hpp"
#include "svgpcr/simulator.hpp"
#include "svgpcr/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Removes everything this command created if it throws partway.
class OutputGuard {
 public:
  ~OutputGuard() {
    if (!armed_) return;
    for (const auto& p : paths_) {
      std::error_code ec;
      fs::remove(p, ec);
    }
  }
  std::string track(const fs::path& p) {
    paths_.push_back(p);
    return p.string();
  }
  void commit() { armed_ = false; }

 private:
  std::vector<fs::path> paths_;
  bool armed_ = true;
};

fs::path ensure_out_dir(const std::string& out_dir) {
  fs::path dir(out_dir);
  fs::create_directories(dir);
  return dir;
}

void apply_config_file(svgpcr::TrainConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw svgpcr::DataError("cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw svgpcr::DataError("config parse error in " + path + ": " + e.what());
  }
  for (const auto& [key, value] : j.items()) {
    if (key == "minibatch_size") cfg.minibatch_size = value.get<int>();
    else if (key == "learning_rate") cfg.learning_rate = value.get<double>();
    else if (key == "adam_beta1") cfg.adam_beta1 = value.get<double>();
    else if (key == "adam_beta2") cfg.adam_beta2 = value.get<double>();
    else if (key == "adam_eps") cfg.adam_eps = value.get<double>();
    else if (key == "epochs") cfg.epochs = value.get<int>();
    else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
    else if (key == "quadrature_points") cfg.quadrature_points = value.get<int>();
    else if (key == "jitter") cfg.jitter = value.get<double>();
    else if (key == "num_inducing") cfg.num_inducing = value.get<int>();
    else if (key == "eval_every") cfg.eval_every = value.get<int>();
    else if (key == "robustmax_epsilon") cfg.robustmax_epsilon = value.get<double>();
    else if (key == "prior_diag_boost") cfg.prior_diag_boost = value.get<double>();
    else throw svgpcr::DataError("unknown config key '" + key + "' in " + path);
  }
}

void write_config_echo(std::ofstream& out, const svgpcr::TrainConfig& c) {
  out << "# minibatch_size=" << c.minibatch_size << "\n"
      << "# learning_rate=" << fmt(c.learning_rate) << "\n"
      << "# adam_beta1=" << fmt(c.adam_beta1) << "\n"
      << "# adam_beta2=" << fmt(c.adam_beta2) << "\n"
      << "# adam_eps=" << fmt(c.adam_eps) << "\n"
      << "# epochs=" << c.epochs << "\n"
      << "# seed=" << c.seed << "\n"
      << "# quadrature_points=" << c.quadrature_points << "\n"
      << "# jitter=" << fmt(c.jitter) << "\n"
      << "# num_inducing=" << c.num_inducing << "\n"
      << "# eval_every=" << c.eval_every << "\n"
      << "# robustmax_epsilon=" << fmt(c.robustmax_epsilon) << "\n"
      << "# prior_diag_boost=" << fmt(c.prior_diag_boost) << "\n";
}

svgpcr::AnnotatorSpec parse_annotator_spec(const std::string& text) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : text) {
    if (c == ':') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(cur);
  const auto want = [&](std::size_t lo, std::size_t hi) {
    if (parts.size() < lo || parts.size() > hi) {
      throw CLI::ValidationError("--annotator", "bad annotator spec '" + text + "'");
    }
  };
  try {
    if (parts[0] == "reliable") {
      want(2, 3);
      return svgpcr::AnnotatorSpec::reliable(std::stod(parts[1]),
                                             parts.size() > 2 ? std::stod(parts[2]) : 1.0);
    }
    if (parts[0] == "spammer") {
      want(1, 2);
      return svgpcr::AnnotatorSpec::spammer(parts.size() > 1 ? std::stod(parts[1]) : 1.0);
    }
    if (parts[0] == "adversarial") {
      want(3, 4);
      return svgpcr::AnnotatorSpec::adversarial(std::stoi(parts[1]), std::stod(parts[2]),
                                                parts.size() > 3 ? std::stod(parts[3]) : 1.0);
    }
  } catch (const std::invalid_argument&) {
    throw CLI::ValidationError("--annotator", "bad number in annotator spec '" + text + "'");
  }
  throw CLI::ValidationError("--annotator", "unknown annotator kind in '" + text +
                                                "' (reliable | spammer | adversarial)");
}

void write_training_outputs(const fs::path& dir, OutputGuard& guard,
                            const svgpcr::TrainResult& result, const svgpcr::TrainConfig& cfg) {
  {
    std::ofstream log(guard.track(dir / "training_log.csv"), std::ios::trunc);
    if (!log) throw svgpcr::DataError("cannot write training log");
    write_config_echo(log, cfg);
    log << "step,scale,annotation,likelihood,entropy,gaussian_kl,dirichlet_kl,elbo\n";
    for (const auto& row : result.log) {
      const auto& b = row.breakdown;
      log << row.step << "," << fmt(b.scale) << "," << fmt(b.annotation) << ","
          << fmt(b.likelihood) << "," << fmt(b.entropy) << "," << fmt(b.gaussian_kl) << ","
          << fmt(b.dirichlet_kl) << "," << fmt(b.total()) << "\n";
    }
  }
  {
    // Wall-clock sidecar; the only output that differs between reruns.
    std::ofstream timing(guard.track(dir / "timing.csv"), std::ios::trunc);
    timing << "step,elapsed_seconds\n";
    for (const auto& row : result.log) {
      timing << row.step << "," << fmt(row.elapsed_seconds) << "\n";
    }
  }
  svgpcr::save_checkpoint(guard.track(dir / "checkpoint.bin"), result.checkpoint);

  const Eigen::MatrixXd& q = result.checkpoint.responsibilities;
  std::vector<std::string> cols;
  for (Eigen::Index k = 0; k < q.cols(); ++k) cols.push_back("q" + std::to_string(k));
  svgpcr::save_matrix_csv(guard.track(dir / "reconstruction.csv"), q, cols);
}

int cmd_simulate(const std::string& out_dir, std::uint64_t seed, std::int64_t n, int num_classes,
                 int dim, const std::string& kind, double separation,
                 const std::vector<std::string>& annotator_texts) {
  std::vector<svgpcr::AnnotatorSpec> specs;
  if (annotator_texts.empty()) {
    specs = svgpcr::AnnotatorSpec::benchmark_panel();
  } else {
    for (const auto& text : annotator_texts) specs.push_back(parse_annotator_spec(text));
  }

  svgpcr::ToyDataset data;
  if (kind == "gaussians") {
    data = svgpcr::make_blobs(n, num_classes, dim, seed, separation);
  } else {
    data = svgpcr::make_toy_dataset(kind, n, num_classes, seed);
  }
  const svgpcr::SimulatedAnnotations sim =
      svgpcr::generate_annotations(data.labels, num_classes, specs, seed + 1);

  const fs::path dir = ensure_out_dir(out_dir);
  OutputGuard guard;
  svgpcr::save_features_csv(guard.track(dir / "features.csv"), data.features);
  svgpcr::save_annotations_csv(guard.track(dir / "annotations.csv"), sim.annotations);
  svgpcr::save_labels_csv(guard.track(dir / "truth.csv"), data.labels);
  {
    std::ofstream out(guard.track(dir / "true_confusions.csv"), std::ios::trunc);
    if (!out) throw svgpcr::DataError("cannot write true_confusions.csv");
    out << "annotator_id,row,col,value\n";
    for (std::size_t a = 0; a < sim.true_confusions.size(); ++a) {
      const auto& m = sim.true_confusions[a];
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
          out << a << "," << i << "," << j << "," << fmt(m(i, j)) << "\n";
        }
      }
    }
  }
  guard.commit();
  std::cout << "wrote " << n << " instances, " << sim.annotations.total_count()
            << " annotations to " << dir.string() << "\n";
  return 0;
}

int cmd_train(const std::string& features_path, const std::string& annotations_path,
              const std::string& gold_path, const std::string& resume_path,
              const std::string& out_dir, int num_classes, const svgpcr::TrainConfig& cfg) {
  const Eigen::MatrixXd X = svgpcr::load_features(features_path);
  const fs::path dir = ensure_out_dir(out_dir);
  OutputGuard guard;

  svgpcr::TrainResult result;
  if (!resume_path.empty()) {
    svgpcr::Checkpoint ckpt = svgpcr::load_checkpoint(resume_path);
    ckpt.config.epochs = cfg.epochs;  // allow extending a finished run
    if (!ckpt.gold_labels.empty()) {
      result = svgpcr::resume(ckpt, X, svgpcr::AnnotationSet(X.rows(), ckpt.gp.num_classes()));
    } else {
      const svgpcr::AnnotationSet ann =
          svgpcr::load_annotations(annotations_path, X.rows(), ckpt.crowd.num_classes());
      result = svgpcr::resume(ckpt, X, ann);
    }
    write_training_outputs(dir, guard, result, ckpt.config);
  } else if (!gold_path.empty()) {
    const std::vector<int> labels = svgpcr::load_labels(gold_path, X.rows());
    int k = num_classes;
    if (k < 0) k = *std::max_element(labels.begin(), labels.end()) + 1;
    result = svgpcr::train_gold(X, labels, std::max(k, 2), cfg);
    write_training_outputs(dir, guard, result, cfg);
  } else {
    if (annotations_path.empty()) {
      throw svgpcr::DataError("train needs --annotations (or --gold-labels)");
    }
    const svgpcr::AnnotationSet ann =
        svgpcr::load_annotations(annotations_path, X.rows(), num_classes);
    result = svgpcr::train(X, ann, cfg);
    write_training_outputs(dir, guard, result, cfg);
  }
  guard.commit();

  if (result.aborted_non_finite) {
    std::cerr << "training aborted at step " << result.steps_taken
              << " on a non-finite value; last finite state checkpointed\n";
    return 1;
  }
  std::cout << "trained " << result.steps_taken << " steps; outputs in " << dir.string() << "\n";
  return 0;
}

int cmd_predict(const std::string& checkpoint_path, const std::string& features_path,
                const std::string& out_dir) {
  const svgpcr::Checkpoint ckpt = svgpcr::load_checkpoint(checkpoint_path);
  const Eigen::MatrixXd X = svgpcr::load_features(features_path);
  if (X.cols() != ckpt.gp.input_dim()) {
    throw svgpcr::DataError("checkpoint expects D=" + std::to_string(ckpt.gp.input_dim()) +
                            " but features have D=" + std::to_string(X.cols()));
  }
  const Eigen::MatrixXd probs = svgpcr::predict_probs(
      ckpt.gp, X, ckpt.config.robustmax_epsilon, ckpt.config.quadrature_points);

  const fs::path dir = ensure_out_dir(out_dir);
  OutputGuard guard;
  std::vector<std::string> cols;
  for (Eigen::Index k = 0; k < probs.cols(); ++k) cols.push_back("p" + std::to_string(k));
  svgpcr::save_matrix_csv(guard.track(dir / "predictions.csv"), probs, cols);
  guard.commit();
  std::cout << "wrote predictions for " << probs.rows() << " instances\n";
  return 0;
}

int cmd_evaluate(const std::string& predictions_path, const std::string& truth_path,
                 const std::string& out_dir) {
  const Eigen::MatrixXd probs = svgpcr::load_features_csv(predictions_path);
  const std::vector<int> truth = svgpcr::load_labels(truth_path, probs.rows());

  const svgpcr::ClassifierScore acc = svgpcr::accuracy(probs, truth);
  const svgpcr::ClassifierScore lik = svgpcr::mean_likelihood(probs, truth);
  const double mll = svgpcr::mean_log_likelihood(probs, truth);

  const fs::path dir = ensure_out_dir(out_dir);
  OutputGuard guard;
  std::ofstream out(guard.track(dir / "metrics.csv"), std::ios::trunc);
  if (!out) throw svgpcr::DataError("cannot write metrics.csv");
  out << "metric,class,value\n";
  out << "accuracy,global," << fmt(acc.global) << "\n";
  for (Eigen::Index k = 0; k < acc.per_class.size(); ++k) {
    out << "accuracy," << k << "," << fmt(acc.per_class[k]) << "\n";
  }
  out << "mean_likelihood,global," << fmt(lik.global) << "\n";
  for (Eigen::Index k = 0; k < lik.per_class.size(); ++k) {
    out << "mean_likelihood," << k << "," << fmt(lik.per_class[k]) << "\n";
  }
  out << "mean_log_likelihood,global," << fmt(mll) << "\n";
  if (probs.cols() == 2) {
    out << "auc,global," << fmt(svgpcr::auc(probs.col(1), truth)) << "\n";
  }
  guard.commit();
  std::cout << "accuracy " << acc.global << ", mean likelihood " << lik.global << "\n";
  return 0;
}

int cmd_inspect(const std::string& checkpoint_path, const std::string& out_dir) {
  const svgpcr::Checkpoint ckpt = svgpcr::load_checkpoint(checkpoint_path);
  const fs::path dir = ensure_out_dir(out_dir);
  OutputGuard guard;
  std::ofstream out(guard.track(dir / "annotators.csv"), std::ios::trunc);
  if (!out) throw svgpcr::DataError("cannot write annotators.csv");
  out << "annotator_id,row,col,posterior_mean,posterior_variance\n";
  for (int a = 0; a < ckpt.crowd.num_annotators(); ++a) {
    const std::int64_t ext = a < static_cast<int>(ckpt.annotator_external_ids.size())
                                 ? ckpt.annotator_external_ids[a]
                                 : a;
    const Eigen::MatrixXd mean = ckpt.crowd.posterior_mean(a);
    const Eigen::MatrixXd var = ckpt.crowd.posterior_variance(a);
    for (Eigen::Index i = 0; i < mean.rows(); ++i) {
      for (Eigen::Index j = 0; j < mean.cols(); ++j) {
        out << ext << "," << i << "," << j << "," << fmt(mean(i, j)) << "," << fmt(var(i, j))
            << "\n";
      }
    }
  }
  guard.commit();
  std::cout << "wrote posteriors for " << ckpt.crowd.num_annotators() << " annotators\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sparse variational GP classifier trained from crowdsourced labels"};
  app.require_subcommand(1);

  // shared options
  std::string features, annotations, config_path, out_dir, checkpoint, gold, predictions, truth;
  std::uint64_t seed = 0;
  int num_classes = -1;

  // simulate
  auto* sim = app.add_subcommand("simulate", "generate a synthetic crowdsourced dataset");
  std::int64_t sim_n = 2000;
  int sim_d = 2;
  std::string sim_kind = "gaussians";
  double sim_sep = 6.0;
  std::vector<std::string> sim_annotators;
  sim->add_option("--out-dir", out_dir)->required();
  sim->add_option("--seed", seed);
  sim->add_option("--n", sim_n, "number of instances");
  sim->add_option("--num-classes", num_classes, "number of classes (default 5)");
  sim->add_option("--d", sim_d, "feature dimension");
  sim->add_option("--kind", sim_kind, "gaussians | two_moons");
  sim->add_option("--separation", sim_sep, "blob center separation in noise units");
  sim->add_option("--annotator", sim_annotators,
                  "repeatable: reliable:p[:coverage] | spammer[:coverage] | "
                  "adversarial:shift:p[:coverage]; default is the five-annotator panel");

  // train
  auto* tr = app.add_subcommand("train", "fit the model to features + annotations");
  svgpcr::TrainConfig flag_cfg;
  tr->add_option("--features", features)->required();
  tr->add_option("--annotations", annotations);
  tr->add_option("--config", config_path, "JSON config; explicit flags win");
  tr->add_option("--seed", seed);
  tr->add_option("--out-dir", out_dir)->required();
  tr->add_option("--num-classes", num_classes);
  tr->add_option("--checkpoint", checkpoint, "resume from this checkpoint");
  tr->add_option("--gold-labels", gold, "train on true labels (no crowd layer)");
  tr->add_option("--epochs", flag_cfg.epochs);
  tr->add_option("--minibatch-size", flag_cfg.minibatch_size);
  tr->add_option("--learning-rate", flag_cfg.learning_rate);
  tr->add_option("--num-inducing", flag_cfg.num_inducing);
  tr->add_option("--quadrature-points", flag_cfg.quadrature_points);
  tr->add_option("--jitter", flag_cfg.jitter);
  tr->add_option("--eval-every", flag_cfg.eval_every);
  tr->add_option("--robustmax-epsilon", flag_cfg.robustmax_epsilon);
  tr->add_option("--prior-diag-boost", flag_cfg.prior_diag_boost);

  // predict
  auto* pr = app.add_subcommand("predict", "class probabilities from a checkpoint");
  pr->add_option("--checkpoint", checkpoint)->required();
  pr->add_option("--features", features)->required();
  pr->add_option("--out-dir", out_dir)->required();

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score predictions against true labels");
  ev->add_option("--predictions", predictions)->required();
  ev->add_option("--truth", truth)->required();
  ev->add_option("--out-dir", out_dir)->required();

  // inspect-annotators
  auto* ia = app.add_subcommand("inspect-annotators",
                                "posterior mean and variance of each confusion matrix");
  ia->add_option("--checkpoint", checkpoint)->required();
  ia->add_option("--out-dir", out_dir)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      return cmd_simulate(out_dir, seed, sim_n, num_classes < 0 ? 5 : num_classes, sim_d,
                          sim_kind, sim_sep, sim_annotators);
    }
    if (tr->parsed()) {
      svgpcr::TrainConfig cfg;
      if (!config_path.empty()) apply_config_file(cfg, config_path);
      // explicit flags override the file
      if (tr->count("--epochs")) cfg.epochs = flag_cfg.epochs;
      if (tr->count("--minibatch-size")) cfg.minibatch_size = flag_cfg.minibatch_size;
      if (tr->count("--learning-rate")) cfg.learning_rate = flag_cfg.learning_rate;
      if (tr->count("--num-inducing")) cfg.num_inducing = flag_cfg.num_inducing;
      if (tr->count("--quadrature-points")) cfg.quadrature_points = flag_cfg.quadrature_points;
      if (tr->count("--jitter")) cfg.jitter = flag_cfg.jitter;
      if (tr->count("--eval-every")) cfg.eval_every = flag_cfg.eval_every;
      if (tr->count("--robustmax-epsilon")) cfg.robustmax_epsilon = flag_cfg.robustmax_epsilon;
      if (tr->count("--prior-diag-boost")) cfg.prior_diag_boost = flag_cfg.prior_diag_boost;
      if (tr->count("--seed")) cfg.seed = seed;
      return cmd_train(features, annotations, gold, checkpoint, out_dir, num_classes, cfg);
    }
    if (pr->parsed()) return cmd_predict(checkpoint, features, out_dir);
    if (ev->parsed()) return cmd_evaluate(predictions, truth, out_dir);
    if (ia->parsed()) return cmd_inspect(checkpoint, out_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
