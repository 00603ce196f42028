#include "svgpcr/simulator.hpp"

#include <cmath>
#include <numeric>

namespace svgpcr {

namespace {
constexpr double kPi = 3.14159265358979323846;

// Dirichlet(1,...,1) split of `mass` over `slots` entries.
Eigen::VectorXd random_split(double mass, int slots, std::mt19937_64& rng) {
  Eigen::VectorXd g(slots);
  for (int i = 0; i < slots; ++i) {
    // -log(u) is a unit exponential; normalized exponentials are Dirichlet(1).
    double u = uniform_real(rng);
    while (u <= 0.0) u = uniform_real(rng);
    g[i] = -std::log(u);
  }
  return g * (mass / g.sum());
}

int draw_from_column(const Eigen::MatrixXd& conf, int true_class, std::mt19937_64& rng) {
  const double u = uniform_real(rng);
  double acc = 0.0;
  const int K = static_cast<int>(conf.rows());
  for (int i = 0; i < K; ++i) {
    acc += conf(i, true_class);
    if (u < acc) return i;
  }
  return K - 1;
}
}  // namespace

AnnotatorSpec AnnotatorSpec::reliable(double p, double coverage) {
  AnnotatorSpec s;
  s.kind = Kind::Reliable;
  s.p = p;
  s.coverage = coverage;
  return s;
}

AnnotatorSpec AnnotatorSpec::spammer(double coverage) {
  AnnotatorSpec s;
  s.kind = Kind::Spammer;
  s.coverage = coverage;
  return s;
}

AnnotatorSpec AnnotatorSpec::adversarial(int shift, double p, double coverage) {
  AnnotatorSpec s;
  s.kind = Kind::Adversarial;
  s.shift = shift;
  s.p = p;
  s.coverage = coverage;
  return s;
}

AnnotatorSpec AnnotatorSpec::explicit_conf(Eigen::MatrixXd matrix, double coverage) {
  AnnotatorSpec s;
  s.kind = Kind::Explicit;
  s.explicit_matrix = std::move(matrix);
  s.coverage = coverage;
  return s;
}

std::vector<AnnotatorSpec> AnnotatorSpec::benchmark_panel() {
  return {reliable(0.95), reliable(0.90), reliable(0.80), spammer(), adversarial(1, 0.90)};
}

Eigen::MatrixXd build_confusion(const AnnotatorSpec& spec, int num_classes,
                                std::mt19937_64& rng) {
  if (num_classes < 2) throw std::invalid_argument("build_confusion: need at least two classes");
  const int K = num_classes;
  switch (spec.kind) {
    case AnnotatorSpec::Kind::Spammer:
      return Eigen::MatrixXd::Constant(K, K, 1.0 / K);
    case AnnotatorSpec::Kind::Explicit: {
      const Eigen::MatrixXd& m = spec.explicit_matrix;
      if (m.rows() != K || m.cols() != K) {
        throw std::invalid_argument("build_confusion: explicit matrix must be K x K");
      }
      if ((m.array() < 0.0).any() ||
          (m.colwise().sum().array() - 1.0).abs().maxCoeff() > 1e-9) {
        throw std::invalid_argument("build_confusion: explicit matrix must be column-stochastic");
      }
      return m;
    }
    case AnnotatorSpec::Kind::Reliable: {
      if (!(spec.p > 0.0 && spec.p <= 1.0)) {
        throw std::invalid_argument("build_confusion: accuracy must lie in (0, 1]");
      }
      Eigen::MatrixXd conf(K, K);
      for (int j = 0; j < K; ++j) {
        const Eigen::VectorXd off = random_split(1.0 - spec.p, K - 1, rng);
        int slot = 0;
        for (int i = 0; i < K; ++i) conf(i, j) = (i == j) ? spec.p : off[slot++];
        conf(j, j) = 1.0 - (conf.col(j).sum() - conf(j, j));  // exact column sum 1
      }
      return conf;
    }
    case AnnotatorSpec::Kind::Adversarial: {
      if (!(spec.p > 0.0 && spec.p <= 1.0)) {
        throw std::invalid_argument("build_confusion: accuracy must lie in (0, 1]");
      }
      Eigen::MatrixXd conf(K, K);
      for (int j = 0; j < K; ++j) {
        const int target = ((j + spec.shift) % K + K) % K;
        const Eigen::VectorXd off = random_split(1.0 - spec.p, K - 1, rng);
        int slot = 0;
        for (int i = 0; i < K; ++i) conf(i, j) = (i == target) ? spec.p : off[slot++];
        conf(target, j) = 1.0 - (conf.col(j).sum() - conf(target, j));
      }
      return conf;
    }
  }
  throw std::invalid_argument("build_confusion: unknown annotator kind");
}

SimulatedAnnotations generate_annotations(const std::vector<int>& true_labels, int num_classes,
                                          const std::vector<AnnotatorSpec>& specs,
                                          std::uint64_t seed) {
  const std::int64_t N = static_cast<std::int64_t>(true_labels.size());
  if (N < 1) throw std::invalid_argument("generate_annotations: no instances");
  for (int y : true_labels) {
    if (y < 0 || y >= num_classes) {
      throw std::invalid_argument("generate_annotations: label out of range");
    }
  }
  std::mt19937_64 rng(seed);
  SimulatedAnnotations out{AnnotationSet(N, num_classes), {}};
  std::vector<std::int64_t> order(static_cast<std::size_t>(N));
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t a = 0; a < specs.size(); ++a) {
    if (!(specs[a].coverage > 0.0 && specs[a].coverage <= 1.0)) {
      throw std::invalid_argument("generate_annotations: coverage must lie in (0, 1]");
    }
    const Eigen::MatrixXd conf = build_confusion(specs[a], num_classes, rng);
    out.true_confusions.push_back(conf);
    const auto covered = static_cast<std::int64_t>(std::llround(specs[a].coverage * N));
    shuffle_inplace(order, rng);
    std::vector<std::int64_t> chosen(order.begin(), order.begin() + covered);
    std::sort(chosen.begin(), chosen.end());
    for (const std::int64_t n : chosen) {
      const int label = draw_from_column(conf, true_labels[static_cast<std::size_t>(n)], rng);
      out.annotations.add(n, static_cast<int>(a), label);
    }
    out.annotations.external_annotator_ids().push_back(static_cast<std::int64_t>(a));
  }
  return out;
}

ToyDataset make_blobs(std::int64_t n, int num_classes, int dim, std::uint64_t seed,
                      double separation) {
  if (n < num_classes) throw std::invalid_argument("make_blobs: need at least K instances");
  if (num_classes < 2 || dim < 1) throw std::invalid_argument("make_blobs: bad shape");
  if (!(separation > 0.0)) throw std::invalid_argument("make_blobs: separation must be > 0");

  Eigen::MatrixXd centers = Eigen::MatrixXd::Zero(num_classes, dim);
  if (dim == 1) {
    for (int k = 0; k < num_classes; ++k) centers(k, 0) = k * separation;
  } else {
    // circle radius making adjacent centers `separation` apart
    const double radius = separation / (2.0 * std::sin(kPi / num_classes));
    for (int k = 0; k < num_classes; ++k) {
      const double angle = 2.0 * kPi * k / num_classes;
      centers(k, 0) = radius * std::cos(angle);
      centers(k, 1) = radius * std::sin(angle);
    }
  }

  std::mt19937_64 rng(seed);
  ToyDataset ds;
  ds.features.resize(n, dim);
  ds.labels.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const int k = static_cast<int>(i % num_classes);  // balanced within 1
    ds.labels[static_cast<std::size_t>(i)] = k;
    for (int d = 0; d < dim; ++d) ds.features(i, d) = centers(k, d) + normal_draw(rng);
  }
  return ds;
}

ToyDataset make_two_moons(std::int64_t n, std::uint64_t seed, double noise) {
  if (n < 2) throw std::invalid_argument("make_two_moons: need at least two instances");
  std::mt19937_64 rng(seed);
  ToyDataset ds;
  ds.features.resize(n, 2);
  ds.labels.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const int k = static_cast<int>(i % 2);
    const double t = kPi * uniform_real(rng);
    double x = std::cos(t), y = std::sin(t);
    if (k == 1) {
      x = 1.0 - x;
      y = 0.5 - y;
    }
    ds.features(i, 0) = x + noise * normal_draw(rng);
    ds.features(i, 1) = y + noise * normal_draw(rng);
    ds.labels[static_cast<std::size_t>(i)] = k;
  }
  return ds;
}

ToyDataset make_toy_dataset(const std::string& kind, std::int64_t n, int num_classes,
                            std::uint64_t seed) {
  if (kind == "gaussians") return make_blobs(n, num_classes, 2, seed);
  if (kind == "two_moons") {
    if (num_classes != 2) {
      throw std::invalid_argument("make_toy_dataset: two_moons is a 2-class dataset");
    }
    return make_two_moons(n, seed);
  }
  throw std::invalid_argument("make_toy_dataset: unknown kind '" + kind + "'");
}

}  // namespace svgpcr
