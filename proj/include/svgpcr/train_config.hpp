#pragma once

#include <cstdint>
#include <stdexcept>

namespace svgpcr {

struct TrainConfig {
  int minibatch_size = 500;
  double learning_rate = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 100;
  std::uint64_t seed = 0;
  int quadrature_points = 20;
  double jitter = 1e-6;
  int num_inducing = 100;
  int eval_every = 1;  // log a term breakdown every this many steps
  double robustmax_epsilon = 1e-3;
  double prior_diag_boost = 0.0;  // extra prior mass on confusion diagonals

  void validate(std::int64_t num_instances) const {
    if (minibatch_size < 1) throw std::invalid_argument("config: minibatch_size must be >= 1");
    if (num_instances >= 0 && minibatch_size > num_instances) {
      throw std::invalid_argument("config: minibatch_size exceeds the number of instances");
    }
    if (!(learning_rate > 0.0)) throw std::invalid_argument("config: learning_rate must be > 0");
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
      throw std::invalid_argument("config: adam betas must lie in (0, 1)");
    }
    if (!(adam_eps > 0.0)) throw std::invalid_argument("config: adam_eps must be > 0");
    if (epochs < 1) throw std::invalid_argument("config: epochs must be >= 1");
    if (quadrature_points < 2 || quadrature_points > 128) {
      throw std::invalid_argument("config: quadrature_points must lie in [2, 128]");
    }
    if (!(jitter >= 0.0)) throw std::invalid_argument("config: jitter must be >= 0");
    if (num_inducing < 1) throw std::invalid_argument("config: num_inducing must be >= 1");
    if (eval_every < 1) throw std::invalid_argument("config: eval_every must be >= 1");
    if (!(robustmax_epsilon > 0.0 && robustmax_epsilon < 1.0)) {
      throw std::invalid_argument("config: robustmax_epsilon must lie in (0, 1)");
    }
    if (prior_diag_boost < 0.0) {
      throw std::invalid_argument("config: prior_diag_boost must be >= 0");
    }
  }
};

}  // namespace svgpcr
