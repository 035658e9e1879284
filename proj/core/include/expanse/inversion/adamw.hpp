#pragma once

#include "expanse/types.hpp"

namespace expanse {

struct AdamWConfig {
  double learning_rate = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

/// Adam with decoupled weight decay. Holds first/second moment state for one
/// parameter matrix.
class AdamW {
 public:
  AdamW(Eigen::Index rows, Eigen::Index cols, AdamWConfig config);

  void step(Matrix& params, const Matrix& grad);

  int steps_taken() const noexcept { return t_; }
  const AdamWConfig& config() const noexcept { return config_; }

 private:
  AdamWConfig config_;
  Matrix m_;
  Matrix v_;
  int t_ = 0;
};

}  // namespace expanse
