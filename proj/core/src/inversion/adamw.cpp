#include "expanse/inversion/adamw.hpp"

#include "expanse/error.hpp"

#include <cmath>

namespace expanse {

AdamW::AdamW(Eigen::Index rows, Eigen::Index cols, AdamWConfig config)
    : config_(config), m_(Matrix::Zero(rows, cols)), v_(Matrix::Zero(rows, cols)) {}

void AdamW::step(Matrix& params, const Matrix& grad) {
  if (params.rows() != m_.rows() || params.cols() != m_.cols() || grad.rows() != m_.rows() ||
      grad.cols() != m_.cols()) {
    fail(ErrorCode::invalid_input, "AdamW shape mismatch");
  }
  ++t_;
  const double lr = config_.learning_rate;
  params *= 1.0 - lr * config_.weight_decay;
  m_ = config_.beta1 * m_ + (1.0 - config_.beta1) * grad;
  v_ = config_.beta2 * v_ + (1.0 - config_.beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(config_.beta1, t_);
  const double bc2 = 1.0 - std::pow(config_.beta2, t_);
  params.array() -= lr * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + config_.epsilon);
}

}  // namespace expanse
