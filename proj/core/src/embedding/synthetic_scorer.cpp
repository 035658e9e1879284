#include "expanse/embedding/synthetic_scorer.hpp"

#include "expanse/assets/builtin.hpp"
#include "expanse/embedding/mock_image.hpp"
#include "expanse/error.hpp"
#include "expanse/hashing.hpp"
#include "expanse/util/binary_io.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <random>

namespace expanse {

SyntheticScorer::SyntheticScorer(std::shared_ptr<const Vocabulary> vocab,
                                 SyntheticScorerOptions options)
    : vocab_(std::move(vocab)) {
  if (!vocab_) fail(ErrorCode::invalid_input, "synthetic scorer needs a vocabulary");
  info_.model_id = options.model_id;
  info_.text_max_tokens = options.text_max_tokens;
  info_.embedding_dim = vocab_->dim();
  if (options.mixing_seed) {
    const int d = vocab_->dim();
    std::mt19937_64 rng(*options.mixing_seed);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    Matrix w(d, d);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = normal(rng);
    mixing_ = std::move(w);
    info_.model_id += "+mix" + std::to_string(*options.mixing_seed);
  }
}

Vector SyntheticScorer::pooled(const Matrix& slots) const {
  if (slots.cols() != info_.embedding_dim) {
    fail(ErrorCode::invalid_input, "slot dimension does not match scorer dimension");
  }
  if (slots.rows() == 0) fail(ErrorCode::invalid_input, "empty slot sequence");
  Vector h = Vector::Zero(info_.embedding_dim);
  for (Eigen::Index i = 0; i < slots.rows(); ++i) {
    const double n = slots.row(i).norm();
    if (!(n > 0.0) || !std::isfinite(n)) {
      fail(ErrorCode::numeric, "slot " + std::to_string(i) + " has zero or non-finite norm");
    }
    h += slots.row(i).transpose() / n;
  }
  if (mixing_) h = (*mixing_) * h;
  return h;
}

Vector SyntheticScorer::encode_sequence(const Matrix& slots) const {
  const Vector h = pooled(slots);
  const double n = h.norm();
  if (!(n > 0.0)) fail(ErrorCode::numeric, "pooled text embedding is zero");
  return h / n;
}

Matrix SyntheticScorer::sequence_vjp(const Matrix& slots, const Vector& upstream) const {
  const Vector h = pooled(slots);
  const double hn = h.norm();
  if (!(hn > 0.0)) fail(ErrorCode::numeric, "pooled text embedding is zero");
  const Vector u = h / hn;
  // d(h/|h|)^T g = (g - (u.g) u) / |h|
  Vector g = (upstream - u.dot(upstream) * u) / hn;
  if (mixing_) g = mixing_->transpose() * g;

  Matrix grad(slots.rows(), slots.cols());
  for (Eigen::Index i = 0; i < slots.rows(); ++i) {
    const double n = slots.row(i).norm();
    const Vector e = slots.row(i).transpose() / n;
    grad.row(i) = ((g - e.dot(g) * e) / n).transpose();
  }
  return grad;
}

Vector SyntheticScorer::encode_image(const std::filesystem::path& image) const {
  std::vector<unsigned char> bytes;
  try {
    bytes = read_binary_file(image);
  } catch (const Error&) {
    fail(ErrorCode::io, "unreadable image: " + image.string());
  }
  if (auto v = decode_mock_image(bytes)) {
    if (v->size() != info_.embedding_dim) {
      fail(ErrorCode::invalid_input, "mock image " + image.string() + " has dimension " +
                                         std::to_string(v->size()) + ", scorer expects " +
                                         std::to_string(info_.embedding_dim));
    }
    return *v;
  }
  return term_vector("image:" + sha256_hex(bytes), info_.embedding_dim);
}

std::shared_ptr<const Vocabulary> default_synthetic_vocabulary(int dim) {
  static std::mutex mu;
  static std::map<int, std::shared_ptr<const Vocabulary>> built;
  std::lock_guard lock(mu);
  auto& slot = built[dim];
  if (!slot) slot = std::make_shared<const Vocabulary>(build_synthetic_vocabulary(builtin_words(), dim));
  return slot;
}

}  // namespace expanse
