#include "expanse/inversion/inversion.hpp"

#include "expanse/error.hpp"
#include "expanse/hashing.hpp"

#include <cmath>
#include <numeric>
#include <random>

namespace expanse {
namespace {

Matrix require_embeddings(const ImageSet& images) {
  if (!images.embeddings) {
    fail(ErrorCode::invalid_input, "image set has no cached embeddings; call embed_images first");
  }
  if (images.embeddings->rows() != static_cast<Eigen::Index>(images.size())) {
    fail(ErrorCode::invalid_input, "image embedding rows do not match image count");
  }
  return *images.embeddings;
}

// Uniform b-of-n sample without replacement, seeded per step.
std::vector<Eigen::Index> sample_batch(Eigen::Index n, int b, std::uint64_t seed, int step) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::mt19937_64 rng(mix64(seed ^ mix64(static_cast<std::uint64_t>(step))));
  for (int i = 0; i < b; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), idx.size() - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[pick(rng)]);
  }
  idx.resize(static_cast<std::size_t>(b));
  return idx;
}

double full_set_similarity(const Scorer& scorer, const TokenIds& ids, const Matrix& images) {
  const Vector u = scorer.encode_tokens(ids);
  return (images * u).mean();
}

}  // namespace

void InversionConfig::validate() const {
  if (steps < 1) fail(ErrorCode::invalid_input, "inversion steps must be >= 1");
  if (!(learning_rate > 0.0)) fail(ErrorCode::invalid_input, "learning rate must be > 0");
  if (batch_size < 1) fail(ErrorCode::invalid_input, "batch size must be >= 1");
  if (m < 1) fail(ErrorCode::invalid_input, "slot count m must be >= 1");
  if (weight_decay < 0.0) fail(ErrorCode::invalid_input, "weight decay must be >= 0");
  if (log_every < 1) fail(ErrorCode::invalid_input, "log_every must be >= 1");
  if (plateau_patience < 0) fail(ErrorCode::invalid_input, "plateau_patience must be >= 0");
  if (optimizer != "adamw") fail(ErrorCode::invalid_input, "unsupported optimizer '" + optimizer + "'");
}

AdamWConfig InversionConfig::optimizer_config() const {
  AdamWConfig c;
  c.learning_rate = learning_rate;
  c.weight_decay = weight_decay;
  return c;
}

double inversion_loss(const Matrix& projected, const Matrix& batch_embeddings,
                      const Scorer& scorer) {
  const Vector u = scorer.encode_sequence(projected);
  return 1.0 - (batch_embeddings * u).mean();
}

Matrix inversion_gradient(const Matrix& projected, const Matrix& batch_embeddings,
                          const Scorer& scorer) {
  // dL/du = -mean_b(image_b) since u and the images are unit vectors.
  const Vector upstream = -batch_embeddings.colwise().mean().transpose();
  return scorer.sequence_vjp(projected, upstream);
}

StepOutcome inversion_step(Matrix& slots, const Matrix& batch_embeddings, const Scorer& scorer,
                           AdamW& optimizer, int step_index) {
  if (batch_embeddings.rows() == 0) fail(ErrorCode::invalid_input, "empty inversion batch");
  Projection p;
  try {
    p = project_to_vocab(slots, scorer.vocabulary());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::degenerate_projection) {
      fail(ErrorCode::numeric, "step " + std::to_string(step_index) + ": " + e.what());
    }
    throw;
  }
  const double loss = inversion_loss(p.projected, batch_embeddings, scorer);
  if (!std::isfinite(loss)) {
    fail(ErrorCode::numeric, "step " + std::to_string(step_index) + ": non-finite loss");
  }
  const Matrix grad = inversion_gradient(p.projected, batch_embeddings, scorer);
  if (!grad.allFinite()) {
    fail(ErrorCode::numeric, "step " + std::to_string(step_index) + ": non-finite gradient");
  }
  optimizer.step(slots, grad);
  if (!slots.allFinite()) {
    fail(ErrorCode::numeric, "step " + std::to_string(step_index) + ": slots became non-finite");
  }
  return {loss, std::move(p.token_ids)};
}

InversionResult run_inversion(const ImageSet& images, std::string_view t0,
                              const InversionConfig& config, const Scorer& scorer) {
  config.validate();
  const Matrix all = require_embeddings(images);
  if (all.rows() < config.batch_size) {
    fail(ErrorCode::invalid_input, "image set has " + std::to_string(all.rows()) +
                                       " images, fewer than batch size " +
                                       std::to_string(config.batch_size));
  }

  const Vocabulary& vocab = scorer.vocabulary();
  TokenEmbeddingSequence seq = tokenize_and_embed(t0, vocab, config.m, config.seed);

  InversionResult result;
  result.config = config;
  result.source_prompt = std::string(t0);
  result.warnings = seq.warnings;

  AdamW optimizer(seq.vectors.rows(), seq.vectors.cols(), config.optimizer_config());

  TokenIds best_ids = project_to_vocab(seq.vectors, vocab).token_ids;
  double best_sim = full_set_similarity(scorer, best_ids, all);
  TokenIds last_scored = best_ids;
  int since_improvement = 0;

  auto consider = [&](const TokenIds& ids, int step) {
    if (ids == last_scored) return false;
    last_scored = ids;
    const double sim = full_set_similarity(scorer, ids, all);
    if (sim > best_sim) {
      best_sim = sim;
      best_ids = ids;
      result.best_step = step;
      return true;
    }
    return false;
  };

  for (int step = 1; step <= config.steps; ++step) {
    const auto idx = sample_batch(all.rows(), config.batch_size, config.seed, step);
    Matrix batch(static_cast<Eigen::Index>(idx.size()), all.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) batch.row(static_cast<Eigen::Index>(i)) = all.row(idx[i]);

    const StepOutcome out = inversion_step(seq.vectors, batch, scorer, optimizer, step);
    if (step % config.log_every == 0 || step == 1 || step == config.steps) {
      result.loss_trace.emplace_back(step, out.loss);
    }
    const bool improved = consider(out.projected_ids, step);
    since_improvement = improved ? 0 : since_improvement + 1;
    if (config.plateau_patience > 0 && since_improvement >= config.plateau_patience) {
      result.warnings.push_back("plateau stop at step " + std::to_string(step));
      break;
    }
  }
  consider(project_to_vocab(seq.vectors, vocab).token_ids, config.steps);

  result.token_ids = best_ids;
  result.inverted_prompt = vocab.decode(best_ids);
  result.final_loss = 1.0 - best_sim;
  return result;
}

std::string decode_tokens(const Vocabulary& vocab, std::span<const TokenId> ids) {
  return vocab.decode(ids);
}

void to_json(nlohmann::json& j, const InversionConfig& c) {
  j = nlohmann::json{{"steps", c.steps},
                     {"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size},
                     {"m", c.m},
                     {"optimizer", c.optimizer},
                     {"weight_decay", c.weight_decay},
                     {"seed", c.seed},
                     {"log_every", c.log_every},
                     {"plateau_patience", c.plateau_patience}};
}

void from_json(const nlohmann::json& j, InversionConfig& c) {
  InversionConfig d;
  c.steps = j.value("steps", d.steps);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.m = j.value("m", d.m);
  c.optimizer = j.value("optimizer", d.optimizer);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.seed = j.value("seed", d.seed);
  c.log_every = j.value("log_every", d.log_every);
  c.plateau_patience = j.value("plateau_patience", d.plateau_patience);
}

void to_json(nlohmann::json& j, const InversionResult& r) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& [step, loss] : r.loss_trace) trace.push_back({{"step", step}, {"loss", loss}});
  j = nlohmann::json{{"inverted_prompt", r.inverted_prompt},
                     {"token_ids", r.token_ids},
                     {"final_loss", r.final_loss},
                     {"loss_trace", std::move(trace)},
                     {"best_step", r.best_step},
                     {"config", r.config},
                     {"source_prompt", r.source_prompt},
                     {"warnings", r.warnings}};
}

void from_json(const nlohmann::json& j, InversionResult& r) {
  r.inverted_prompt = j.at("inverted_prompt").get<std::string>();
  r.token_ids = j.at("token_ids").get<TokenIds>();
  r.final_loss = j.at("final_loss").get<double>();
  r.loss_trace.clear();
  for (const auto& e : j.at("loss_trace")) {
    r.loss_trace.emplace_back(e.at("step").get<int>(), e.at("loss").get<double>());
  }
  r.best_step = j.value("best_step", 0);
  r.config = j.at("config").get<InversionConfig>();
  r.source_prompt = j.at("source_prompt").get<std::string>();
  r.warnings = j.value("warnings", std::vector<std::string>{});
}

}  // namespace expanse
