#pragma once

#include "expanse/embedding/scorer.hpp"
#include "expanse/inversion/adamw.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace expanse {

struct InversionConfig {
  int steps = 1000;
  double learning_rate = 0.1;
  int batch_size = 2;
  int m = 15;
  std::string optimizer = "adamw";
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  int log_every = 1;
  /// Stop after this many steps without a better full-set projection. 0 disables.
  int plateau_patience = 0;

  void validate() const;
  AdamWConfig optimizer_config() const;
};

struct InversionResult {
  std::string inverted_prompt;  // t1
  TokenIds token_ids;
  double final_loss = 0.0;
  std::vector<std::pair<int, double>> loss_trace;  // (step, batch loss at the projected point)
  int best_step = 0;  // 0 = the initial padded prompt
  InversionConfig config;
  std::string source_prompt;  // t0
  std::vector<std::string> warnings;
};

struct StepOutcome {
  double loss = 0.0;
  TokenIds projected_ids;
};

/// One straight-through update. Projects `slots` onto the vocabulary, scores
/// the projection against the batch (loss = 1 - mean cosine), takes the
/// gradient at the projected point and applies it to the continuous slots.
/// Returns the loss evaluated before the update.
StepOutcome inversion_step(Matrix& slots, const Matrix& batch_embeddings, const Scorer& scorer,
                           AdamW& optimizer, int step_index = 0);

/// Gradient of 1 - mean_b cos(encode(projected), image_b) w.r.t. the projected slots.
Matrix inversion_gradient(const Matrix& projected, const Matrix& batch_embeddings,
                          const Scorer& scorer);

double inversion_loss(const Matrix& projected, const Matrix& batch_embeddings,
                      const Scorer& scorer);

/// Discovers the homogeneous-dimension prompt t1 for an image set.
/// `images` must carry embeddings (see embed_images()).
///
/// The returned tokens are the best projected iterate on the full image set,
/// starting from the padded t0, so t1 never scores below the initial prompt.
InversionResult run_inversion(const ImageSet& images, std::string_view t0,
                              const InversionConfig& config, const Scorer& scorer);

std::string decode_tokens(const Vocabulary& vocab, std::span<const TokenId> ids);

void to_json(nlohmann::json& j, const InversionConfig& c);
void from_json(const nlohmann::json& j, InversionConfig& c);
void to_json(nlohmann::json& j, const InversionResult& r);
void from_json(const nlohmann::json& j, InversionResult& r);

}  // namespace expanse
