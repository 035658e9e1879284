#pragma once

#include "expanse/embedding/embedding_cache.hpp"
#include "expanse/expansion/expansion.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace expanse {

struct FilterConfig {
  double lambda = 0.1;
  int select_count = 10;
  double redundancy_threshold = 0.92;  // image-image cosine

  void validate() const;
};

struct ScoredPool {
  std::vector<ExpansionCandidate> candidates;  // every score populated
  std::vector<int> selected;                   // by descending filter_score
  std::vector<int> rejected_redundant;
  bool under_selected = false;
  std::vector<std::string> warnings;
  FilterConfig config;
};

/// Sim_image(t0, I) - Sim_image(t1, I) for one unit image embedding.
double div_score(const Scorer& scorer, const Vector& image_embedding, std::string_view t0,
                 std::string_view t1);

/// Fills div_score, sim_score and filter_score = Div + lambda * Sim_text(t-hat, t0)
/// on the candidate and returns the filter score. Throws invalid_state when
/// the candidate has no image.
double filter_score(ExpansionCandidate& candidate, std::string_view t0, std::string_view t1,
                    const FilterConfig& config, const Scorer& scorer, EmbeddingCache& cache);

/// Drops candidates whose image is within the redundancy threshold of any
/// original image, then keeps the top select_count by filter score. Ties go
/// to the smaller sha256 of the candidate prompt, so input order never
/// matters. Fewer survivors than select_count selects them all and sets
/// under_selected.
ScoredPool select(std::vector<ExpansionCandidate> pool, const ImageSet& original, std::string_view t0,
                  std::string_view t1, const FilterConfig& config, const Scorer& scorer,
                  EmbeddingCache& cache);

void to_json(nlohmann::json& j, const FilterConfig& c);
void from_json(const nlohmann::json& j, FilterConfig& c);
void to_json(nlohmann::json& j, const ScoredPool& p);
void from_json(const nlohmann::json& j, ScoredPool& p);

}  // namespace expanse
