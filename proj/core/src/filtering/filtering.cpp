#include "expanse/filtering/filtering.hpp"

#include "expanse/error.hpp"
#include "expanse/hashing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace expanse {

using nlohmann::json;

void FilterConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail(ErrorCode::invalid_input, "lambda must be >= 0");
  if (select_count < 1) fail(ErrorCode::invalid_input, "select_count must be >= 1");
  if (!(redundancy_threshold > -1.0 && redundancy_threshold <= 1.0)) {
    fail(ErrorCode::invalid_input, "redundancy threshold must lie in (-1, 1]");
  }
}

double div_score(const Scorer& scorer, const Vector& image, std::string_view t0, std::string_view t1) {
  return cosine(scorer.encode_text(t0), image) - cosine(scorer.encode_text(t1), image);
}

double filter_score(ExpansionCandidate& c, std::string_view t0, std::string_view t1,
                    const FilterConfig& config, const Scorer& scorer, EmbeddingCache& cache) {
  if (!c.image) fail(ErrorCode::invalid_state, "candidate '" + c.prompt + "' has no generated image");
  const Vector img = cache.get(*c.image);
  c.div_score = div_score(scorer, img, t0, t1);
  c.sim_score = text_text_similarity(scorer, c.prompt, t0);
  c.filter_score = *c.div_score + config.lambda * *c.sim_score;
  return *c.filter_score;
}

ScoredPool select(std::vector<ExpansionCandidate> pool, const ImageSet& original, std::string_view t0,
                  std::string_view t1, const FilterConfig& config, const Scorer& scorer,
                  EmbeddingCache& cache) {
  config.validate();
  if (static_cast<std::size_t>(config.select_count) > pool.size()) {
    fail(ErrorCode::invalid_input, "select_count " + std::to_string(config.select_count) +
                                       " exceeds pool size " + std::to_string(pool.size()));
  }
  for (const auto& c : pool) {
    if (!c.image) fail(ErrorCode::invalid_state, "candidate '" + c.prompt + "' has no generated image");
  }

  Matrix originals;
  if (original.embeddings) {
    originals = *original.embeddings;
  } else {
    originals.resize(static_cast<Eigen::Index>(original.size()), scorer.info().embedding_dim);
    for (std::size_t i = 0; i < original.size(); ++i) {
      originals.row(static_cast<Eigen::Index>(i)) = cache.get(original.images[i]).transpose();
    }
  }

  ScoredPool out;
  out.config = config;
  std::vector<int> survivors;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    auto& c = pool[i];
    filter_score(c, t0, t1, config, scorer, cache);
    const Vector img = cache.get(*c.image);
    const double closest = originals.rows() ? (originals * img).maxCoeff() : -1.0;
    if (closest >= config.redundancy_threshold) {
      out.rejected_redundant.push_back(static_cast<int>(i));
    } else {
      survivors.push_back(static_cast<int>(i));
    }
  }

  std::vector<std::string> tie_key(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) tie_key[i] = sha256_hex(std::string_view(pool[i].prompt));
  std::sort(survivors.begin(), survivors.end(), [&](int a, int b) {
    const double fa = *pool[static_cast<std::size_t>(a)].filter_score;
    const double fb = *pool[static_cast<std::size_t>(b)].filter_score;
    if (fa != fb) return fa > fb;
    const auto& ka = tie_key[static_cast<std::size_t>(a)];
    const auto& kb = tie_key[static_cast<std::size_t>(b)];
    return ka != kb ? ka < kb : a < b;
  });
  if (survivors.size() < static_cast<std::size_t>(config.select_count)) {
    out.under_selected = true;
    out.warnings.push_back("only " + std::to_string(survivors.size()) + " of " +
                           std::to_string(pool.size()) + " candidates survived redundancy filtering; " +
                           std::to_string(config.select_count) + " requested");
  } else {
    survivors.resize(static_cast<std::size_t>(config.select_count));
  }
  out.selected = std::move(survivors);
  out.candidates = std::move(pool);
  return out;
}

void to_json(json& j, const FilterConfig& c) {
  j = json{{"lambda", c.lambda}, {"select_count", c.select_count}, {"redundancy_threshold", c.redundancy_threshold}};
}

void from_json(const json& j, FilterConfig& c) {
  FilterConfig d;
  c.lambda = j.value("lambda", d.lambda);
  c.select_count = j.value("select_count", d.select_count);
  c.redundancy_threshold = j.value("redundancy_threshold", d.redundancy_threshold);
}

void to_json(json& j, const ScoredPool& p) {
  j = json{{"candidates", p.candidates},
           {"selected", p.selected},
           {"rejected_redundant", p.rejected_redundant},
           {"under_selected", p.under_selected},
           {"warnings", p.warnings},
           {"config", p.config}};
}

void from_json(const json& j, ScoredPool& p) {
  p.candidates = j.at("candidates").get<std::vector<ExpansionCandidate>>();
  p.selected = j.at("selected").get<std::vector<int>>();
  p.rejected_redundant = j.at("rejected_redundant").get<std::vector<int>>();
  p.under_selected = j.value("under_selected", false);
  p.warnings = j.value("warnings", std::vector<std::string>{});
  p.config = j.value("config", FilterConfig{});
}

}  // namespace expanse
