#pragma once

#include "expanse/embedding/embedding_cache.hpp"
#include "expanse/expansion/expansion.hpp"
#include "expanse/filtering/filtering.hpp"
#include "expanse/generation/backend.hpp"
#include "expanse/inversion/inversion.hpp"
#include "expanse/llm/llm_client.hpp"

#include <nlohmann/json.hpp>

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace expanse {

/// Everything a pipeline run reads from. All members outlive the run.
struct PipelineContext {
  const Scorer& scorer;
  EmbeddingCache& cache;
  const GenerationBackend& backend;
  ImageStore& store;
  const LlmClient& llm;
};

struct HdiOutcome {
  std::string t1;
  std::optional<InversionResult> inversion;  // set by strategies that run prompt inversion
  std::vector<std::string> warnings;
};

/// Produces t1 (the shared-traits prompt) from an image set and t0.
class HdiStrategy {
 public:
  virtual ~HdiStrategy() = default;
  virtual std::string id() const = 0;
  /// `images` carries embeddings.
  virtual HdiOutcome discover(const ImageSet& images, const std::string& t0,
                              const PipelineContext& ctx) const = 0;
};

/// Prompt inversion against the context's scorer.
class InversionHdi final : public HdiStrategy {
 public:
  explicit InversionHdi(InversionConfig config) : config_(std::move(config)) {}
  std::string id() const override { return "inversion"; }
  HdiOutcome discover(const ImageSet& images, const std::string& t0,
                      const PipelineContext& ctx) const override;

 private:
  InversionConfig config_;
};

/// t1 = t0. Expansion then works from the prompt alone.
class IdentityHdi final : public HdiStrategy {
 public:
  std::string id() const override { return "identity"; }
  HdiOutcome discover(const ImageSet&, const std::string& t0, const PipelineContext&) const override {
    return {t0, std::nullopt, {}};
  }
};

/// Captions every image, then asks the model for the traits the captions share.
class CaptionSummarizeHdi final : public HdiStrategy {
 public:
  explicit CaptionSummarizeHdi(RetryPolicy retry = {}) : retry_(retry) {}
  std::string id() const override { return "caption_summarize"; }
  HdiOutcome discover(const ImageSet& images, const std::string& t0,
                      const PipelineContext& ctx) const override;

 private:
  RetryPolicy retry_;
};

/// Shows the whole set to a multimodal model in one request.
class DirectVlmHdi final : public HdiStrategy {
 public:
  explicit DirectVlmHdi(RetryPolicy retry = {}) : retry_(retry) {}
  std::string id() const override { return "direct_vlm"; }
  HdiOutcome discover(const ImageSet& images, const std::string& t0,
                      const PipelineContext& ctx) const override;

 private:
  RetryPolicy retry_;
};

/// Known strategy ids: inversion, identity, caption_summarize, direct_vlm.
std::unique_ptr<HdiStrategy> make_hdi_strategy(const std::string& id, const InversionConfig& inversion,
                                               const RetryPolicy& retry = {});

struct PipelineConfig {
  GenerationConfig generation;  // the original set for t0
  InversionConfig inversion;
  ExpansionOptions expansion;
  int pool_size = 30;
  FilterConfig filter;
  int images_per_selected = 1;
};

struct PipelineRun {
  std::string t0;
  std::string hdi_strategy;
  GenerationRecord original;
  std::string t1;
  std::optional<InversionResult> inversion;
  CategorizationOutcome categorization;
  ExpansionOutcome expansion;
  ScoredPool scored_pool;
  std::vector<GenerationRecord> selected_generations;
  ImageSet expanded_set;  // images of the selected prompts
  std::vector<std::string> warnings;
};

/// Seed used for a candidate's scoring image; depends only on the prompt.
std::uint64_t candidate_seed(const std::string& prompt, std::uint64_t seed_base);

/// generate -> discover t1 -> categorize -> expand -> score and select ->
/// generate images for the selected prompts.
PipelineRun run_pipeline(const std::string& t0, const PipelineConfig& config, const PipelineContext& ctx,
                         const HdiStrategy& hdi, const std::optional<std::string>& preference_context = {});

/// Same, starting from an already generated original set.
PipelineRun run_pipeline_from(GenerationRecord original, const PipelineConfig& config,
                              const PipelineContext& ctx, const HdiStrategy& hdi,
                              const std::optional<std::string>& preference_context = {});

void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);
void to_json(nlohmann::json& j, const PipelineRun& r);
void from_json(const nlohmann::json& j, PipelineRun& r);

}  // namespace expanse
