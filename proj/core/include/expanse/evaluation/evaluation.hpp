#pragma once

#include "expanse/pipeline/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace expanse {

/// Diversity of one image set from its unit-normalized embeddings (rows).
class DiversityMetric {
 public:
  virtual ~DiversityMetric() = default;
  virtual std::string id() const = 0;
  virtual double score(const Matrix& unit_rows) const = 0;
};

/// Intra-class average distance: mean over unordered pairs of
/// clamp((1 - cos) / 2, 0, 1). 0 for identical images, higher is more diverse.
class IcadMetric final : public DiversityMetric {
 public:
  std::string id() const override { return "icad-half-cosine-distance"; }
  double score(const Matrix& unit_rows) const override;
};

/// ICAD of the rows of `embeddings` (normalized here). Throws invalid_input for n < 2.
double icad(const Matrix& embeddings);
double icad(const ImageSet& images, EmbeddingCache& cache);

inline constexpr std::string_view kConditions[] = {"base", "poet_no_hdi", "poet", "custom"};

struct EvalRunConfig {
  std::filesystem::path prompt_source;  // one prompt per line, UTF-8
  int sample_count = 1000;
  int n = 10;  // images per prompt and per expanded set
  std::string condition = "poet";
  std::string custom_strategy = "inversion";  // HDI strategy for condition "custom"
  std::uint64_t seed = 0;
  int checkpoint_every = 25;
  std::optional<std::filesystem::path> checkpoint_dir;
  int workers = 1;
  double degraded_fraction = 0.2;
  PipelineConfig pipeline;

  void validate() const;
};

struct IcadRow {
  int index = 0;
  std::string prompt;
  int n = 0;
  std::optional<double> icad;
  std::string status = "ok";  // ok | failed
  std::string error;
};

struct IcadReport {
  std::vector<IcadRow> per_prompt;  // ordered by prompt index
  std::optional<double> aggregate;  // mean over rows with status ok
  std::string condition;
  std::string strategy;  // HDI strategy id, empty for base
  std::string scorer_model_id;
  std::string metric_id;
  int failures = 0;
  bool degraded = false;
};

/// Reads non-empty lines. Throws io when unreadable.
std::vector<std::string> load_prompts(const std::filesystem::path& file);

/// Seeded sample of `count` prompts without replacement, kept in file order.
/// Returns all prompts when count >= size.
std::vector<std::string> sample_prompts(const std::vector<std::string>& prompts, int count, std::uint64_t seed);

/// Per-prompt generation seed base and per-run seeds derived from the run seed.
std::uint64_t prompt_seed(std::uint64_t run_seed, int index);

/// Runs the configured condition for every prompt and reports ICAD. Backend
/// and model failures mark the row failed and the run continues; more than
/// degraded_fraction failures marks the report degraded. With a checkpoint
/// directory, progress is saved every checkpoint_every prompts and resumed.
IcadReport evaluate_prompts(const std::vector<std::string>& prompts, const EvalRunConfig& config,
                            const PipelineContext& ctx);

/// Loads and samples prompts from config.prompt_source, then evaluate_prompts().
IcadReport run_eval(const EvalRunConfig& config, const PipelineContext& ctx);

struct HdiComparisonRow {
  std::string strategy;
  std::optional<double> icad;
  int prompts = 0;
  int failures = 0;
  std::string status = "ok";
  std::string error;
};

struct HdiComparison {
  std::vector<HdiComparisonRow> rows;
  std::string scorer_model_id;
  std::string metric_id;
};

/// Runs the full pipeline once per strategy with everything else fixed.
/// A failing strategy gets a failed row; the others still run.
HdiComparison compare_hdi_strategies(const std::vector<std::string>& strategies,
                                     const std::vector<std::string>& prompts, const EvalRunConfig& config,
                                     const PipelineContext& ctx);

/// CSV with header prompt,condition,icad (failed rows have an empty icad).
std::string report_csv(const IcadReport& report);

void to_json(nlohmann::json& j, const IcadRow& r);
void from_json(const nlohmann::json& j, IcadRow& r);
void to_json(nlohmann::json& j, const IcadReport& r);
void from_json(const nlohmann::json& j, IcadReport& r);
void to_json(nlohmann::json& j, const HdiComparison& c);
void to_json(nlohmann::json& j, const EvalRunConfig& c);

}  // namespace expanse
