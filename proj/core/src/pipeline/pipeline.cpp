#include "expanse/pipeline/pipeline.hpp"

#include "expanse/error.hpp"
#include "expanse/expansion/templates.hpp"
#include "expanse/hashing.hpp"

namespace expanse {
namespace {

using nlohmann::json;

void require_string_field(const json& p, const char* key) {
  if (!p.is_object() || !p.contains(key) || !p.at(key).is_string()) {
    fail(ErrorCode::schema, std::string("reply needs a string '") + key + "'");
  }
  if (p.at(key).get<std::string>().find_first_not_of(" \t\r\n") == std::string::npos) {
    fail(ErrorCode::schema, std::string("reply field '") + key + "' is empty");
  }
}

std::vector<std::string> paths_of(const ImageSet& images) {
  std::vector<std::string> out;
  for (const auto& p : images.images) out.push_back(p.string());
  return out;
}

std::string image_labels(const ImageSet& images) {
  std::string out;
  for (const auto& p : images.images) out += (out.empty() ? "" : ", ") + p.filename().string();
  return out;
}

}  // namespace

HdiOutcome InversionHdi::discover(const ImageSet& images, const std::string& t0,
                                  const PipelineContext& ctx) const {
  auto r = run_inversion(images, t0, config_, ctx.scorer);
  HdiOutcome out{r.inverted_prompt, std::nullopt, r.warnings};
  out.inversion = std::move(r);
  return out;
}

HdiOutcome CaptionSummarizeHdi::discover(const ImageSet& images, const std::string& t0,
                                         const PipelineContext& ctx) const {
  HdiOutcome out;
  std::vector<std::string> captions;
  for (const auto& path : images.images) {
    ImageSet one;
    one.images = {path};
    const std::string instruction =
        render_template(template_text("caption"), {{"images", path.filename().string()}});
    const json inputs = {{"task", "caption"}, {"images", {path.string()}}};
    const auto call = call_with_retry(ctx.llm, instruction, inputs,
                                      [](const json& p) { require_string_field(p, "caption"); }, retry_);
    captions.push_back(call.payload.at("caption").get<std::string>());
  }
  const std::string instruction = render_template(
      template_text("summarize_captions"), {{"t0", t0}, {"captions", json(captions).dump()}});
  const json inputs = {{"task", "summarize_captions"}, {"t0", t0}, {"captions", captions}};
  const auto call = call_with_retry(ctx.llm, instruction, inputs,
                                    [](const json& p) { require_string_field(p, "shared_traits"); }, retry_);
  out.t1 = call.payload.at("shared_traits").get<std::string>();
  return out;
}

HdiOutcome DirectVlmHdi::discover(const ImageSet& images, const std::string& t0,
                                  const PipelineContext& ctx) const {
  const std::string instruction = render_template(template_text("describe_image_set"),
                                                  {{"t0", t0}, {"images", image_labels(images)}});
  const json inputs = {{"task", "describe_image_set"}, {"t0", t0}, {"images", paths_of(images)}};
  const auto call = call_with_retry(ctx.llm, instruction, inputs,
                                    [](const json& p) { require_string_field(p, "shared_traits"); }, retry_);
  return {call.payload.at("shared_traits").get<std::string>(), std::nullopt, {}};
}

std::unique_ptr<HdiStrategy> make_hdi_strategy(const std::string& id, const InversionConfig& inversion,
                                               const RetryPolicy& retry) {
  if (id == "inversion") return std::make_unique<InversionHdi>(inversion);
  if (id == "identity") return std::make_unique<IdentityHdi>();
  if (id == "caption_summarize") return std::make_unique<CaptionSummarizeHdi>(retry);
  if (id == "direct_vlm") return std::make_unique<DirectVlmHdi>(retry);
  fail(ErrorCode::invalid_input, "unknown HDI strategy '" + id +
                                     "' (expected inversion, identity, caption_summarize or direct_vlm)");
}

std::uint64_t candidate_seed(const std::string& prompt, std::uint64_t seed_base) {
  // Kept below 2^53 so the value survives JSON consumers that use doubles.
  return mix64(fnv1a64(canonical_prompt(prompt)) ^ mix64(seed_base)) >> 11;
}

PipelineRun run_pipeline(const std::string& t0, const PipelineConfig& config, const PipelineContext& ctx,
                         const HdiStrategy& hdi, const std::optional<std::string>& preference_context) {
  return run_pipeline_from(generate(t0, config.generation, ctx.backend, ctx.store), config, ctx, hdi,
                           preference_context);
}

PipelineRun run_pipeline_from(GenerationRecord original, const PipelineConfig& config,
                              const PipelineContext& ctx, const HdiStrategy& hdi,
                              const std::optional<std::string>& preference_context) {
  if (config.images_per_selected < 1) fail(ErrorCode::invalid_input, "images_per_selected must be >= 1");
  PipelineRun run;
  run.t0 = original.prompt;
  run.hdi_strategy = hdi.id();
  original.images = embed_images(std::move(original.images), ctx.cache);
  run.original = std::move(original);

  auto discovered = hdi.discover(run.original.images, run.t0, ctx);
  run.t1 = std::move(discovered.t1);
  run.inversion = std::move(discovered.inversion);
  run.warnings.insert(run.warnings.end(), discovered.warnings.begin(), discovered.warnings.end());

  run.categorization = categorize_dimensions(run.t1, ctx.llm, config.expansion, run.t0);
  run.warnings.insert(run.warnings.end(), run.categorization.warnings.begin(),
                      run.categorization.warnings.end());
  if (run.categorization.categorization.empty()) {
    fail(ErrorCode::expansion_format, "no homogeneous dimensions could be categorized from t1 '" + run.t1 + "'");
  }

  ExpansionRequest req;
  req.t0 = run.t0;
  req.t1 = run.t1;
  req.categorization = run.categorization.categorization;
  req.pool_size = config.pool_size;
  if (preference_context && !preference_context->empty()) req.preference_context = preference_context;
  run.expansion = generate_candidates(req, ctx.llm, config.expansion);

  GenerationConfig one = config.generation;
  one.images_per_prompt = 1;
  for (auto& cand : run.expansion.candidates) {
    one.seeds = {candidate_seed(cand.prompt, config.generation.seed_base)};
    const auto rec = generate(cand.prompt, one, ctx.backend, ctx.store);
    cand.image = rec.images.images.front().string();
  }

  run.scored_pool = select(run.expansion.candidates, run.original.images, run.t0, run.t1, config.filter,
                           ctx.scorer, ctx.cache);
  run.warnings.insert(run.warnings.end(), run.scored_pool.warnings.begin(), run.scored_pool.warnings.end());

  GenerationConfig sel = config.generation;
  sel.images_per_prompt = config.images_per_selected;
  run.expanded_set.source_prompt = run.t0;
  for (int idx : run.scored_pool.selected) {
    const auto& cand = run.scored_pool.candidates[static_cast<std::size_t>(idx)];
    const auto first = candidate_seed(cand.prompt, config.generation.seed_base);
    sel.seeds.clear();
    for (int i = 0; i < config.images_per_selected; ++i) sel.seeds.push_back(first + static_cast<std::uint64_t>(i));
    auto rec = generate(cand.prompt, sel, ctx.backend, ctx.store);
    for (std::size_t i = 0; i < rec.images.size(); ++i) {
      run.expanded_set.images.push_back(rec.images.images[i]);
      run.expanded_set.seeds.push_back(rec.images.seeds[i]);
    }
    run.selected_generations.push_back(std::move(rec));
  }
  run.expanded_set = embed_images(std::move(run.expanded_set), ctx.cache);
  return run;
}

void to_json(json& j, const PipelineConfig& c) {
  j = json{{"generation", c.generation},
           {"inversion", c.inversion},
           {"pool_size", c.pool_size},
           {"filter", c.filter},
           {"images_per_selected", c.images_per_selected},
           {"expansion",
            {{"max_rounds", c.expansion.max_rounds},
             {"max_attempts", c.expansion.retry.max_attempts},
             {"backoff_ms", c.expansion.retry.backoff.count()},
             {"seed", c.expansion.seed},
             {"template_version", c.expansion.template_version}}}};
}

void from_json(const json& j, PipelineConfig& c) {
  PipelineConfig d;
  c.generation = j.value("generation", d.generation);
  c.inversion = j.value("inversion", d.inversion);
  c.pool_size = j.value("pool_size", d.pool_size);
  c.filter = j.value("filter", d.filter);
  c.images_per_selected = j.value("images_per_selected", d.images_per_selected);
  c.expansion = d.expansion;
  if (j.contains("expansion")) {
    const auto& e = j.at("expansion");
    c.expansion.max_rounds = e.value("max_rounds", d.expansion.max_rounds);
    c.expansion.retry.max_attempts = e.value("max_attempts", d.expansion.retry.max_attempts);
    c.expansion.retry.backoff = std::chrono::milliseconds(e.value("backoff_ms", 0LL));
    c.expansion.seed = e.value("seed", d.expansion.seed);
    c.expansion.template_version = e.value("template_version", d.expansion.template_version);
  }
}

void to_json(json& j, const PipelineRun& r) {
  std::vector<std::string> expanded;
  for (const auto& p : r.expanded_set.images) expanded.push_back(p.string());
  j = json{{"t0", r.t0},
           {"hdi_strategy", r.hdi_strategy},
           {"original", r.original},
           {"t1", r.t1},
           {"inversion", r.inversion ? json(*r.inversion) : json(nullptr)},
           {"categorization", r.categorization.categorization},
           {"expansion_stats",
            {{"rounds", r.expansion.rounds},
             {"retries", r.expansion.retries},
             {"rejected_original", r.expansion.rejected_original},
             {"rejected_duplicates", r.expansion.rejected_duplicates},
             {"rejected_invalid", r.expansion.rejected_invalid}}},
           {"scored_pool", r.scored_pool},
           {"selected_generations", r.selected_generations},
           {"expanded_images", expanded},
           {"expanded_seeds", r.expanded_set.seeds},
           {"warnings", r.warnings}};
}

void from_json(const json& j, PipelineRun& r) {
  r.t0 = j.at("t0").get<std::string>();
  r.hdi_strategy = j.at("hdi_strategy").get<std::string>();
  r.original = j.at("original").get<GenerationRecord>();
  r.t1 = j.at("t1").get<std::string>();
  r.inversion.reset();
  if (!j.at("inversion").is_null()) r.inversion = j.at("inversion").get<InversionResult>();
  r.categorization = CategorizationOutcome{};
  r.categorization.categorization = j.at("categorization").get<DimensionCategorization>();
  const auto& st = j.at("expansion_stats");
  r.expansion = ExpansionOutcome{};
  r.expansion.rounds = st.value("rounds", 0);
  r.expansion.retries = st.value("retries", 0);
  r.expansion.rejected_original = st.value("rejected_original", 0);
  r.expansion.rejected_duplicates = st.value("rejected_duplicates", 0);
  r.expansion.rejected_invalid = st.value("rejected_invalid", 0);
  r.scored_pool = j.at("scored_pool").get<ScoredPool>();
  r.expansion.candidates = r.scored_pool.candidates;
  r.selected_generations = j.at("selected_generations").get<std::vector<GenerationRecord>>();
  r.expanded_set = ImageSet{};
  r.expanded_set.source_prompt = r.t0;
  for (const auto& p : j.at("expanded_images")) r.expanded_set.images.emplace_back(p.get<std::string>());
  r.expanded_set.seeds = j.at("expanded_seeds").get<std::vector<std::uint64_t>>();
  r.warnings = j.value("warnings", std::vector<std::string>{});
}

}  // namespace expanse
