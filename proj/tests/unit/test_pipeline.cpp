#include "support/stack.hpp"

#include "expanse/evaluation/evaluation.hpp"
#include "expanse/pipeline/pipeline.hpp"

#include <gtest/gtest.h>

using namespace expanse;
using namespace expanse::testing;
using json = nlohmann::json;

namespace {

const std::string kT0 = "An ancient artist is composing a piece of work";

// Forwards to another client and keeps every instruction it saw.
class RecordingLlm final : public LlmClient {
 public:
  explicit RecordingLlm(const LlmClient& inner) : inner_(inner) {}
  std::string id() const override { return "recording"; }
  json call(std::string_view instruction, const json& inputs) const override {
    std::lock_guard lock(mu_);
    seen.emplace_back(instruction);
    tasks.push_back(inputs.value("task", ""));
    return inner_.call(instruction, inputs);
  }
  mutable std::vector<std::string> seen, tasks;

 private:
  const LlmClient& inner_;
  mutable std::mutex mu_;
};

}  // namespace

TEST(Pipeline, InversionRunHasEveryStage) {
  MockStack s("pipe-full");
  const auto cfg = quick_pipeline(6, 12, 4);
  const auto hdi = make_hdi_strategy("inversion", cfg.inversion);
  const auto run = run_pipeline(kT0, cfg, s.context(), *hdi);
  EXPECT_EQ(run.hdi_strategy, "inversion");
  EXPECT_EQ(run.original.images.size(), 6u);
  ASSERT_TRUE(run.inversion);
  EXPECT_EQ(run.t1, run.inversion->inverted_prompt);
  EXPECT_FALSE(run.categorization.categorization.empty());
  EXPECT_EQ(run.expansion.candidates.size(), 12u);
  EXPECT_EQ(run.scored_pool.selected.size(), 4u);
  ASSERT_EQ(run.selected_generations.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& cand = run.scored_pool.candidates[static_cast<std::size_t>(run.scored_pool.selected[i])];
    EXPECT_EQ(run.selected_generations[i].prompt, cand.prompt);
    EXPECT_TRUE(cand.image);
  }
  ASSERT_EQ(run.expanded_set.size(), 4u);
  ASSERT_TRUE(run.expanded_set.embeddings);
  EXPECT_EQ(run.expanded_set.embeddings->rows(), 4);
}

TEST(Pipeline, DeterministicAcrossFreshStacks) {
  MockStack a("pipe-det-a"), b("pipe-det-b");
  const auto cfg = quick_pipeline();
  const auto hdi = make_hdi_strategy("inversion", cfg.inversion);
  const auto ra = run_pipeline(kT0, cfg, a.context(), *hdi);
  const auto rb = run_pipeline(kT0, cfg, b.context(), *hdi);
  EXPECT_EQ(ra.t1, rb.t1);
  EXPECT_EQ(ra.inversion->token_ids, rb.inversion->token_ids);
  EXPECT_EQ(ra.scored_pool.selected, rb.scored_pool.selected);
  ASSERT_EQ(ra.selected_generations.size(), rb.selected_generations.size());
  for (std::size_t i = 0; i < ra.selected_generations.size(); ++i)
    EXPECT_EQ(ra.selected_generations[i].content_hashes, rb.selected_generations[i].content_hashes);
  EXPECT_EQ(icad(*ra.expanded_set.embeddings), icad(*rb.expanded_set.embeddings));
}

TEST(Pipeline, IdentityStrategyUsesThePromptAsT1) {
  MockStack s("pipe-identity");
  const auto cfg = quick_pipeline();
  const auto run = run_pipeline(kT0, cfg, s.context(), IdentityHdi());
  EXPECT_EQ(run.t1, kT0);
  EXPECT_FALSE(run.inversion);
}

TEST(Pipeline, BaselineStrategiesAskTheModel) {
  MockStack s("pipe-baselines");
  const auto cfg = quick_pipeline();
  RecordingLlm rec(s.llm);
  PipelineContext ctx{*s.scorer, s.cache, s.backend, s.store, rec};
  const auto cap = run_pipeline(kT0, cfg, ctx, CaptionSummarizeHdi());
  EXPECT_EQ(std::count(rec.tasks.begin(), rec.tasks.end(), "caption"), 4);
  EXPECT_EQ(std::count(rec.tasks.begin(), rec.tasks.end(), "summarize_captions"), 1);
  EXPECT_FALSE(cap.t1.empty());
  rec.tasks.clear();
  const auto vlm = run_pipeline(kT0, cfg, ctx, DirectVlmHdi());
  EXPECT_EQ(std::count(rec.tasks.begin(), rec.tasks.end(), "describe_image_set"), 1);
  EXPECT_FALSE(vlm.t1.empty());
  EXPECT_EQ(thrown_code([&] { make_hdi_strategy("telepathy", cfg.inversion); }), ErrorCode::invalid_input);
}

TEST(Pipeline, PreferenceContextReachesTheExpansionInstruction) {
  MockStack s("pipe-context");
  RecordingLlm rec(s.llm);
  PipelineContext ctx{*s.scorer, s.cache, s.backend, s.store, rec};
  const std::string context = "User preference profile from earlier rounds.\nFocus categories: age (attributes, 2)\n";
  run_pipeline(kT0, quick_pipeline(), ctx, IdentityHdi(), context);
  bool found = false;
  for (std::size_t i = 0; i < rec.seen.size(); ++i)
    if (rec.tasks[i] == "expand") found |= rec.seen[i].rfind(context, 0) == 0;
  EXPECT_TRUE(found);
}

TEST(Pipeline, MissingFixtureSurfaces) {
  MockStack s("pipe-missing");
  ScriptedLlm empty;
  PipelineContext ctx{*s.scorer, s.cache, s.backend, s.store, empty};
  EXPECT_EQ(thrown_code([&] { run_pipeline(kT0, quick_pipeline(), ctx, IdentityHdi()); }),
            ErrorCode::missing_fixture);
}

TEST(Pipeline, CandidateSeedDependsOnlyOnPromptAndBase) {
  EXPECT_EQ(candidate_seed("A lynx.", 3), candidate_seed("a lynx", 3));
  EXPECT_NE(candidate_seed("a lynx", 3), candidate_seed("a lynx", 4));
  EXPECT_NE(candidate_seed("a lynx", 3), candidate_seed("a tiger", 3));
}

TEST(Pipeline, JsonRoundTrip) {
  MockStack s("pipe-json");
  const auto cfg = quick_pipeline();
  const auto run = run_pipeline(kT0, cfg, s.context(), IdentityHdi());
  const auto back = json(run).get<PipelineRun>();
  EXPECT_EQ(json(back).dump(), json(run).dump());
  const auto cback = json(cfg).get<PipelineConfig>();
  EXPECT_EQ(json(cback).dump(), json(cfg).dump());
}
