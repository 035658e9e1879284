#include "support/stack.hpp"

#include "expanse/assets/builtin.hpp"
#include "expanse/evaluation/evaluation.hpp"
#include "expanse/util/binary_io.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace expanse;
using namespace expanse::testing;
using json = nlohmann::json;

namespace {

double oracle_icad(const std::vector<std::vector<double>>& rows) {
  double sum = 0;
  int pairs = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      double dot = 0, ni = 0, nj = 0;
      for (std::size_t k = 0; k < rows[i].size(); ++k) {
        dot += rows[i][k] * rows[j][k];
        ni += rows[i][k] * rows[i][k];
        nj += rows[j][k] * rows[j][k];
      }
      sum += std::clamp((1.0 - dot / std::sqrt(ni * nj)) / 2.0, 0.0, 1.0);
      ++pairs;
    }
  }
  return sum / pairs;
}

EvalRunConfig quick_eval(const std::string& condition, int n = 4) {
  EvalRunConfig c;
  c.condition = condition;
  c.n = n;
  c.seed = 11;
  c.pipeline = quick_pipeline(n, 10, n);
  return c;
}

std::vector<std::string> first_prompts(std::size_t k) {
  return {fixture_prompts().begin(), fixture_prompts().begin() + static_cast<std::ptrdiff_t>(k)};
}

// Fails every render whose prompt contains a marker word.
class PickyBackend final : public GenerationBackend {
 public:
  explicit PickyBackend(std::string marker) : marker_(std::move(marker)) {}
  std::string id() const override { return "picky"; }
  std::vector<unsigned char> render(const std::string& prompt, std::uint64_t seed,
                                    const GenerationConfig& config) const override {
    if (prompt.find(marker_) != std::string::npos) fail(ErrorCode::transport, "backend down");
    return inner_.render(prompt, seed, config);
  }

 private:
  std::string marker_;
  MockBackend inner_;
};

}  // namespace

TEST(Icad, IdenticalImagesScoreZero) {
  Matrix m(4, 8);
  for (int i = 0; i < 4; ++i) m.row(i) = Eigen::RowVectorXd::LinSpaced(8, 1, 8);
  EXPECT_EQ(icad(m), 0.0);
}

TEST(Icad, OrthogonalPairScoresHalf) {
  Matrix m = Matrix::Zero(2, 3);
  m(0, 0) = 1;
  m(1, 1) = 2;
  EXPECT_DOUBLE_EQ(icad(m), 0.5);
  m(1, 1) = 0;
  m(1, 0) = -3;
  EXPECT_DOUBLE_EQ(icad(m), 1.0);
}

TEST(Icad, MatchesPairwiseOracleOnRandomFixtures) {
  for (int n = 2; n <= 20; n += 3) {
    const auto rows = random_rows(n, 16, static_cast<std::uint64_t>(n));
    EXPECT_NEAR(icad(to_matrix(rows)), oracle_icad(rows), 1e-9) << n;
  }
}

TEST(Icad, FewerThanTwoImagesIsInvalid) {
  EXPECT_EQ(thrown_code([] { icad(Matrix::Ones(1, 4)); }), ErrorCode::invalid_input);
}

TEST(Icad, BoundedAndPermutationInvariant) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto rows = random_rows(7, 5, static_cast<std::uint64_t>(100 + trial));
    const double v = icad(to_matrix(rows));
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    std::shuffle(rows.begin(), rows.end(), rng);
    EXPECT_NEAR(icad(to_matrix(rows)), v, 1e-12);
  }
}

TEST(Icad, AppendingDuplicateFollowsClosedForm) {
  // With S the pairwise sum over n images and D_k image k's distance sum to the
  // others, appending a copy of k gives (S + D_k) / (P + n). That is below the
  // old mean exactly when D_k / n < S / P, which always holds for the image
  // closest to the rest.
  for (int trial = 0; trial < 20; ++trial) {
    const auto rows = random_rows(6, 4, static_cast<std::uint64_t>(200 + trial));
    const double before = oracle_icad(rows);
    const int n = 6, pairs = n * (n - 1) / 2;
    std::vector<double> dk(n, 0.0);
    for (int k = 0; k < n; ++k)
      for (int j = 0; j < n; ++j)
        if (j != k) dk[k] += oracle_icad({rows[k], rows[j]});
    for (int k = 0; k < n; ++k) {
      auto dup = rows;
      dup.push_back(rows[static_cast<std::size_t>(k)]);
      const double after = icad(to_matrix(dup));
      EXPECT_NEAR(after, (before * pairs + dk[k]) / (pairs + n), 1e-12);
    }
    const int central = static_cast<int>(std::min_element(dk.begin(), dk.end()) - dk.begin());
    auto dup = rows;
    dup.push_back(rows[static_cast<std::size_t>(central)]);
    EXPECT_LT(icad(to_matrix(dup)), before);
  }
}

TEST(Icad, ImageSetThroughCache) {
  MockStack s("icad-set");
  GenerationConfig g;
  g.images_per_prompt = 5;
  const auto rec = generate("a lantern in fog", g, s.backend, s.store);
  std::vector<std::vector<double>> rows;
  for (const auto& p : rec.images.images) {
    const Vector v = s.scorer->embed_image(p);
    rows.emplace_back(v.data(), v.data() + v.size());
  }
  EXPECT_NEAR(icad(rec.images, s.cache), oracle_icad(rows), 1e-9);
}

TEST(Prompts, LoadAndSample) {
  const auto dir = temp_dir("prompts");
  write_file_atomic(dir / "p.txt", std::string("one\n\ntwo\r\nthree\nfour\n"));
  const auto all = load_prompts(dir / "p.txt");
  EXPECT_EQ(all, (std::vector<std::string>{"one", "two", "three", "four"}));
  const auto s = sample_prompts(all, 2, 9);
  EXPECT_EQ(s.size(), 2u);
  EXPECT_EQ(s, sample_prompts(all, 2, 9));
  EXPECT_LT(std::find(all.begin(), all.end(), s[0]), std::find(all.begin(), all.end(), s[1]));
  EXPECT_EQ(sample_prompts(all, 10, 1), all);
  EXPECT_EQ(thrown_code([&] { load_prompts(dir / "missing.txt"); }), ErrorCode::io);
}

TEST(Evaluate, BaseWithZeroNoiseScoresZero) {
  MockStack s("eval-zero", MockEmbeddingOptions{1024, 0.0, 1.0});
  const auto report = evaluate_prompts(first_prompts(3), quick_eval("base"), s.context());
  ASSERT_TRUE(report.aggregate);
  EXPECT_EQ(*report.aggregate, 0.0);
  EXPECT_EQ(report.per_prompt.size(), 3u);
  EXPECT_EQ(report.metric_id, "icad-half-cosine-distance");
}

TEST(Evaluate, AggregateIsMeanOfRowsAndRowsAreBounded) {
  MockStack s("eval-mean");
  const auto report = evaluate_prompts(first_prompts(4), quick_eval("poet_no_hdi"), s.context());
  double sum = 0;
  for (const auto& r : report.per_prompt) {
    ASSERT_EQ(r.status, "ok") << r.error;
    EXPECT_GE(*r.icad, 0.0);
    EXPECT_LE(*r.icad, 1.0);
    EXPECT_EQ(r.n, 4);
    sum += *r.icad;
  }
  EXPECT_NEAR(*report.aggregate, sum / 4, 1e-12);
  EXPECT_EQ(report.strategy, "identity");
}

TEST(Evaluate, FailuresAreRecordedAndDegradeTheRun) {
  MockStack s("eval-fail");
  PickyBackend picky(fixture_prompts()[1]);
  PipelineContext ctx{*s.scorer, s.cache, picky, s.store, s.llm};
  const auto report = evaluate_prompts(first_prompts(3), quick_eval("base"), ctx);
  EXPECT_EQ(report.failures, 1);
  EXPECT_TRUE(report.degraded);  // 1 of 3 > 20%
  EXPECT_EQ(report.per_prompt[1].status, "failed");
  EXPECT_FALSE(report.per_prompt[1].icad);
  EXPECT_NE(report.per_prompt[1].error.find("backend down"), std::string::npos);
  EXPECT_NEAR(*report.aggregate, (*report.per_prompt[0].icad + *report.per_prompt[2].icad) / 2, 1e-12);
  const auto csv = report_csv(report);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "prompt,condition,icad");
}

TEST(Evaluate, CheckpointResumesWithoutRecomputing) {
  MockStack s("eval-ckpt");
  auto cfg = quick_eval("base");
  cfg.checkpoint_dir = s.dir / "ckpt";
  cfg.checkpoint_every = 1;
  const auto first = evaluate_prompts(first_prompts(3), cfg, s.context());
  ASSERT_TRUE(std::filesystem::exists(*cfg.checkpoint_dir / "checkpoint.json"));
  // A backend that always fails proves resumed rows are not recomputed.
  PickyBackend down("");
  PipelineContext ctx{*s.scorer, s.cache, down, s.store, s.llm};
  const auto resumed = evaluate_prompts(first_prompts(3), cfg, ctx);
  EXPECT_EQ(resumed.failures, 0);
  EXPECT_EQ(json(resumed).dump(), json(first).dump());
  cfg.seed = 12;  // different run: checkpoint ignored
  EXPECT_EQ(evaluate_prompts(first_prompts(3), cfg, ctx).failures, 3);
}

TEST(Evaluate, WorkersDoNotChangeResults) {
  MockStack a("eval-w1"), b("eval-w3");
  auto cfg = quick_eval("base");
  const auto one = evaluate_prompts(first_prompts(5), cfg, a.context());
  cfg.workers = 3;
  const auto three = evaluate_prompts(first_prompts(5), cfg, b.context());
  EXPECT_EQ(json(one).dump(), json(three).dump());
}

TEST(Evaluate, ConfigValidation) {
  auto cfg = quick_eval("sideways");
  EXPECT_EQ(thrown_code([&] { cfg.validate(); }), ErrorCode::invalid_input);
  cfg = quick_eval("base");
  cfg.sample_count = 0;
  EXPECT_EQ(thrown_code([&] { cfg.validate(); }), ErrorCode::invalid_input);
  cfg = quick_eval("base");
  cfg.n = 1;
  EXPECT_EQ(thrown_code([&] { cfg.validate(); }), ErrorCode::invalid_input);
}

TEST(CompareHdi, DeterministicAndIsolatesFailures) {
  MockStack a("hdi-a"), b("hdi-b");
  auto cfg = quick_eval("custom");
  const std::vector<std::string> strategies = {"identity", "no_such_strategy", "direct_vlm"};
  const auto r1 = compare_hdi_strategies(strategies, first_prompts(2), cfg, a.context());
  const auto r2 = compare_hdi_strategies(strategies, first_prompts(2), cfg, b.context());
  EXPECT_EQ(json(r1).dump(), json(r2).dump());
  ASSERT_EQ(r1.rows.size(), 3u);
  EXPECT_EQ(r1.rows[0].status, "ok");
  EXPECT_EQ(r1.rows[1].status, "failed");
  EXPECT_EQ(r1.rows[2].status, "ok");
}

TEST(CompareHdi, IdentityMatchesTheNoHdiAblation) {
  MockStack a("hdi-id"), b("hdi-ablation");
  auto cfg = quick_eval("custom");
  const auto cmp = compare_hdi_strategies({"identity"}, first_prompts(2), cfg, a.context());
  const auto ablation = evaluate_prompts(first_prompts(2), quick_eval("poet_no_hdi"), b.context());
  ASSERT_TRUE(cmp.rows[0].icad);
  EXPECT_NEAR(*cmp.rows[0].icad, *ablation.aggregate, 1e-12);
}
