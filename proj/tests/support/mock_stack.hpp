#pragma once

// Fully offline stack: synthetic scorer, mock image backend, rule-based model.

#include "support/toy.hpp"

#include "expanse/embedding/embedding_cache.hpp"
#include "expanse/embedding/synthetic_scorer.hpp"
#include "expanse/generation/backend.hpp"
#include "expanse/llm/llm_client.hpp"
#include "expanse/pipeline/pipeline.hpp"

#include <memory>

namespace expanse::testing {

inline std::shared_ptr<const SyntheticScorer> shared_scorer() {
  static auto scorer = std::make_shared<const SyntheticScorer>(default_synthetic_vocabulary());
  return scorer;
}

struct MockStack {
  explicit MockStack(const std::string& name, MockEmbeddingOptions mock = {}, std::uint64_t llm_seed = 0)
      : dir(temp_dir(name)),
        scorer(shared_scorer()),
        cache(*scorer),
        backend(mock),
        store(dir / "store"),
        llm(RuleBasedLlmOptions{llm_seed, scorer, 6}) {}

  PipelineContext context() { return PipelineContext{*scorer, cache, backend, store, llm}; }

  std::filesystem::path dir;
  std::shared_ptr<const SyntheticScorer> scorer;
  EmbeddingCache cache;
  MockBackend backend;
  ImageStore store;
  RuleBasedLlm llm;
};

/// Small, fast pipeline settings for the mock stack.
inline PipelineConfig quick_pipeline(int n = 4, int pool = 12, int select = 4) {
  PipelineConfig c;
  c.generation.images_per_prompt = n;
  c.inversion.steps = 40;
  c.pool_size = pool;
  c.filter.select_count = select;
  return c;
}

}  // namespace expanse::testing
