#pragma once

#include "expanse/config/config.hpp"
#include "expanse/embedding/embedding_cache.hpp"
#include "expanse/generation/backend.hpp"
#include "expanse/llm/llm_client.hpp"
#include "expanse/pipeline/pipeline.hpp"

#include <memory>

namespace expanse {

/// Components built from a GlobalConfig and rooted at its data_dir:
/// images under images/, the embedding cache under embeddings/.
struct Runtime {
  GlobalConfig config;
  std::shared_ptr<const Scorer> scorer;
  std::unique_ptr<EmbeddingCache> cache;
  std::unique_ptr<GenerationBackend> backend;
  std::unique_ptr<ImageStore> store;
  std::shared_ptr<const LlmClient> llm;

  PipelineContext context() const { return PipelineContext{*scorer, *cache, *backend, *store, *llm}; }
  std::filesystem::path data_dir() const { return config.data_dir; }
};

/// Forces the offline stack: mock backend and rule-based model.
void force_offline(GlobalConfig& config);

std::unique_ptr<Runtime> make_runtime(const GlobalConfig& config);

}  // namespace expanse
