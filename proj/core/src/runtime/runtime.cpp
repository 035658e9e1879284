#include "expanse/runtime/runtime.hpp"

#include "expanse/embedding/synthetic_scorer.hpp"
#include "expanse/embedding/vocabulary.hpp"
#include "expanse/util/binary_io.hpp"

namespace expanse {

void force_offline(GlobalConfig& config) {
  config.backend.kind = "mock";
  config.llm.kind = "rule";
}

std::unique_ptr<Runtime> make_runtime(const GlobalConfig& config) {
  if (auto errors = config.validate(); !errors.empty()) throw ConfigError(std::move(errors));

  auto rt = std::make_unique<Runtime>();
  rt->config = config;
  const std::filesystem::path root = config.data_dir;

  std::shared_ptr<const Vocabulary> vocab =
      config.scorer.vocabulary_dir.empty()
          ? default_synthetic_vocabulary(config.scorer.dim)
          : std::make_shared<const Vocabulary>(load_vocabulary(config.scorer.vocabulary_dir));
  SyntheticScorerOptions so;
  so.model_id = config.scorer.model_id;
  rt->scorer = std::make_shared<const SyntheticScorer>(std::move(vocab), so);
  rt->cache = std::make_unique<EmbeddingCache>(*rt->scorer, root / "embeddings");

  if (config.backend.kind == "remote") {
    rt->backend = std::make_unique<RemoteBackend>(config.backend.endpoint, config.backend.model);
  } else {
    MockEmbeddingOptions mo;
    mo.dim = rt->scorer->info().embedding_dim;
    mo.noise = config.backend.noise;
    mo.default_weight = config.backend.default_weight;
    rt->backend = std::make_unique<MockBackend>(mo);
  }
  rt->store = std::make_unique<ImageStore>(root / "images");

  if (config.llm.kind == "scripted") {
    rt->llm = ScriptedLlm::from_json(nlohmann::json::parse(read_text_file(config.llm.fixtures)));
  } else if (config.llm.kind == "openai") {
    OpenAiCompatibleOptions oo;
    oo.base_url = config.llm.base_url;
    oo.model = config.llm.model;
    oo.api_key_env = config.llm.api_key_env;
    oo.temperature = config.llm.temperature;
    oo.timeout = std::chrono::milliseconds(config.llm.timeout_ms);
    rt->llm = std::make_shared<OpenAiCompatibleLlm>(oo);
  } else {
    RuleBasedLlmOptions ro;
    ro.seed = config.seed;
    ro.vision = rt->scorer;
    rt->llm = std::make_shared<RuleBasedLlm>(ro);
  }
  return rt;
}

}  // namespace expanse
