#pragma once

#include "expanse/error.hpp"
#include "expanse/evaluation/evaluation.hpp"
#include "expanse/pipeline/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace expanse {

struct ScorerSettings {
  std::string kind = "synthetic";
  int dim = 1024;
  std::string vocabulary_dir;  // empty: built-in synthetic vocabulary
  std::string model_id = "synthetic-term-hash-v1";
};

struct BackendSettings {
  std::string kind = "mock";  // mock | remote
  std::string endpoint;
  std::string model = "stable-diffusion-xl";
  double noise = 0.5;
  double default_weight = 1.0;
  double guidance_scale = 7.5;
  int inference_steps = 28;
  int max_in_flight = 4;
  long long timeout_ms = 600000;
};

struct LlmSettings {
  std::string kind = "rule";  // rule | scripted | openai
  std::string base_url = "https://api.openai.com";
  std::string model = "gpt-4o";
  std::string api_key_env = "OPENAI_API_KEY";
  double temperature = 0.7;
  long long timeout_ms = 120000;
  std::string fixtures;  // script file for kind = scripted
  int max_attempts = 3;
  long long backoff_ms = 500;
};

struct EvalSettings {
  int sample_count = 1000;
  int n = 10;
  int workers = 1;
  int checkpoint_every = 25;
  double degraded_fraction = 0.2;
};

struct ServerSettings {
  std::string host = "127.0.0.1";
  int port = 8080;
  int interactive_images = 4;  // images per prompt in a session round
};

/// Every tunable in one record. Defaults are the published settings:
/// lambda 0.1, m 15, T 1000, lr 0.1, b 2, d 1024.
struct GlobalConfig {
  ScorerSettings scorer;
  BackendSettings backend;
  LlmSettings llm;
  InversionConfig inversion;
  int images_per_prompt = 10;  // n
  int pool_size = 30;          // K
  int expansion_rounds = 3;
  FilterConfig filter;
  EvalSettings eval;
  ServerSettings server;
  int context_token_budget = 512;
  std::uint64_t seed = 0;
  std::string data_dir = "expanse-data";

  /// Every problem found, not just the first.
  std::vector<std::string> validate() const;
  PipelineConfig pipeline() const;
  RetryPolicy retry() const;
};

/// Thrown when configuration is unusable; carries every individual problem.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> errors);
  const std::vector<std::string>& errors() const noexcept { return errors_; }

 private:
  std::vector<std::string> errors_;
};

using ConfigOverrides = std::vector<std::pair<std::string, std::string>>;  // dotted key, value

/// Defaults, then the JSON file (if any), then EXPANSE_* environment
/// variables, then `flags`. The environment name of a key is EXPANSE_
/// followed by its dotted path upper-cased with '_' separators, e.g.
/// EXPANSE_FILTER_LAMBDA or EXPANSE_DATA_DIR. Unknown keys and malformed
/// values are errors. Throws ConfigError listing all of them.
GlobalConfig load_config(const std::optional<std::filesystem::path>& file, const ConfigOverrides& flags = {},
                         char** environ_block = nullptr);

/// Every dotted key the configuration accepts.
std::vector<std::string> config_keys();

std::string version_string();
std::string git_describe();

/// {"version", "git_describe", "config"} embedded into written artifacts.
nlohmann::json provenance(const GlobalConfig& config);

void to_json(nlohmann::json& j, const GlobalConfig& c);
void from_json(const nlohmann::json& j, GlobalConfig& c);

}  // namespace expanse
