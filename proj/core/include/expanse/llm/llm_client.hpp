#pragma once

#include "expanse/embedding/scorer.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

namespace expanse {

/// Instruction-following model with structured (JSON) output.
///
/// `inputs` always carries a "task" field naming the template the instruction
/// was rendered from, plus the values that went into it. Image inputs are
/// passed as file paths under "images".
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual std::string id() const = 0;
  virtual nlohmann::json call(std::string_view instruction, const nlohmann::json& inputs) const = 0;
};

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds backoff{0};  // doubled after every failed attempt
};

struct LlmCallResult {
  nlohmann::json payload;
  int retries = 0;
  std::vector<std::string> retry_reasons;
};

/// Throws Error(schema) when a payload has the wrong shape.
using PayloadValidator = std::function<void(const nlohmann::json&)>;

/// Calls `client` until the payload validates. Transport errors and schema
/// violations are retried up to the attempt budget; a final transport error
/// is rethrown, a final schema violation becomes expansion_format. Every
/// other error propagates at once. Retry state is local to the call.
LlmCallResult call_with_retry(const LlmClient& client, std::string_view instruction,
                              const nlohmann::json& inputs, const PayloadValidator& validate,
                              const RetryPolicy& policy);

/// Replays canned payloads keyed by sha256 of the instruction text. A key can
/// hold a single payload (returned on every call) or a sequence consumed one
/// call at a time, whose last entry repeats. Entries of the form
/// {"$error": "<code>"} raise that error instead of returning.
class ScriptedLlm final : public LlmClient {
 public:
  static std::string key_for(std::string_view instruction);

  /// {"fixtures": {"<key>": payload | {"$sequence": [payload, ...]}}}
  static std::shared_ptr<ScriptedLlm> from_json(const nlohmann::json& script);

  void add(const std::string& key, nlohmann::json payload);
  void add_sequence(const std::string& key, std::vector<nlohmann::json> steps);
  void add_for(std::string_view instruction, nlohmann::json payload) { add(key_for(instruction), std::move(payload)); }

  std::string id() const override { return "scripted"; }
  nlohmann::json call(std::string_view instruction, const nlohmann::json& inputs) const override;

  int calls(const std::string& key) const;
  std::size_t fixture_count() const;

 private:
  struct Entry {
    std::vector<nlohmann::json> steps;
    int calls = 0;
  };
  mutable std::mutex mu_;
  mutable std::map<std::string, Entry> fixtures_;
};

struct RuleBasedLlmOptions {
  std::uint64_t seed = 0;
  /// Used to "look at" image inputs: an image is described by the lexicon
  /// words whose text embeddings are closest to the image embedding.
  std::shared_ptr<const Scorer> vision;
  int describe_top_k = 6;
};

/// Offline stand-in for a hosted model. Works from the built-in lexicon:
/// categorizes words by lexicon lookup, expands prompts by substituting or
/// appending lexicon alternatives from homogeneous groups, and describes
/// images through the scorer. Deterministic for fixed inputs and seed.
class RuleBasedLlm final : public LlmClient {
 public:
  explicit RuleBasedLlm(RuleBasedLlmOptions options = {});
  std::string id() const override { return "rule-based-v1"; }
  nlohmann::json call(std::string_view instruction, const nlohmann::json& inputs) const override;

  /// Lexicon words closest to the image, best first.
  std::vector<std::string> describe_image(const std::string& path) const;

 private:
  nlohmann::json categorize(const nlohmann::json& inputs) const;
  nlohmann::json expand(const nlohmann::json& inputs) const;
  nlohmann::json analyze_images(const nlohmann::json& inputs) const;
  nlohmann::json caption(const nlohmann::json& inputs) const;
  nlohmann::json summarize(const nlohmann::json& inputs) const;
  nlohmann::json describe_set(const nlohmann::json& inputs) const;

  RuleBasedLlmOptions options_;
  std::vector<std::string> words_;
  Matrix word_embeddings_;  // rows align with words_
};

struct OpenAiCompatibleOptions {
  std::string base_url = "https://api.openai.com";
  std::string model = "gpt-4o";
  std::string api_key_env = "OPENAI_API_KEY";
  double temperature = 0.7;
  std::chrono::milliseconds timeout{120000};
};

/// Chat-completions client for any OpenAI-compatible endpoint. Requests JSON
/// output; image inputs are sent as base64 data URLs.
class OpenAiCompatibleLlm final : public LlmClient {
 public:
  explicit OpenAiCompatibleLlm(OpenAiCompatibleOptions options);
  std::string id() const override { return "openai-compatible:" + options_.model; }
  nlohmann::json call(std::string_view instruction, const nlohmann::json& inputs) const override;

 private:
  OpenAiCompatibleOptions options_;
};

}  // namespace expanse
