#pragma once

#include "expanse/error.hpp"
#include "expanse/llm/llm_client.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace expanse {

/// Phrases of t1 sorted into the five semantic groups. Always holds all five
/// keys; a group with at least one phrase is a homogeneous group.
struct DimensionCategorization {
  std::map<std::string, std::vector<std::string>> groups;

  DimensionCategorization();
  bool empty() const;
  /// Non-empty groups in canonical category order.
  std::vector<std::string> homogeneous_categories() const;
};

struct ExpansionRequest {
  std::string t0;
  std::string t1;
  DimensionCategorization categorization;
  int pool_size = 30;  // K
  std::optional<std::string> preference_context;
};

struct ExpansionCandidate {
  std::string prompt;  // t-hat
  std::vector<std::string> replaced_categories;
  std::optional<std::string> image;  // path of the image generated for this prompt
  std::optional<double> div_score;
  std::optional<double> sim_score;
  std::optional<double> filter_score;
};

struct ExpansionOptions {
  RetryPolicy retry;
  /// Generation rounds for one pool; each round asks for the missing
  /// candidates with the same instruction.
  int max_rounds = 3;
  std::uint64_t seed = 0;
  std::string template_version = "v1";
};

struct CategorizationOutcome {
  DimensionCategorization categorization;
  std::vector<std::string> warnings;
  int retries = 0;
};

struct ExpansionOutcome {
  std::vector<ExpansionCandidate> candidates;
  std::vector<std::string> warnings;
  int rejected_original = 0;  // candidates equal to t0
  int rejected_duplicates = 0;
  int rejected_invalid = 0;
  int rounds = 0;
  int retries = 0;
};

/// Raised when the pool ends up smaller than K. Carries what was produced.
class PartialPoolError : public Error {
 public:
  PartialPoolError(const std::string& message, ExpansionOutcome produced)
      : Error(ErrorCode::partial_pool, message), produced_(std::move(produced)) {}
  const ExpansionOutcome& produced() const noexcept { return produced_; }

 private:
  ExpansionOutcome produced_;
};

/// Case-folded, whitespace-collapsed form with trailing sentence punctuation
/// removed. Two prompts are duplicates when their canonical forms match.
std::string canonical_prompt(std::string_view prompt);

/// True when every word of `phrase` occurs, consecutively, in `text`
/// (case-folded, punctuation-insensitive).
bool contains_phrase(std::string_view text, std::string_view phrase);

/// Asks the model to sort t1 into semantic groups. Phrases that do not occur
/// in t1 are dropped with a warning. t0 only gives the model context.
CategorizationOutcome categorize_dimensions(std::string_view t1, const LlmClient& llm,
                                            const ExpansionOptions& options = {},
                                            std::string_view t0 = {});

/// Builds a pool of exactly K unique candidates, each modifying at least one
/// homogeneous group. Throws PartialPoolError when the round budget runs out.
ExpansionOutcome generate_candidates(const ExpansionRequest& request, const LlmClient& llm,
                                     const ExpansionOptions& options = {});

/// The rendered instruction generate_candidates sends (useful for scripting).
std::string expansion_instruction(const ExpansionRequest& request, std::string_view version = "v1");
std::string categorization_instruction(std::string_view t1, std::string_view t0,
                                       std::string_view version = "v1");

void to_json(nlohmann::json& j, const DimensionCategorization& c);
void from_json(const nlohmann::json& j, DimensionCategorization& c);
void to_json(nlohmann::json& j, const ExpansionCandidate& c);
void from_json(const nlohmann::json& j, ExpansionCandidate& c);
void to_json(nlohmann::json& j, const ExpansionRequest& r);
void from_json(const nlohmann::json& j, ExpansionRequest& r);

}  // namespace expanse
