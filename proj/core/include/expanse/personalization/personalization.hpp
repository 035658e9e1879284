#pragma once

#include "expanse/llm/llm_client.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

namespace expanse {

inline constexpr int kProfileSchemaVersion = 1;
inline constexpr int kMaxRoundIndex = 5;  // initial prompt is round 0, then up to five re-prompts

struct RoundFeedback {
  int round_index = 0;
  std::string prompt;
  int satisfaction = 0;  // 1..7
  std::string most_preferred;   // image id (content hash)
  std::string least_preferred;  // image id (content hash)
  std::string timestamp;

  bool operator==(const RoundFeedback&) const = default;
};

struct PromptRevision {
  std::string from_prompt;
  std::string to_prompt;
  int from_round = 0;
  int to_round = 0;

  bool operator==(const PromptRevision&) const = default;
};

struct ImagePatternNote {
  std::string image_id;
  std::string polarity;  // preferred | avoided
  std::string attributes;
  int round_index = 0;   // round whose feedback named the image

  bool operator==(const ImagePatternNote&) const = default;
};

struct PreferenceProfile {
  std::string user_id;
  std::vector<RoundFeedback> history;
  std::vector<PromptRevision> prompt_revisions;
  std::vector<ImagePatternNote> image_pattern_notes;
  std::optional<std::string> compiled_context;
  std::size_t analyzed_feedback = 0;  // history entries already sent for image analysis

  bool operator==(const PreferenceProfile&) const = default;
};

struct FinalSelection {
  std::string favorite_image;
  double final_satisfaction = 0.0;  // continuous 1..10
};

/// True when a round with this satisfaction (1..7) at this round index ends
/// the session: "satisfied" (6) or "very satisfied" (7), or the last round.
bool should_stop(int satisfaction, int round_index);

/// Validates `feedback` against the session's image inventory (every image
/// generated so far, any round) and returns the profile with it appended.
/// A prompt change against the previous round is recorded as a revision.
/// Throws invalid_input for an unknown image, most == least, satisfaction
/// outside 1..7, or a round index that does not increase.
PreferenceProfile record_feedback(PreferenceProfile profile, const RoundFeedback& feedback,
                                  const std::set<std::string>& inventory);

struct AnalysisOutcome {
  PreferenceProfile profile;
  std::vector<std::string> warnings;
  bool called_model = false;
};

/// Asks a multimodal model what drove each not-yet-analyzed most/least
/// preferred choice and stores one note per image. Notes about images that
/// were not asked about are dropped with a warning. With no new feedback the
/// profile is returned unchanged and the model is not called.
AnalysisOutcome analyze_image_preferences(PreferenceProfile profile,
                                          const std::function<std::filesystem::path(const std::string&)>& image_path,
                                          const LlmClient& mm_llm, const RetryPolicy& retry = {});

struct ContextOptions {
  int token_budget = 512;
};

/// Approximate token count used for the context budget: words and
/// punctuation marks each count as one.
int count_context_tokens(std::string_view text);

/// Renders the profile into a conditioning block with sections for focus
/// categories, revision patterns that raised satisfaction, and preferred and
/// avoided traits. Pure: equal profiles give byte-identical text. Empty
/// profile gives "". When over budget, low-signal entries go first, oldest
/// first.
std::string build_context(const PreferenceProfile& profile, const ContextOptions& options = {});

/// build_context() memoized in profile.compiled_context.
const std::string& compiled_context(PreferenceProfile& profile, const ContextOptions& options = {});

/// Facet names (age, ethnicity, setting, tone, ...) a text touches.
std::vector<std::string> facets_in(std::string_view text);

/// Durable per-user profiles: <dir>/<user>.json (latest, versioned) plus an
/// append-only <dir>/<user>.feedback.jsonl. Updates for one user are
/// serialized; reads never observe a half-written profile.
class ProfileStore {
 public:
  explicit ProfileStore(std::filesystem::path dir);
  PreferenceProfile load(const std::string& user_id) const;
  /// Runs `fn` on the stored profile under the user's lock and persists the result.
  PreferenceProfile update(const std::string& user_id,
                           const std::function<PreferenceProfile(PreferenceProfile)>& fn);
  void append_feedback_log(const std::string& user_id, const RoundFeedback& feedback);

 private:
  std::shared_mutex& lock_for(const std::string& user_id) const;
  std::filesystem::path dir_;
  mutable std::mutex map_mu_;
  mutable std::map<std::string, std::unique_ptr<std::shared_mutex>> locks_;
};

void to_json(nlohmann::json& j, const RoundFeedback& f);
void from_json(const nlohmann::json& j, RoundFeedback& f);
void to_json(nlohmann::json& j, const PromptRevision& r);
void from_json(const nlohmann::json& j, PromptRevision& r);
void to_json(nlohmann::json& j, const ImagePatternNote& n);
void from_json(const nlohmann::json& j, ImagePatternNote& n);
void to_json(nlohmann::json& j, const PreferenceProfile& p);
void from_json(const nlohmann::json& j, PreferenceProfile& p);
void to_json(nlohmann::json& j, const FinalSelection& f);
void from_json(const nlohmann::json& j, FinalSelection& f);

}  // namespace expanse
