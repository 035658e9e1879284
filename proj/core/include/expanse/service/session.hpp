#pragma once

#include "expanse/generation/backend.hpp"
#include "expanse/llm/llm_client.hpp"
#include "expanse/personalization/personalization.hpp"
#include "expanse/pipeline/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace expanse {

inline constexpr std::string_view kSessionModes[] = {"base", "poet", "base_personalize", "poet_personalize"};
inline constexpr int kMaxRounds = kMaxRoundIndex + 1;  // initial prompt plus five re-prompts

bool is_session_mode(std::string_view mode);
bool mode_expands(std::string_view mode);        // poet, poet_personalize
bool mode_personalizes(std::string_view mode);   // base_personalize, poet_personalize

struct SessionScenario {
  std::string id;
  std::string title;
  std::string background;
  std::string initial_prompt;
};

struct Round {
  int round_index = 0;
  std::string prompt;
  std::string state = "pending";  // pending | running | complete | failed
  std::optional<nlohmann::json> error;  // {"code", "message"} when failed
  std::optional<GenerationRecord> generation;
  /// Expansion artifacts (inversion, categorization, scored pool, selected
  /// generations). Present exactly for completed rounds of expanding modes.
  std::optional<PipelineRun> expansion;
  std::optional<std::string> preference_context;
  std::optional<int> satisfaction;
  std::optional<RoundFeedback> feedback;
  std::vector<std::string> warnings;

  /// Content hashes of the original images, then of the expanded images.
  std::vector<std::string> original_images() const;
  std::vector<std::string> expanded_images() const;
};

struct Session {
  std::string session_id;
  std::string user_id;
  std::string mode;
  std::optional<SessionScenario> scenario;
  /// The scenario's fixed starting images, rendered from pinned seeds.
  std::optional<GenerationRecord> initial_images;
  std::vector<Round> rounds;
  std::string status = "active";  // active | satisfied | capped | abandoned
  std::optional<FinalSelection> final_selection;
  std::string created_at;

  /// Every image id shown in this session so far, across all rounds.
  std::set<std::string> inventory() const;
  /// Key under which personalize modes keep this session's preference profile.
  std::string profile_id() const { return user_id + "." + session_id; }
};

struct SessionServiceOptions {
  std::filesystem::path data_dir;  // sessions/ and profiles/ live below it
  PipelineConfig pipeline;         // generation.images_per_prompt is the per-round image count
  std::string hdi_strategy = "inversion";
  int context_token_budget = 512;
  RetryPolicy retry;
  std::uint64_t seed = 0;
};

/// Orchestrates interactive sessions. Every state change is an event appended
/// to sessions/<id>/events.jsonl and applied by the same code that replays the
/// log, so a restarted service holds exactly the state it had before. Prompt
/// rounds run on background threads; operations on one session are
/// serialized, different sessions proceed independently.
class SessionService {
 public:
  SessionService(SessionServiceOptions options, PipelineContext ctx);
  ~SessionService();

  SessionService(const SessionService&) = delete;
  SessionService& operator=(const SessionService&) = delete;

  Session create_session(const std::string& user_id, const std::string& mode,
                         const std::optional<std::string>& scenario_id = {});
  Session get(const std::string& session_id) const;
  Round get_round(const std::string& session_id, int round_index) const;

  /// Starts a round and returns it in state "running"; the work continues in
  /// the background. A failed last round is retried at the same index.
  Round submit_prompt(const std::string& session_id, const std::string& prompt);
  /// Blocks until the round is complete or failed, or the timeout passes.
  Round await_round(const std::string& session_id, int round_index,
                    std::chrono::milliseconds timeout = std::chrono::minutes(10)) const;

  Session submit_feedback(const std::string& session_id, int satisfaction,
                          const std::optional<std::string>& most_preferred = {},
                          const std::optional<std::string>& least_preferred = {});
  Session finalize_session(const std::string& session_id, const std::string& favorite_image,
                           double final_satisfaction);
  Session abandon_session(const std::string& session_id);

  /// Raw event log of a session, oldest first.
  std::vector<nlohmann::json> events(const std::string& session_id) const;
  /// Rebuilds a session from its event log alone.
  static Session replay(const std::vector<nlohmann::json>& events);

  std::optional<std::filesystem::path> image_path(const std::string& content_hash) const;
  ProfileStore& profiles() { return profiles_; }
  const SessionServiceOptions& options() const noexcept { return options_; }

 private:
  struct Slot {
    mutable std::mutex mu;
    mutable std::condition_variable changed;
    Session session;
    std::filesystem::path log;
  };

  Slot& slot(const std::string& session_id) const;
  void append(Slot& slot, nlohmann::json event);
  void run_round(const std::string& session_id, int round_index, std::string prompt);
  void load_existing();

  SessionServiceOptions options_;
  PipelineContext ctx_;
  ProfileStore profiles_;
  mutable std::mutex sessions_mu_;
  std::map<std::string, std::unique_ptr<Slot>> sessions_;
  std::mutex workers_mu_;
  std::vector<std::future<void>> workers_;
};

void to_json(nlohmann::json& j, const SessionScenario& s);
void from_json(const nlohmann::json& j, SessionScenario& s);
void to_json(nlohmann::json& j, const Round& r);
void from_json(const nlohmann::json& j, Round& r);
void to_json(nlohmann::json& j, const Session& s);
void from_json(const nlohmann::json& j, Session& s);

}  // namespace expanse
