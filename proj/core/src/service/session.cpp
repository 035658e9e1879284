#include "expanse/service/session.hpp"

#include "expanse/assets/builtin.hpp"
#include "expanse/error.hpp"
#include "expanse/util/binary_io.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <random>
#include <sstream>

namespace expanse {
namespace {

using json = nlohmann::json;

template <typename T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <typename T>
std::optional<T> opt_get(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

bool valid_session_id(const std::string& id) {
  return !id.empty() && id.size() <= 64 &&
         std::all_of(id.begin(), id.end(), [](unsigned char c) { return std::isxdigit(c); });
}

bool valid_user(const std::string& id) {
  return !id.empty() && id.size() <= 64 && std::all_of(id.begin(), id.end(), [](unsigned char c) {
           return std::isalnum(c) || c == '-' || c == '_';
         });
}

std::string new_session_id() {
  static std::mutex mu;
  static std::mt19937_64 rng{std::random_device{}()};
  std::lock_guard lock(mu);
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << rng();
  return out.str();
}

// The single place a session changes; live updates and replay both go
// through here.
void apply_event(Session& s, const json& event) {
  const auto type = event.at("type").get<std::string>();
  if (type == "session_created") {
    s = event.at("session").get<Session>();
  } else if (type == "round_started") {
    Round r;
    r.round_index = event.at("round_index").get<int>();
    r.prompt = event.at("prompt").get<std::string>();
    r.state = "running";
    r.preference_context = opt_get<std::string>(event, "preference_context");
    const auto idx = static_cast<std::size_t>(r.round_index);
    if (idx < s.rounds.size()) s.rounds[idx] = std::move(r);
    else s.rounds.push_back(std::move(r));
  } else if (type == "round_completed") {
    auto r = event.at("round").get<Round>();
    s.rounds.at(static_cast<std::size_t>(r.round_index)) = std::move(r);
  } else if (type == "round_failed") {
    auto& r = s.rounds.at(event.at("round_index").get<std::size_t>());
    r.state = "failed";
    r.error = event.at("error");
    r.generation.reset();
    r.expansion.reset();
  } else if (type == "feedback_recorded") {
    auto& r = s.rounds.at(event.at("round_index").get<std::size_t>());
    r.satisfaction = event.at("satisfaction").get<int>();
    r.feedback = opt_get<RoundFeedback>(event, "feedback");
    for (const auto& w : event.value("warnings", std::vector<std::string>{})) r.warnings.push_back(w);
    s.status = event.at("status").get<std::string>();
  } else if (type == "session_finalized") {
    s.final_selection = event.at("final_selection").get<FinalSelection>();
  } else if (type == "session_abandoned") {
    s.status = "abandoned";
  } else {
    fail(ErrorCode::invalid_input, "unknown session event '" + type + "'");
  }
}

std::vector<json> read_events(const std::filesystem::path& log) {
  std::vector<json> out;
  std::ifstream in(log);
  std::string line;
  while (std::getline(in, line)) {
    if (blank(line)) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception&) {
      // A torn final line from a crash mid-append; anything after it is not trusted.
      break;
    }
  }
  return out;
}

json error_json(ErrorCode code, const std::string& message) {
  return json{{"code", std::string(to_string(code))}, {"message", message}};
}

}  // namespace

bool is_session_mode(std::string_view mode) {
  return std::find(std::begin(kSessionModes), std::end(kSessionModes), mode) != std::end(kSessionModes);
}
bool mode_expands(std::string_view mode) { return mode == "poet" || mode == "poet_personalize"; }
bool mode_personalizes(std::string_view mode) { return mode == "base_personalize" || mode == "poet_personalize"; }

std::vector<std::string> Round::original_images() const {
  return generation ? generation->content_hashes : std::vector<std::string>{};
}

std::vector<std::string> Round::expanded_images() const {
  std::vector<std::string> out;
  if (expansion) {
    for (const auto& g : expansion->selected_generations) {
      out.insert(out.end(), g.content_hashes.begin(), g.content_hashes.end());
    }
  }
  return out;
}

std::set<std::string> Session::inventory() const {
  std::set<std::string> out;
  if (initial_images) out.insert(initial_images->content_hashes.begin(), initial_images->content_hashes.end());
  for (const auto& r : rounds) {
    for (const auto& h : r.original_images()) out.insert(h);
    for (const auto& h : r.expanded_images()) out.insert(h);
  }
  return out;
}

SessionService::SessionService(SessionServiceOptions options, PipelineContext ctx)
    : options_(std::move(options)), ctx_(ctx), profiles_(options_.data_dir / "profiles") {
  std::filesystem::create_directories(options_.data_dir / "sessions");
  load_existing();
}

SessionService::~SessionService() {
  std::lock_guard lock(workers_mu_);
  for (auto& w : workers_) {
    if (w.valid()) w.wait();
  }
}

void SessionService::load_existing() {
  for (const auto& entry : std::filesystem::directory_iterator(options_.data_dir / "sessions")) {
    const auto log = entry.path() / "events.jsonl";
    if (!entry.is_directory() || !std::filesystem::exists(log)) continue;
    const auto events = read_events(log);
    if (events.empty()) continue;
    auto slot = std::make_unique<Slot>();
    slot->log = log;
    slot->session = replay(events);
    // Rounds cut off by a restart become failed and can be retried.
    for (const auto& r : std::vector<Round>(slot->session.rounds)) {
      if (r.state == "running" || r.state == "pending") {
        append(*slot, {{"type", "round_failed"},
                       {"round_index", r.round_index},
                       {"error", error_json(ErrorCode::invalid_state,
                                            "interrupted by a service restart; submit the prompt again")}});
      }
    }
    sessions_[slot->session.session_id] = std::move(slot);
  }
}

Session SessionService::replay(const std::vector<json>& events) {
  Session s;
  for (const auto& e : events) apply_event(s, e);
  return s;
}

SessionService::Slot& SessionService::slot(const std::string& session_id) const {
  std::lock_guard lock(sessions_mu_);
  const auto it = sessions_.find(session_id);
  if (!valid_session_id(session_id) || it == sessions_.end()) {
    fail(ErrorCode::not_found, "no session '" + session_id + "'");
  }
  return *it->second;
}

// Caller holds slot.mu (or owns the slot exclusively).
void SessionService::append(Slot& slot, json event) {
  event["at"] = utc_timestamp();
  {
    std::ofstream out(slot.log, std::ios::app);
    out << event.dump() << '\n';
    out.flush();
    if (!out) fail(ErrorCode::io, "cannot append to " + slot.log.string());
  }
  apply_event(slot.session, event);
  slot.changed.notify_all();
}

Session SessionService::create_session(const std::string& user_id, const std::string& mode,
                                       const std::optional<std::string>& scenario_id) {
  if (!valid_user(user_id)) {
    fail(ErrorCode::invalid_input, "user_id must be 1-64 characters of [A-Za-z0-9_-]");
  }
  if (!is_session_mode(mode)) {
    fail(ErrorCode::invalid_input,
         "unknown mode '" + mode + "'; expected base, poet, base_personalize or poet_personalize");
  }
  Session s;
  s.session_id = new_session_id();
  s.user_id = user_id;
  s.mode = mode;
  s.created_at = utc_timestamp();
  if (scenario_id) {
    const Scenario* sc = find_scenario(*scenario_id);
    if (!sc) fail(ErrorCode::not_found, "unknown scenario '" + *scenario_id + "'");
    s.scenario = SessionScenario{sc->id, sc->title, sc->background, sc->initial_prompt};
    GenerationConfig gc = options_.pipeline.generation;
    gc.seeds = sc->initial_seeds;
    gc.images_per_prompt = static_cast<int>(sc->initial_seeds.size());
    s.initial_images = generate(sc->initial_prompt, gc, ctx_.backend, ctx_.store);
  }

  auto slot = std::make_unique<Slot>();
  std::filesystem::create_directories(options_.data_dir / "sessions" / s.session_id);
  slot->log = options_.data_dir / "sessions" / s.session_id / "events.jsonl";
  append(*slot, {{"type", "session_created"}, {"session", s}});
  Session out = slot->session;
  std::lock_guard lock(sessions_mu_);
  sessions_[out.session_id] = std::move(slot);
  return out;
}

Session SessionService::get(const std::string& session_id) const {
  Slot& s = slot(session_id);
  std::lock_guard lock(s.mu);
  return s.session;
}

Round SessionService::get_round(const std::string& session_id, int round_index) const {
  Slot& s = slot(session_id);
  std::lock_guard lock(s.mu);
  if (round_index < 0 || static_cast<std::size_t>(round_index) >= s.session.rounds.size()) {
    fail(ErrorCode::not_found, "session " + session_id + " has no round " + std::to_string(round_index));
  }
  return s.session.rounds[static_cast<std::size_t>(round_index)];
}

std::vector<json> SessionService::events(const std::string& session_id) const {
  Slot& s = slot(session_id);
  std::lock_guard lock(s.mu);
  return read_events(s.log);
}

Round SessionService::submit_prompt(const std::string& session_id, const std::string& prompt) {
  Slot& s = slot(session_id);
  std::unique_lock lock(s.mu);
  const Session& session = s.session;
  if (session.status == "capped") {
    fail(ErrorCode::session_capped, "session reached the limit of " + std::to_string(kMaxRounds) + " rounds");
  }
  if (session.status != "active") fail(ErrorCode::invalid_state, "session is " + session.status);
  if (blank(prompt)) fail(ErrorCode::invalid_input, "prompt must be non-empty");

  int index = static_cast<int>(session.rounds.size());
  if (!session.rounds.empty()) {
    const Round& last = session.rounds.back();
    if (last.state == "running" || last.state == "pending") {
      fail(ErrorCode::invalid_state, "round " + std::to_string(last.round_index) + " is still running");
    }
    if (last.state == "failed") {
      index = last.round_index;
    } else if (!last.satisfaction) {
      fail(ErrorCode::invalid_state,
           "round " + std::to_string(last.round_index) + " needs feedback before the next prompt");
    }
  }
  if (index >= kMaxRounds) {
    fail(ErrorCode::session_capped, "session reached the limit of " + std::to_string(kMaxRounds) + " rounds");
  }

  json started{{"type", "round_started"}, {"round_index", index}, {"prompt", prompt}};
  if (session.mode == "poet_personalize") {
    const auto profile = profiles_.load(session.profile_id());
    if (!profile.history.empty()) {
      auto context = build_context(profile, ContextOptions{options_.context_token_budget});
      if (!context.empty()) started["preference_context"] = std::move(context);
    }
  }
  append(s, std::move(started));
  Round out = s.session.rounds[static_cast<std::size_t>(index)];
  lock.unlock();

  std::lock_guard wl(workers_mu_);
  workers_.push_back(std::async(std::launch::async, [this, session_id, index, prompt] {
    run_round(session_id, index, prompt);
  }));
  return out;
}

void SessionService::run_round(const std::string& session_id, int round_index, std::string prompt) {
  Slot& s = slot(session_id);
  std::string mode;
  std::optional<std::string> context;
  {
    std::lock_guard lock(s.mu);
    mode = s.session.mode;
    context = s.session.rounds.at(static_cast<std::size_t>(round_index)).preference_context;
  }

  Round r;
  r.round_index = round_index;
  r.prompt = prompt;
  r.state = "complete";
  r.preference_context = context;
  json outcome;
  try {
    PipelineConfig cfg = options_.pipeline;
    cfg.generation.seeds.clear();
    cfg.generation.seed_base = options_.seed + 1000ull * static_cast<std::uint64_t>(round_index + 1);
    if (mode_expands(mode)) {
      const auto hdi = make_hdi_strategy(options_.hdi_strategy, cfg.inversion, options_.retry);
      PipelineRun run = run_pipeline(prompt, cfg, ctx_, *hdi, context);
      r.generation = run.original;
      r.warnings = run.warnings;
      r.expansion = std::move(run);
    } else {
      r.generation = generate(prompt, cfg.generation, ctx_.backend, ctx_.store);
    }
    outcome = {{"type", "round_completed"}, {"round", r}};
  } catch (const Error& e) {
    outcome = {{"type", "round_failed"}, {"round_index", round_index}, {"error", error_json(e.code(), e.what())}};
  } catch (const std::exception& e) {
    outcome = {{"type", "round_failed"},
               {"round_index", round_index},
               {"error", {{"code", "internal"}, {"message", e.what()}}}};
  }
  std::lock_guard lock(s.mu);
  append(s, std::move(outcome));
}

Round SessionService::await_round(const std::string& session_id, int round_index,
                                  std::chrono::milliseconds timeout) const {
  Slot& s = slot(session_id);
  std::unique_lock lock(s.mu);
  auto settled = [&] {
    if (static_cast<std::size_t>(round_index) >= s.session.rounds.size()) return false;
    const auto& st = s.session.rounds[static_cast<std::size_t>(round_index)].state;
    return st == "complete" || st == "failed";
  };
  s.changed.wait_for(lock, timeout, settled);
  if (round_index < 0 || static_cast<std::size_t>(round_index) >= s.session.rounds.size()) {
    fail(ErrorCode::not_found, "session " + session_id + " has no round " + std::to_string(round_index));
  }
  return s.session.rounds[static_cast<std::size_t>(round_index)];
}

Session SessionService::submit_feedback(const std::string& session_id, int satisfaction,
                                        const std::optional<std::string>& most_preferred,
                                        const std::optional<std::string>& least_preferred) {
  Slot& s = slot(session_id);
  std::lock_guard lock(s.mu);
  const Session& session = s.session;
  if (session.status != "active") fail(ErrorCode::invalid_state, "session is " + session.status);
  if (session.rounds.empty() || session.rounds.back().state != "complete" || session.rounds.back().satisfaction) {
    fail(ErrorCode::invalid_state, "no completed round is awaiting feedback");
  }
  if (satisfaction < 1 || satisfaction > 7) fail(ErrorCode::invalid_input, "satisfaction must be in 1..7");
  const bool personalize = mode_personalizes(session.mode);
  if (personalize && (!most_preferred || !least_preferred)) {
    fail(ErrorCode::invalid_input, "most_preferred and least_preferred are required in " + session.mode + " mode");
  }
  if (most_preferred.has_value() != least_preferred.has_value()) {
    fail(ErrorCode::invalid_input, "most_preferred and least_preferred must be given together");
  }

  const Round& round = session.rounds.back();
  const auto inventory = session.inventory();
  std::optional<RoundFeedback> fb;
  std::vector<std::string> warnings;
  if (most_preferred) {
    fb = RoundFeedback{round.round_index, round.prompt, satisfaction, *most_preferred, *least_preferred,
                       utc_timestamp()};
    if (personalize) {
      const auto image_path = [this](const std::string& id) {
        auto p = ctx_.store.find(id);
        if (!p) fail(ErrorCode::not_found, "no stored image " + id);
        return *p;
      };
      profiles_.update(session.profile_id(), [&](PreferenceProfile p) {
        p = record_feedback(std::move(p), *fb, inventory);
        try {
          auto analysis = analyze_image_preferences(p, image_path, ctx_.llm, options_.retry);
          warnings = std::move(analysis.warnings);
          return std::move(analysis.profile);
        } catch (const Error& e) {
          // The rating is kept; the images can be analyzed after the next round.
          warnings.push_back(std::string("preference analysis skipped: ") + e.what());
          return p;
        }
      });
      profiles_.append_feedback_log(session.profile_id(), *fb);
    } else {
      if (*most_preferred == *least_preferred) {
        fail(ErrorCode::invalid_input, "most and least preferred images must differ");
      }
      for (const auto* id : {&*most_preferred, &*least_preferred}) {
        if (!inventory.count(*id)) fail(ErrorCode::invalid_input, "unknown image id '" + *id + "'");
      }
    }
  }

  std::string status = "active";
  if (should_stop(satisfaction, round.round_index)) status = satisfaction >= 6 ? "satisfied" : "capped";
  append(s, {{"type", "feedback_recorded"},
             {"round_index", round.round_index},
             {"satisfaction", satisfaction},
             {"feedback", opt(fb)},
             {"warnings", warnings},
             {"status", status}});
  return s.session;
}

Session SessionService::finalize_session(const std::string& session_id, const std::string& favorite_image,
                                         double final_satisfaction) {
  Slot& s = slot(session_id);
  std::lock_guard lock(s.mu);
  if (s.session.final_selection) return s.session;
  if (s.session.status != "satisfied" && s.session.status != "capped") {
    fail(ErrorCode::invalid_state, "only satisfied or capped sessions can be finalized; session is " +
                                       s.session.status);
  }
  if (!(final_satisfaction >= 1.0 && final_satisfaction <= 10.0)) {
    fail(ErrorCode::invalid_input, "final_satisfaction must be in [1, 10]");
  }
  if (!s.session.inventory().count(favorite_image)) {
    fail(ErrorCode::invalid_input, "unknown image id '" + favorite_image + "'");
  }
  append(s, {{"type", "session_finalized"}, {"final_selection", FinalSelection{favorite_image, final_satisfaction}}});
  return s.session;
}

Session SessionService::abandon_session(const std::string& session_id) {
  Slot& s = slot(session_id);
  std::lock_guard lock(s.mu);
  if (s.session.status != "active") fail(ErrorCode::invalid_state, "session is " + s.session.status);
  if (!s.session.rounds.empty() && s.session.rounds.back().state == "running") {
    fail(ErrorCode::invalid_state, "a round is still running");
  }
  append(s, {{"type", "session_abandoned"}});
  return s.session;
}

std::optional<std::filesystem::path> SessionService::image_path(const std::string& content_hash) const {
  return ctx_.store.find(content_hash);
}

void to_json(json& j, const SessionScenario& s) {
  j = json{{"id", s.id}, {"title", s.title}, {"background", s.background}, {"initial_prompt", s.initial_prompt}};
}

void from_json(const json& j, SessionScenario& s) {
  s.id = j.at("id").get<std::string>();
  s.title = j.value("title", std::string());
  s.background = j.at("background").get<std::string>();
  s.initial_prompt = j.at("initial_prompt").get<std::string>();
}

void to_json(json& j, const Round& r) {
  j = json{{"round_index", r.round_index},
           {"prompt", r.prompt},
           {"state", r.state},
           {"error", opt(r.error)},
           {"generation", opt(r.generation)},
           {"expansion", opt(r.expansion)},
           {"preference_context", opt(r.preference_context)},
           {"satisfaction", opt(r.satisfaction)},
           {"feedback", opt(r.feedback)},
           {"warnings", r.warnings},
           {"images", {{"original", r.original_images()}, {"expanded", r.expanded_images()}}}};
}

void from_json(const json& j, Round& r) {
  r.round_index = j.at("round_index").get<int>();
  r.prompt = j.at("prompt").get<std::string>();
  r.state = j.at("state").get<std::string>();
  r.error = opt_get<json>(j, "error");
  r.generation = opt_get<GenerationRecord>(j, "generation");
  r.expansion = opt_get<PipelineRun>(j, "expansion");
  r.preference_context = opt_get<std::string>(j, "preference_context");
  r.satisfaction = opt_get<int>(j, "satisfaction");
  r.feedback = opt_get<RoundFeedback>(j, "feedback");
  r.warnings = j.value("warnings", std::vector<std::string>{});
}

void to_json(json& j, const Session& s) {
  const auto inv = s.inventory();
  j = json{{"session_id", s.session_id},
           {"user_id", s.user_id},
           {"mode", s.mode},
           {"scenario", opt(s.scenario)},
           {"initial_images", opt(s.initial_images)},
           {"rounds", s.rounds},
           {"status", s.status},
           {"final_selection", opt(s.final_selection)},
           {"created_at", s.created_at},
           {"image_inventory", std::vector<std::string>(inv.begin(), inv.end())}};
}

void from_json(const json& j, Session& s) {
  s.session_id = j.at("session_id").get<std::string>();
  s.user_id = j.at("user_id").get<std::string>();
  s.mode = j.at("mode").get<std::string>();
  s.scenario = opt_get<SessionScenario>(j, "scenario");
  s.initial_images = opt_get<GenerationRecord>(j, "initial_images");
  s.rounds = j.value("rounds", std::vector<Round>{});
  s.status = j.at("status").get<std::string>();
  s.final_selection = opt_get<FinalSelection>(j, "final_selection");
  s.created_at = j.value("created_at", std::string());
}

}  // namespace expanse
