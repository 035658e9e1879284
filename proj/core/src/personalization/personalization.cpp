#include "expanse/personalization/personalization.hpp"

#include "expanse/assets/builtin.hpp"
#include "expanse/error.hpp"
#include "expanse/expansion/expansion.hpp"
#include "expanse/expansion/templates.hpp"
#include "expanse/util/binary_io.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <sstream>

namespace expanse {
namespace {

using json = nlohmann::json;

std::vector<std::string> words_of(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '-' || ch == '\'') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::optional<std::string> facet_of_word(const std::string& word) {
  auto lookup = [](const std::string& w) -> std::optional<std::string> {
    for (const auto& f : preference_facets()) {
      if (std::find(f.keywords.begin(), f.keywords.end(), w) != f.keywords.end()) return f.name;
    }
    return std::nullopt;
  };
  if (auto f = lookup(word)) return f;
  if (word.size() > 3 && word.back() == 's') return lookup(word.substr(0, word.size() - 1));
  return std::nullopt;
}

const Facet& facet_named(const std::string& name) {
  for (const auto& f : preference_facets())
    if (f.name == name) return f;
  fail(ErrorCode::not_found, "unknown facet '" + name + "'");
}

// Words present in exactly one of the two prompts.
std::vector<std::string> changed_words(const std::string& a, const std::string& b) {
  auto wa = words_of(a), wb = words_of(b);
  std::sort(wa.begin(), wa.end());
  wa.erase(std::unique(wa.begin(), wa.end()), wa.end());
  std::sort(wb.begin(), wb.end());
  wb.erase(std::unique(wb.begin(), wb.end()), wb.end());
  std::vector<std::string> out;
  std::set_symmetric_difference(wa.begin(), wa.end(), wb.begin(), wb.end(), std::back_inserter(out));
  return out;
}

std::vector<std::string> facets_in_words(const std::vector<std::string>& words) {
  std::vector<std::string> out;
  for (const auto& w : words) {
    if (auto f = facet_of_word(w); f && std::find(out.begin(), out.end(), *f) == out.end()) {
      out.push_back(*f);
    }
  }
  return out;
}

const RoundFeedback* feedback_at(const PreferenceProfile& p, int round) {
  for (const auto& f : p.history)
    if (f.round_index == round) return &f;
  return nullptr;
}

std::string join(const std::vector<std::string>& items, std::string_view sep) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += sep;
    out += s;
  }
  return out;
}

// One renderable context line. High-signal lines come from explicit user
// actions (revisions that raised satisfaction); low-signal lines are model
// inferences about single images.
struct Entry {
  int section = 0;  // 0 preserve, 1 preferred, 2 avoid
  bool high_signal = false;
  int round = 0;
  std::size_t order = 0;
  std::string text;
};

constexpr std::array<std::string_view, 3> kSectionHeaders = {
    "Preserve revision patterns that raised satisfaction:",
    "Preferred traits:",
    "Avoid traits:",
};

std::string render(const std::vector<std::string>& focus, const std::vector<Entry>& entries) {
  if (focus.empty() && entries.empty()) return "";
  std::ostringstream out;
  out << "User preference profile from earlier rounds.\n";
  if (!focus.empty()) out << "Focus categories: " << join(focus, "; ") << "\n";
  for (int s = 0; s < 3; ++s) {
    bool header = false;
    for (const auto& e : entries) {
      if (e.section != s) continue;
      if (!header) {
        out << kSectionHeaders[static_cast<std::size_t>(s)] << "\n";
        header = true;
      }
      out << "- " << e.text << "\n";
    }
  }
  return out.str();
}

void validate_notes_payload(const json& payload) {
  if (!payload.is_object() || !payload.contains("notes") || !payload.at("notes").is_array()) {
    fail(ErrorCode::schema, "expected {\"notes\": [...]}");
  }
  for (const auto& n : payload.at("notes")) {
    if (!n.is_object() || !n.contains("image_id") || !n.at("image_id").is_string() ||
        !n.contains("attributes") || !n.at("attributes").is_string()) {
      fail(ErrorCode::schema, "each note needs string image_id and attributes");
    }
    if (n.contains("polarity")) {
      const auto& p = n.at("polarity");
      if (!p.is_string() || (p != "preferred" && p != "avoided")) {
        fail(ErrorCode::schema, "note polarity must be preferred or avoided");
      }
    }
  }
}

bool valid_user_id(const std::string& id) {
  if (id.empty() || id.size() > 128 || id == "." || id == "..") return false;
  return std::all_of(id.begin(), id.end(), [](unsigned char c) {
    return std::isalnum(c) || c == '-' || c == '_' || c == '.';
  });
}

}  // namespace

bool should_stop(int satisfaction, int round_index) {
  return satisfaction == 6 || satisfaction == 7 || round_index >= kMaxRoundIndex;
}

PreferenceProfile record_feedback(PreferenceProfile profile, const RoundFeedback& feedback,
                                  const std::set<std::string>& inventory) {
  if (feedback.satisfaction < 1 || feedback.satisfaction > 7) {
    fail(ErrorCode::invalid_input, "satisfaction must be in 1..7");
  }
  if (feedback.round_index < 0) fail(ErrorCode::invalid_input, "round index must be >= 0");
  if (!profile.history.empty() && feedback.round_index <= profile.history.back().round_index) {
    fail(ErrorCode::invalid_input, "feedback for round " + std::to_string(feedback.round_index) +
                                       " does not follow round " +
                                       std::to_string(profile.history.back().round_index));
  }
  if (feedback.most_preferred == feedback.least_preferred) {
    fail(ErrorCode::invalid_input, "most and least preferred image must differ");
  }
  for (const auto* id : {&feedback.most_preferred, &feedback.least_preferred}) {
    if (!inventory.count(*id)) fail(ErrorCode::invalid_input, "unknown image id '" + *id + "'");
  }
  if (!profile.history.empty()) {
    const auto& prev = profile.history.back();
    if (canonical_prompt(prev.prompt) != canonical_prompt(feedback.prompt)) {
      profile.prompt_revisions.push_back(
          {prev.prompt, feedback.prompt, prev.round_index, feedback.round_index});
    }
  }
  profile.history.push_back(feedback);
  profile.compiled_context.reset();
  return profile;
}

AnalysisOutcome analyze_image_preferences(
    PreferenceProfile profile, const std::function<std::filesystem::path(const std::string&)>& image_path,
    const LlmClient& mm_llm, const RetryPolicy& retry) {
  if (profile.history.empty()) {
    fail(ErrorCode::invalid_state, "image analysis needs at least one feedback round");
  }
  AnalysisOutcome out;
  if (profile.analyzed_feedback >= profile.history.size()) {
    out.profile = std::move(profile);
    return out;
  }

  struct Ask {
    std::string polarity;
    int round;
  };
  std::map<std::string, Ask> asks;
  std::vector<std::string> ask_order;
  auto noted = [&](const std::string& id, const std::string& polarity) {
    return std::any_of(profile.image_pattern_notes.begin(), profile.image_pattern_notes.end(),
                       [&](const ImagePatternNote& n) { return n.image_id == id && n.polarity == polarity; });
  };
  for (std::size_t i = profile.analyzed_feedback; i < profile.history.size(); ++i) {
    const auto& fb = profile.history[i];
    for (const auto& [id, pol] : {std::pair{fb.most_preferred, std::string("preferred")},
                                  std::pair{fb.least_preferred, std::string("avoided")}}) {
      if (noted(id, pol)) continue;
      if (auto it = asks.find(id); it != asks.end()) {
        it->second = {pol, fb.round_index};  // later rounds win
        continue;
      }
      asks.emplace(id, Ask{pol, fb.round_index});
      ask_order.push_back(id);
    }
  }
  profile.analyzed_feedback = profile.history.size();
  if (ask_order.empty()) {
    out.profile = std::move(profile);
    return out;
  }

  json images = json::array();
  std::vector<std::string> labels;
  for (const auto& id : ask_order) {
    const auto& a = asks.at(id);
    images.push_back({{"image_id", id}, {"path", image_path(id).string()}, {"polarity", a.polarity}});
    labels.push_back(id + " (" + a.polarity + ")");
  }
  const std::string instruction =
      render_template(template_text("analyze_images"), {{"images", join(labels, ", ")}});
  const json inputs = {{"task", "analyze_images"}, {"images", images}};
  const auto res = call_with_retry(mm_llm, instruction, inputs, validate_notes_payload, retry);
  out.called_model = true;

  std::set<std::string> got;
  for (const auto& n : res.payload.at("notes")) {
    const auto id = n.at("image_id").get<std::string>();
    const auto it = asks.find(id);
    if (it == asks.end()) {
      out.warnings.push_back("dropped note for image '" + id + "' that was not fed back");
      continue;
    }
    if (!got.insert(id).second) {
      out.warnings.push_back("dropped repeated note for image '" + id + "'");
      continue;
    }
    const std::string polarity = n.value("polarity", it->second.polarity);
    if (polarity != it->second.polarity) {
      out.warnings.push_back("note for image '" + id + "' has polarity " + polarity + ", expected " +
                             it->second.polarity + "; using the feedback polarity");
    }
    profile.image_pattern_notes.push_back(
        {id, it->second.polarity, n.at("attributes").get<std::string>(), it->second.round});
  }
  for (const auto& id : ask_order) {
    if (!got.count(id)) out.warnings.push_back("model returned no note for image '" + id + "'");
  }
  profile.compiled_context.reset();
  out.profile = std::move(profile);
  return out;
}

std::vector<std::string> facets_in(std::string_view text) { return facets_in_words(words_of(text)); }

int count_context_tokens(std::string_view text) {
  int n = 0;
  bool in_word = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '\'') {
      if (!in_word) ++n;
      in_word = true;
    } else {
      in_word = false;
      if (!std::isspace(c)) ++n;
    }
  }
  return n;
}

std::string build_context(const PreferenceProfile& profile, const ContextOptions& options) {
  if (options.token_budget < 1) fail(ErrorCode::invalid_input, "token budget must be >= 1");

  std::map<std::string, int> facet_counts;
  std::vector<Entry> entries;
  std::size_t order = 0;

  for (const auto& rev : profile.prompt_revisions) {
    const auto touched = facets_in_words(changed_words(rev.from_prompt, rev.to_prompt));
    for (const auto& f : touched) ++facet_counts[f];
    const auto* before = feedback_at(profile, rev.from_round);
    const auto* after = feedback_at(profile, rev.to_round);
    if (!before || !after || after->satisfaction <= before->satisfaction) continue;
    std::string text = "\"" + rev.from_prompt + "\" became \"" + rev.to_prompt + "\" (satisfaction " +
                       std::to_string(before->satisfaction) + " to " +
                       std::to_string(after->satisfaction) + ")";
    if (!touched.empty()) text += "; changed " + join(touched, ", ");
    entries.push_back({0, true, rev.to_round, order++, std::move(text)});
  }
  for (const auto& note : profile.image_pattern_notes) {
    const bool preferred = note.polarity == "preferred";
    if (preferred) {
      for (const auto& f : facets_in(note.attributes)) ++facet_counts[f];
    }
    entries.push_back({preferred ? 1 : 2, false, note.round_index, order++, note.attributes});
  }

  std::vector<std::pair<std::string, int>> ranked(facet_counts.begin(), facet_counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> focus;
  for (const auto& [name, count] : ranked) {
    focus.push_back(name + " (" + facet_named(name).category + ", " + std::to_string(count) + ")");
  }

  // Drop order: low signal before high, oldest round first, then earliest entry.
  std::vector<std::size_t> drop(entries.size());
  for (std::size_t i = 0; i < drop.size(); ++i) drop[i] = i;
  std::sort(drop.begin(), drop.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = entries[a];
    const auto& y = entries[b];
    if (x.high_signal != y.high_signal) return !x.high_signal;
    if (x.round != y.round) return x.round < y.round;
    return x.order < y.order;
  });

  std::vector<bool> kept(entries.size(), true);
  auto current = [&] {
    std::vector<Entry> live;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (kept[i]) live.push_back(entries[i]);
    return render(focus, live);
  };
  std::string text = current();
  std::size_t next = 0;
  while (count_context_tokens(text) > options.token_budget) {
    if (next < drop.size()) {
      kept[drop[next++]] = false;
    } else if (!focus.empty()) {
      focus.pop_back();  // least frequent facet
    } else {
      return "";
    }
    text = current();
  }
  return text;
}

const std::string& compiled_context(PreferenceProfile& profile, const ContextOptions& options) {
  if (!profile.compiled_context) profile.compiled_context = build_context(profile, options);
  return *profile.compiled_context;
}

ProfileStore::ProfileStore(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) fail(ErrorCode::io, "cannot create profile directory " + dir_.string() + ": " + ec.message());
}

std::shared_mutex& ProfileStore::lock_for(const std::string& user_id) const {
  if (!valid_user_id(user_id)) fail(ErrorCode::invalid_input, "invalid user id '" + user_id + "'");
  std::lock_guard<std::mutex> g(map_mu_);
  auto& slot = locks_[user_id];
  if (!slot) slot = std::make_unique<std::shared_mutex>();
  return *slot;
}

PreferenceProfile ProfileStore::load(const std::string& user_id) const {
  std::shared_lock lock(lock_for(user_id));
  const auto path = dir_ / (user_id + ".json");
  if (!std::filesystem::exists(path)) {
    PreferenceProfile p;
    p.user_id = user_id;
    return p;
  }
  return json::parse(read_text_file(path)).get<PreferenceProfile>();
}

PreferenceProfile ProfileStore::update(const std::string& user_id,
                                       const std::function<PreferenceProfile(PreferenceProfile)>& fn) {
  std::unique_lock lock(lock_for(user_id));
  const auto path = dir_ / (user_id + ".json");
  PreferenceProfile current;
  current.user_id = user_id;
  if (std::filesystem::exists(path)) current = json::parse(read_text_file(path)).get<PreferenceProfile>();
  PreferenceProfile next = fn(std::move(current));
  next.user_id = user_id;
  write_file_atomic(path, json(next).dump(2) + "\n");
  return next;
}

void ProfileStore::append_feedback_log(const std::string& user_id, const RoundFeedback& feedback) {
  std::unique_lock lock(lock_for(user_id));
  std::ofstream out(dir_ / (user_id + ".feedback.jsonl"), std::ios::app);
  if (!out) fail(ErrorCode::io, "cannot open feedback log for '" + user_id + "'");
  out << json(feedback).dump() << "\n";
  out.flush();
  if (!out) fail(ErrorCode::io, "cannot append to feedback log for '" + user_id + "'");
}

void to_json(json& j, const RoundFeedback& f) {
  j = json{{"round_index", f.round_index},       {"prompt", f.prompt},
           {"satisfaction", f.satisfaction},     {"most_preferred", f.most_preferred},
           {"least_preferred", f.least_preferred}, {"timestamp", f.timestamp}};
}

void from_json(const json& j, RoundFeedback& f) {
  f.round_index = j.at("round_index").get<int>();
  f.prompt = j.at("prompt").get<std::string>();
  f.satisfaction = j.at("satisfaction").get<int>();
  f.most_preferred = j.at("most_preferred").get<std::string>();
  f.least_preferred = j.at("least_preferred").get<std::string>();
  f.timestamp = j.value("timestamp", std::string());
}

void to_json(json& j, const PromptRevision& r) {
  j = json{{"from_prompt", r.from_prompt}, {"to_prompt", r.to_prompt},
           {"from_round", r.from_round},   {"to_round", r.to_round}};
}

void from_json(const json& j, PromptRevision& r) {
  r.from_prompt = j.at("from_prompt").get<std::string>();
  r.to_prompt = j.at("to_prompt").get<std::string>();
  r.from_round = j.value("from_round", 0);
  r.to_round = j.value("to_round", 0);
}

void to_json(json& j, const ImagePatternNote& n) {
  j = json{{"image_id", n.image_id}, {"polarity", n.polarity}, {"attributes", n.attributes},
           {"round_index", n.round_index}};
}

void from_json(const json& j, ImagePatternNote& n) {
  n.image_id = j.at("image_id").get<std::string>();
  n.polarity = j.at("polarity").get<std::string>();
  n.attributes = j.at("attributes").get<std::string>();
  n.round_index = j.value("round_index", 0);
}

void to_json(json& j, const PreferenceProfile& p) {
  j = json{{"schema_version", kProfileSchemaVersion},
           {"user_id", p.user_id},
           {"history", p.history},
           {"prompt_revisions", p.prompt_revisions},
           {"image_pattern_notes", p.image_pattern_notes},
           {"analyzed_feedback", p.analyzed_feedback},
           {"compiled_context", p.compiled_context ? json(*p.compiled_context) : json(nullptr)}};
}

void from_json(const json& j, PreferenceProfile& p) {
  const int version = j.value("schema_version", 0);
  if (version != kProfileSchemaVersion) {
    fail(ErrorCode::invalid_input, "unsupported profile schema version " + std::to_string(version));
  }
  p.user_id = j.at("user_id").get<std::string>();
  p.history = j.at("history").get<std::vector<RoundFeedback>>();
  p.prompt_revisions = j.at("prompt_revisions").get<std::vector<PromptRevision>>();
  p.image_pattern_notes = j.at("image_pattern_notes").get<std::vector<ImagePatternNote>>();
  p.analyzed_feedback = j.value("analyzed_feedback", std::size_t{0});
  p.compiled_context.reset();
  if (j.contains("compiled_context") && j.at("compiled_context").is_string()) {
    p.compiled_context = j.at("compiled_context").get<std::string>();
  }
}

void to_json(json& j, const FinalSelection& f) {
  j = json{{"favorite_image", f.favorite_image}, {"final_satisfaction", f.final_satisfaction}};
}

void from_json(const json& j, FinalSelection& f) {
  f.favorite_image = j.at("favorite_image").get<std::string>();
  f.final_satisfaction = j.at("final_satisfaction").get<double>();
}

}  // namespace expanse
