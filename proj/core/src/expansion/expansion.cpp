#include "expanse/expansion/expansion.hpp"

#include "expanse/assets/builtin.hpp"
#include "expanse/expansion/templates.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace expanse {
namespace {

using nlohmann::json;

std::vector<std::string> folded_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(cur);
    cur.clear();
  };
  for (unsigned char c : text) {
    if (std::isalnum(c) || c == '\'' || c == '-' || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

void schema_check(bool ok, const std::string& what) {
  if (!ok) fail(ErrorCode::schema, what);
}

void validate_categorization(const json& p) {
  schema_check(p.is_object(), "categorization must be a JSON object");
  for (const auto& [key, value] : p.items()) {
    schema_check(is_category(key), "unknown category '" + key + "'");
    schema_check(value.is_array(), "category '" + key + "' must be a list");
    for (const auto& v : value) schema_check(v.is_string(), "category '" + key + "' must list strings");
  }
}

void validate_expansion(const json& p) {
  schema_check(p.is_object() && p.contains("candidates") && p.at("candidates").is_array(),
               "expansion reply must be an object with a 'candidates' list");
  for (const auto& c : p.at("candidates")) {
    schema_check(c.is_object() && c.contains("prompt") && c.at("prompt").is_string(),
                 "every candidate needs a string 'prompt'");
    schema_check(c.contains("replaced_categories") && c.at("replaced_categories").is_array(),
                 "every candidate needs a 'replaced_categories' list");
    for (const auto& r : c.at("replaced_categories"))
      schema_check(r.is_string(), "replaced_categories must list strings");
  }
}

}  // namespace

DimensionCategorization::DimensionCategorization() {
  for (auto c : kCategories) groups[std::string(c)] = {};
}

bool DimensionCategorization::empty() const {
  return std::all_of(groups.begin(), groups.end(), [](const auto& g) { return g.second.empty(); });
}

std::vector<std::string> DimensionCategorization::homogeneous_categories() const {
  std::vector<std::string> out;
  for (auto c : kCategories) {
    const auto it = groups.find(std::string(c));
    if (it != groups.end() && !it->second.empty()) out.emplace_back(c);
  }
  return out;
}

std::string canonical_prompt(std::string_view prompt) {
  std::string out;
  bool space = false;
  for (unsigned char c : prompt) {
    if (std::isspace(c)) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  while (!out.empty() && (out.back() == '.' || out.back() == '!' || out.back() == ';' || out.back() == ' ')) {
    out.pop_back();
  }
  return out;
}

bool contains_phrase(std::string_view text, std::string_view phrase) {
  const auto hay = folded_words(text);
  const auto needle = folded_words(phrase);
  if (needle.empty()) return false;
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

std::string categorization_instruction(std::string_view t1, std::string_view t0, std::string_view version) {
  return render_template(template_text("categorize", version),
                         {{"t0", std::string(t0)}, {"t1", std::string(t1)}});
}

std::string expansion_instruction(const ExpansionRequest& req, std::string_view version) {
  const std::string context = req.preference_context.value_or("");
  std::string text = render_template(template_text("expand", version),
                                     {{"t0", req.t0},
                                      {"t1", req.t1},
                                      {"categorization", json(req.categorization).dump()},
                                      {"preference_context", context},
                                      {"K", std::to_string(req.pool_size)}});
  if (context.empty()) {
    const auto start = text.find_first_not_of('\n');
    text.erase(0, start == std::string::npos ? 0 : start);
  }
  return text;
}

CategorizationOutcome categorize_dimensions(std::string_view t1, const LlmClient& llm,
                                            const ExpansionOptions& options, std::string_view t0) {
  if (t1.find_first_not_of(" \t\r\n") == std::string_view::npos) {
    fail(ErrorCode::invalid_input, "t1 must be non-empty");
  }
  const std::string instruction = categorization_instruction(t1, t0, options.template_version);
  const json inputs = {{"task", "categorize"}, {"t0", std::string(t0)}, {"t1", std::string(t1)}};
  const auto call = call_with_retry(llm, instruction, inputs, validate_categorization, options.retry);

  CategorizationOutcome out;
  out.retries = call.retries;
  std::set<std::string> placed;
  for (auto category : kCategories) {
    const std::string key(category);
    if (!call.payload.contains(key)) continue;
    for (const auto& v : call.payload.at(key)) {
      const std::string phrase = v.get<std::string>();
      if (!contains_phrase(t1, phrase)) {
        out.warnings.push_back("dropped '" + phrase + "' from " + key + ": not present in t1");
        continue;
      }
      const std::string canon = canonical_prompt(phrase);
      if (!placed.insert(canon).second) {
        out.warnings.push_back("dropped '" + phrase + "' from " + key + ": already placed in another group");
        continue;
      }
      out.categorization.groups[key].push_back(phrase);
    }
  }
  if (out.categorization.empty()) out.warnings.push_back("no usable phrases in t1");
  return out;
}

ExpansionOutcome generate_candidates(const ExpansionRequest& req, const LlmClient& llm,
                                     const ExpansionOptions& options) {
  if (req.pool_size < 1) fail(ErrorCode::invalid_input, "pool size K must be >= 1");
  if (canonical_prompt(req.t0).empty()) fail(ErrorCode::invalid_input, "t0 must be non-empty");
  if (req.categorization.empty()) fail(ErrorCode::invalid_input, "categorization has no phrases to expand");
  if (options.max_rounds < 1) fail(ErrorCode::config, "expansion needs at least one round");

  const auto homogeneous = req.categorization.homogeneous_categories();
  const std::string instruction = expansion_instruction(req, options.template_version);
  const std::string t0_canon = canonical_prompt(req.t0);

  ExpansionOutcome out;
  std::set<std::string> seen;
  for (int round = 0; round < options.max_rounds && static_cast<int>(out.candidates.size()) < req.pool_size;
       ++round) {
    ++out.rounds;
    const json inputs = {{"task", "expand"},
                         {"t0", req.t0},
                         {"t1", req.t1},
                         {"categorization", req.categorization},
                         {"homogeneous_categories", homogeneous},
                         {"preference_context", req.preference_context.value_or("")},
                         {"count", req.pool_size - static_cast<int>(out.candidates.size())},
                         {"round", round},
                         {"seed", options.seed}};
    const auto call = call_with_retry(llm, instruction, inputs, validate_expansion, options.retry);
    out.retries += call.retries;

    for (const auto& c : call.payload.at("candidates")) {
      if (static_cast<int>(out.candidates.size()) >= req.pool_size) break;
      ExpansionCandidate cand;
      cand.prompt = c.at("prompt").get<std::string>();
      const std::string canon = canonical_prompt(cand.prompt);
      if (canon.empty()) {
        ++out.rejected_invalid;
        out.warnings.push_back("rejected an empty candidate");
        continue;
      }
      if (canon == t0_canon) {
        // The first echo of t0 is rejected as the original, later ones as duplicates of it.
        if (seen.insert(canon).second) {
          ++out.rejected_original;
          out.warnings.push_back("rejected a candidate identical to t0");
        } else {
          ++out.rejected_duplicates;
        }
        continue;
      }
      bool touches_homogeneous = false;
      for (const auto& r : c.at("replaced_categories")) {
        const std::string name = r.get<std::string>();
        if (!is_category(name)) continue;
        if (std::find(cand.replaced_categories.begin(), cand.replaced_categories.end(), name) ==
            cand.replaced_categories.end()) {
          cand.replaced_categories.push_back(name);
        }
        touches_homogeneous |= std::find(homogeneous.begin(), homogeneous.end(), name) != homogeneous.end();
      }
      if (!touches_homogeneous) {
        ++out.rejected_invalid;
        out.warnings.push_back("rejected '" + cand.prompt + "': modifies no homogeneous group");
        continue;
      }
      if (!seen.insert(canon).second) {
        ++out.rejected_duplicates;
        continue;
      }
      out.candidates.push_back(std::move(cand));
    }
  }
  if (out.rejected_duplicates > 0) {
    out.warnings.push_back("rejected " + std::to_string(out.rejected_duplicates) + " duplicate candidates");
  }
  if (static_cast<int>(out.candidates.size()) < req.pool_size) {
    const std::string msg = "expansion produced " + std::to_string(out.candidates.size()) + " of " +
                            std::to_string(req.pool_size) + " unique candidates after " +
                            std::to_string(out.rounds) + " rounds";
    throw PartialPoolError(msg, std::move(out));
  }
  return out;
}

void to_json(json& j, const DimensionCategorization& c) {
  j = json::object();
  for (auto cat : kCategories) {
    const auto it = c.groups.find(std::string(cat));
    j[std::string(cat)] = it == c.groups.end() ? std::vector<std::string>{} : it->second;
  }
}

void from_json(const json& j, DimensionCategorization& c) {
  c = DimensionCategorization();
  for (const auto& [key, value] : j.items()) {
    if (!is_category(key)) fail(ErrorCode::invalid_input, "unknown category '" + key + "'");
    c.groups[key] = value.get<std::vector<std::string>>();
  }
}

void to_json(json& j, const ExpansionCandidate& c) {
  j = json{{"prompt", c.prompt}, {"replaced_categories", c.replaced_categories}};
  j["image"] = c.image ? json(*c.image) : json(nullptr);
  j["div_score"] = c.div_score ? json(*c.div_score) : json(nullptr);
  j["sim_score"] = c.sim_score ? json(*c.sim_score) : json(nullptr);
  j["filter_score"] = c.filter_score ? json(*c.filter_score) : json(nullptr);
}

void from_json(const json& j, ExpansionCandidate& c) {
  auto opt_double = [&](const char* key) -> std::optional<double> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  c.prompt = j.at("prompt").get<std::string>();
  c.replaced_categories = j.value("replaced_categories", std::vector<std::string>{});
  c.image.reset();
  if (j.contains("image") && !j.at("image").is_null()) c.image = j.at("image").get<std::string>();
  c.div_score = opt_double("div_score");
  c.sim_score = opt_double("sim_score");
  c.filter_score = opt_double("filter_score");
}

void to_json(json& j, const ExpansionRequest& r) {
  j = json{{"t0", r.t0}, {"t1", r.t1}, {"categorization", r.categorization}, {"pool_size", r.pool_size}};
  j["preference_context"] = r.preference_context ? json(*r.preference_context) : json(nullptr);
}

void from_json(const json& j, ExpansionRequest& r) {
  r.t0 = j.at("t0").get<std::string>();
  r.t1 = j.at("t1").get<std::string>();
  r.categorization = j.at("categorization").get<DimensionCategorization>();
  r.pool_size = j.value("pool_size", 30);
  r.preference_context.reset();
  if (j.contains("preference_context") && !j.at("preference_context").is_null()) {
    r.preference_context = j.at("preference_context").get<std::string>();
  }
}

}  // namespace expanse
