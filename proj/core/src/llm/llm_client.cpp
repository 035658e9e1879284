#include "expanse/llm/llm_client.hpp"

#include "expanse/assets/builtin.hpp"
#include "expanse/error.hpp"
#include "expanse/hashing.hpp"
#include "expanse/net/http.hpp"
#include "expanse/util/binary_io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <random>
#include <set>
#include <thread>

namespace expanse {
namespace {

using nlohmann::json;

ErrorCode code_from_name(const std::string& name) {
  static const std::map<std::string, ErrorCode> codes = {
      {"transport", ErrorCode::transport}, {"timeout", ErrorCode::transport},
      {"rate_limit", ErrorCode::transport}, {"schema", ErrorCode::schema},
      {"policy", ErrorCode::policy}, {"invalid_input", ErrorCode::invalid_input}};
  const auto it = codes.find(name);
  return it == codes.end() ? ErrorCode::transport : it->second;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

// Lowercase words with surrounding punctuation stripped.
std::vector<std::string> plain_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    while (!cur.empty() && !std::isalnum(static_cast<unsigned char>(cur.back()))) cur.pop_back();
    std::size_t b = 0;
    while (b < cur.size() && !std::isalnum(static_cast<unsigned char>(cur[b]))) ++b;
    if (b < cur.size()) out.push_back(lower(cur.substr(b)));
    cur.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) flush();
    else cur.push_back(c);
  }
  flush();
  return out;
}

std::vector<std::string> image_paths(const json& inputs) {
  std::vector<std::string> paths;
  if (!inputs.contains("images")) return paths;
  for (const auto& img : inputs.at("images")) {
    paths.push_back(img.is_string() ? img.get<std::string>() : img.at("path").get<std::string>());
  }
  return paths;
}

std::string base64(const std::vector<unsigned char>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string mime_for(const std::string& path) {
  const auto ext = lower(std::filesystem::path(path).extension().string());
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".webp") return "image/webp";
  return "image/x-portable-pixmap";
}

// How an alternative word is worked into a prompt when nothing in the prompt
// belongs to its category.
std::string suffix_for(std::string_view category, const std::string& w) {
  if (category == "subjects") return ", depicted as a " + w;
  if (category == "contextual_settings") return ", set in a " + w + " scene";
  if (category == "relationships") return ", with " + w;
  return ", " + w;
}

}  // namespace

LlmCallResult call_with_retry(const LlmClient& client, std::string_view instruction,
                              const json& inputs, const PayloadValidator& validate,
                              const RetryPolicy& policy) {
  if (policy.max_attempts < 1) fail(ErrorCode::config, "retry budget must allow at least one attempt");
  LlmCallResult result;
  auto backoff = policy.backoff;
  for (int attempt = 1;; ++attempt) {
    ErrorCode code;
    std::string reason;
    try {
      json payload = client.call(instruction, inputs);
      if (validate) validate(payload);
      result.payload = std::move(payload);
      return result;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::transport && e.code() != ErrorCode::schema) throw;
      code = e.code();
      reason = e.what();
    } catch (const json::exception& e) {
      code = ErrorCode::schema;
      reason = e.what();
    }
    if (attempt >= policy.max_attempts) {
      if (code == ErrorCode::transport) fail(ErrorCode::transport, reason);
      fail(ErrorCode::expansion_format, "model output did not match the expected format after " +
                                            std::to_string(attempt) + " attempts: " + reason);
    }
    ++result.retries;
    result.retry_reasons.push_back(reason);
    if (backoff.count() > 0) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
}

// ---------------------------------------------------------------------------

std::string ScriptedLlm::key_for(std::string_view instruction) { return sha256_hex(instruction); }

std::shared_ptr<ScriptedLlm> ScriptedLlm::from_json(const json& script) {
  auto llm = std::make_shared<ScriptedLlm>();
  for (const auto& [key, value] : script.at("fixtures").items()) {
    if (value.is_object() && value.contains("$sequence")) {
      llm->add_sequence(key, value.at("$sequence").get<std::vector<json>>());
    } else {
      llm->add(key, value);
    }
  }
  return llm;
}

void ScriptedLlm::add(const std::string& key, json payload) { add_sequence(key, {std::move(payload)}); }

void ScriptedLlm::add_sequence(const std::string& key, std::vector<json> steps) {
  if (steps.empty()) fail(ErrorCode::invalid_input, "scripted fixture needs at least one step");
  std::lock_guard lock(mu_);
  fixtures_[key] = Entry{std::move(steps), 0};
}

json ScriptedLlm::call(std::string_view instruction, const json& inputs) const {
  const std::string key = key_for(instruction);
  json step;
  {
    std::lock_guard lock(mu_);
    const auto it = fixtures_.find(key);
    if (it == fixtures_.end()) {
      fail(ErrorCode::missing_fixture,
           "no scripted response for task '" + inputs.value("task", std::string("?")) +
               "' (instruction sha256 " + key + ")");
    }
    Entry& e = it->second;
    const auto idx = std::min<std::size_t>(static_cast<std::size_t>(e.calls), e.steps.size() - 1);
    ++e.calls;
    step = e.steps[idx];
  }
  if (step.is_object() && step.contains("$error")) {
    const std::string name = step.at("$error").get<std::string>();
    fail(code_from_name(name), "scripted " + name + " error");
  }
  return step;
}

int ScriptedLlm::calls(const std::string& key) const {
  std::lock_guard lock(mu_);
  const auto it = fixtures_.find(key);
  return it == fixtures_.end() ? 0 : it->second.calls;
}

std::size_t ScriptedLlm::fixture_count() const {
  std::lock_guard lock(mu_);
  return fixtures_.size();
}

// ---------------------------------------------------------------------------

RuleBasedLlm::RuleBasedLlm(RuleBasedLlmOptions options) : options_(std::move(options)) {
  if (!options_.vision) return;
  std::vector<Vector> rows;
  for (auto category : kCategories) {
    for (const auto& w : lexicon_words(category)) {
      try {
        rows.push_back(options_.vision->encode_text(w));
        words_.push_back(w);
      } catch (const Error&) {
        // A vision model whose tokenizer cannot spell the word just skips it.
      }
    }
  }
  word_embeddings_.resize(static_cast<Eigen::Index>(rows.size()), options_.vision->info().embedding_dim);
  for (std::size_t i = 0; i < rows.size(); ++i) word_embeddings_.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
}

json RuleBasedLlm::call(std::string_view, const json& inputs) const {
  const std::string task = inputs.value("task", std::string());
  if (task == "categorize") return categorize(inputs);
  if (task == "expand") return expand(inputs);
  if (task == "analyze_images") return analyze_images(inputs);
  if (task == "caption") return caption(inputs);
  if (task == "summarize_captions") return summarize(inputs);
  if (task == "describe_image_set") return describe_set(inputs);
  fail(ErrorCode::invalid_input, "rule-based model has no handler for task '" + task + "'");
}

std::vector<std::string> RuleBasedLlm::describe_image(const std::string& path) const {
  if (!options_.vision) fail(ErrorCode::invalid_state, "rule-based model has no vision scorer");
  const Vector e = options_.vision->embed_image(path);
  const Vector scores = word_embeddings_ * e;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(scores.size()));
  for (Eigen::Index i = 0; i < scores.size(); ++i) order[static_cast<std::size_t>(i)] = i;
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(options_.describe_top_k), order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](Eigen::Index a, Eigen::Index b) {
                      return scores(a) != scores(b) ? scores(a) > scores(b) : a < b;
                    });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(words_[static_cast<std::size_t>(order[i])]);
  return out;
}

json RuleBasedLlm::categorize(const json& inputs) const {
  json groups = json::object();
  for (auto c : kCategories) groups[std::string(c)] = json::array();
  std::set<std::string> seen;
  for (const auto& w : plain_words(inputs.at("t1").get<std::string>())) {
    const auto cat = lexicon_category(w);
    if (cat && seen.insert(w).second) groups[std::string(*cat)].push_back(w);
  }
  return groups;
}

json RuleBasedLlm::expand(const json& inputs) const {
  const std::string t0 = inputs.at("t0").get<std::string>();
  const json& cats = inputs.at("categorization");
  const int count = inputs.at("count").get<int>();
  const auto round = inputs.value("round", 0);
  const auto seed = inputs.value("seed", std::uint64_t{0});
  std::mt19937_64 rng(mix64(options_.seed ^ mix64(seed) ^ fnv1a64(t0) ^ mix64(static_cast<std::uint64_t>(round) + 1)));

  std::set<std::string> taken;
  for (const auto& w : plain_words(t0)) taken.insert(w);
  std::vector<std::string> homogeneous;
  for (auto c : kCategories) {
    const std::string key(c);
    if (!cats.contains(key) || cats.at(key).empty()) continue;
    homogeneous.push_back(key);
    for (const auto& p : cats.at(key))
      for (const auto& w : plain_words(p.get<std::string>())) taken.insert(w);
  }
  json out = json::array();
  if (homogeneous.empty()) return json{{"candidates", out}};

  // Alternatives are drawn without replacement within one call, so a single
  // request does not repeat itself until a category's words run out.
  std::map<std::string, std::set<std::string>> used;
  auto alternative = [&](const std::string& category) {
    std::vector<std::string> pool;
    for (const auto& w : lexicon_words(category))
      if (!taken.count(w) && !used[category].count(w)) pool.push_back(w);
    if (pool.empty()) {
      used[category].clear();
      for (const auto& w : lexicon_words(category))
        if (!taken.count(w)) pool.push_back(w);
    }
    if (pool.empty()) return std::string();
    const auto w = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
    used[category].insert(w);
    return w;
  };

  for (int i = 0; i < count; ++i) {
    std::vector<std::string> chosen{homogeneous[static_cast<std::size_t>(i) % homogeneous.size()]};
    if (homogeneous.size() > 1 && std::bernoulli_distribution(0.5)(rng)) {
      std::string other = chosen[0];
      while (other == chosen[0]) other = homogeneous[std::uniform_int_distribution<std::size_t>(0, homogeneous.size() - 1)(rng)];
      chosen.push_back(other);
    }
    // Work on whitespace-separated words so punctuation stays where it was.
    std::vector<std::string> words;
    {
      std::string cur;
      for (char c : t0) {
        if (std::isspace(static_cast<unsigned char>(c))) {
          if (!cur.empty()) words.push_back(cur);
          cur.clear();
        } else {
          cur.push_back(c);
        }
      }
      if (!cur.empty()) words.push_back(cur);
    }
    std::string tail;
    json replaced = json::array();
    for (const auto& category : chosen) {
      const std::string alt = alternative(category);
      if (alt.empty()) continue;
      bool substituted = false;
      for (auto& w : words) {
        const auto core = plain_words(w);
        if (core.size() != 1) continue;
        const auto cat = lexicon_category(core[0]);
        if (cat && *cat == category) {
          const auto pos = lower(w).find(core[0]);
          w = w.substr(0, pos) + alt + w.substr(pos + core[0].size());
          substituted = true;
          break;
        }
      }
      if (!substituted) {
        // Strip a trailing full stop so the addition reads as one sentence.
        if (tail.empty() && !words.empty() && words.back().back() == '.') words.back().pop_back();
        tail += suffix_for(category, alt);
      }
      replaced.push_back(category);
    }
    if (replaced.empty()) continue;
    std::string prompt;
    for (const auto& w : words) prompt += (prompt.empty() ? "" : " ") + w;
    out.push_back({{"prompt", prompt + tail}, {"replaced_categories", replaced}});
  }
  return json{{"candidates", out}};
}

json RuleBasedLlm::analyze_images(const json& inputs) const {
  json notes = json::array();
  for (const auto& img : inputs.at("images")) {
    const auto words = describe_image(img.at("path").get<std::string>());
    std::string attrs;
    for (const auto& w : words) attrs += (attrs.empty() ? "" : ", ") + w;
    notes.push_back({{"image_id", img.at("image_id")},
                     {"polarity", img.at("polarity")},
                     {"attributes", attrs}});
  }
  return json{{"notes", notes}};
}

json RuleBasedLlm::caption(const json& inputs) const {
  const auto paths = image_paths(inputs);
  if (paths.size() != 1) fail(ErrorCode::invalid_input, "caption expects exactly one image");
  std::string text;
  for (const auto& w : describe_image(paths[0])) text += (text.empty() ? "" : " ") + w;
  return json{{"caption", text}};
}

namespace {

// Words occurring in at least half of the lists, most frequent first.
std::string shared_words(const std::vector<std::vector<std::string>>& lists) {
  std::map<std::string, int> count;
  std::map<std::string, std::size_t> first_seen;
  std::size_t order = 0;
  for (const auto& list : lists) {
    std::set<std::string> uniq(list.begin(), list.end());
    for (const auto& w : list) {
      if (!uniq.erase(w)) continue;
      ++count[w];
      first_seen.emplace(w, order++);
    }
  }
  std::vector<std::string> words;
  for (const auto& [w, c] : count)
    if (2 * c >= static_cast<int>(lists.size()) && !is_stopword(w)) words.push_back(w);
  std::sort(words.begin(), words.end(), [&](const auto& a, const auto& b) {
    return count[a] != count[b] ? count[a] > count[b] : first_seen[a] < first_seen[b];
  });
  std::string out;
  for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
  return out;
}

}  // namespace

json RuleBasedLlm::summarize(const json& inputs) const {
  std::vector<std::vector<std::string>> lists;
  for (const auto& c : inputs.at("captions")) lists.push_back(plain_words(c.get<std::string>()));
  return json{{"shared_traits", shared_words(lists)}};
}

json RuleBasedLlm::describe_set(const json& inputs) const {
  std::vector<std::vector<std::string>> lists;
  for (const auto& p : image_paths(inputs)) lists.push_back(describe_image(p));
  return json{{"shared_traits", shared_words(lists)}};
}

// ---------------------------------------------------------------------------

OpenAiCompatibleLlm::OpenAiCompatibleLlm(OpenAiCompatibleOptions options) : options_(std::move(options)) {}

json OpenAiCompatibleLlm::call(std::string_view instruction, const json& inputs) const {
  json content = json::array();
  content.push_back({{"type", "text"}, {"text", std::string(instruction)}});
  for (const auto& path : image_paths(inputs)) {
    const std::string url = "data:" + mime_for(path) + ";base64," + base64(read_binary_file(path));
    content.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
  }
  const json body = {
      {"model", options_.model},
      {"temperature", options_.temperature},
      {"response_format", {{"type", "json_object"}}},
      {"messages",
       json::array({{{"role", "system"}, {"content", "Reply with a single JSON object and nothing else."}},
                    {{"role", "user"}, {"content", content}}})}};

  HttpOptions http;
  http.timeout = options_.timeout;
  if (const char* key = std::getenv(options_.api_key_env.c_str()); key && *key) {
    http.headers["Authorization"] = std::string("Bearer ") + key;
  }
  std::string base = options_.base_url;
  while (!base.empty() && base.back() == '/') base.pop_back();
  const auto res = http_post_json(base + "/v1/chat/completions", body, http);
  if (res.status != 200) {
    fail(ErrorCode::config, "language model endpoint returned HTTP " + std::to_string(res.status) +
                                ": " + res.body.substr(0, 300));
  }
  json reply;
  try {
    reply = json::parse(res.body);
  } catch (const json::exception& e) {
    fail(ErrorCode::schema, std::string("endpoint reply is not JSON: ") + e.what());
  }
  const auto& choice = reply.at("choices").at(0);
  if (choice.value("finish_reason", std::string()) == "content_filter") {
    fail(ErrorCode::policy, "language model refused the request (content filter)");
  }
  const std::string text = choice.at("message").at("content").get<std::string>();
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    fail(ErrorCode::schema, "model reply is not a JSON object: " + text.substr(0, 200));
  }
}

}  // namespace expanse
