#include "expanse/config/config.hpp"

#include "expanse/util/binary_io.hpp"

#include <charconv>
#include <cstdlib>
#include <map>

extern char** environ;

namespace expanse {
namespace {

using json = nlohmann::json;

void collect_leaves(const json& j, const std::string& prefix, std::vector<std::string>& out) {
  for (const auto& [key, value] : j.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object()) collect_leaves(value, path, out);
    else out.push_back(path);
  }
}

json::json_pointer pointer_for(const std::string& dotted) {
  std::string p;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    p += "/" + dotted.substr(start, dot - start);
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return json::json_pointer(p);
}

std::string env_name(const std::string& dotted) {
  std::string out = "EXPANSE_";
  for (char c : dotted) out.push_back(c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return out;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

// Parses `text` as the same JSON type as `like`.
std::optional<json> parse_like(const json& like, const std::string& text) {
  if (like.is_string()) return json(text);
  if (like.is_boolean()) {
    if (text == "true" || text == "1") return json(true);
    if (text == "false" || text == "0") return json(false);
    return std::nullopt;
  }
  if (like.is_number_unsigned()) {
    std::uint64_t v;
    if (parse_number(text, v)) return json(v);
    return std::nullopt;
  }
  if (like.is_number_integer()) {
    long long v;
    if (parse_number(text, v)) return json(v);
    return std::nullopt;
  }
  if (like.is_number_float()) {
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (!text.empty() && end == text.c_str() + text.size()) return json(v);
    return std::nullopt;
  }
  return std::nullopt;
}

bool same_kind(const json& like, const json& v) {
  if (like.is_number_float()) return v.is_number();
  if (like.is_number_unsigned()) return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
  if (like.is_number_integer()) return v.is_number_integer();
  return like.type() == v.type();
}

void overlay_file(json& merged, const json& file, const std::string& prefix, std::vector<std::string>& errors) {
  if (!file.is_object()) {
    errors.push_back((prefix.empty() ? std::string("config file") : prefix) + ": expected an object");
    return;
  }
  for (const auto& [key, value] : file.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!merged.contains(key)) {
      errors.push_back(path + ": unknown key");
      continue;
    }
    json& slot = merged[key];
    if (slot.is_object()) {
      overlay_file(slot, value, path, errors);
    } else if (!same_kind(slot, value)) {
      errors.push_back(path + ": expected " + std::string(slot.type_name()) + ", got " + value.type_name());
    } else {
      slot = value;
    }
  }
}

}  // namespace

ConfigError::ConfigError(std::vector<std::string> errors)
    : Error(ErrorCode::config,
            [&] {
              std::string msg = "invalid configuration:";
              for (const auto& e : errors) msg += "\n  - " + e;
              return msg;
            }()),
      errors_(std::move(errors)) {}

std::vector<std::string> GlobalConfig::validate() const {
  std::vector<std::string> errors;
  auto check = [&](bool ok, const std::string& msg) {
    if (!ok) errors.push_back(msg);
  };
  check(scorer.kind == "synthetic", "scorer.kind: only 'synthetic' is available in this build");
  check(scorer.dim >= 8, "scorer.dim: must be >= 8");
  check(backend.kind == "mock" || backend.kind == "remote", "backend.kind: must be mock or remote");
  check(backend.kind != "remote" || !backend.endpoint.empty(), "backend.endpoint: required for the remote backend");
  check(backend.noise >= 0.0, "backend.noise: must be >= 0");
  check(backend.default_weight >= 0.0, "backend.default_weight: must be >= 0");
  check(backend.inference_steps >= 1, "backend.inference_steps: must be >= 1");
  check(backend.max_in_flight >= 1, "backend.max_in_flight: must be >= 1");
  check(backend.timeout_ms > 0, "backend.timeout_ms: must be > 0");
  check(llm.kind == "rule" || llm.kind == "scripted" || llm.kind == "openai", "llm.kind: must be rule, scripted or openai");
  check(llm.kind != "scripted" || !llm.fixtures.empty(), "llm.fixtures: required for the scripted model");
  check(llm.max_attempts >= 1, "llm.max_attempts: must be >= 1");
  check(llm.backoff_ms >= 0, "llm.backoff_ms: must be >= 0");
  check(llm.timeout_ms > 0, "llm.timeout_ms: must be > 0");
  try {
    inversion.validate();
  } catch (const Error& e) {
    errors.push_back(std::string("inversion: ") + e.what());
  }
  check(images_per_prompt >= 2, "images_per_prompt: must be >= 2");
  check(images_per_prompt >= inversion.batch_size, "images_per_prompt: must be >= inversion.batch_size");
  check(pool_size >= 1, "pool_size: must be >= 1");
  check(expansion_rounds >= 1, "expansion_rounds: must be >= 1");
  try {
    filter.validate();
  } catch (const Error& e) {
    errors.push_back(std::string("filter: ") + e.what());
  }
  check(filter.select_count <= pool_size, "filter.select_count: must be <= pool_size");
  check(eval.sample_count >= 1, "eval.sample_count: must be >= 1");
  check(eval.n >= 2, "eval.n: must be >= 2");
  check(eval.workers >= 1, "eval.workers: must be >= 1");
  check(eval.checkpoint_every >= 1, "eval.checkpoint_every: must be >= 1");
  check(eval.degraded_fraction >= 0.0 && eval.degraded_fraction <= 1.0, "eval.degraded_fraction: must lie in [0, 1]");
  check(server.port >= 0 && server.port <= 65535, "server.port: must lie in 0..65535");
  check(server.interactive_images >= inversion.batch_size,
        "server.interactive_images: must be >= inversion.batch_size");
  check(context_token_budget >= 16, "context_token_budget: must be >= 16");
  check(!data_dir.empty(), "data_dir: must be non-empty");
  return errors;
}

RetryPolicy GlobalConfig::retry() const {
  return RetryPolicy{llm.max_attempts, std::chrono::milliseconds(llm.backoff_ms)};
}

PipelineConfig GlobalConfig::pipeline() const {
  PipelineConfig p;
  p.generation.backend_id = backend.kind;
  p.generation.guidance_scale = backend.guidance_scale;
  p.generation.inference_steps = backend.inference_steps;
  p.generation.images_per_prompt = images_per_prompt;
  p.generation.seed_base = seed;
  p.generation.max_in_flight = backend.max_in_flight;
  p.generation.timeout = std::chrono::milliseconds(backend.timeout_ms);
  p.inversion = inversion;
  p.inversion.seed = seed;
  p.expansion.retry = retry();
  p.expansion.max_rounds = expansion_rounds;
  p.expansion.seed = seed;
  p.pool_size = pool_size;
  p.filter = filter;
  return p;
}

GlobalConfig load_config(const std::optional<std::filesystem::path>& file, const ConfigOverrides& flags,
                         char** environ_block) {
  std::vector<std::string> errors;
  json merged = GlobalConfig{};

  if (file) {
    try {
      overlay_file(merged, json::parse(read_text_file(*file)), "", errors);
    } catch (const json::exception& e) {
      errors.push_back(file->string() + ": not valid JSON (" + e.what() + ")");
    } catch (const Error& e) {
      errors.push_back(e.what());
    }
  }

  std::map<std::string, std::string> by_env;
  std::vector<std::string> keys;
  collect_leaves(merged, "", keys);
  for (const auto& k : keys) by_env[env_name(k)] = k;

  auto apply = [&](const std::string& key, const std::string& value, const std::string& source) {
    const auto ptr = pointer_for(key);
    if (!merged.contains(ptr) || merged.at(ptr).is_object()) {
      errors.push_back(source + ": unknown key '" + key + "'");
      return;
    }
    const auto parsed = parse_like(merged.at(ptr), value);
    if (!parsed) {
      errors.push_back(source + ": cannot parse '" + value + "' as " + merged.at(ptr).type_name() + " for " + key);
      return;
    }
    merged[ptr] = *parsed;
  };

  for (char** e = environ_block ? environ_block : environ; e && *e; ++e) {
    const std::string entry(*e);
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    const auto it = by_env.find(entry.substr(0, eq));
    if (it != by_env.end()) apply(it->second, entry.substr(eq + 1), it->first);
  }
  for (const auto& [key, value] : flags) apply(key, value, "--" + key);

  GlobalConfig out;
  try {
    out = merged.get<GlobalConfig>();
  } catch (const std::exception& e) {
    errors.push_back(e.what());
  }
  if (errors.empty()) {
    auto more = out.validate();
    errors.insert(errors.end(), more.begin(), more.end());
  }
  if (!errors.empty()) throw ConfigError(std::move(errors));
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  collect_leaves(json(GlobalConfig{}), "", keys);
  return keys;
}

std::string version_string() { return EXPANSE_VERSION; }
std::string git_describe() { return EXPANSE_GIT_DESCRIBE; }

json provenance(const GlobalConfig& config) {
  return json{{"version", version_string()}, {"git_describe", git_describe()}, {"config", config}};
}

void to_json(json& j, const GlobalConfig& c) {
  j = json{{"scorer", {{"kind", c.scorer.kind}, {"dim", c.scorer.dim}, {"vocabulary_dir", c.scorer.vocabulary_dir},
                       {"model_id", c.scorer.model_id}}},
           {"backend", {{"kind", c.backend.kind}, {"endpoint", c.backend.endpoint}, {"model", c.backend.model},
                        {"noise", c.backend.noise}, {"default_weight", c.backend.default_weight},
                        {"guidance_scale", c.backend.guidance_scale}, {"inference_steps", c.backend.inference_steps},
                        {"max_in_flight", c.backend.max_in_flight}, {"timeout_ms", c.backend.timeout_ms}}},
           {"llm", {{"kind", c.llm.kind}, {"base_url", c.llm.base_url}, {"model", c.llm.model},
                    {"api_key_env", c.llm.api_key_env}, {"temperature", c.llm.temperature},
                    {"timeout_ms", c.llm.timeout_ms}, {"fixtures", c.llm.fixtures},
                    {"max_attempts", c.llm.max_attempts}, {"backoff_ms", c.llm.backoff_ms}}},
           {"inversion", c.inversion},
           {"images_per_prompt", c.images_per_prompt},
           {"pool_size", c.pool_size},
           {"expansion_rounds", c.expansion_rounds},
           {"filter", c.filter},
           {"eval", {{"sample_count", c.eval.sample_count}, {"n", c.eval.n}, {"workers", c.eval.workers},
                     {"checkpoint_every", c.eval.checkpoint_every}, {"degraded_fraction", c.eval.degraded_fraction}}},
           {"server", {{"host", c.server.host}, {"port", c.server.port},
                       {"interactive_images", c.server.interactive_images}}},
           {"context_token_budget", c.context_token_budget},
           {"seed", c.seed},
           {"data_dir", c.data_dir}};
}

void from_json(const json& j, GlobalConfig& c) {
  const GlobalConfig d;
  c = d;
  if (j.contains("scorer")) {
    const auto& s = j.at("scorer");
    c.scorer.kind = s.value("kind", d.scorer.kind);
    c.scorer.dim = s.value("dim", d.scorer.dim);
    c.scorer.vocabulary_dir = s.value("vocabulary_dir", d.scorer.vocabulary_dir);
    c.scorer.model_id = s.value("model_id", d.scorer.model_id);
  }
  if (j.contains("backend")) {
    const auto& b = j.at("backend");
    c.backend.kind = b.value("kind", d.backend.kind);
    c.backend.endpoint = b.value("endpoint", d.backend.endpoint);
    c.backend.model = b.value("model", d.backend.model);
    c.backend.noise = b.value("noise", d.backend.noise);
    c.backend.default_weight = b.value("default_weight", d.backend.default_weight);
    c.backend.guidance_scale = b.value("guidance_scale", d.backend.guidance_scale);
    c.backend.inference_steps = b.value("inference_steps", d.backend.inference_steps);
    c.backend.max_in_flight = b.value("max_in_flight", d.backend.max_in_flight);
    c.backend.timeout_ms = b.value("timeout_ms", d.backend.timeout_ms);
  }
  if (j.contains("llm")) {
    const auto& l = j.at("llm");
    c.llm.kind = l.value("kind", d.llm.kind);
    c.llm.base_url = l.value("base_url", d.llm.base_url);
    c.llm.model = l.value("model", d.llm.model);
    c.llm.api_key_env = l.value("api_key_env", d.llm.api_key_env);
    c.llm.temperature = l.value("temperature", d.llm.temperature);
    c.llm.timeout_ms = l.value("timeout_ms", d.llm.timeout_ms);
    c.llm.fixtures = l.value("fixtures", d.llm.fixtures);
    c.llm.max_attempts = l.value("max_attempts", d.llm.max_attempts);
    c.llm.backoff_ms = l.value("backoff_ms", d.llm.backoff_ms);
  }
  if (j.contains("inversion")) c.inversion = j.at("inversion").get<InversionConfig>();
  c.images_per_prompt = j.value("images_per_prompt", d.images_per_prompt);
  c.pool_size = j.value("pool_size", d.pool_size);
  c.expansion_rounds = j.value("expansion_rounds", d.expansion_rounds);
  if (j.contains("filter")) c.filter = j.at("filter").get<FilterConfig>();
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    c.eval.sample_count = e.value("sample_count", d.eval.sample_count);
    c.eval.n = e.value("n", d.eval.n);
    c.eval.workers = e.value("workers", d.eval.workers);
    c.eval.checkpoint_every = e.value("checkpoint_every", d.eval.checkpoint_every);
    c.eval.degraded_fraction = e.value("degraded_fraction", d.eval.degraded_fraction);
  }
  if (j.contains("server")) {
    const auto& s = j.at("server");
    c.server.host = s.value("host", d.server.host);
    c.server.port = s.value("port", d.server.port);
    c.server.interactive_images = s.value("interactive_images", d.server.interactive_images);
  }
  c.context_token_budget = j.value("context_token_budget", d.context_token_budget);
  c.seed = j.value("seed", d.seed);
  c.data_dir = j.value("data_dir", d.data_dir);
}

}  // namespace expanse
