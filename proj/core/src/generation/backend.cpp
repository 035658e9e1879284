#include "expanse/generation/backend.hpp"

#include "expanse/assets/builtin.hpp"
#include "expanse/embedding/mock_image.hpp"
#include "expanse/embedding/vocabulary.hpp"
#include "expanse/error.hpp"
#include "expanse/hashing.hpp"
#include "expanse/net/http.hpp"
#include "expanse/util/binary_io.hpp"

#include <algorithm>
#include <cctype>
#include <ctime>
#include <fstream>
#include <random>
#include <set>

namespace expanse {
namespace {

using nlohmann::json;

constexpr std::string_view kDefaultTraitCategories[] = {"attributes", "contextual_settings", "actions"};

std::vector<std::string> content_terms(std::string_view prompt) {
  std::vector<std::string> terms;
  std::set<std::string> seen;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty() && !is_stopword(cur) && seen.insert(cur).second) terms.push_back(cur);
    cur.clear();
  };
  for (unsigned char c : prompt) {
    if (std::isalnum(c) || c == '-' || c == '\'') cur.push_back(static_cast<char>(std::tolower(c)));
    else flush();
  }
  flush();
  return terms;
}

std::string extension_for(std::span<const unsigned char> bytes) {
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return ".ppm";
  if (bytes.size() >= 4 && bytes[0] == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' && bytes[3] == 'G') return ".png";
  if (bytes.size() >= 2 && bytes[0] == 0xFF && bytes[1] == 0xD8) return ".jpg";
  return ".bin";
}

constexpr const char* kExtensions[] = {".ppm", ".png", ".jpg", ".bin"};

}  // namespace

void GenerationConfig::validate() const {
  if (images_per_prompt < 1) fail(ErrorCode::invalid_input, "images_per_prompt must be >= 1");
  if (!seeds.empty() && static_cast<int>(seeds.size()) != images_per_prompt) {
    fail(ErrorCode::invalid_input, "explicit seed list has " + std::to_string(seeds.size()) +
                                       " entries but images_per_prompt is " +
                                       std::to_string(images_per_prompt));
  }
  if (inference_steps < 1) fail(ErrorCode::invalid_input, "inference_steps must be >= 1");
  if (max_in_flight < 1) fail(ErrorCode::invalid_input, "max_in_flight must be >= 1");
  if (width < 1 || height < 1) fail(ErrorCode::invalid_input, "image size must be positive");
}

std::vector<std::uint64_t> GenerationConfig::resolved_seeds() const {
  if (!seeds.empty()) return seeds;
  std::vector<std::uint64_t> out;
  for (int i = 0; i < images_per_prompt; ++i) out.push_back(seed_base + static_cast<std::uint64_t>(i));
  return out;
}

// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, std::string>> mock_default_traits(std::string_view prompt) {
  const auto terms = content_terms(prompt);
  std::set<std::string_view> mentioned;
  for (const auto& t : terms)
    if (auto c = lexicon_category(t)) mentioned.insert(*c);
  const std::string anchor = terms.empty() ? std::string() : terms.front();
  std::vector<std::pair<std::string, std::string>> out;
  for (auto category : kDefaultTraitCategories) {
    if (mentioned.count(category)) continue;
    const auto& words = lexicon_words(category);
    const auto pick = mix64(fnv1a64(anchor) ^ fnv1a64(category)) % words.size();
    out.emplace_back(std::string(category), words[pick]);
  }
  return out;
}

Vector mock_embedding(std::string_view prompt, std::uint64_t seed, const MockEmbeddingOptions& o) {
  if (o.dim < 1) fail(ErrorCode::invalid_input, "mock embedding dimension must be positive");
  Vector v = Vector::Zero(o.dim);
  for (const auto& t : content_terms(prompt)) v += term_vector(t, o.dim);
  for (const auto& [category, word] : mock_default_traits(prompt)) v += o.default_weight * term_vector(word, o.dim);
  if (v.norm() == 0.0) v = term_vector("", o.dim);
  v.normalize();
  if (o.noise > 0.0) {
    std::mt19937_64 rng(mix64(fnv1a64(prompt) ^ mix64(seed)));
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector g(o.dim);
    for (auto& x : g) x = normal(rng);
    v += o.noise * g.normalized();
    v.normalize();
  }
  return v;
}

std::vector<unsigned char> MockBackend::render(const std::string& prompt, std::uint64_t seed,
                                               const GenerationConfig&) const {
  return encode_mock_image(mock_embedding(prompt, seed, options_));
}

// ---------------------------------------------------------------------------

RemoteBackend::RemoteBackend(std::string endpoint, std::string model_id)
    : endpoint_(std::move(endpoint)), model_id_(std::move(model_id)) {
  while (!endpoint_.empty() && endpoint_.back() == '/') endpoint_.pop_back();
  if (endpoint_.empty()) fail(ErrorCode::config, "remote backend needs an endpoint URL");
}

std::vector<unsigned char> RemoteBackend::render(const std::string& prompt, std::uint64_t seed,
                                                 const GenerationConfig& config) const {
  const json body = {{"model", model_id_},
                     {"prompt", prompt},
                     {"seed", seed},
                     {"guidance_scale", config.guidance_scale},
                     {"inference_steps", config.inference_steps},
                     {"width", config.width},
                     {"height", config.height}};
  HttpOptions http;
  http.timeout = config.timeout;
  const auto res = http_post_json(endpoint_ + "/generate", body, http);
  if (res.status == 200) return {res.body.begin(), res.body.end()};
  bool policy = res.status == 451;
  try {
    const auto j = json::parse(res.body);
    policy = policy || j.value("policy", false) || j.value("error", std::string()) == "content_policy";
  } catch (const json::exception&) {
  }
  if (policy) fail(ErrorCode::policy, res.body);
  fail(ErrorCode::config, "generation endpoint returned HTTP " + std::to_string(res.status) + ": " +
                              res.body.substr(0, 300));
}

// ---------------------------------------------------------------------------

ImageStore::ImageStore(std::filesystem::path root) : root_(std::move(root)) {
  std::error_code ec;
  std::filesystem::create_directories(root_ / "images", ec);
  if (ec) fail(ErrorCode::io, "cannot create image store at " + root_.string() + ": " + ec.message());
}

std::string ImageStore::put(std::span<const unsigned char> bytes, ManifestRecord meta) {
  const std::string hash = sha256_hex(bytes);
  const auto path = root_ / "images" / (hash + extension_for(bytes));
  meta.content_hash = hash;
  if (meta.created_at.empty()) meta.created_at = utc_timestamp();
  std::lock_guard lock(mu_);
  if (!std::filesystem::exists(path)) write_file_atomic(path, bytes);
  std::ofstream out(root_ / "manifest.jsonl", std::ios::app);
  if (!out) fail(ErrorCode::io, "cannot append to image manifest in " + root_.string());
  out << json(meta).dump() << '\n';
  return hash;
}

std::optional<std::filesystem::path> ImageStore::find(const std::string& hash) const {
  if (hash.size() != 64 || !std::all_of(hash.begin(), hash.end(), [](char c) { return std::isxdigit(static_cast<unsigned char>(c)); })) {
    return std::nullopt;
  }
  for (const char* ext : kExtensions) {
    auto p = root_ / "images" / (hash + ext);
    if (std::filesystem::exists(p)) return p;
  }
  return std::nullopt;
}

std::filesystem::path ImageStore::path_for(const std::string& hash) const {
  auto p = find(hash);
  if (!p) fail(ErrorCode::not_found, "no stored image with content hash " + hash);
  return *p;
}

std::vector<ManifestRecord> ImageStore::manifest() const {
  std::lock_guard lock(mu_);
  std::vector<ManifestRecord> out;
  std::ifstream in(root_ / "manifest.jsonl");
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(json::parse(line).get<ManifestRecord>());
  }
  return out;
}

std::optional<ManifestRecord> ImageStore::lookup(const std::string& hash) const {
  for (auto& r : manifest())
    if (r.content_hash == hash) return r;
  return std::nullopt;
}

void ImageStore::append_ledger(const GenerationRecord& record) {
  std::lock_guard lock(mu_);
  std::ofstream out(root_ / "ledger.jsonl", std::ios::app);
  if (!out) fail(ErrorCode::io, "cannot append to generation ledger in " + root_.string());
  out << json(record).dump() << '\n';
}

// ---------------------------------------------------------------------------

GenerationRecord generate(const std::string& prompt, const GenerationConfig& config,
                          const GenerationBackend& backend, ImageStore& store) {
  config.validate();
  if (prompt.find_first_not_of(" \t\r\n") == std::string::npos) {
    fail(ErrorCode::invalid_input, "prompt must be non-empty");
  }
  const auto start = std::chrono::steady_clock::now();
  const auto seeds = config.resolved_seeds();

  GenerationRecord rec;
  rec.prompt = prompt;
  rec.config = config;
  rec.backend_id = backend.id();
  rec.images.source_prompt = prompt;
  rec.images.seeds = seeds;
  rec.content_hashes.resize(seeds.size());

  std::vector<std::vector<unsigned char>> rendered(seeds.size());
  auto render_one = [&](std::size_t i) { rendered[i] = backend.render(prompt, seeds[i], config); };
  // Stored in seed order so manifest rows do not depend on render timing.
  auto store_one = [&](std::size_t i) {
    ManifestRecord meta;
    meta.prompt = prompt;
    meta.seed = seeds[i];
    meta.backend_id = backend.id();
    meta.guidance_scale = config.guidance_scale;
    meta.inference_steps = config.inference_steps;
    rec.content_hashes[i] = store.put(rendered[i], std::move(meta));
    rendered[i] = {};
  };

  // Bounded in-flight: launch at most max_in_flight renders per wave.
  const auto wave = static_cast<std::size_t>(config.max_in_flight);
  for (std::size_t begin = 0; begin < seeds.size(); begin += wave) {
    const std::size_t end = std::min(seeds.size(), begin + wave);
    if (end - begin == 1) {
      render_one(begin);
    } else {
      std::vector<std::future<void>> inflight;
      for (std::size_t i = begin; i < end; ++i) inflight.push_back(std::async(std::launch::async, render_one, i));
      std::exception_ptr first_error;
      for (auto& f : inflight) {
        try {
          f.get();
        } catch (...) {
          if (!first_error) first_error = std::current_exception();
        }
      }
      if (first_error) std::rethrow_exception(first_error);
    }
    for (std::size_t i = begin; i < end; ++i) store_one(i);
  }
  for (const auto& h : rec.content_hashes) rec.images.images.push_back(store.path_for(h));
  rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  store.append_ledger(rec);
  return rec;
}

std::future<GenerationRecord> generate_async(std::string prompt, GenerationConfig config,
                                             const GenerationBackend& backend, ImageStore& store) {
  return std::async(std::launch::async, [prompt = std::move(prompt), config = std::move(config), &backend, &store] {
    return generate(prompt, config, backend, store);
  });
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---------------------------------------------------------------------------

void to_json(json& j, const GenerationConfig& c) {
  j = json{{"backend_id", c.backend_id},
           {"guidance_scale", c.guidance_scale},
           {"inference_steps", c.inference_steps},
           {"images_per_prompt", c.images_per_prompt},
           {"seeds", c.seeds},
           {"seed_base", c.seed_base},
           {"width", c.width},
           {"height", c.height},
           {"timeout_ms", c.timeout.count()},
           {"max_in_flight", c.max_in_flight}};
}

void from_json(const json& j, GenerationConfig& c) {
  GenerationConfig d;
  c.backend_id = j.value("backend_id", d.backend_id);
  c.guidance_scale = j.value("guidance_scale", d.guidance_scale);
  c.inference_steps = j.value("inference_steps", d.inference_steps);
  c.images_per_prompt = j.value("images_per_prompt", d.images_per_prompt);
  c.seeds = j.value("seeds", d.seeds);
  c.seed_base = j.value("seed_base", d.seed_base);
  c.width = j.value("width", d.width);
  c.height = j.value("height", d.height);
  c.timeout = std::chrono::milliseconds(j.value("timeout_ms", static_cast<long long>(d.timeout.count())));
  c.max_in_flight = j.value("max_in_flight", d.max_in_flight);
}

void to_json(json& j, const ManifestRecord& r) {
  j = json{{"content_hash", r.content_hash},     {"prompt", r.prompt},
           {"seed", r.seed},                     {"backend_id", r.backend_id},
           {"guidance_scale", r.guidance_scale}, {"inference_steps", r.inference_steps},
           {"created_at", r.created_at}};
}

void from_json(const json& j, ManifestRecord& r) {
  r.content_hash = j.at("content_hash").get<std::string>();
  r.prompt = j.at("prompt").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.backend_id = j.at("backend_id").get<std::string>();
  r.guidance_scale = j.at("guidance_scale").get<double>();
  r.inference_steps = j.at("inference_steps").get<int>();
  r.created_at = j.value("created_at", std::string());
}

void to_json(json& j, const GenerationRecord& r) {
  std::vector<std::string> paths;
  for (const auto& p : r.images.images) paths.push_back(p.string());
  j = json{{"prompt", r.prompt},
           {"images", paths},
           {"seeds", r.images.seeds},
           {"content_hashes", r.content_hashes},
           {"config", r.config},
           {"wall_time_s", r.wall_time_s},
           {"backend_id", r.backend_id}};
}

void from_json(const json& j, GenerationRecord& r) {
  r.prompt = j.at("prompt").get<std::string>();
  r.images = ImageSet{};
  for (const auto& p : j.at("images")) r.images.images.emplace_back(p.get<std::string>());
  r.images.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  r.images.source_prompt = r.prompt;
  r.content_hashes = j.at("content_hashes").get<std::vector<std::string>>();
  r.config = j.at("config").get<GenerationConfig>();
  r.wall_time_s = j.value("wall_time_s", 0.0);
  r.backend_id = j.at("backend_id").get<std::string>();
}

}  // namespace expanse
