#pragma once

#include "expanse/embedding/scorer.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <future>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace expanse {

struct GenerationConfig {
  std::string backend_id = "mock";
  double guidance_scale = 7.5;
  int inference_steps = 28;
  int images_per_prompt = 10;  // 4 for interactive rounds
  std::vector<std::uint64_t> seeds;  // explicit seeds; when empty, seed_base + i
  std::uint64_t seed_base = 0;
  int width = 1024;
  int height = 1024;
  std::chrono::milliseconds timeout{600000};
  int max_in_flight = 4;

  void validate() const;
  std::vector<std::uint64_t> resolved_seeds() const;
};

struct ManifestRecord {
  std::string content_hash;
  std::string prompt;
  std::uint64_t seed = 0;
  std::string backend_id;
  double guidance_scale = 0.0;
  int inference_steps = 0;
  std::string created_at;  // ISO-8601 UTC
};

struct GenerationRecord {
  std::string prompt;
  ImageSet images;
  std::vector<std::string> content_hashes;  // aligned with images.images
  GenerationConfig config;
  double wall_time_s = 0.0;
  std::string backend_id;
};

/// Content-addressed image files plus a JSONL manifest (one row per stored
/// image) and a JSONL generation ledger (one row per generate call).
class ImageStore {
 public:
  explicit ImageStore(std::filesystem::path root);

  /// Writes the bytes under their sha256 unless already present and appends
  /// a manifest row. Returns the content hash.
  std::string put(std::span<const unsigned char> bytes, ManifestRecord meta);
  std::filesystem::path path_for(const std::string& content_hash) const;
  std::optional<std::filesystem::path> find(const std::string& content_hash) const;
  std::vector<ManifestRecord> manifest() const;
  /// First manifest row for a content hash.
  std::optional<ManifestRecord> lookup(const std::string& content_hash) const;
  void append_ledger(const GenerationRecord& record);
  const std::filesystem::path& root() const noexcept { return root_; }

 private:
  std::filesystem::path root_;
  mutable std::mutex mu_;
};

/// One text-to-image model. render() returns encoded image bytes.
class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual std::string id() const = 0;
  virtual std::vector<unsigned char> render(const std::string& prompt, std::uint64_t seed,
                                            const GenerationConfig& config) const = 0;
};

struct MockEmbeddingOptions {
  int dim = 1024;
  /// Magnitude of the seed-dependent noise relative to the unit prompt vector.
  double noise = 0.5;
  /// Weight of each default trait the mock model adds for categories the
  /// prompt leaves unspecified.
  double default_weight = 1.0;
};

/// Synthetic image embedding for (prompt, seed): the normalized sum of the
/// prompt's content-term vectors plus one default-trait term per unmentioned
/// category (attributes, setting, action; chosen by hashing the prompt's
/// first content term), plus seeded Gaussian noise. Deterministic; noise = 0
/// makes it independent of the seed.
Vector mock_embedding(std::string_view prompt, std::uint64_t seed, const MockEmbeddingOptions& options = {});

/// The default traits mock_embedding adds for a prompt, by category.
std::vector<std::pair<std::string, std::string>> mock_default_traits(std::string_view prompt);

/// Renders mock images (PPM carrying mock_embedding). Never touches the network.
class MockBackend final : public GenerationBackend {
 public:
  explicit MockBackend(MockEmbeddingOptions options = {}) : options_(options) {}
  std::string id() const override { return "mock"; }
  std::vector<unsigned char> render(const std::string& prompt, std::uint64_t seed,
                                    const GenerationConfig& config) const override;
  const MockEmbeddingOptions& options() const noexcept { return options_; }

 private:
  MockEmbeddingOptions options_;
};

/// HTTP adapter for a diffusion server. POSTs {prompt, seed, guidance_scale,
/// inference_steps, width, height} to <endpoint>/generate and expects image
/// bytes back. A 4xx reply with a policy marker becomes a policy error
/// carrying the server's message verbatim.
class RemoteBackend final : public GenerationBackend {
 public:
  RemoteBackend(std::string endpoint, std::string model_id);
  std::string id() const override { return "remote:" + model_id_; }
  std::vector<unsigned char> render(const std::string& prompt, std::uint64_t seed,
                                    const GenerationConfig& config) const override;

 private:
  std::string endpoint_;
  std::string model_id_;
};

/// Renders n images (at most config.max_in_flight concurrently), stores them
/// and appends a ledger row.
GenerationRecord generate(const std::string& prompt, const GenerationConfig& config,
                          const GenerationBackend& backend, ImageStore& store);

/// Same as generate(), run on a separate thread.
std::future<GenerationRecord> generate_async(std::string prompt, GenerationConfig config,
                                             const GenerationBackend& backend, ImageStore& store);

std::string utc_timestamp();

void to_json(nlohmann::json& j, const GenerationConfig& c);
void from_json(const nlohmann::json& j, GenerationConfig& c);
void to_json(nlohmann::json& j, const ManifestRecord& r);
void from_json(const nlohmann::json& j, ManifestRecord& r);
void to_json(nlohmann::json& j, const GenerationRecord& r);
void from_json(const nlohmann::json& j, GenerationRecord& r);

}  // namespace expanse
