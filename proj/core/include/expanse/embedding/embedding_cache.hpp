#pragma once

#include "expanse/embedding/scorer.hpp"

#include <filesystem>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>

namespace expanse {

/// Content-addressed image embedding cache in front of a Scorer.
///
/// Disk layout, one record per content hash under `dir`:
///   <sha256>.f32   little-endian float32 vector of length d
///   <sha256>.json  {"model_id": ..., "d": ...}
/// Records written by a different model or width are ignored.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(const Scorer& scorer, std::optional<std::filesystem::path> dir = {});

  Vector get(const std::filesystem::path& image);

  std::size_t memory_entries() const;

 private:
  std::optional<Vector> load_disk(const std::string& hash) const;
  void store_disk(const std::string& hash, const Vector& v) const;

  const Scorer& scorer_;
  std::optional<std::filesystem::path> dir_;
  mutable std::shared_mutex mu_;
  std::unordered_map<std::string, Vector> memory_;
};

/// Populates `images.embeddings` (unit-norm rows) through the cache.
ImageSet embed_images(ImageSet images, EmbeddingCache& cache);

}  // namespace expanse
