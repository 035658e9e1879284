#include "expanse/embedding/embedding_cache.hpp"

#include "expanse/error.hpp"
#include "expanse/hashing.hpp"
#include "expanse/util/binary_io.hpp"

#include <nlohmann/json.hpp>

#include <mutex>

namespace expanse {

EmbeddingCache::EmbeddingCache(const Scorer& scorer, std::optional<std::filesystem::path> dir)
    : scorer_(scorer), dir_(std::move(dir)) {
  if (dir_) std::filesystem::create_directories(*dir_);
}

std::size_t EmbeddingCache::memory_entries() const {
  std::shared_lock lock(mu_);
  return memory_.size();
}

std::optional<Vector> EmbeddingCache::load_disk(const std::string& hash) const {
  if (!dir_) return std::nullopt;
  const auto meta_path = *dir_ / (hash + ".json");
  const auto vec_path = *dir_ / (hash + ".f32");
  if (!std::filesystem::exists(meta_path) || !std::filesystem::exists(vec_path)) return std::nullopt;
  try {
    const auto meta = nlohmann::json::parse(read_text_file(meta_path));
    const int d = scorer_.info().embedding_dim;
    if (meta.at("model_id").get<std::string>() != scorer_.info().model_id ||
        meta.at("d").get<int>() != d) {
      return std::nullopt;
    }
    const auto values = read_f32_file(vec_path);
    if (values.size() != static_cast<std::size_t>(d)) return std::nullopt;
    Vector v(d);
    for (int i = 0; i < d; ++i) v[i] = values[static_cast<std::size_t>(i)];
    const double n = v.norm();
    if (!(n > 0.0)) return std::nullopt;
    return v / n;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

void EmbeddingCache::store_disk(const std::string& hash, const Vector& v) const {
  if (!dir_) return;
  std::vector<float> values(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) values[static_cast<std::size_t>(i)] = static_cast<float>(v[i]);
  write_f32_file(*dir_ / (hash + ".f32"), values);
  write_file_atomic(*dir_ / (hash + ".json"),
                    nlohmann::json{{"model_id", scorer_.info().model_id},
                                   {"d", scorer_.info().embedding_dim}}
                        .dump());
}

Vector EmbeddingCache::get(const std::filesystem::path& image) {
  const std::string hash = sha256_file(image);
  {
    std::shared_lock lock(mu_);
    if (auto it = memory_.find(hash); it != memory_.end()) return it->second;
  }
  Vector v;
  if (auto disk = load_disk(hash)) {
    v = std::move(*disk);
  } else {
    v = scorer_.embed_image(image);
    store_disk(hash, v);
  }
  std::unique_lock lock(mu_);
  return memory_.try_emplace(hash, std::move(v)).first->second;
}

ImageSet embed_images(ImageSet images, EmbeddingCache& cache) {
  if (images.size() == 0) fail(ErrorCode::invalid_input, "image set is empty");
  Matrix emb;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Vector v = cache.get(images.images[i]);
    if (i == 0) emb.resize(static_cast<Eigen::Index>(images.size()), v.size());
    emb.row(static_cast<Eigen::Index>(i)) = v.transpose();
  }
  images.embeddings = std::move(emb);
  return images;
}

}  // namespace expanse
