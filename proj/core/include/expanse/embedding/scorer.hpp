#pragma once

#include "expanse/embedding/vocabulary.hpp"
#include "expanse/types.hpp"

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace expanse {

struct ScorerInfo {
  std::string model_id;
  int text_max_tokens = 77;
  int embedding_dim = 1024;
};

/// Images generated from one prompt. When `embeddings` is set it has one
/// unit-norm row per image.
struct ImageSet {
  std::vector<std::filesystem::path> images;
  std::optional<Matrix> embeddings;
  std::string source_prompt;
  std::vector<std::uint64_t> seeds;

  std::size_t size() const noexcept { return images.size(); }
};

/// Frozen joint text-image embedding model. Implementations are read-only
/// after construction and safe for concurrent calls.
///
/// The text side is exposed at the token-embedding level so that prompt
/// inversion can differentiate through it: encode_sequence() maps an m x d
/// slot matrix to a unit-norm text embedding, and sequence_vjp() returns the
/// gradient of <encode_sequence(slots), upstream> with respect to the slots.
class Scorer {
 public:
  virtual ~Scorer() = default;

  virtual const ScorerInfo& info() const = 0;
  virtual const Vocabulary& vocabulary() const = 0;

  virtual Vector encode_sequence(const Matrix& slots) const = 0;
  virtual Matrix sequence_vjp(const Matrix& slots, const Vector& upstream) const = 0;

  /// Text embedding of a token id sequence (vocabulary rows fed to encode_sequence).
  virtual Vector encode_tokens(std::span<const TokenId> ids) const;

  /// Tokenizes and encodes. Throws invalid_input for empty text.
  virtual Vector encode_text(std::string_view text) const;

  /// Unit-norm image embedding. Throws io naming the image when unreadable.
  Vector embed_image(const std::filesystem::path& image) const;

  /// Number of embed_image() calls that reached the model.
  std::uint64_t image_invocations() const noexcept { return image_calls_.load(); }

 protected:
  virtual Vector encode_image(const std::filesystem::path& image) const = 0;

 private:
  mutable std::atomic<std::uint64_t> image_calls_{0};
};

/// Learnable continuous slot embeddings for one inversion run.
struct TokenEmbeddingSequence {
  Matrix vectors;  // m x d
  std::string origin_prompt;
  TokenIds initial_ids;
  std::vector<std::string> warnings;

  int m() const noexcept { return static_cast<int>(vectors.rows()); }
};

/// First k slots hold the prompt's token rows in order; the remaining m - k
/// slots hold rows of regular tokens drawn uniformly with `seed`. Prompts
/// longer than m tokens are truncated with a warning.
TokenEmbeddingSequence tokenize_and_embed(std::string_view prompt, const Vocabulary& vocab,
                                          int m, std::uint64_t seed);

struct Projection {
  TokenIds token_ids;
  Matrix projected;  // row i = vocabulary row token_ids[i]
};

/// Nearest-neighbor mapping of every slot onto the vocabulary by cosine.
Projection project_to_vocab(const Matrix& slots, const Vocabulary& vocab);

Matrix gather_rows(const Vocabulary& vocab, std::span<const TokenId> ids);

/// Mean cosine between one text embedding and each image embedding.
/// Uses cached embeddings when present, otherwise embeds through the scorer.
double text_image_similarity(const Scorer& scorer, const Vector& text_embedding,
                             const ImageSet& images);
double text_image_similarity(const Scorer& scorer, std::string_view text, const ImageSet& images);
double text_image_similarity(const Scorer& scorer, std::span<const TokenId> ids,
                             const ImageSet& images);

/// Cosine similarity of two text embeddings. Throws invalid_input on empty text.
double text_text_similarity(const Scorer& scorer, std::string_view a, std::string_view b);

double cosine(const Vector& a, const Vector& b);

}  // namespace expanse
