#include "expanse/embedding/scorer.hpp"

#include "expanse/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

namespace expanse {
namespace {

bool blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

Matrix image_embeddings(const Scorer& scorer, const ImageSet& images) {
  if (images.embeddings) {
    if (images.embeddings->rows() != static_cast<Eigen::Index>(images.size())) {
      fail(ErrorCode::invalid_input, "image embedding rows do not match image count");
    }
    return *images.embeddings;
  }
  Matrix out(static_cast<Eigen::Index>(images.size()), scorer.info().embedding_dim);
  for (std::size_t i = 0; i < images.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = scorer.embed_image(images.images[i]).transpose();
  }
  return out;
}

}  // namespace

Vector Scorer::encode_tokens(std::span<const TokenId> ids) const {
  if (ids.empty()) fail(ErrorCode::invalid_input, "cannot encode an empty token sequence");
  return encode_sequence(gather_rows(vocabulary(), ids));
}

Vector Scorer::encode_text(std::string_view text) const {
  if (blank(text)) fail(ErrorCode::invalid_input, "text must be non-empty");
  auto ids = vocabulary().encode(normalize_prompt(text));
  if (ids.size() > static_cast<std::size_t>(info().text_max_tokens)) {
    ids.resize(static_cast<std::size_t>(info().text_max_tokens));
  }
  return encode_tokens(ids);
}

Vector Scorer::embed_image(const std::filesystem::path& image) const {
  image_calls_.fetch_add(1, std::memory_order_relaxed);
  Vector v = encode_image(image);
  const double norm = v.norm();
  if (!v.allFinite() || norm == 0.0) {
    fail(ErrorCode::numeric, "degenerate embedding for image " + image.string());
  }
  return v / norm;
}

TokenEmbeddingSequence tokenize_and_embed(std::string_view prompt, const Vocabulary& vocab,
                                          int m, std::uint64_t seed) {
  if (blank(prompt)) fail(ErrorCode::invalid_input, "prompt must be non-empty");
  if (m < 1) fail(ErrorCode::invalid_input, "slot count m must be positive");

  TokenEmbeddingSequence seq;
  seq.origin_prompt = std::string(prompt);
  TokenIds ids = vocab.encode(normalize_prompt(prompt));
  if (ids.size() > static_cast<std::size_t>(m)) {
    seq.warnings.push_back("prompt tokenizes to " + std::to_string(ids.size()) +
                           " tokens; truncated to the first " + std::to_string(m));
    ids.resize(static_cast<std::size_t>(m));
  }
  std::mt19937_64 rng(seed);
  const auto& pool = vocab.regular_ids();
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
  while (ids.size() < static_cast<std::size_t>(m)) ids.push_back(pool[pick(rng)]);

  seq.vectors = gather_rows(vocab, ids);
  seq.initial_ids = std::move(ids);
  return seq;
}

Matrix gather_rows(const Vocabulary& vocab, std::span<const TokenId> ids) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), vocab.dim());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab.size()) {
      fail(ErrorCode::invalid_input, "token id " + std::to_string(ids[i]) + " out of range");
    }
    out.row(static_cast<Eigen::Index>(i)) = vocab.matrix().row(ids[i]);
  }
  return out;
}

Projection project_to_vocab(const Matrix& slots, const Vocabulary& vocab) {
  Projection p;
  p.token_ids = vocab.nearest_rows(slots);
  p.projected = gather_rows(vocab, p.token_ids);
  return p;
}

double cosine(const Vector& a, const Vector& b) {
  const double denom = a.norm() * b.norm();
  if (denom == 0.0) fail(ErrorCode::numeric, "cosine of a zero vector");
  return std::clamp(a.dot(b) / denom, -1.0, 1.0);
}

double text_image_similarity(const Scorer& scorer, const Vector& text_embedding,
                             const ImageSet& images) {
  if (images.size() == 0) fail(ErrorCode::invalid_input, "image set is empty");
  const Matrix emb = image_embeddings(scorer, images);
  double total = 0.0;
  for (Eigen::Index i = 0; i < emb.rows(); ++i) total += cosine(text_embedding, emb.row(i).transpose());
  return total / static_cast<double>(emb.rows());
}

double text_image_similarity(const Scorer& scorer, std::string_view text, const ImageSet& images) {
  return text_image_similarity(scorer, scorer.encode_text(text), images);
}

double text_image_similarity(const Scorer& scorer, std::span<const TokenId> ids,
                             const ImageSet& images) {
  return text_image_similarity(scorer, scorer.encode_tokens(ids), images);
}

double text_text_similarity(const Scorer& scorer, std::string_view a, std::string_view b) {
  if (blank(a) || blank(b)) fail(ErrorCode::invalid_input, "both texts must be non-empty");
  return cosine(scorer.encode_text(a), scorer.encode_text(b));
}

}  // namespace expanse
