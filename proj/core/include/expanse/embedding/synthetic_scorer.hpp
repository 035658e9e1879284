#pragma once

#include "expanse/embedding/scorer.hpp"

#include <cstdint>
#include <memory>
#include <optional>

namespace expanse {

struct SyntheticScorerOptions {
  std::string model_id = "synthetic-term-hash-v1";
  int text_max_tokens = 77;
  /// When set, a fixed random d x d map is applied after pooling. Off by
  /// default so text and mock-image embeddings share one space.
  std::optional<std::uint64_t> mixing_seed;
};

/// Deterministic stand-in for a joint text-image model.
///
/// Text side: u = normalize(W * sum_i e_i / |e_i|), with W the optional
/// mixing map (identity otherwise). Image side: mock images carry their own
/// embedding; any other file maps to term_vector("image:" + sha256(bytes)).
class SyntheticScorer final : public Scorer {
 public:
  explicit SyntheticScorer(std::shared_ptr<const Vocabulary> vocab,
                           SyntheticScorerOptions options = {});

  const ScorerInfo& info() const override { return info_; }
  const Vocabulary& vocabulary() const override { return *vocab_; }

  Vector encode_sequence(const Matrix& slots) const override;
  Matrix sequence_vjp(const Matrix& slots, const Vector& upstream) const override;

 protected:
  Vector encode_image(const std::filesystem::path& image) const override;

 private:
  Vector pooled(const Matrix& slots) const;

  std::shared_ptr<const Vocabulary> vocab_;
  ScorerInfo info_;
  std::optional<Matrix> mixing_;
};

/// Synthetic vocabulary over the built-in word list at dimension `dim`.
std::shared_ptr<const Vocabulary> default_synthetic_vocabulary(int dim = 1024);

}  // namespace expanse
