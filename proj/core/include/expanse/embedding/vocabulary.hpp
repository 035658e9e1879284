#pragma once

#include "expanse/types.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace expanse {

/// Token vocabulary with one embedding row per token.
///
/// Token strings follow the CLIP convention: a piece that ends a word carries
/// the `</w>` suffix, a piece that continues into the next one does not.
/// Rows are unit-normalized on construction so cosine similarity against the
/// vocabulary reduces to a dot product.
class Vocabulary {
 public:
  static constexpr std::string_view kWordEnd = "</w>";

  Vocabulary(Matrix rows, std::vector<std::string> tokens, std::vector<bool> special,
             std::string tokenizer_id);

  std::size_t size() const noexcept { return tokens_.size(); }
  int dim() const noexcept { return static_cast<int>(rows_.cols()); }
  const Matrix& matrix() const noexcept { return rows_; }
  const std::string& tokenizer_id() const noexcept { return tokenizer_id_; }

  const std::string& token(TokenId id) const;
  bool is_special(TokenId id) const;
  std::optional<TokenId> find(std::string_view token) const;

  /// Ids that may be used as padding or projection targets (special tokens excluded).
  const TokenIds& regular_ids() const noexcept { return regular_ids_; }

  /// Lower-cases, splits on whitespace and segments each word into the fewest
  /// pieces. Throws invalid_input when a word cannot be segmented.
  TokenIds encode(std::string_view text) const;

  /// Concatenates pieces, turning `</w>` into a space. Throws invalid_input on
  /// out-of-range ids.
  std::string decode(std::span<const TokenId> ids) const;

  /// Nearest regular token by cosine similarity; ties go to the lowest id.
  /// Throws degenerate_projection for zero-norm or non-finite input.
  TokenId nearest(const Eigen::Ref<const Vector>& v) const;

  /// Row-wise nearest() for a whole slot matrix. `slot` in the error names the row.
  TokenIds nearest_rows(const Matrix& slots) const;

 private:
  std::optional<TokenIds> segment_word(std::string_view word) const;
  void check_id(TokenId id) const;

  Matrix rows_;
  std::vector<std::string> tokens_;
  std::vector<bool> special_;
  std::string tokenizer_id_;
  std::unordered_map<std::string, TokenId> index_;
  TokenIds regular_ids_;
};

/// Canonical prompt text: lower-case, Unicode quotes and dashes folded to
/// ASCII, sentence punctuation split into separate words, whitespace collapsed.
/// Prompts go through this before Vocabulary::encode.
std::string normalize_prompt(std::string_view text);

/// Deterministic unit vector for a term, derived from its FNV-1a hash.
/// Shared by the synthetic vocabulary and the mock image embeddings so that
/// the two live in the same space.
Vector term_vector(std::string_view term, int dim);

/// Builds a synthetic vocabulary: special tokens, single-character pieces in
/// both word-final and continuation form, and one word-final token per word.
/// Word rows are term_vector(word).
Vocabulary build_synthetic_vocabulary(const std::vector<std::string>& words, int dim);

/// Directory layout: tokens.txt (one token per line), special.txt (special
/// tokens, one per line), embeddings.f32 (|V| x d little-endian float32) and
/// meta.json ({"tokenizer_id", "dim"}).
Vocabulary load_vocabulary(const std::filesystem::path& dir);
void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& dir);

}  // namespace expanse
