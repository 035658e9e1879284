#include "expanse/embedding/vocabulary.hpp"

#include "expanse/error.hpp"
#include "expanse/hashing.hpp"
#include "expanse/util/binary_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

namespace expanse {
namespace {

constexpr std::string_view kPieceChars = "abcdefghijklmnopqrstuvwxyz0123456789.,!?'-:;\"()&/";

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::string_view> split_whitespace(std::string_view text) {
  std::vector<std::string_view> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) words.push_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

}  // namespace

std::string normalize_prompt(std::string_view text) {
  static constexpr std::pair<std::string_view, char> kFold[] = {
      {"\xE2\x80\x98", '\''}, {"\xE2\x80\x99", '\''}, {"\xE2\x80\x9C", '"'},
      {"\xE2\x80\x9D", '"'},  {"\xE2\x80\x93", '-'},  {"\xE2\x80\x94", '-'}};
  constexpr std::string_view kSplit = ".,!?:;\"()&/";
  std::string spaced;
  spaced.reserve(text.size() + 8);
  for (std::size_t i = 0; i < text.size();) {
    bool folded = false;
    for (const auto& [seq, ascii] : kFold) {
      if (text.substr(i, seq.size()) == seq) {
        spaced.push_back(ascii);
        i += seq.size();
        folded = true;
        break;
      }
    }
    if (folded) continue;
    const char c = text[i++];
    if (kSplit.find(c) != std::string_view::npos) {
      spaced += ' ';
      spaced += c;
      spaced += ' ';
    } else {
      spaced.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  std::string out;
  for (auto word : split_whitespace(spaced)) {
    if (!out.empty()) out.push_back(' ');
    out.append(word);
  }
  return out;
}

Vocabulary::Vocabulary(Matrix rows, std::vector<std::string> tokens, std::vector<bool> special,
                       std::string tokenizer_id)
    : rows_(std::move(rows)),
      tokens_(std::move(tokens)),
      special_(std::move(special)),
      tokenizer_id_(std::move(tokenizer_id)) {
  if (rows_.rows() != static_cast<Eigen::Index>(tokens_.size())) {
    fail(ErrorCode::invalid_input, "vocabulary row count does not match token count");
  }
  if (special_.empty()) special_.assign(tokens_.size(), false);
  if (special_.size() != tokens_.size()) {
    fail(ErrorCode::invalid_input, "vocabulary special-token mask has the wrong length");
  }
  for (Eigen::Index i = 0; i < rows_.rows(); ++i) {
    if (!rows_.row(i).allFinite()) {
      fail(ErrorCode::invalid_input, "vocabulary row " + std::to_string(i) + " is not finite");
    }
    const double norm = rows_.row(i).norm();
    if (norm == 0.0) {
      fail(ErrorCode::invalid_input, "vocabulary row " + std::to_string(i) + " is the zero vector");
    }
    rows_.row(i) /= norm;
  }
  index_.reserve(tokens_.size());
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    index_.emplace(tokens_[i], static_cast<TokenId>(i));
    if (!special_[i]) regular_ids_.push_back(static_cast<TokenId>(i));
  }
  if (regular_ids_.empty()) fail(ErrorCode::invalid_input, "vocabulary has no regular tokens");
}

void Vocabulary::check_id(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    fail(ErrorCode::invalid_input, "token id " + std::to_string(id) + " out of range");
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  check_id(id);
  return tokens_[static_cast<std::size_t>(id)];
}

bool Vocabulary::is_special(TokenId id) const {
  check_id(id);
  return special_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::optional<TokenIds> Vocabulary::segment_word(std::string_view word) const {
  const std::size_t n = word.size();
  constexpr int kInf = std::numeric_limits<int>::max() / 2;
  // cost[i]: fewest pieces covering word[i..n) with a word-final last piece.
  std::vector<int> cost(n + 1, kInf);
  std::vector<std::size_t> next(n + 1, 0);
  std::vector<TokenId> piece(n + 1, -1);
  for (std::size_t i = n; i-- > 0;) {
    // Longest first piece wins among equal counts.
    for (std::size_t j = n; j > i; --j) {
      std::string candidate(word.substr(i, j - i));
      int tail = 0;
      if (j == n) {
        candidate += kWordEnd;
      } else {
        tail = cost[j];
        if (tail >= kInf) continue;
      }
      auto id = find(candidate);
      if (!id || special_[static_cast<std::size_t>(*id)]) continue;
      if (tail + 1 < cost[i]) {
        cost[i] = tail + 1;
        next[i] = j;
        piece[i] = *id;
      }
    }
  }
  if (n == 0 || cost[0] >= kInf) return std::nullopt;
  TokenIds ids;
  for (std::size_t i = 0; i < n; i = next[i]) ids.push_back(piece[i]);
  return ids;
}

TokenIds Vocabulary::encode(std::string_view text) const {
  TokenIds ids;
  for (auto word : split_whitespace(text)) {
    const std::string lowered = lower_ascii(word);
    auto pieces = segment_word(lowered);
    if (!pieces) fail(ErrorCode::invalid_input, "cannot tokenize word '" + lowered + "'");
    ids.insert(ids.end(), pieces->begin(), pieces->end());
  }
  return ids;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string text;
  for (TokenId id : ids) text += token(id);
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size();) {
    if (text.compare(i, kWordEnd.size(), kWordEnd) == 0) {
      out.push_back(' ');
      i += kWordEnd.size();
    } else {
      out.push_back(text[i++]);
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

TokenId Vocabulary::nearest(const Eigen::Ref<const Vector>& v) const {
  if (v.size() != rows_.cols()) {
    fail(ErrorCode::invalid_input, "projection dimension mismatch");
  }
  if (!v.allFinite() || v.norm() == 0.0) {
    fail(ErrorCode::degenerate_projection, "cannot project a zero-norm or non-finite vector");
  }
  const Vector scores = rows_ * v;
  TokenId best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  for (TokenId id : regular_ids_) {
    const double s = scores[id];
    if (s > best_score) {
      best_score = s;
      best = id;
    }
  }
  return best;
}

TokenIds Vocabulary::nearest_rows(const Matrix& slots) const {
  if (slots.cols() != rows_.cols()) {
    fail(ErrorCode::invalid_input, "projection dimension mismatch");
  }
  for (Eigen::Index i = 0; i < slots.rows(); ++i) {
    if (!slots.row(i).allFinite() || slots.row(i).norm() == 0.0) {
      fail(ErrorCode::degenerate_projection,
           "slot " + std::to_string(i) + " has zero norm or non-finite entries");
    }
  }
  // One GEMM for all slots; the per-slot norm does not change the argmax.
  const Matrix scores = slots * rows_.transpose();
  TokenIds ids(static_cast<std::size_t>(slots.rows()), -1);
  for (Eigen::Index i = 0; i < slots.rows(); ++i) {
    double best_score = -std::numeric_limits<double>::infinity();
    for (TokenId id : regular_ids_) {
      const double s = scores(i, id);
      if (s > best_score) {
        best_score = s;
        ids[static_cast<std::size_t>(i)] = id;
      }
    }
  }
  return ids;
}

Vector term_vector(std::string_view term, int dim) {
  std::mt19937_64 rng(mix64(fnv1a64(term) ^ static_cast<std::uint64_t>(dim)));
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v[i] = normal(rng);
  return v / v.norm();
}

Vocabulary build_synthetic_vocabulary(const std::vector<std::string>& words, int dim) {
  std::vector<std::string> tokens = {"<|startoftext|>", "<|endoftext|>"};
  std::vector<bool> special = {true, true};
  std::set<std::string> seen(tokens.begin(), tokens.end());
  auto add = [&](std::string token) {
    if (seen.insert(token).second) {
      tokens.push_back(std::move(token));
      special.push_back(false);
    }
  };
  for (char c : kPieceChars) {
    add(std::string(1, c));
    add(std::string(1, c) + std::string(Vocabulary::kWordEnd));
  }
  for (const auto& w : words) {
    const std::string lowered = lower_ascii(w);
    if (!lowered.empty()) add(lowered + std::string(Vocabulary::kWordEnd));
  }

  Matrix rows(static_cast<Eigen::Index>(tokens.size()), dim);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::string_view t = tokens[i];
    std::string key;
    if (t.size() > Vocabulary::kWordEnd.size() && t.ends_with(Vocabulary::kWordEnd) &&
        t.size() - Vocabulary::kWordEnd.size() > 1) {
      key = std::string(t.substr(0, t.size() - Vocabulary::kWordEnd.size()));
    } else {
      key = "piece:" + std::string(t);
    }
    rows.row(static_cast<Eigen::Index>(i)) = term_vector(key, dim).transpose();
  }
  return Vocabulary(std::move(rows), std::move(tokens), std::move(special),
                    "synthetic-wordpiece-v1");
}

Vocabulary load_vocabulary(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "meta.json");
  if (!meta_in) fail(ErrorCode::io, "missing vocabulary metadata in " + dir.string());
  const auto meta = nlohmann::json::parse(meta_in);
  const int dim = meta.at("dim").get<int>();

  std::vector<std::string> tokens;
  {
    std::ifstream in(dir / "tokens.txt");
    if (!in) fail(ErrorCode::io, "missing tokens.txt in " + dir.string());
    for (std::string line; std::getline(in, line);) tokens.push_back(line);
  }
  std::set<std::string> special_set;
  if (std::ifstream in(dir / "special.txt"); in) {
    for (std::string line; std::getline(in, line);) special_set.insert(line);
  }
  std::vector<bool> special(tokens.size(), false);
  for (std::size_t i = 0; i < tokens.size(); ++i) special[i] = special_set.count(tokens[i]) > 0;

  const auto values = read_f32_file(dir / "embeddings.f32");
  if (values.size() != tokens.size() * static_cast<std::size_t>(dim)) {
    fail(ErrorCode::io, "embeddings.f32 size does not match |V| x d");
  }
  Matrix rows(static_cast<Eigen::Index>(tokens.size()), dim);
  for (std::size_t i = 0; i < values.size(); ++i) rows.data()[i] = values[i];
  return Vocabulary(std::move(rows), std::move(tokens), std::move(special),
                    meta.value("tokenizer_id", std::string("unknown")));
}

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "tokens.txt");
    std::ofstream special(dir / "special.txt");
    for (std::size_t i = 0; i < vocab.size(); ++i) {
      const auto id = static_cast<TokenId>(i);
      out << vocab.token(id) << '\n';
      if (vocab.is_special(id)) special << vocab.token(id) << '\n';
    }
  }
  std::vector<float> values(vocab.matrix().data(), vocab.matrix().data() + vocab.matrix().size());
  write_f32_file(dir / "embeddings.f32", values);
  std::ofstream meta(dir / "meta.json");
  meta << nlohmann::json{{"tokenizer_id", vocab.tokenizer_id()}, {"dim", vocab.dim()}}.dump(2);
}

}  // namespace expanse
