#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace expanse {

/// The five semantic groups homogeneous dimensions are sorted into.
inline constexpr std::array<std::string_view, 5> kCategories = {
    "subjects", "attributes", "contextual_settings", "actions", "relationships"};

bool is_category(std::string_view name);

/// Words the offline language model recognizes per category. Every word is
/// listed under exactly one category.
const std::vector<std::string>& lexicon_words(std::string_view category);

/// Category of a single lowercase word, if the lexicon knows it.
std::optional<std::string_view> lexicon_category(std::string_view word);

/// Fine-grained preference facets (age, ethnicity, setting, tone, ...) used to
/// summarize what a user keeps revising.
struct Facet {
  std::string name;
  std::string category;  // one of kCategories
  std::vector<std::string> keywords;
};
const std::vector<Facet>& preference_facets();

/// Function words dropped from term-hash embeddings.
bool is_stopword(std::string_view word);

/// Vocabulary of the synthetic scorer: lexicon words, facet keywords, fixture
/// prompt words and a general word list, deduplicated, in a fixed order.
const std::vector<std::string>& builtin_words();

struct Scenario {
  std::string id;
  std::string title;
  std::string background;
  std::string initial_prompt;
  std::vector<std::uint64_t> initial_seeds;  // pinned so every session starts from the same images
};
const std::vector<Scenario>& scenarios();
const Scenario* find_scenario(std::string_view id);

/// Twenty caption-style prompts used by the offline evaluation fixtures.
const std::vector<std::string>& fixture_prompts();

}  // namespace expanse
