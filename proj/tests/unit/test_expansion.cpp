#include "support/stack.hpp"

#include "expanse/assets/builtin.hpp"
#include "expanse/expansion/expansion.hpp"
#include "expanse/expansion/templates.hpp"

#include <gtest/gtest.h>

#include <set>
#include <sstream>

using namespace expanse;
using namespace expanse::testing;
using json = nlohmann::json;

namespace {

const char* kArtist = "An ancient artist is composing a piece of work";
const char* kArtistT1 = "considering experienced beard apostle writing";

// Independent phrase check: lowercase word lists, consecutive match.
bool oracle_contains(const std::string& text, const std::string& phrase) {
  auto words = [](std::string s) {
    for (auto& c : s) c = std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::tolower(c)) : ' ';
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
  };
  const auto t = words(text), p = words(phrase);
  if (p.empty() || p.size() > t.size()) return false;
  for (std::size_t i = 0; i + p.size() <= t.size(); ++i)
    if (std::equal(p.begin(), p.end(), t.begin() + static_cast<std::ptrdiff_t>(i))) return true;
  return false;
}

DimensionCategorization artist_categorization() {
  RuleBasedLlm llm;
  return categorize_dimensions(kArtistT1, llm, {}, kArtist).categorization;
}

}  // namespace

TEST(Templates, RenderSubstitutesKnownPlaceholdersOnly) {
  EXPECT_EQ(render_template("{t0} / {t1} / {\"json\": 1}", {{"t0", "a"}, {"t1", "b"}}), "a / b / {\"json\": 1}");
  EXPECT_EQ(thrown_code([] { render_template("{t0} and {K}", {{"t0", "a"}}); }), ErrorCode::invalid_input);
  EXPECT_EQ(thrown_code([] { template_text("expand", "v999"); }), ErrorCode::not_found);
}

TEST(Templates, EveryTemplateRendersWithItsPlaceholders) {
  const std::map<std::string, std::string> all = {{"t0", "x"}, {"t1", "y"}, {"categorization", "{}"},
                                                  {"preference_context", ""}, {"K", "3"},
                                                  {"images", "i"}, {"captions", "[]"}};
  for (const char* name : {"categorize", "expand", "analyze_images", "caption", "summarize_captions",
                           "describe_image_set"}) {
    const auto text = render_template(template_text(name), all);
    EXPECT_NE(text.find("JSON"), std::string::npos) << name;
  }
}

TEST(Canonical, CaseWhitespaceAndTrailingPunctuation) {
  EXPECT_EQ(canonical_prompt("  A  Dog\tRuns. "), "a dog runs");
  EXPECT_EQ(canonical_prompt("A dog runs!"), canonical_prompt("a dog runs"));
  EXPECT_NE(canonical_prompt("a dog, runs"), canonical_prompt("a dog runs"));
  EXPECT_TRUE(contains_phrase("The Old, bearded apostle", "bearded apostle"));
  EXPECT_FALSE(contains_phrase("The old bearded apostle", "apostle bearded"));
}

TEST(Categorize, ArtistDimensionsLandInTheirGroups) {
  const auto c = artist_categorization();
  auto in = [&](const char* cat, const char* w) {
    const auto& g = c.groups.at(cat);
    return std::find(g.begin(), g.end(), w) != g.end();
  };
  EXPECT_TRUE(in("subjects", "apostle"));
  EXPECT_TRUE(in("attributes", "beard") || in("attributes", "experienced"));
  EXPECT_TRUE(in("actions", "writing"));
  EXPECT_EQ(c.groups.size(), 5u);
}

TEST(Categorize, EmptyT1IsInvalid) {
  RuleBasedLlm llm;
  EXPECT_EQ(thrown_code([&] { categorize_dimensions("   ", llm); }), ErrorCode::invalid_input);
}

TEST(Categorize, PhrasesAbsentFromT1AreDroppedWithWarning) {
  const std::string t1 = "smiling chef kitchen";
  ScriptedLlm llm;
  const json payload = {{"subjects", {"chef", "astronaut"}},
                        {"attributes", {"smiling"}},
                        {"contextual_settings", {"kitchen", "lunar base"}},
                        {"actions", json::array()},
                        {"relationships", json::array()}};
  llm.add_for(categorization_instruction(t1, "a cook"), payload);
  const auto out = categorize_dimensions(t1, llm, {}, "a cook");
  std::set<std::string> kept, expected;
  for (const auto& [cat, phrases] : out.categorization.groups)
    for (const auto& p : phrases) kept.insert(p);
  for (const auto& [cat, phrases] : payload.items())
    for (const auto& p : phrases)
      if (oracle_contains(t1, p)) expected.insert(p.get<std::string>());
  EXPECT_EQ(kept, expected);
  EXPECT_EQ(out.warnings.size(), 2u);
  EXPECT_NE(out.warnings[0].find("astronaut"), std::string::npos);
}

TEST(Categorize, MalformedPayloadIsRetriedThenFormatError) {
  const std::string t1 = "smiling chef";
  ScriptedLlm llm;
  llm.add_for(categorization_instruction(t1, ""), json{{"subjects", "chef"}});
  ExpansionOptions opt;
  opt.retry.max_attempts = 2;
  EXPECT_EQ(thrown_code([&] { categorize_dimensions(t1, llm, opt); }), ErrorCode::expansion_format);
  EXPECT_EQ(llm.calls(ScriptedLlm::key_for(categorization_instruction(t1, ""))), 2);
}

TEST(Expand, EchoOfT0IsRejectedAndPoolIsPartial) {
  const int K = 6;
  ExpansionRequest req{kArtist, kArtistT1, artist_categorization(), K, std::nullopt};
  ScriptedLlm llm;
  json cands = json::array();
  for (int i = 0; i < K; ++i) cands.push_back({{"prompt", kArtist}, {"replaced_categories", {"subjects"}}});
  llm.add_for(expansion_instruction(req), json{{"candidates", cands}});
  ExpansionOptions opt;
  opt.max_rounds = 1;
  try {
    generate_candidates(req, llm, opt);
    FAIL() << "expected PartialPoolError";
  } catch (const PartialPoolError& e) {
    EXPECT_EQ(e.code(), ErrorCode::partial_pool);
    EXPECT_EQ(e.produced().rejected_original, 1);
    EXPECT_EQ(e.produced().rejected_duplicates, K - 1);
    EXPECT_TRUE(e.produced().candidates.empty());
  }
}

TEST(Expand, ShortRoundsAreToppedUpWithTheSameInstruction) {
  ExpansionRequest req{"a cat", "cat sitting", {}, 3, std::nullopt};
  req.categorization.groups["subjects"] = {"cat"};
  ScriptedLlm llm;
  const auto key = ScriptedLlm::key_for(expansion_instruction(req));
  llm.add_sequence(key, {json{{"candidates", {{{"prompt", "a lynx"}, {"replaced_categories", {"subjects"}}},
                                               {{"prompt", "A lynx."}, {"replaced_categories", {"subjects"}}},
                                               {{"prompt", "a cat at night"}, {"replaced_categories", {"contextual_settings"}}}}}},
                         json{{"candidates", {{{"prompt", "a tiger"}, {"replaced_categories", {"subjects"}}},
                                              {{"prompt", "an ocelot"}, {"replaced_categories", {"subjects", "bogus"}}}}}}});
  const auto out = generate_candidates(req, llm);
  ASSERT_EQ(out.candidates.size(), 3u);
  EXPECT_EQ(out.candidates[0].prompt, "a lynx");
  EXPECT_EQ(out.candidates[1].prompt, "a tiger");
  EXPECT_EQ(out.candidates[2].replaced_categories, std::vector<std::string>{"subjects"});
  EXPECT_EQ(out.rejected_duplicates, 1);
  EXPECT_EQ(out.rejected_invalid, 1);  // modifies only an empty group
  EXPECT_EQ(out.rounds, 2);
  EXPECT_EQ(llm.calls(key), 2);
}

TEST(Expand, PreferenceContextIsPrependedToInstruction) {
  ExpansionRequest req{"a cat", "cat", {}, 3, std::string("User likes: diverse ages")};
  req.categorization.groups["subjects"] = {"cat"};
  const auto with = expansion_instruction(req);
  EXPECT_EQ(with.rfind("User likes: diverse ages\n", 0), 0u);
  req.preference_context.reset();
  const auto without = expansion_instruction(req);
  EXPECT_EQ(without.rfind("You are helping", 0), 0u);
}

TEST(Expand, EmptyCategorizationIsInvalid) {
  RuleBasedLlm llm;
  ExpansionRequest req{"a cat", "cat", {}, 3, std::nullopt};
  EXPECT_EQ(thrown_code([&] { generate_candidates(req, llm); }), ErrorCode::invalid_input);
}

TEST(Expand, ArtistPoolVariesHomogeneousDimensions) {
  RuleBasedLlm llm;
  ExpansionRequest req{kArtist, kArtistT1, artist_categorization(), 30, std::nullopt};
  const auto out = generate_candidates(req, llm);
  ASSERT_EQ(out.candidates.size(), 30u);
  const auto homogeneous = req.categorization.homogeneous_categories();
  std::set<std::string> canon;
  bool action_refined = false, subject_varied = false;
  for (const auto& c : out.candidates) {
    EXPECT_NE(canonical_prompt(c.prompt), canonical_prompt(kArtist));
    ASSERT_FALSE(c.replaced_categories.empty());
    EXPECT_TRUE(std::any_of(c.replaced_categories.begin(), c.replaced_categories.end(), [&](const auto& r) {
      return std::find(homogeneous.begin(), homogeneous.end(), r) != homogeneous.end();
    }));
    EXPECT_TRUE(canon.insert(canonical_prompt(c.prompt)).second) << c.prompt;
    for (const auto& w : lexicon_words("actions"))
      if (w != "composing" && oracle_contains(c.prompt, w)) action_refined = true;
    for (const auto& w : lexicon_words("subjects"))
      if (w != "artist" && oracle_contains(c.prompt, w)) subject_varied = true;
  }
  EXPECT_TRUE(action_refined);
  EXPECT_TRUE(subject_varied);
}

TEST(Expand, DeterministicForFixedSeed) {
  RuleBasedLlm llm(RuleBasedLlmOptions{7, nullptr, 6});
  ExpansionRequest req{kArtist, kArtistT1, artist_categorization(), 12, std::nullopt};
  ExpansionOptions opt;
  opt.seed = 3;
  const auto a = generate_candidates(req, llm, opt);
  const auto b = generate_candidates(req, llm, opt);
  ASSERT_EQ(a.candidates.size(), b.candidates.size());
  for (std::size_t i = 0; i < a.candidates.size(); ++i) EXPECT_EQ(a.candidates[i].prompt, b.candidates[i].prompt);
}

TEST(Expand, JsonRoundTrip) {
  ExpansionCandidate c{"a lynx", {"subjects"}, std::string("/tmp/x.ppm"), 0.25, 0.5, 0.3};
  const auto back = json(c).get<ExpansionCandidate>();
  EXPECT_EQ(back.prompt, c.prompt);
  EXPECT_EQ(back.image, c.image);
  EXPECT_EQ(back.filter_score, c.filter_score);
  ExpansionRequest r{"t0", "t1", artist_categorization(), 5, std::string("ctx")};
  const auto rb = json(r).get<ExpansionRequest>();
  EXPECT_EQ(rb.categorization.groups, r.categorization.groups);
  EXPECT_EQ(rb.preference_context, r.preference_context);
}
