#include "support/stack.hpp"

#include "expanse/expansion/templates.hpp"
#include "expanse/personalization/personalization.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <thread>

using namespace expanse;
using namespace expanse::testing;
using json = nlohmann::json;

namespace {

const std::set<std::string> kInventory = {"img-a", "img-b", "img-c", "img-d", "img-e", "img-f"};

RoundFeedback fb(int round, std::string prompt, int sat, std::string most, std::string least) {
  return {round, std::move(prompt), sat, std::move(most), std::move(least), "2026-01-01T00:00:00Z"};
}

// The scripted session used for replay checks.
std::vector<RoundFeedback> fixture_session() {
  return {fb(0, "a family having dinner", 3, "img-a", "img-b"),
          fb(1, "a family of different ages having dinner", 5, "img-c", "img-a"),
          fb(2, "a family of different ages having dinner in a garden", 4, "img-e", "img-d"),
          fb(3, "a friendly family of different ages having dinner in a garden", 6, "img-f", "img-b")};
}

std::filesystem::path fake_path(const std::string& id) { return "/images/" + id + ".ppm"; }

std::string analyze_instruction(const std::vector<std::pair<std::string, std::string>>& asks) {
  std::string labels;
  for (const auto& [id, pol] : asks) labels += (labels.empty() ? "" : ", ") + id + " (" + pol + ")";
  return render_template(template_text("analyze_images"), {{"images", labels}});
}

int section_line(const std::string& text, const std::string& header) {
  std::istringstream in(text);
  int n = 0;
  for (std::string line; std::getline(in, line); ++n)
    if (line.rfind(header, 0) == 0) return n;
  return -1;
}

}  // namespace

TEST(StopRule, SatisfiedOrLastRound) {
  for (int s = 1; s <= 7; ++s) {
    for (int r = 0; r <= 5; ++r) EXPECT_EQ(should_stop(s, r), s >= 6 || r == 5) << s << "," << r;
  }
}

TEST(RecordFeedback, FirstFeedbackOnEmptyProfile) {
  PreferenceProfile p;
  p.user_id = "u1";
  const auto out = record_feedback(p, fixture_session()[0], kInventory);
  EXPECT_EQ(out.history.size(), 1u);
  EXPECT_TRUE(out.prompt_revisions.empty());
}

TEST(RecordFeedback, RejectsInvalidFeedback) {
  PreferenceProfile p = record_feedback({}, fixture_session()[0], kInventory);
  EXPECT_EQ(thrown_code([&] { record_feedback(p, fb(1, "x", 4, "img-a", "img-a"), kInventory); }), ErrorCode::invalid_input);
  EXPECT_EQ(thrown_code([&] { record_feedback(p, fb(1, "x", 4, "img-a", "img-zzz"), kInventory); }), ErrorCode::invalid_input);
  EXPECT_EQ(thrown_code([&] { record_feedback(p, fb(0, "x", 4, "img-a", "img-b"), kInventory); }), ErrorCode::invalid_input);
  EXPECT_EQ(thrown_code([&] { record_feedback(p, fb(1, "x", 8, "img-a", "img-b"), kInventory); }), ErrorCode::invalid_input);
}

TEST(RecordFeedback, EarlierRoundImagesAreAccepted) {
  auto p = record_feedback({}, fb(0, "p", 2, "img-a", "img-b"), {"img-a", "img-b"});
  p = record_feedback(p, fb(1, "q", 3, "img-c", "img-d"), {"img-a", "img-b", "img-c", "img-d"});
  p = record_feedback(p, fb(2, "r", 4, "img-a", "img-f"), kInventory);
  EXPECT_EQ(p.history.back().most_preferred, "img-a");
}

TEST(RecordFeedback, ReplayEqualsFoldOfFeedback) {
  // Fold oracle: history is the feedback list, revisions are consecutive
  // prompt changes.
  const auto session = fixture_session();
  PreferenceProfile folded;
  folded.user_id = "u1";
  for (const auto& f : session) folded = record_feedback(folded, f, kInventory);

  PreferenceProfile expected;
  expected.user_id = "u1";
  expected.history = session;
  for (std::size_t i = 1; i < session.size(); ++i) {
    expected.prompt_revisions.push_back(
        {session[i - 1].prompt, session[i].prompt, session[i - 1].round_index, session[i].round_index});
  }
  EXPECT_EQ(folded, expected);
  EXPECT_EQ(json(folded).get<PreferenceProfile>(), folded);
}

TEST(RecordFeedback, InvalidatesCompiledContext) {
  auto p = record_feedback({}, fixture_session()[0], kInventory);
  compiled_context(p);
  ASSERT_TRUE(p.compiled_context);
  p = record_feedback(p, fixture_session()[1], kInventory);
  EXPECT_FALSE(p.compiled_context);
}

TEST(AnalyzeImages, StoresNotesFromTheModel) {
  auto p = record_feedback({}, fixture_session()[0], kInventory);
  ScriptedLlm llm;
  llm.add_for(analyze_instruction({{"img-a", "preferred"}, {"img-b", "avoided"}}),
              json{{"notes",
                    {{{"image_id", "img-a"}, {"polarity", "preferred"}, {"attributes", "friendlier and less aggressive"}},
                     {{"image_id", "img-b"}, {"polarity", "avoided"}, {"attributes", "dark, menacing tone"}}}}});
  const auto out = analyze_image_preferences(p, fake_path, llm);
  EXPECT_TRUE(out.called_model);
  ASSERT_EQ(out.profile.image_pattern_notes.size(), 2u);
  EXPECT_EQ(out.profile.image_pattern_notes[0].polarity, "preferred");
  EXPECT_EQ(out.profile.image_pattern_notes[0].attributes, "friendlier and less aggressive");
  EXPECT_EQ(out.profile.image_pattern_notes[1].polarity, "avoided");
  EXPECT_TRUE(out.warnings.empty());

  const auto again = analyze_image_preferences(out.profile, fake_path, llm);
  EXPECT_FALSE(again.called_model);
  EXPECT_EQ(again.profile, out.profile);
}

TEST(AnalyzeImages, NotesForImagesNeverFedBackAreDropped) {
  auto p = record_feedback({}, fixture_session()[0], kInventory);
  ScriptedLlm llm;
  llm.add_for(analyze_instruction({{"img-a", "preferred"}, {"img-b", "avoided"}}),
              json{{"notes",
                    {{{"image_id", "img-a"}, {"polarity", "preferred"}, {"attributes", "warm"}},
                     {{"image_id", "img-zzz"}, {"polarity", "preferred"}, {"attributes", "ghost"}},
                     {{"image_id", "img-b"}, {"polarity", "avoided"}, {"attributes", "cold"}}}}});
  const auto out = analyze_image_preferences(p, fake_path, llm);
  std::set<std::string> fed_back;
  for (const auto& f : out.profile.history) fed_back.insert({f.most_preferred, f.least_preferred});
  for (const auto& n : out.profile.image_pattern_notes) EXPECT_TRUE(fed_back.count(n.image_id)) << n.image_id;
  EXPECT_EQ(out.profile.image_pattern_notes.size(), 2u);
  ASSERT_EQ(out.warnings.size(), 1u);
  EXPECT_NE(out.warnings[0].find("img-zzz"), std::string::npos);
}

TEST(AnalyzeImages, OnlyNewChoicesAreSent) {
  auto p = record_feedback({}, fixture_session()[0], kInventory);
  ScriptedLlm llm;
  llm.add_for(analyze_instruction({{"img-a", "preferred"}, {"img-b", "avoided"}}),
              json{{"notes", json::array()}});
  p = analyze_image_preferences(p, fake_path, llm).profile;
  p = record_feedback(p, fb(1, "p2", 4, "img-a", "img-c"), kInventory);
  // img-a is already known as preferred only if a note exists; the empty reply
  // above left none, so it is asked again.
  llm.add_for(analyze_instruction({{"img-a", "preferred"}, {"img-c", "avoided"}}),
              json{{"notes", {{{"image_id", "img-c"}, {"attributes", "cluttered"}}}}});
  const auto out = analyze_image_preferences(p, fake_path, llm);
  ASSERT_EQ(out.profile.image_pattern_notes.size(), 1u);
  EXPECT_EQ(out.profile.image_pattern_notes[0].polarity, "avoided");
  EXPECT_EQ(out.profile.image_pattern_notes[0].round_index, 1);
}

TEST(AnalyzeImages, RequiresFeedback) {
  ScriptedLlm llm;
  EXPECT_EQ(thrown_code([&] { analyze_image_preferences({}, fake_path, llm); }), ErrorCode::invalid_state);
}

TEST(AnalyzeImages, RuleBasedModelDescribesRealMockImages) {
  MockStack s("analyze-rule");
  GenerationConfig g;
  g.images_per_prompt = 2;
  const auto rec = generate("an elderly woman reading in a library", g, s.backend, s.store);
  const std::set<std::string> inv(rec.content_hashes.begin(), rec.content_hashes.end());
  auto p = record_feedback({}, fb(0, "an elderly woman reading", 3, rec.content_hashes[0], rec.content_hashes[1]), inv);
  const auto out = analyze_image_preferences(p, [&](const std::string& id) { return s.store.path_for(id); }, s.llm);
  ASSERT_EQ(out.profile.image_pattern_notes.size(), 2u);
  EXPECT_FALSE(out.profile.image_pattern_notes[0].attributes.empty());
}

TEST(BuildContext, EmptyProfileIsEmpty) {
  EXPECT_EQ(build_context(PreferenceProfile{}), "");
}

TEST(BuildContext, AgeRevisionAndNoteAppearInFocusAndPreserve) {
  auto p = record_feedback({}, fb(0, "a family having dinner", 3, "img-a", "img-b"), kInventory);
  p = record_feedback(p, fb(1, "a family of different ages having dinner", 5, "img-c", "img-a"), kInventory);
  p.image_pattern_notes.push_back({"img-c", "preferred", "diverse ages", 1});
  const auto text = build_context(p);

  // Template-rendering oracle: focus line lists age with both sightings, the
  // preserve section holds the revision, preferred traits hold the note.
  const std::string expected =
      "User preference profile from earlier rounds.\n"
      "Focus categories: age (attributes, 2)\n"
      "Preserve revision patterns that raised satisfaction:\n"
      "- \"a family having dinner\" became \"a family of different ages having dinner\" (satisfaction 3 to 5); "
      "changed age\n"
      "Preferred traits:\n"
      "- diverse ages\n";
  EXPECT_EQ(text, expected);
  EXPECT_LT(section_line(text, "Focus categories"), section_line(text, "Preserve"));
}

TEST(BuildContext, RevisionsThatLoweredSatisfactionAreNotPreserved) {
  auto p = record_feedback({}, fb(0, "a cat", 5, "img-a", "img-b"), kInventory);
  p = record_feedback(p, fb(1, "an old cat", 3, "img-c", "img-a"), kInventory);
  const auto text = build_context(p);
  EXPECT_EQ(text.find("Preserve"), std::string::npos);
  EXPECT_NE(text.find("age (attributes, 1)"), std::string::npos);
}

TEST(BuildContext, PureFunctionOfProfile) {
  PreferenceProfile p;
  for (const auto& f : fixture_session()) p = record_feedback(p, f, kInventory);
  p.image_pattern_notes.push_back({"img-c", "preferred", "friendlier and less aggressive", 1});
  p.image_pattern_notes.push_back({"img-a", "avoided", "stiff poses in a dark room", 1});
  const auto copy = json(p).get<PreferenceProfile>();
  EXPECT_EQ(build_context(p), build_context(copy));
  EXPECT_EQ(build_context(p), build_context(p));
}

TEST(BuildContext, BudgetDropsOldestLowSignalFirst) {
  PreferenceProfile p;
  for (const auto& f : fixture_session()) p = record_feedback(p, f, kInventory);
  for (int r = 0; r < 4; ++r) {
    p.image_pattern_notes.push_back({"img-a", "preferred", "note from round " + std::to_string(r) + " warm light", r});
  }
  const auto full = build_context(p);
  const int full_tokens = count_context_tokens(full);
  for (int budget = full_tokens; budget >= 1; --budget) {
    const auto text = build_context(p, ContextOptions{budget});
    EXPECT_LE(count_context_tokens(text), budget);
  }
  // Shaving a few tokens removes the round-0 note before any later note and
  // before any revision entry.
  const auto trimmed = build_context(p, ContextOptions{full_tokens - 1});
  EXPECT_EQ(trimmed.find("round 0"), std::string::npos);
  EXPECT_NE(trimmed.find("round 1"), std::string::npos);
  EXPECT_NE(trimmed.find("became"), std::string::npos);
  // The default budget is 512.
  EXPECT_LE(count_context_tokens(build_context(p)), 512);
}

TEST(BuildContext, TokenCounter) {
  EXPECT_EQ(count_context_tokens(""), 0);
  EXPECT_EQ(count_context_tokens("two words"), 2);
  EXPECT_EQ(count_context_tokens("\"quoted\", then (x)."), 9);  // " quoted " , then ( x ) .
}

TEST(BuildContext, FacetsHandlePlurals) {
  EXPECT_EQ(facets_in("diverse ages"), std::vector<std::string>{"age"});
  EXPECT_EQ(facets_in("Friendlier, less aggressive"), std::vector<std::string>{"tone"});
  EXPECT_TRUE(facets_in("nothing relevant").empty());
}

TEST(ProfileStore, PersistsAndLogs) {
  const auto dir = temp_dir("profiles");
  {
    ProfileStore store(dir);
    store.update("u1", [](PreferenceProfile p) { return record_feedback(p, fixture_session()[0], kInventory); });
    store.append_feedback_log("u1", fixture_session()[0]);
  }
  ProfileStore reopened(dir);
  const auto p = reopened.load("u1");
  EXPECT_EQ(p.user_id, "u1");
  EXPECT_EQ(p.history.size(), 1u);
  EXPECT_EQ(reopened.load("nobody").history.size(), 0u);
  const auto stored = json::parse(std::ifstream(dir / "u1.json"));
  EXPECT_EQ(stored["schema_version"], kProfileSchemaVersion);
  std::ifstream log(dir / "u1.feedback.jsonl");
  std::string line;
  ASSERT_TRUE(std::getline(log, line));
  EXPECT_EQ(json::parse(line).get<RoundFeedback>().prompt, fixture_session()[0].prompt);
  EXPECT_EQ(thrown_code([&] { reopened.load("../etc"); }), ErrorCode::invalid_input);
}

TEST(ProfileStore, ConcurrentUpdatesAreSerializedAndReadsAreWhole) {
  ProfileStore store(temp_dir("profiles-conc"));
  constexpr int kWriters = 4, kPerWriter = 10;
  std::atomic<bool> done{false};
  std::atomic<int> bad_reads{0};
  std::thread reader([&] {
    while (!done) {
      const auto p = store.load("u");
      for (std::size_t i = 0; i < p.history.size(); ++i)
        if (p.history[i].round_index != static_cast<int>(i)) ++bad_reads;
    }
  });
  std::vector<std::thread> writers;
  for (int w = 0; w < kWriters; ++w) {
    writers.emplace_back([&] {
      for (int k = 0; k < kPerWriter; ++k) {
        store.update("u", [](PreferenceProfile p) {
          const int next = static_cast<int>(p.history.size());
          return record_feedback(p, fb(next, "p", 3, "img-a", "img-b"), kInventory);
        });
      }
    });
  }
  for (auto& t : writers) t.join();
  done = true;
  reader.join();
  EXPECT_EQ(store.load("u").history.size(), static_cast<std::size_t>(kWriters * kPerWriter));
  EXPECT_EQ(bad_reads, 0);
}

TEST(FinalSelection, JsonRoundTrip) {
  const FinalSelection f{"img-c", 8.5};
  const auto back = json(f).get<FinalSelection>();
  EXPECT_EQ(back.favorite_image, "img-c");
  EXPECT_EQ(back.final_satisfaction, 8.5);
}
