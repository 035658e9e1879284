#include "support/stack.hpp"

#include "expanse/service/http_api.hpp"
#include "expanse/service/session.hpp"
#include "expanse/util/binary_io.hpp"

#include <gtest/gtest.h>
#include <httplib.h>

#include <atomic>
#include <fstream>

using namespace expanse;
using namespace expanse::testing;
using json = nlohmann::json;

namespace {

SessionServiceOptions service_options(const std::filesystem::path& dir, int select = 10) {
  SessionServiceOptions o;
  o.data_dir = dir / "data";
  o.pipeline = quick_pipeline(4, 30, select);
  return o;
}

// Fails the first `failures` renders with a transport error.
class FlakyBackend final : public GenerationBackend {
 public:
  FlakyBackend(const GenerationBackend& inner, int failures) : inner_(inner), left_(failures) {}
  std::string id() const override { return inner_.id(); }
  std::vector<unsigned char> render(const std::string& prompt, std::uint64_t seed,
                                    const GenerationConfig& config) const override {
    if (left_.fetch_sub(1) > 0) fail(ErrorCode::transport, "backend unavailable");
    return inner_.render(prompt, seed, config);
  }

 private:
  const GenerationBackend& inner_;
  mutable std::atomic<int> left_;
};

Round run(SessionService& svc, const std::string& id, const std::string& prompt) {
  const Round started = svc.submit_prompt(id, prompt);
  EXPECT_EQ(started.state, "running");
  return svc.await_round(id, started.round_index);
}

}  // namespace

TEST(Service, CreateAttachesScenarioAndFixedImages) {
  MockStack s("svc-create");
  SessionService svc(service_options(s.dir), s.context());
  const auto a = svc.create_session("u1", "poet", "S3");
  ASSERT_TRUE(a.scenario);
  EXPECT_EQ(a.scenario->initial_prompt, "Design a video game superhero character that is relatable.");
  ASSERT_TRUE(a.initial_images);
  EXPECT_EQ(a.initial_images->content_hashes.size(), 4u);
  EXPECT_EQ(a.status, "active");

  // Same scenario, same starting images for everyone.
  const auto b = svc.create_session("u2", "base", "S3");
  EXPECT_NE(a.session_id, b.session_id);
  EXPECT_EQ(a.initial_images->content_hashes, b.initial_images->content_hashes);
  EXPECT_EQ(svc.get(b.session_id).user_id, "u2");
}

TEST(Service, CreateRejectsBadInput) {
  MockStack s("svc-create-bad");
  SessionService svc(service_options(s.dir), s.context());
  EXPECT_EQ(thrown_code([&] { svc.create_session("u1", "turbo"); }), ErrorCode::invalid_input);
  EXPECT_EQ(thrown_code([&] { svc.create_session("u1", "poet", "S9"); }), ErrorCode::not_found);
  EXPECT_EQ(thrown_code([&] { svc.create_session("../x", "poet"); }), ErrorCode::invalid_input);
  EXPECT_EQ(thrown_code([&] { svc.get("deadbeef"); }), ErrorCode::not_found);
}

TEST(Service, BaseRoundGeneratesOnly) {
  MockStack s("svc-base");
  SessionService svc(service_options(s.dir), s.context());
  const auto id = svc.create_session("u1", "base").session_id;
  const Round r = run(svc, id, "a portrait of a chef in a kitchen");
  EXPECT_EQ(r.state, "complete");
  ASSERT_TRUE(r.generation);
  EXPECT_EQ(r.generation->content_hashes.size(), 4u);
  EXPECT_FALSE(r.expansion);
  EXPECT_TRUE(r.expanded_images().empty());
  const json j = r;
  EXPECT_TRUE(j.at("expansion").is_null());
}

TEST(Service, PoetRoundMatchesPipelineOracle) {
  MockStack s("svc-poet"), oracle("svc-poet-oracle");
  auto opts = service_options(s.dir);
  SessionService svc(opts, s.context());
  const auto id = svc.create_session("u1", "poet").session_id;
  const std::string prompt = "An ancient artist is composing a piece of work";
  const Round r = run(svc, id, prompt);
  ASSERT_EQ(r.state, "complete") << (r.error ? r.error->dump() : "");
  ASSERT_TRUE(r.expansion);
  ASSERT_TRUE(r.expansion->inversion);
  EXPECT_EQ(r.expansion->scored_pool.selected.size(), 10u);
  EXPECT_EQ(r.expanded_images().size(), 10u);
  for (int i : r.expansion->scored_pool.selected) {
    EXPECT_TRUE(r.expansion->scored_pool.candidates[static_cast<std::size_t>(i)].image);
  }

  // The same pipeline run directly, with the seeds the service uses for round 0.
  PipelineConfig cfg = opts.pipeline;
  cfg.generation.seed_base = 1000;
  const auto hdi = make_hdi_strategy("inversion", cfg.inversion);
  const auto expected = run_pipeline(prompt, cfg, oracle.context(), *hdi);
  EXPECT_EQ(r.generation->content_hashes, expected.original.content_hashes);
  EXPECT_EQ(r.expansion->t1, expected.t1);
  std::vector<std::string> got, want;
  for (int i : r.expansion->scored_pool.selected) got.push_back(r.expansion->scored_pool.candidates[i].prompt);
  for (int i : expected.scored_pool.selected) want.push_back(expected.scored_pool.candidates[i].prompt);
  EXPECT_EQ(got, want);
}

TEST(Service, FeedbackGatesTheNextPrompt) {
  MockStack s("svc-gate");
  SessionService svc(service_options(s.dir), s.context());
  const auto id = svc.create_session("u1", "base").session_id;
  EXPECT_EQ(thrown_code([&] { svc.submit_feedback(id, 4); }), ErrorCode::invalid_state);
  EXPECT_EQ(thrown_code([&] { svc.submit_prompt(id, "   "); }), ErrorCode::invalid_input);
  run(svc, id, "a red bicycle");
  EXPECT_EQ(thrown_code([&] { svc.submit_prompt(id, "a blue bicycle"); }), ErrorCode::invalid_state);
  EXPECT_EQ(thrown_code([&] { svc.submit_feedback(id, 0); }), ErrorCode::invalid_input);
  EXPECT_EQ(thrown_code([&] { svc.submit_feedback(id, 8); }), ErrorCode::invalid_input);
  EXPECT_EQ(svc.submit_feedback(id, 4).status, "active");
  EXPECT_EQ(thrown_code([&] { svc.submit_feedback(id, 4); }), ErrorCode::invalid_state);
  EXPECT_EQ(run(svc, id, "a blue bicycle").round_index, 1);
}

TEST(Service, SatisfiedSessionStopsPrompting) {
  MockStack s("svc-satisfied");
  SessionService svc(service_options(s.dir), s.context());
  const auto id = svc.create_session("u1", "base").session_id;
  run(svc, id, "a red bicycle");
  EXPECT_EQ(svc.submit_feedback(id, 7).status, "satisfied");
  EXPECT_EQ(thrown_code([&] { svc.submit_prompt(id, "again"); }), ErrorCode::invalid_state);
}

TEST(Service, SixthRePromptIsRejected) {
  MockStack s("svc-cap");
  SessionService svc(service_options(s.dir), s.context());
  const auto id = svc.create_session("u1", "base").session_id;
  for (int k = 0; k < kMaxRounds; ++k) {
    EXPECT_EQ(run(svc, id, "a red bicycle, take " + std::to_string(k)).round_index, k);
    const auto after = svc.submit_feedback(id, 3);
    EXPECT_EQ(after.status, k == kMaxRounds - 1 ? "capped" : "active");
  }
  EXPECT_EQ(svc.get(id).rounds.size(), 6u);
  EXPECT_EQ(thrown_code([&] { svc.submit_prompt(id, "one more"); }), ErrorCode::session_capped);
}

TEST(Service, PersonalizeRequiresPicksAndAcceptsEarlierImages) {
  MockStack s("svc-personal");
  SessionService svc(service_options(s.dir), s.context());
  const auto created = svc.create_session("u1", "base_personalize", "S1");
  const auto id = created.session_id;
  const auto initial = created.initial_images->content_hashes;

  const Round r0 = run(svc, id, "an advertisement with a young barista operating a coffee machine");
  EXPECT_EQ(thrown_code([&] { svc.submit_feedback(id, 3); }), ErrorCode::invalid_input);
  EXPECT_EQ(thrown_code([&] { svc.submit_feedback(id, 3, "nope", initial[0]); }), ErrorCode::invalid_input);
  EXPECT_EQ(thrown_code([&] { svc.submit_feedback(id, 3, initial[0], initial[0]); }), ErrorCode::invalid_input);
  svc.submit_feedback(id, 3, r0.original_images()[0], initial[1]);

  run(svc, id, "an advertisement with an elderly barista operating a coffee machine");
  svc.submit_feedback(id, 4, initial[2], r0.original_images()[1]);
  const Round r2 = run(svc, id, "an advertisement with an elderly barista in a garden");
  // A round-0 image during round 2.
  const auto s2 = svc.submit_feedback(id, 5, r0.original_images()[2], r2.original_images()[0]);
  EXPECT_EQ(s2.status, "active");

  const auto profile = svc.profiles().load(s2.profile_id());
  ASSERT_EQ(profile.history.size(), 3u);
  EXPECT_EQ(profile.history[2].most_preferred, r0.original_images()[2]);
  EXPECT_EQ(profile.prompt_revisions.size(), 2u);
  EXPECT_FALSE(profile.image_pattern_notes.empty());
  EXPECT_EQ(profile.analyzed_feedback, 3u);
}

TEST(Service, PoetPersonalizeConditionsLaterRounds) {
  MockStack s("svc-poet-personal");
  auto opts = service_options(s.dir, 4);
  opts.pipeline.pool_size = 12;
  SessionService svc(opts, s.context());
  const auto id = svc.create_session("u1", "poet_personalize").session_id;
  const Round r0 = run(svc, id, "a portrait of a young chef in a kitchen");
  ASSERT_EQ(r0.state, "complete");
  EXPECT_FALSE(r0.preference_context);
  svc.submit_feedback(id, 3, r0.expanded_images()[0], r0.original_images()[0]);
  const Round r1 = run(svc, id, "a portrait of an elderly chef in a kitchen");
  ASSERT_EQ(r1.state, "complete");
  ASSERT_TRUE(r1.preference_context);
  const auto profile = svc.profiles().load(svc.get(id).profile_id());
  EXPECT_EQ(*r1.preference_context, build_context(profile, ContextOptions{opts.context_token_budget}));
}

TEST(Service, FinalizeContract) {
  MockStack s("svc-final");
  SessionService svc(service_options(s.dir), s.context());
  const auto id = svc.create_session("u1", "base").session_id;
  std::vector<Round> rounds;
  for (int k = 0; k < 3; ++k) {
    rounds.push_back(run(svc, id, "a lighthouse, version " + std::to_string(k)));
    if (k < 2) svc.submit_feedback(id, 2);
  }
  const auto favorite = rounds[1].original_images()[3];
  EXPECT_EQ(thrown_code([&] { svc.finalize_session(id, favorite, 8.5); }), ErrorCode::invalid_state);
  EXPECT_EQ(svc.submit_feedback(id, 6).status, "satisfied");
  EXPECT_EQ(thrown_code([&] { svc.finalize_session(id, favorite, 11); }), ErrorCode::invalid_input);
  EXPECT_EQ(thrown_code([&] { svc.finalize_session(id, favorite, 0.5); }), ErrorCode::invalid_input);
  EXPECT_EQ(thrown_code([&] { svc.finalize_session(id, "unknown", 5); }), ErrorCode::invalid_input);

  const auto first = svc.finalize_session(id, favorite, 8.5);
  ASSERT_TRUE(first.final_selection);
  EXPECT_EQ(first.final_selection->favorite_image, favorite);
  EXPECT_DOUBLE_EQ(first.final_selection->final_satisfaction, 8.5);
  const auto events_before = svc.events(id).size();
  const auto second = svc.finalize_session(id, rounds[0].original_images()[0], 2.0);
  EXPECT_EQ(json(second), json(first));
  EXPECT_EQ(svc.events(id).size(), events_before);
  EXPECT_EQ(thrown_code([&] { svc.submit_prompt(id, "more"); }), ErrorCode::invalid_state);
  EXPECT_EQ(thrown_code([&] { svc.submit_feedback(id, 3); }), ErrorCode::invalid_state);
}

TEST(Service, EventLogReplayReconstructsState) {
  MockStack s("svc-replay");
  auto opts = service_options(s.dir, 4);
  opts.pipeline.pool_size = 12;
  json live;
  std::string id;
  {
    SessionService svc(opts, s.context());
    id = svc.create_session("u1", "poet_personalize", "S2").session_id;
    const auto r0 = run(svc, id, "a travel poster of a mountain village");
    svc.submit_feedback(id, 4, r0.expanded_images()[1], r0.original_images()[0]);
    const auto r1 = run(svc, id, "a travel poster of a seaside village at night");
    svc.submit_feedback(id, 6, r1.original_images()[0], r0.expanded_images()[0]);
    svc.finalize_session(id, r0.expanded_images()[1], 7.25);
    live = svc.get(id);
    EXPECT_EQ(json(SessionService::replay(svc.events(id))), live);
    const auto types = [&] {
      std::vector<std::string> t;
      for (const auto& e : svc.events(id)) t.push_back(e.at("type"));
      return t;
    }();
    EXPECT_EQ(types, (std::vector<std::string>{"session_created", "round_started", "round_completed",
                                               "feedback_recorded", "round_started", "round_completed",
                                               "feedback_recorded", "session_finalized"}));
  }
  SessionService restarted(opts, s.context());
  EXPECT_EQ(json(restarted.get(id)), live);
}

TEST(Service, InterruptedRoundBecomesRetryable) {
  MockStack s("svc-crash");
  const auto opts = service_options(s.dir);
  std::string id;
  std::filesystem::path log;
  {
    SessionService svc(opts, s.context());
    id = svc.create_session("u1", "poet").session_id;
    log = opts.data_dir / "sessions" / id / "events.jsonl";
  }
  // Simulate a crash after the round started: the log ends with round_started
  // and a torn line.
  {
    std::ofstream out(log, std::ios::app);
    out << json{{"type", "round_started"}, {"round_index", 0}, {"prompt", "a castle"}, {"at", "x"}}.dump() << '\n';
    out << "{\"type\": \"round_comp";
  }
  SessionService svc(opts, s.context());
  const Round failed = svc.get_round(id, 0);
  EXPECT_EQ(failed.state, "failed");
  EXPECT_FALSE(failed.expansion);
  EXPECT_FALSE(failed.generation);
  const Round retried = run(svc, id, "a castle");
  EXPECT_EQ(retried.round_index, 0);
  EXPECT_EQ(retried.state, "complete");
  EXPECT_EQ(svc.get(id).rounds.size(), 1u);
}

TEST(Service, BackendFailureMarksRoundFailedThenRetries) {
  MockStack s("svc-flaky");
  FlakyBackend flaky(s.backend, 1);
  PipelineContext ctx{*s.scorer, s.cache, flaky, s.store, s.llm};
  SessionService svc(service_options(s.dir), ctx);
  const auto id = svc.create_session("u1", "base").session_id;
  const Round r = run(svc, id, "a sailboat");
  EXPECT_EQ(r.state, "failed");
  ASSERT_TRUE(r.error);
  EXPECT_EQ(r.error->at("code"), "transport");
  EXPECT_FALSE(r.generation);
  EXPECT_EQ(thrown_code([&] { svc.submit_feedback(id, 3); }), ErrorCode::invalid_state);
  const Round again = run(svc, id, "a sailboat");
  EXPECT_EQ(again.round_index, 0);
  EXPECT_EQ(again.state, "complete");
}

TEST(Service, SessionsRunConcurrently) {
  MockStack s("svc-concurrent");
  SessionService svc(service_options(s.dir), s.context());
  std::vector<std::string> ids;
  for (int i = 0; i < 4; ++i) ids.push_back(svc.create_session("u" + std::to_string(i), "base").session_id);
  for (const auto& id : ids) svc.submit_prompt(id, "a watercolor fox");
  for (const auto& id : ids) {
    const auto r = svc.await_round(id, 0);
    EXPECT_EQ(r.state, "complete");
    EXPECT_EQ(r.generation->content_hashes.size(), 4u);
  }
}

TEST(HttpApi, StatusMapping) {
  EXPECT_EQ(http_status_for(ErrorCode::invalid_input), 400);
  EXPECT_EQ(http_status_for(ErrorCode::not_found), 404);
  EXPECT_EQ(http_status_for(ErrorCode::invalid_state), 409);
  EXPECT_EQ(http_status_for(ErrorCode::session_capped), 409);
  EXPECT_EQ(http_status_for(ErrorCode::policy), 422);
  EXPECT_EQ(http_status_for(ErrorCode::transport), 502);
  EXPECT_EQ(http_status_for(ErrorCode::numeric), 500);
}

TEST(HttpApi, EndToEndOverHttp) {
  MockStack s("http-e2e");
  auto opts = service_options(s.dir, 4);
  opts.pipeline.pool_size = 12;
  SessionService svc(opts, s.context());
  HttpServer server(svc);
  const int port = server.bind("127.0.0.1", 0);
  server.start();
  httplib::Client cli("127.0.0.1", port);
  auto post = [&](const std::string& path, const json& body) {
    auto res = cli.Post(path, body.dump(), "application/json");
    EXPECT_TRUE(res);
    return res;
  };

  auto res = post("/sessions", {{"user_id", "u1"}, {"mode", "poet_personalize"}, {"scenario_id", "S3"}});
  ASSERT_EQ(res->status, 201);
  const json created = json::parse(res->body);
  const std::string id = created.at("session_id");
  EXPECT_EQ(created.at("scenario").at("initial_prompt"), "Design a video game superhero character that is relatable.");
  EXPECT_EQ(created.at("image_inventory").size(), 4u);

  EXPECT_EQ(post("/sessions", {{"user_id", "u1"}, {"mode", "bogus"}})->status, 400);
  EXPECT_EQ(post("/sessions", {{"mode", "poet"}})->status, 400);
  EXPECT_EQ(cli.Post("/sessions", "{oops", "application/json")->status, 400);
  EXPECT_EQ(post("/sessions", {{"user_id", "u1"}, {"mode", "poet"}, {"scenario_id", "S7"}})->status, 404);
  auto missing = cli.Get("/sessions/0123456789abcdef");
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(json::parse(missing->body).at("error").at("code"), "not_found");

  res = post("/sessions/" + id + "/prompts", {{"prompt", "a relatable superhero who is a young nurse"}});
  ASSERT_EQ(res->status, 202);
  const json accepted = json::parse(res->body);
  const std::string poll = accepted.at("poll");
  EXPECT_EQ(poll, "/sessions/" + id + "/rounds/0");
  EXPECT_EQ(res->get_header_value("Location"), poll);

  json round;
  for (int i = 0; i < 600; ++i) {
    auto r = cli.Get(poll);
    ASSERT_EQ(r->status, 200);
    round = json::parse(r->body);
    if (round.at("state") != "running") break;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  ASSERT_EQ(round.at("state"), "complete");
  EXPECT_FALSE(round.at("expansion").is_null());
  const auto originals = round.at("images").at("original").get<std::vector<std::string>>();
  const auto expanded = round.at("images").at("expanded").get<std::vector<std::string>>();
  EXPECT_EQ(originals.size(), 4u);
  EXPECT_EQ(expanded.size(), 4u);
  EXPECT_EQ(cli.Get("/sessions/" + id + "/rounds/3")->status, 404);

  // Image bytes are served from the content store.
  auto img = cli.Get("/images/" + expanded[0]);
  ASSERT_EQ(img->status, 200);
  const auto bytes = read_binary_file(*svc.image_path(expanded[0]));
  EXPECT_EQ(img->body, std::string(bytes.begin(), bytes.end()));
  EXPECT_EQ(cli.Get("/images/" + std::string(64, '0'))->status, 404);

  EXPECT_EQ(post("/sessions/" + id + "/prompts", {{"prompt", "next"}})->status, 409);
  EXPECT_EQ(post("/sessions/" + id + "/feedback", {{"satisfaction", 3}})->status, 400);
  const auto initial = created.at("image_inventory")[0].get<std::string>();
  res = post("/sessions/" + id + "/feedback",
             {{"satisfaction", 6}, {"most_preferred", expanded[0]}, {"least_preferred", initial}});
  ASSERT_EQ(res->status, 200);
  EXPECT_EQ(json::parse(res->body).at("status"), "satisfied");

  EXPECT_EQ(post("/sessions/" + id + "/finalize", {{"favorite_image", initial}, {"final_satisfaction", 11}})->status,
            400);
  res = post("/sessions/" + id + "/finalize", {{"favorite_image", initial}, {"final_satisfaction", 8.5}});
  ASSERT_EQ(res->status, 200);
  const json final1 = json::parse(res->body);
  res = post("/sessions/" + id + "/finalize", {{"favorite_image", expanded[0]}, {"final_satisfaction", 3}});
  EXPECT_EQ(json::parse(res->body), final1);
  EXPECT_DOUBLE_EQ(final1.at("final_selection").at("final_satisfaction").get<double>(), 8.5);

  auto got = cli.Get("/sessions/" + id);
  ASSERT_EQ(got->status, 200);
  EXPECT_EQ(json::parse(got->body), json(svc.get(id)));
  auto sc = cli.Get("/scenarios");
  EXPECT_EQ(json::parse(sc->body).size(), 4u);
  server.stop();
}
