#include "cli.hpp"

#include "expanse/assets/builtin.hpp"
#include "expanse/config/config.hpp"
#include "expanse/evaluation/evaluation.hpp"
#include "expanse/expansion/expansion.hpp"
#include "expanse/filtering/filtering.hpp"
#include "expanse/inversion/inversion.hpp"
#include "expanse/net/http.hpp"
#include "expanse/runtime/runtime.hpp"
#include "expanse/service/http_api.hpp"
#include "expanse/service/session.hpp"
#include "expanse/util/binary_io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <csignal>
#include <functional>
#include <iostream>

namespace expanse::cli {
namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct Invocation {
  std::string config_file;
  std::vector<std::string> sets;
  bool mock = false;
  ConfigOverrides flags;  // subcommand flags, applied after --set
};

// Binds a subcommand flag straight to a config key, so it takes part in the
// file < env < flag precedence like --set does.
void config_flag(CLI::App* app, Invocation& inv, const std::string& flag, const std::string& key,
                 const std::string& help) {
  app->add_option_function<std::string>(
      flag, [&inv, key](const std::string& v) { inv.flags.emplace_back(key, v); }, help + " [" + key + "]");
}

GlobalConfig resolve_config(const Invocation& inv) {
  ConfigOverrides overrides;
  std::vector<std::string> errors;
  for (const auto& s : inv.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      errors.push_back("--set '" + s + "': expected key=value");
      continue;
    }
    overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  if (!errors.empty()) throw ConfigError(errors);
  overrides.insert(overrides.end(), inv.flags.begin(), inv.flags.end());
  if (inv.mock) {
    overrides.emplace_back("backend.kind", "mock");
    overrides.emplace_back("llm.kind", "rule");
  }
  std::optional<fs::path> file;
  if (!inv.config_file.empty()) file = inv.config_file;
  return load_config(file, overrides);
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file_atomic(path, j.dump(2) + "\n");
}

json with_provenance(json body, const GlobalConfig& config) {
  body["provenance"] = provenance(config);
  return body;
}

ImageSet images_in(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorCode::invalid_input, "not a directory: " + dir.string());
  ImageSet set;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".ppm" || ext == ".png" || ext == ".jpg" || ext == ".jpeg")) {
      set.images.push_back(e.path());
    }
  }
  std::sort(set.images.begin(), set.images.end());
  if (set.images.empty()) fail(ErrorCode::invalid_input, "no images in " + dir.string());
  return set;
}

void copy_images(const GenerationRecord& g, const ImageStore& store, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& h : g.content_hashes) {
    const auto src = store.find(h);
    if (!src) fail(ErrorCode::not_found, "image " + h + " missing from the store");
    fs::copy_file(*src, dir / src->filename(), fs::copy_options::overwrite_existing);
  }
}

std::vector<std::string> prompts_from(const std::string& file) {
  return file.empty() ? fixture_prompts() : load_prompts(file);
}

EvalRunConfig eval_config(const GlobalConfig& c, const std::string& condition, const fs::path& out) {
  EvalRunConfig e;
  e.sample_count = c.eval.sample_count;
  e.n = c.eval.n;
  e.condition = condition;
  e.seed = c.seed;
  e.checkpoint_every = c.eval.checkpoint_every;
  e.checkpoint_dir = out / "checkpoint";
  e.workers = c.eval.workers;
  e.degraded_fraction = c.eval.degraded_fraction;
  e.pipeline = c.pipeline();
  return e;
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    auto part = s.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!part.empty()) out.push_back(part);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::atomic<HttpServer*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Output-space expansion for text-to-image models", "expanse"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version_string() + " (" + git_describe() + ")");

  Invocation inv;
  app.add_option("--config", inv.config_file, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--set", inv.sets, "Override a configuration key: --set filter.lambda=0.2");
  app.add_flag("--mock", inv.mock, "Offline stack: mock image backend and rule-based language model");

  std::function<json(const GlobalConfig&)> action;

  // generate
  auto* gen = app.add_subcommand("generate", "Render images for one prompt");
  std::string gen_prompt, gen_out;
  gen->add_option("--prompt", gen_prompt, "Prompt text")->required();
  gen->add_option("--out", gen_out, "Output directory")->required();
  config_flag(gen, inv, "--n", "images_per_prompt", "Images to render");
  config_flag(gen, inv, "--seed", "seed", "Seed base");
  gen->callback([&] {
    action = [&](const GlobalConfig& c) {
      auto rt = make_runtime(c);
      const auto record = generate(gen_prompt, c.pipeline().generation, *rt->backend, *rt->store);
      copy_images(record, *rt->store, fs::path(gen_out) / "images");
      const fs::path file = fs::path(gen_out) / "generation.json";
      write_json(file, with_provenance({{"generation", record}}, c));
      return json{{"generation", file.string()}, {"images", record.content_hashes.size()}};
    };
  });

  // invert
  auto* inv_cmd = app.add_subcommand("invert", "Discover a hard prompt describing a set of images");
  std::string inv_images, inv_prompt, inv_out;
  inv_cmd->add_option("--images", inv_images, "Directory of images")->required();
  inv_cmd->add_option("--prompt", inv_prompt, "Initial prompt t0")->required();
  inv_cmd->add_option("--out", inv_out, "Result file")->required();
  config_flag(inv_cmd, inv, "--steps", "inversion.steps", "Optimization steps T");
  config_flag(inv_cmd, inv, "--lr", "inversion.learning_rate", "Learning rate");
  config_flag(inv_cmd, inv, "--batch", "inversion.batch_size", "Images per step b");
  config_flag(inv_cmd, inv, "--m", "inversion.m", "Prompt slots m");
  config_flag(inv_cmd, inv, "--seed", "seed", "Seed");
  inv_cmd->callback([&] {
    action = [&](const GlobalConfig& c) {
      auto rt = make_runtime(c);
      const ImageSet set = embed_images(images_in(inv_images), *rt->cache);
      auto cfg = c.inversion;
      cfg.seed = c.seed;
      const auto result = run_inversion(set, inv_prompt, cfg, *rt->scorer);
      json body = result;
      write_json(inv_out, with_provenance(body, c));
      return json{{"inverted_prompt", result.inverted_prompt}, {"final_loss", result.final_loss}};
    };
  });

  // expand
  auto* exp = app.add_subcommand("expand", "Categorize t1 and build a candidate pool");
  std::string exp_t0, exp_t1, exp_context, exp_out;
  exp->add_option("--t0", exp_t0, "Original prompt")->required();
  exp->add_option("--t1", exp_t1, "Homogeneous-dimension prompt")->required();
  exp->add_option("--context", exp_context, "Preference context text");
  exp->add_option("--out", exp_out, "Pool file")->required();
  config_flag(exp, inv, "--k", "pool_size", "Pool size K");
  exp->callback([&] {
    action = [&](const GlobalConfig& c) {
      auto rt = make_runtime(c);
      const auto opts = c.pipeline().expansion;
      const auto cat = categorize_dimensions(exp_t1, *rt->llm, opts, exp_t0);
      ExpansionRequest req{exp_t0, exp_t1, cat.categorization, c.pool_size, std::nullopt};
      if (!exp_context.empty()) req.preference_context = exp_context;
      const auto pool = generate_candidates(req, *rt->llm, opts);
      std::vector<std::string> warnings = cat.warnings;
      warnings.insert(warnings.end(), pool.warnings.begin(), pool.warnings.end());
      write_json(exp_out, with_provenance({{"request", req},
                                           {"candidates", pool.candidates},
                                           {"stats",
                                            {{"rounds", pool.rounds},
                                             {"retries", pool.retries + cat.retries},
                                             {"rejected_original", pool.rejected_original},
                                             {"rejected_duplicates", pool.rejected_duplicates},
                                             {"rejected_invalid", pool.rejected_invalid}}},
                                           {"warnings", warnings}},
                                          c));
      return json{{"candidates", pool.candidates.size()}, {"pool", exp_out}};
    };
  });

  // filter
  auto* fil = app.add_subcommand("filter", "Score a candidate pool and select the top k");
  std::string fil_pool, fil_images, fil_t0, fil_t1, fil_out;
  fil->add_option("--pool", fil_pool, "Pool file written by expand")->required()->check(CLI::ExistingFile);
  fil->add_option("--original-images", fil_images, "Directory of the original images")->required();
  fil->add_option("--t0", fil_t0, "Original prompt")->required();
  fil->add_option("--t1", fil_t1, "Homogeneous-dimension prompt")->required();
  fil->add_option("--out", fil_out, "Scored pool file")->required();
  config_flag(fil, inv, "--lambda", "filter.lambda", "Fidelity weight");
  config_flag(fil, inv, "--k", "filter.select_count", "Prompts to select");
  fil->callback([&] {
    action = [&](const GlobalConfig& c) {
      auto rt = make_runtime(c);
      const json pool_json = json::parse(read_text_file(fil_pool));
      auto candidates = pool_json.at("candidates").get<std::vector<ExpansionCandidate>>();
      // Candidates without an image get one, seeded by their prompt.
      GenerationConfig gc = c.pipeline().generation;
      gc.images_per_prompt = 1;
      for (auto& cand : candidates) {
        if (cand.image && fs::exists(*cand.image)) continue;
        gc.seeds = {candidate_seed(cand.prompt, c.seed)};
        cand.image = generate(cand.prompt, gc, *rt->backend, *rt->store).images.images.at(0).string();
      }
      const ImageSet original = embed_images(images_in(fil_images), *rt->cache);
      const auto scored = select(std::move(candidates), original, fil_t0, fil_t1, c.filter, *rt->scorer, *rt->cache);
      write_json(fil_out, with_provenance({{"scored_pool", scored}}, c));
      return json{{"selected", scored.selected.size()}, {"under_selected", scored.under_selected}};
    };
  });

  // pipeline
  auto* pipe = app.add_subcommand("pipeline", "generate, invert, expand, filter and render the selection");
  std::string pipe_prompt, pipe_out, pipe_strategy = "inversion", pipe_context;
  pipe->add_option("--prompt", pipe_prompt, "Prompt t0")->required();
  pipe->add_option("--out", pipe_out, "Run directory")->default_val("expanse-run");
  pipe->add_option("--strategy", pipe_strategy, "HDI strategy: inversion, identity, caption_summarize, direct_vlm");
  pipe->add_option("--context", pipe_context, "Preference context text");
  config_flag(pipe, inv, "--n", "images_per_prompt", "Images for t0");
  config_flag(pipe, inv, "--k", "filter.select_count", "Prompts to select");
  config_flag(pipe, inv, "--steps", "inversion.steps", "Inversion steps");
  config_flag(pipe, inv, "--seed", "seed", "Seed");
  pipe->callback([&] {
    action = [&](const GlobalConfig& c) {
      auto rt = make_runtime(c);
      const auto cfg = c.pipeline();
      const auto hdi = make_hdi_strategy(pipe_strategy, cfg.inversion, c.retry());
      std::optional<std::string> context;
      if (!pipe_context.empty()) context = pipe_context;
      const auto run = run_pipeline(pipe_prompt, cfg, rt->context(), *hdi, context);

      const fs::path dir = pipe_out;
      write_json(dir / "run.json", with_provenance(run, c));
      write_json(dir / "inversion.json",
                 with_provenance(run.inversion ? json(*run.inversion) : json{{"t1", run.t1}}, c));
      write_json(dir / "scored_pool.json", with_provenance({{"scored_pool", run.scored_pool}}, c));
      json manifest = json::array();
      auto add_rows = [&](const GenerationRecord& g, const std::string& role) {
        for (const auto& h : g.content_hashes) {
          auto row = rt->store->lookup(h);
          json r = row ? json(*row) : json{{"content_hash", h}};
          r["role"] = role;
          manifest.push_back(std::move(r));
        }
      };
      add_rows(run.original, "original");
      copy_images(run.original, *rt->store, dir / "images" / "original");
      for (const auto& g : run.selected_generations) {
        add_rows(g, "selected");
        copy_images(g, *rt->store, dir / "images" / "selected");
      }
      write_json(dir / "manifest.json", with_provenance({{"images", manifest}}, c));
      return json{{"t1", run.t1}, {"selected", run.scored_pool.selected.size()}, {"run_dir", dir.string()}};
    };
  });

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Aggregate ICAD of a condition over a prompt list");
  std::string ev_prompts, ev_condition = "poet", ev_out = "expanse-report", ev_strategy;
  ev->add_option("--prompts", ev_prompts, "Prompt file, one per line (default: built-in fixture prompts)");
  ev->add_option("--condition", ev_condition, "base, poet_no_hdi, poet or custom");
  ev->add_option("--strategy", ev_strategy, "HDI strategy for --condition custom");
  ev->add_option("--out", ev_out, "Report directory");
  config_flag(ev, inv, "--n", "eval.n", "Images per set");
  config_flag(ev, inv, "--sample-count", "eval.sample_count", "Prompts to sample");
  config_flag(ev, inv, "--workers", "eval.workers", "Prompts evaluated in parallel");
  config_flag(ev, inv, "--seed", "seed", "Run seed");
  config_flag(ev, inv, "--noise", "backend.noise", "Mock image noise");
  ev->callback([&] {
    action = [&](const GlobalConfig& c) {
      auto rt = make_runtime(c);
      auto e = eval_config(c, ev_condition, ev_out);
      if (!ev_strategy.empty()) e.custom_strategy = ev_strategy;
      e.validate();
      const auto prompts = sample_prompts(prompts_from(ev_prompts), e.sample_count, e.seed);
      const auto report = evaluate_prompts(prompts, e, rt->context());
      const fs::path dir = ev_out;
      write_json(dir / "report.json", with_provenance({{"report", report}, {"run", e}}, c));
      write_file_atomic(dir / "report.csv", report_csv(report));
      return json{{"condition", report.condition},
                  {"aggregate_icad", report.aggregate ? json(*report.aggregate) : json(nullptr)},
                  {"failures", report.failures},
                  {"degraded", report.degraded}};
    };
  });

  // compare-hdi
  auto* cmp = app.add_subcommand("compare-hdi", "Compare HDI strategies with everything else fixed");
  std::string cmp_strategies = "inversion,identity,caption_summarize,direct_vlm", cmp_prompts,
              cmp_out = "expanse-compare";
  cmp->add_option("--strategies", cmp_strategies, "Comma-separated strategy ids");
  cmp->add_option("--prompts", cmp_prompts, "Prompt file (default: built-in fixture prompts)");
  cmp->add_option("--out", cmp_out, "Report directory");
  config_flag(cmp, inv, "--n", "eval.n", "Images per set");
  config_flag(cmp, inv, "--sample-count", "eval.sample_count", "Prompts to sample");
  config_flag(cmp, inv, "--seed", "seed", "Run seed");
  cmp->callback([&] {
    action = [&](const GlobalConfig& c) {
      auto rt = make_runtime(c);
      auto e = eval_config(c, "custom", cmp_out);
      e.checkpoint_dir.reset();
      e.validate();
      const auto prompts = sample_prompts(prompts_from(cmp_prompts), e.sample_count, e.seed);
      const auto cmp_result = compare_hdi_strategies(split_csv(cmp_strategies), prompts, e, rt->context());
      const fs::path dir = cmp_out;
      write_json(dir / "comparison.json", with_provenance({{"comparison", cmp_result}}, c));
      std::string csv = "strategy,icad,prompts,failures,status\n";
      for (const auto& r : cmp_result.rows) {
        csv += r.strategy + "," + (r.icad ? std::to_string(*r.icad) : std::string()) + "," +
               std::to_string(r.prompts) + "," + std::to_string(r.failures) + "," + r.status + "\n";
      }
      write_file_atomic(dir / "comparison.csv", csv);
      return json{{"comparison", (dir / "comparison.json").string()}};
    };
  });

  // serve
  auto* srv = app.add_subcommand("serve", "Run the interactive session HTTP service");
  config_flag(srv, inv, "--host", "server.host", "Bind address");
  config_flag(srv, inv, "--port", "server.port", "Port (0 picks a free one)");
  srv->callback([&] {
    action = [&](const GlobalConfig& c) {
      auto rt = make_runtime(c);
      SessionServiceOptions so;
      so.data_dir = c.data_dir;
      so.pipeline = c.pipeline();
      so.pipeline.generation.images_per_prompt = c.server.interactive_images;
      so.context_token_budget = c.context_token_budget;
      so.retry = c.retry();
      so.seed = c.seed;
      SessionService service(so, rt->context());
      HttpServer server(service);
      const int port = server.bind(c.server.host, c.server.port);
      out << json{{"listening", c.server.host + ":" + std::to_string(port)}}.dump() << std::endl;
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      server.run();
      g_server = nullptr;
      return json{{"stopped", true}};
    };
  });

  std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
  try {
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion& e) {
    out << e.what() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << json{{"error", {{"code", "usage"}, {"message", e.what()}}}}.dump() << "\n";
    return 2;
  }

  try {
    const GlobalConfig config = resolve_config(inv);
    const auto before = network_requests();
    json summary = action(config);
    if (inv.mock && network_requests() != before) {
      fail(ErrorCode::invalid_state, "--mock run issued " + std::to_string(network_requests() - before) +
                                         " network requests");
    }
    summary["ok"] = true;
    out << summary.dump() << "\n";
    return 0;
  } catch (const ConfigError& e) {
    err << json{{"error", {{"code", "config"}, {"message", "invalid configuration"}, {"details", e.errors()}}}}.dump()
        << "\n";
    return 2;
  } catch (const Error& e) {
    err << json{{"error", {{"code", std::string(to_string(e.code()))}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << json{{"error", {{"code", "internal"}, {"message", e.what()}}}}.dump() << "\n";
    return 1;
  }
}

}  // namespace expanse::cli
