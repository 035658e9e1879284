#include "expanse/evaluation/evaluation.hpp"

#include "expanse/error.hpp"
#include "expanse/hashing.hpp"
#include "expanse/util/binary_io.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

namespace expanse {
namespace {

using nlohmann::json;

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::string error_text(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    return std::string(to_string(err->code())) + ": " + err->what();
  }
  return e.what();
}

IcadRow evaluate_one(int index, const std::string& prompt, const EvalRunConfig& config,
                     const PipelineContext& ctx) {
  IcadRow row;
  row.index = index;
  row.prompt = prompt;
  try {
    PipelineConfig pc = config.pipeline;
    const std::uint64_t seed = prompt_seed(config.seed, index);
    pc.generation.images_per_prompt = config.n;
    pc.generation.seeds.clear();
    pc.generation.seed_base = seed;
    pc.inversion.seed = seed;
    pc.expansion.seed = seed;
    pc.filter.select_count = config.n;
    pc.images_per_selected = 1;

    if (config.condition == "base") {
      auto rec = generate(prompt, pc.generation, ctx.backend, ctx.store);
      row.n = static_cast<int>(rec.images.size());
      row.icad = icad(rec.images, ctx.cache);
      return row;
    }
    std::unique_ptr<HdiStrategy> hdi;
    if (config.condition == "poet") hdi = make_hdi_strategy("inversion", pc.inversion, pc.expansion.retry);
    else if (config.condition == "poet_no_hdi") hdi = make_hdi_strategy("identity", pc.inversion, pc.expansion.retry);
    else hdi = make_hdi_strategy(config.custom_strategy, pc.inversion, pc.expansion.retry);
    const auto run = run_pipeline(prompt, pc, ctx, *hdi);
    row.n = static_cast<int>(run.expanded_set.size());
    row.icad = icad(*run.expanded_set.embeddings);
  } catch (const std::exception& e) {
    row.status = "failed";
    row.icad.reset();
    row.error = error_text(e);
  }
  return row;
}

std::string fingerprint(const std::vector<std::string>& prompts, const EvalRunConfig& config) {
  json j = config;
  j.erase("checkpoint_dir");
  j.erase("workers");
  j["prompts"] = prompts;
  return sha256_hex(std::string_view(j.dump()));
}

}  // namespace

double IcadMetric::score(const Matrix& rows) const {
  const Eigen::Index n = rows.rows();
  if (n < 2) fail(ErrorCode::invalid_input, "ICAD needs at least 2 images, got " + std::to_string(n));
  const Matrix gram = rows * rows.transpose();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      // Identical rows are exactly zero apart; the Gram entry can round below 1.
      if (rows.row(i) == rows.row(j)) continue;
      total += std::clamp((1.0 - gram(i, j)) / 2.0, 0.0, 1.0);
    }
  return total / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

double icad(const Matrix& embeddings) {
  Matrix rows = embeddings;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const double norm = rows.row(i).norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) fail(ErrorCode::numeric, "degenerate image embedding in ICAD input");
    rows.row(i) /= norm;
  }
  return IcadMetric().score(rows);
}

double icad(const ImageSet& images, EmbeddingCache& cache) {
  if (images.size() < 2) fail(ErrorCode::invalid_input, "ICAD needs at least 2 images");
  if (images.embeddings) return icad(*images.embeddings);
  return icad(*embed_images(images, cache).embeddings);
}

void EvalRunConfig::validate() const {
  if (sample_count < 1) fail(ErrorCode::invalid_input, "sample_count must be >= 1");
  if (n < 2) fail(ErrorCode::invalid_input, "n must be >= 2 to measure diversity");
  if (std::find(std::begin(kConditions), std::end(kConditions), condition) == std::end(kConditions)) {
    fail(ErrorCode::invalid_input, "unknown condition '" + condition + "' (expected base, poet_no_hdi, poet or custom)");
  }
  if (checkpoint_every < 1) fail(ErrorCode::invalid_input, "checkpoint_every must be >= 1");
  if (workers < 1) fail(ErrorCode::invalid_input, "workers must be >= 1");
  if (!(degraded_fraction >= 0.0 && degraded_fraction <= 1.0)) {
    fail(ErrorCode::invalid_input, "degraded_fraction must lie in [0, 1]");
  }
}

std::vector<std::string> load_prompts(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) fail(ErrorCode::io, "cannot read prompt file " + file.string());
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) out.push_back(line);
  }
  return out;
}

std::vector<std::string> sample_prompts(const std::vector<std::string>& prompts, int count, std::uint64_t seed) {
  if (count < 1) fail(ErrorCode::invalid_input, "sample count must be >= 1");
  if (static_cast<std::size_t>(count) >= prompts.size()) return prompts;
  std::vector<std::size_t> idx(prompts.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(mix64(seed));
  for (std::size_t i = 0; i < static_cast<std::size_t>(count); ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(static_cast<std::size_t>(count));
  std::sort(idx.begin(), idx.end());
  std::vector<std::string> out;
  for (auto i : idx) out.push_back(prompts[i]);
  return out;
}

std::uint64_t prompt_seed(std::uint64_t run_seed, int index) {
  return mix64(mix64(run_seed) ^ static_cast<std::uint64_t>(index)) >> 11;
}

IcadReport evaluate_prompts(const std::vector<std::string>& prompts, const EvalRunConfig& config,
                            const PipelineContext& ctx) {
  config.validate();
  if (prompts.empty()) fail(ErrorCode::invalid_input, "no prompts to evaluate");

  std::vector<std::optional<IcadRow>> rows(prompts.size());
  const std::string fp = fingerprint(prompts, config);
  std::filesystem::path checkpoint;
  if (config.checkpoint_dir) {
    std::filesystem::create_directories(*config.checkpoint_dir);
    checkpoint = *config.checkpoint_dir / "checkpoint.json";
    if (std::filesystem::exists(checkpoint)) {
      const auto saved = json::parse(read_text_file(checkpoint));
      if (saved.value("fingerprint", std::string()) == fp) {
        for (const auto& r : saved.at("rows")) {
          auto row = r.get<IcadRow>();
          if (row.index >= 0 && static_cast<std::size_t>(row.index) < rows.size()) rows[static_cast<std::size_t>(row.index)] = row;
        }
      }
    }
  }

  std::mutex mu;
  int since_checkpoint = 0;
  auto save_checkpoint = [&] {
    if (checkpoint.empty()) return;
    json done = json::array();
    for (const auto& r : rows)
      if (r) done.push_back(*r);
    write_file_atomic(checkpoint, json{{"fingerprint", fp}, {"rows", done}}.dump());
  };

  std::vector<int> todo;
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (!rows[i]) todo.push_back(static_cast<int>(i));

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < todo.size(); k = next++) {
      const int i = todo[k];
      IcadRow row = evaluate_one(i, prompts[static_cast<std::size_t>(i)], config, ctx);
      std::lock_guard lock(mu);
      rows[static_cast<std::size_t>(i)] = std::move(row);
      if (++since_checkpoint >= config.checkpoint_every) {
        save_checkpoint();
        since_checkpoint = 0;
      }
    }
  };
  const int threads = std::min<int>(config.workers, static_cast<int>(todo.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  save_checkpoint();

  IcadReport report;
  report.condition = config.condition;
  if (config.condition == "poet") report.strategy = "inversion";
  else if (config.condition == "poet_no_hdi") report.strategy = "identity";
  else if (config.condition == "custom") report.strategy = config.custom_strategy;
  report.scorer_model_id = ctx.scorer.info().model_id;
  report.metric_id = IcadMetric().id();
  double sum = 0.0;
  int ok = 0;
  for (auto& r : rows) {
    if (r->status == "ok") {
      sum += *r->icad;
      ++ok;
    } else {
      ++report.failures;
    }
    report.per_prompt.push_back(std::move(*r));
  }
  if (ok > 0) report.aggregate = sum / ok;
  report.degraded = static_cast<double>(report.failures) > config.degraded_fraction * static_cast<double>(rows.size());
  return report;
}

IcadReport run_eval(const EvalRunConfig& config, const PipelineContext& ctx) {
  config.validate();
  return evaluate_prompts(sample_prompts(load_prompts(config.prompt_source), config.sample_count, config.seed),
                          config, ctx);
}

HdiComparison compare_hdi_strategies(const std::vector<std::string>& strategies,
                                     const std::vector<std::string>& prompts, const EvalRunConfig& config,
                                     const PipelineContext& ctx) {
  if (strategies.empty()) fail(ErrorCode::invalid_input, "no HDI strategies to compare");
  HdiComparison out;
  out.scorer_model_id = ctx.scorer.info().model_id;
  out.metric_id = IcadMetric().id();
  for (const auto& s : strategies) {
    HdiComparisonRow row;
    row.strategy = s;
    try {
      make_hdi_strategy(s, config.pipeline.inversion);
      EvalRunConfig c = config;
      c.condition = "custom";
      c.custom_strategy = s;
      if (c.checkpoint_dir) c.checkpoint_dir = *c.checkpoint_dir / s;
      const auto report = evaluate_prompts(prompts, c, ctx);
      row.prompts = static_cast<int>(report.per_prompt.size());
      row.failures = report.failures;
      row.icad = report.aggregate;
      if (!report.aggregate) {
        row.status = "failed";
        row.error = report.per_prompt.front().error;
      } else if (report.degraded) {
        row.status = "degraded";
      }
    } catch (const std::exception& e) {
      row.status = "failed";
      row.error = error_text(e);
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

std::string report_csv(const IcadReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "prompt,condition,icad\n";
  for (const auto& r : report.per_prompt) {
    out << csv_field(r.prompt) << ',' << report.condition << ',';
    if (r.icad) out << *r.icad;
    out << '\n';
  }
  return out.str();
}

void to_json(json& j, const IcadRow& r) {
  j = json{{"index", r.index}, {"prompt", r.prompt}, {"n", r.n}, {"status", r.status}};
  j["icad"] = r.icad ? json(*r.icad) : json(nullptr);
  if (!r.error.empty()) j["error"] = r.error;
}

void from_json(const json& j, IcadRow& r) {
  r.index = j.at("index").get<int>();
  r.prompt = j.at("prompt").get<std::string>();
  r.n = j.value("n", 0);
  r.status = j.value("status", std::string("ok"));
  r.icad.reset();
  if (j.contains("icad") && !j.at("icad").is_null()) r.icad = j.at("icad").get<double>();
  r.error = j.value("error", std::string());
}

void to_json(json& j, const IcadReport& r) {
  j = json{{"per_prompt", r.per_prompt},
           {"condition", r.condition},
           {"strategy", r.strategy},
           {"scorer_model_id", r.scorer_model_id},
           {"metric_id", r.metric_id},
           {"failures", r.failures},
           {"degraded", r.degraded}};
  j["aggregate"] = r.aggregate ? json(*r.aggregate) : json(nullptr);
}

void from_json(const json& j, IcadReport& r) {
  r.per_prompt = j.at("per_prompt").get<std::vector<IcadRow>>();
  r.condition = j.at("condition").get<std::string>();
  r.strategy = j.value("strategy", std::string());
  r.scorer_model_id = j.value("scorer_model_id", std::string());
  r.metric_id = j.value("metric_id", std::string());
  r.failures = j.value("failures", 0);
  r.degraded = j.value("degraded", false);
  r.aggregate.reset();
  if (j.contains("aggregate") && !j.at("aggregate").is_null()) r.aggregate = j.at("aggregate").get<double>();
}

void to_json(json& j, const HdiComparison& c) {
  json rows = json::array();
  for (const auto& r : c.rows) {
    json row = {{"strategy", r.strategy}, {"prompts", r.prompts}, {"failures", r.failures}, {"status", r.status}};
    row["icad"] = r.icad ? json(*r.icad) : json(nullptr);
    if (!r.error.empty()) row["error"] = r.error;
    rows.push_back(std::move(row));
  }
  j = json{{"rows", rows}, {"scorer_model_id", c.scorer_model_id}, {"metric_id", c.metric_id}};
}

void to_json(json& j, const EvalRunConfig& c) {
  j = json{{"prompt_source", c.prompt_source.string()},
           {"sample_count", c.sample_count},
           {"n", c.n},
           {"condition", c.condition},
           {"custom_strategy", c.custom_strategy},
           {"seed", c.seed},
           {"checkpoint_every", c.checkpoint_every},
           {"workers", c.workers},
           {"degraded_fraction", c.degraded_fraction},
           {"pipeline", c.pipeline}};
  j["checkpoint_dir"] = c.checkpoint_dir ? json(c.checkpoint_dir->string()) : json(nullptr);
}

}  // namespace expanse
