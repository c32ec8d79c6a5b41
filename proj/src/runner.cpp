// SPDX-License-Identifier: Apache-2.0
#include "sdseval/runner.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <unordered_set>

#include "sdseval/error.hpp"
#include "sdseval/util.hpp"

namespace sdseval {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr const char* kLogFormat = "sdseval-results/1";

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  return p.is_relative() && !base.empty() ? base / p : p;
}

std::vector<Metric> parse_metrics(const json& j) {
  std::vector<Metric> out;
  for (const auto& m : j) {
    Metric metric = parse_metric(m.get<std::string>());
    if (std::find(out.begin(), out.end(), metric) != out.end()) {
      fail(ErrorCode::Config, fmt::format("metric '{}' listed twice", to_string(metric)));
    }
    out.push_back(metric);
  }
  return out;
}

json metrics_to_json(const std::vector<Metric>& metrics) {
  json arr = json::array();
  for (Metric m : metrics) arr.push_back(std::string(to_string(m)));
  return arr;
}

// Scores one sample; throws on provider failure.
json score_one(const Sample& sample, const LogitProvider& provider, bool need_nll) {
  std::vector<CandidateScore> scores;
  scores.reserve(sample.candidates.size());
  for (std::size_t c = 0; c < sample.candidates.size(); ++c) {
    TokenLogits tl = provider.score_tokens(sample, c);
    tl.validate();
    CandidateScore cs{.candidate_index = c, .mean_logit = mean_logit(tl), .token_count = tl.tokens.size()};
    if (need_nll) {
      auto nll = provider.label_nll(sample, c);
      if (nll.size() != tl.tokens.size()) {
        fail(ErrorCode::Provider, fmt::format("sample '{}' candidate {}: {} NLLs for {} tokens", sample.id, c,
                                              nll.size(), tl.tokens.size()));
      }
      for (double v : nll) {
        if (!std::isfinite(v) || v < 0.0) fail(ErrorCode::Provider, "provider returned an invalid NLL");
      }
      cs.mean_nll = mean_logit(nll);
    }
    scores.push_back(cs);
  }
  SampleResult r = score_sample(sample, scores);
  json j = result_to_json(r);
  json means = json::array(), counts = json::array(), nlls = json::array();
  for (const auto& s : scores) {
    means.push_back(s.mean_logit);
    counts.push_back(s.token_count);
    if (s.mean_nll) nlls.push_back(*s.mean_nll);
  }
  j["mean_logits"] = means;
  j["token_counts"] = counts;
  if (need_nll) j["mean_nlls"] = nlls;
  return j;
}

std::string ordered_dump(const json& j) {
  // Fixed key order keeps logs diff-friendly.
  static const std::vector<std::string> order{
      "type", "sample_id", "task", "source", "answer_index", "mean_logits", "token_counts", "mean_nlls",
      "normalized_scores", "p_correct", "chosen_logits", "correct_logits", "chosen_ppl", "correct_ppl",
      "answer_nll_sum", "answer_tokens", "error"};
  ordered_json o;
  for (const auto& k : order) {
    if (j.contains(k)) o[k] = j[k];
  }
  for (const auto& [k, v] : j.items()) {
    if (!o.contains(k)) o[k] = v;
  }
  return o.dump();
}

}  // namespace

RunConfig RunConfig::load(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Config, fmt::format("{}: {}", path.string(), e.what()));
  } catch (const Error& e) {
    fail(ErrorCode::Config, e.what());
  }
  return from_json(j, path.parent_path());
}

RunConfig RunConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
  RunConfig c;
  c.base_dir = base_dir;
  try {
    c.run_id = j.value("run_id", c.run_id);
    c.manifest = resolve(base_dir, j.at("manifest").get<std::string>());
    c.provider = ProviderSpec::from_json(j.at("provider"));
    if (j.contains("metrics")) c.metrics = parse_metrics(j["metrics"]);
    c.seed = j.value("seed", c.seed);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.output_dir = resolve(base_dir, j.at("output_dir").get<std::string>());
    if (j.contains("checkpoint_step") && !j["checkpoint_step"].is_null()) {
      c.checkpoint_step = j["checkpoint_step"].get<std::int64_t>();
    }
    c.worker_count = j.value("worker_count", c.worker_count);
  } catch (const json::exception& e) {
    fail(ErrorCode::Config, fmt::format("run config: {}", e.what()));
  } catch (const Error& e) {
    fail(ErrorCode::Config, fmt::format("run config: {}", e.what()));
  }
  // Stochastic providers fall back to the run seed.
  if (c.provider.kind == ProviderKind::MockHash && !c.provider.params.contains("seed")) {
    c.provider.params["seed"] = c.seed;
  }
  c.validate();
  return c;
}

void RunConfig::validate() const {
  if (run_id.empty()) fail(ErrorCode::Config, "run_id must not be empty");
  if (manifest.empty()) fail(ErrorCode::Config, "manifest is required");
  if (output_dir.empty()) fail(ErrorCode::Config, "output_dir is required");
  if (metrics.empty()) fail(ErrorCode::Config, "at least one metric is required");
  if (batch_size < 1) fail(ErrorCode::Config, "batch_size must be >= 1");
  if (worker_count < 1) fail(ErrorCode::Config, "worker_count must be >= 1");
  try {
    provider.validate();
  } catch (const Error& e) {
    fail(ErrorCode::Config, e.what());
  }
}

json RunConfig::identity() const {
  std::string manifest_digest;
  try {
    manifest_digest = sha256_hex(read_file(manifest));
  } catch (const Error&) {
    manifest_digest = "missing";
  }
  json j;
  j["run_id"] = run_id;
  j["manifest_sha256"] = manifest_digest;
  j["provider"] = provider.to_json();
  j["metrics"] = metrics_to_json(metrics);
  j["seed"] = seed;
  j["checkpoint_step"] = checkpoint_step ? json(*checkpoint_step) : json(nullptr);
  return j;
}

std::string RunConfig::digest() const { return sha256_hex(identity().dump()).substr(0, 16); }

json result_to_json(const SampleResult& r) {
  json j;
  j["type"] = "result";
  j["sample_id"] = r.sample_id;
  j["task"] = r.task.label();
  j["source"] = r.source;
  j["answer_index"] = r.answer_index;
  j["normalized_scores"] = r.normalized_scores;
  j["p_correct"] = r.p_correct;
  j["chosen_logits"] = r.chosen_logits;
  j["correct_logits"] = r.correct_logits;
  if (r.chosen_ppl) j["chosen_ppl"] = *r.chosen_ppl;
  if (r.correct_ppl) j["correct_ppl"] = *r.correct_ppl;
  if (r.answer_nll_sum) j["answer_nll_sum"] = *r.answer_nll_sum;
  if (r.answer_tokens) j["answer_tokens"] = *r.answer_tokens;
  return j;
}

SampleResult result_from_json(const json& j) {
  SampleResult r;
  try {
    r.sample_id = j.at("sample_id").get<std::string>();
    r.task = TaskCategory::parse(j.at("task").get<std::string>());
    r.source = j.at("source").get<std::string>();
    r.answer_index = j.at("answer_index").get<std::size_t>();
    r.normalized_scores = j.at("normalized_scores").get<std::vector<double>>();
    r.p_correct = j.at("p_correct").get<double>();
    r.chosen_logits = j.at("chosen_logits").get<std::size_t>();
    r.correct_logits = j.at("correct_logits").get<bool>();
    if (j.contains("chosen_ppl")) r.chosen_ppl = j["chosen_ppl"].get<std::size_t>();
    if (j.contains("correct_ppl")) r.correct_ppl = j["correct_ppl"].get<bool>();
    if (j.contains("answer_nll_sum")) r.answer_nll_sum = j["answer_nll_sum"].get<double>();
    if (j.contains("answer_tokens")) r.answer_tokens = j["answer_tokens"].get<std::size_t>();
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, fmt::format("result record: {}", e.what()));
  }
  return r;
}

std::filesystem::path results_path(const std::filesystem::path& locator) {
  if (std::filesystem::is_directory(locator)) return locator / kResultsFile;
  return locator;
}

ResultsLog ResultsLog::read(const std::filesystem::path& locator) {
  ResultsLog log;
  log.path = results_path(locator);
  const std::string text = read_file(log.path);
  std::size_t valid_end = text.rfind('\n');
  valid_end = valid_end == std::string::npos ? 0 : valid_end + 1;
  log.truncated_bytes = text.size() - valid_end;

  std::map<std::string, SampleResult> results;
  std::map<std::string, std::string> failures;
  bool have_header = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < valid_end) {
    std::size_t nl = text.find('\n', pos);
    std::string_view line(text.data() + pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = fmt::format("{}:{}", log.path.string(), line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::Parse, fmt::format("{}: {}", where, e.what()));
    }
    const std::string type = j.value("type", std::string{});
    if (type == "header") {
      if (have_header) fail(ErrorCode::Parse, where + ": second header");
      have_header = true;
      if (j.value("format", std::string{}) != kLogFormat) fail(ErrorCode::Parse, where + ": unknown log format");
      log.header.run_id = j.value("run_id", std::string{});
      log.header.config_digest = j.value("config_digest", std::string{});
      if (j.contains("checkpoint_step") && !j["checkpoint_step"].is_null()) {
        log.header.checkpoint_step = j["checkpoint_step"].get<std::int64_t>();
      }
      log.header.metrics = parse_metrics(j.value("metrics", json::array()));
      log.header.config = j.value("config", json::object());
    } else if (!have_header) {
      fail(ErrorCode::Parse, where + ": record before header");
    } else if (type == "result") {
      SampleResult r = result_from_json(j);
      auto id = r.sample_id;
      if (!results.emplace(id, std::move(r)).second) {
        fail(ErrorCode::Validation, fmt::format("{}: duplicate result for sample '{}'", where, id));
      }
      failures.erase(id);
    } else if (type == "failure") {
      auto id = j.at("sample_id").get<std::string>();
      if (!results.count(id)) failures[id] = j.value("error", std::string{});
    } else {
      fail(ErrorCode::Parse, fmt::format("{}: unknown record type '{}'", where, type));
    }
  }
  if (!have_header) fail(ErrorCode::Parse, log.path.string() + ": missing header");
  for (auto& [id, r] : results) log.results.push_back(std::move(r));
  for (auto& [id, e] : failures) log.failures.push_back({id, e});
  return log;
}

std::string RunSummary::to_json() const {
  ordered_json j;
  j["run_id"] = run_id;
  j["config_digest"] = config_digest;
  j["benchmark_size"] = benchmark_size;
  j["already_done"] = already_done;
  j["newly_scored"] = newly_scored;
  j["failed"] = failed;
  j["remaining"] = remaining;
  j["complete"] = complete;
  j["workers"] = workers;
  j["wall_seconds"] = wall_seconds;
  j["results"] = results.string();
  j["reports"] = ordered_json::array();
  for (const auto& r : reports) j["reports"].push_back(r.string());
  return j.dump(2);
}

int RunSummary::exit_code() const { return complete && failed == 0 ? 0 : 3; }

RunSummary evaluate(const RunConfig& config, const EvaluateOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();

  auto manifest = BenchmarkManifest::load(config.manifest);
  auto validation = validate_manifest(manifest);
  if (!validation.passed) fail(ErrorCode::Validation, "benchmark manifest failed validation\n" + validation.to_text());
  const auto samples = load_benchmark(manifest);

  std::unique_ptr<LogitProvider> provider;
  try {
    provider = make_provider(config.provider, config.base_dir);
  } catch (const Error& e) {
    fail(e.code() == ErrorCode::Provider ? ErrorCode::Provider : ErrorCode::Config, e.what());
  }
  const bool need_nll = std::any_of(config.metrics.begin(), config.metrics.end(), needs_nll);
  if (need_nll && !provider->provides_nll()) {
    fail(ErrorCode::Config, fmt::format("metrics acc_ppl/ppl/nll need label NLLs, which provider '{}' does not expose",
                                        provider->name()));
  }

  RunSummary summary;
  summary.run_id = config.run_id;
  summary.config_digest = config.digest();
  summary.benchmark_size = samples.size();
  std::filesystem::create_directories(config.output_dir);
  summary.results = config.output_dir / kResultsFile;

  std::unordered_set<std::string> done;
  if (std::filesystem::exists(summary.results)) {
    auto existing = ResultsLog::read(summary.results);
    if (existing.header.config_digest != summary.config_digest) {
      fail(ErrorCode::Config, fmt::format("{} holds results for config {} (this config is {})",
                                          summary.results.string(), existing.header.config_digest,
                                          summary.config_digest));
    }
    if (existing.truncated_bytes > 0) {
      std::filesystem::resize_file(summary.results,
                                   std::filesystem::file_size(summary.results) - existing.truncated_bytes);
    }
    for (const auto& r : existing.results) done.insert(r.sample_id);
  } else {
    ordered_json header;
    header["type"] = "header";
    header["format"] = kLogFormat;
    header["run_id"] = config.run_id;
    header["config_digest"] = summary.config_digest;
    header["checkpoint_step"] = config.checkpoint_step ? ordered_json(*config.checkpoint_step) : ordered_json(nullptr);
    header["metrics"] = metrics_to_json(config.metrics);
    header["config"] = config.identity();
    write_file(summary.results, header.dump() + "\n");
  }
  summary.already_done = done.size();

  std::vector<const Sample*> todo;
  for (const auto& s : samples) {
    if (!done.count(s.id)) todo.push_back(&s);
  }
  const std::size_t pending_total = todo.size();
  if (options.max_new_samples && todo.size() > *options.max_new_samples) todo.resize(*options.max_new_samples);

  std::size_t workers = options.worker_override.value_or(config.worker_count);
  if (!provider->reentrant()) workers = 1;
  workers = std::max<std::size_t>(1, std::min(workers, std::max<std::size_t>(1, todo.size())));
  summary.workers = workers;

  // Workers score batches; this thread is the only writer of the log.
  struct Outcome {
    std::string line;
    bool ok = false;
  };
  std::mutex mu;
  std::condition_variable cv;
  std::deque<Outcome> queue;
  std::size_t finished_workers = 0;
  std::atomic<std::size_t> next_batch{0};
  const std::size_t batch = config.batch_size;
  const std::size_t n_batches = (todo.size() + batch - 1) / batch;

  auto work = [&] {
    while (true) {
      std::size_t b = next_batch.fetch_add(1);
      if (b >= n_batches) break;
      std::vector<Outcome> local;
      for (std::size_t i = b * batch; i < std::min(todo.size(), (b + 1) * batch); ++i) {
        const Sample& s = *todo[i];
        try {
          local.push_back({ordered_dump(score_one(s, *provider, need_nll)), true});
        } catch (const std::exception& e) {
          json f{{"type", "failure"}, {"sample_id", s.id}, {"error", e.what()}};
          local.push_back({ordered_dump(f), false});
        }
      }
      std::lock_guard lock(mu);
      for (auto& o : local) queue.push_back(std::move(o));
      cv.notify_one();
    }
    std::lock_guard lock(mu);
    ++finished_workers;
    cv.notify_one();
  };

  {
    std::ofstream out(summary.results, std::ios::binary | std::ios::app);
    if (!out) fail(ErrorCode::Io, "cannot append to " + summary.results.string());
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    std::unique_lock lock(mu);
    while (true) {
      cv.wait(lock, [&] { return !queue.empty() || finished_workers == workers; });
      while (!queue.empty()) {
        Outcome o = std::move(queue.front());
        queue.pop_front();
        lock.unlock();
        out << o.line << '\n';
        out.flush();
        if (o.ok) {
          ++summary.newly_scored;
        } else {
          ++summary.failed;
        }
        lock.lock();
      }
      if (finished_workers == workers && queue.empty()) break;
    }
  }

  summary.remaining = pending_total - todo.size();
  summary.complete = summary.remaining == 0;
  if (summary.complete) {
    auto log = ResultsLog::read(summary.results);
    summary.failed = log.failures.size();
    if (!log.results.empty()) {
      for (GroupBy g : {GroupBy::Source, GroupBy::Task, GroupBy::Ability}) {
        auto reports = aggregate(log.results, g, log.header.metrics);
        auto path = config.output_dir / fmt::format("report_{}.tsv", to_string(g));
        write_file(path, render_reports(reports, log.header, ReportFormat::Tsv));
        summary.reports.push_back(path);
      }
    }
    std::string failures = "sample_id\terror\n";
    for (const auto& f : log.failures) failures += f.sample_id + "\t" + normalize_whitespace(f.error) + "\n";
    auto fpath = config.output_dir / "failures.tsv";
    write_file(fpath, failures);
    summary.reports.push_back(fpath);
  }
  summary.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_file(config.output_dir / "summary.json", summary.to_json() + "\n");
  return summary;
}

ReportFormat parse_report_format(std::string_view s) {
  if (s == "tsv") return ReportFormat::Tsv;
  if (s == "json") return ReportFormat::Json;
  if (s == "text") return ReportFormat::Text;
  fail(ErrorCode::Config, fmt::format("unknown report format '{}' (tsv, json or text)", s));
}

std::string render_reports(const std::vector<TaskReport>& reports, const ResultsHeader& header, ReportFormat format) {
  auto step_text = [&](const TaskReport& r) {
    auto step = r.checkpoint_step ? r.checkpoint_step : header.checkpoint_step;
    return step ? std::to_string(*step) : std::string("NA");
  };
  auto ability_text = [](const TaskReport& r) {
    return r.ability ? std::string(to_string(*r.ability)) : std::string("mixed");
  };
  switch (format) {
    case ReportFormat::Tsv: {
      std::string out = "group_by\tgroup\tability\tmetric\tvalue\tn\tcheckpoint_step\tconfig_digest\n";
      for (const auto& r : reports) {
        out += fmt::format("{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n", to_string(r.group_by), r.group, ability_text(r),
                           to_string(r.metric), format_double(r.value), r.n, step_text(r), header.config_digest);
      }
      return out;
    }
    case ReportFormat::Json: {
      ordered_json j;
      j["run_id"] = header.run_id;
      j["config_digest"] = header.config_digest;
      j["checkpoint_step"] = header.checkpoint_step ? ordered_json(*header.checkpoint_step) : ordered_json(nullptr);
      j["reports"] = ordered_json::array();
      for (const auto& r : reports) {
        ordered_json e;
        e["group_by"] = to_string(r.group_by);
        e["group"] = r.group;
        e["ability"] = ability_text(r);
        e["metric"] = to_string(r.metric);
        e["value"] = r.value;
        e["n"] = r.n;
        j["reports"].push_back(std::move(e));
      }
      return j.dump(2) + "\n";
    }
    case ReportFormat::Text: {
      std::string out = fmt::format("run {}  config {}  step {}\n", header.run_id, header.config_digest,
                                    header.checkpoint_step ? std::to_string(*header.checkpoint_step) : "NA");
      out += fmt::format("{:<36} {:<11} {:<11} {:>8} {:>7}\n", "group", "ability", "metric", "value", "n");
      for (const auto& r : reports) {
        out += fmt::format("{:<36} {:<11} {:<11} {:>8} {:>7}\n", r.group, ability_text(r), to_string(r.metric),
                           round_half_even(r.value, 3), r.n);
      }
      return out;
    }
  }
  fail(ErrorCode::InvalidArgument, "unhandled report format");
}

std::vector<TaskReport> report_from_logs(const std::vector<std::filesystem::path>& locators, GroupBy group_by,
                                         ResultsHeader* header_out) {
  if (locators.empty()) fail(ErrorCode::InvalidArgument, "no results given");
  std::vector<SampleResult> all;
  std::optional<ResultsHeader> header;
  std::set<std::string> ids;
  for (const auto& loc : locators) {
    auto log = ResultsLog::read(loc);
    if (header && header->config_digest != log.header.config_digest) {
      fail(ErrorCode::Validation, fmt::format("results mix config digests {} and {}", header->config_digest,
                                              log.header.config_digest));
    }
    if (!header) header = log.header;
    for (auto& r : log.results) {
      if (!ids.insert(r.sample_id).second) {
        fail(ErrorCode::Validation, fmt::format("sample '{}' appears in more than one log", r.sample_id));
      }
      all.push_back(std::move(r));
    }
  }
  if (all.empty()) fail(ErrorCode::InvalidArgument, "results contain no scored samples");
  if (header_out) *header_out = *header;
  auto reports = aggregate(all, group_by, header->metrics);
  for (auto& r : reports) r.checkpoint_step = header->checkpoint_step;
  return reports;
}

CheckpointSeries load_series(const std::filesystem::path& dir, GroupBy level, const std::optional<std::string>& run_id) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorCode::Io, dir.string() + " is not a directory");
  std::vector<std::filesystem::path> logs;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().filename() == kResultsFile) logs.push_back(entry.path());
  }
  std::sort(logs.begin(), logs.end());
  if (logs.empty()) fail(ErrorCode::InvalidArgument, "no results logs under " + dir.string());

  std::map<std::int64_t, std::pair<std::filesystem::path, std::vector<TaskReport>>> by_step;
  std::optional<std::string> series_id = run_id;
  for (const auto& path : logs) {
    auto log = ResultsLog::read(path);
    if (run_id && log.header.run_id != *run_id) continue;
    if (!series_id) series_id = log.header.run_id;
    if (log.header.run_id != *series_id) {
      fail(ErrorCode::Validation, fmt::format("{} mixes run ids '{}' and '{}'; pick one with --run-id", dir.string(),
                                              *series_id, log.header.run_id));
    }
    if (!log.header.checkpoint_step) fail(ErrorCode::Validation, path.string() + " has no checkpoint_step");
    if (log.results.empty()) continue;
    auto step = *log.header.checkpoint_step;
    if (by_step.count(step)) {
      fail(ErrorCode::Validation, fmt::format("step {} appears in both {} and {}", step, by_step[step].first.string(),
                                              path.string()));
    }
    by_step[step] = {path, aggregate(log.results, level, log.header.metrics)};
  }
  if (by_step.empty()) fail(ErrorCode::InvalidArgument, "no scored checkpoints found under " + dir.string());
  CheckpointSeries series(*series_id);
  for (auto& [step, entry] : by_step) series.add(step, std::move(entry.second));
  return series;
}

}  // namespace sdseval
