// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdseval/adapter.hpp"
#include "sdseval/analysis.hpp"
#include "sdseval/metrics.hpp"

namespace sdseval {

struct RunConfig {
  std::string run_id = "run";
  std::filesystem::path manifest;
  ProviderSpec provider;
  std::vector<Metric> metrics{Metric::Sds};
  std::uint64_t seed = 0;
  std::size_t batch_size = 32;
  std::filesystem::path output_dir;
  std::optional<std::int64_t> checkpoint_step;
  std::size_t worker_count = 1;
  std::filesystem::path base_dir;  // where relative paths were resolved from

  static RunConfig load(const std::filesystem::path& path);
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  void validate() const;

  /// Fields that determine results. Scheduling knobs (workers, batch size)
  /// and the output location are excluded, so runs that differ only in
  /// those share a digest and produce identical reports.
  nlohmann::json identity() const;
  std::string digest() const;
};

/// Persisted form of one SampleResult plus its per-candidate inputs.
nlohmann::json result_to_json(const SampleResult& r);
SampleResult result_from_json(const nlohmann::json& j);

struct ResultsHeader {
  std::string run_id;
  std::string config_digest;
  std::optional<std::int64_t> checkpoint_step;
  std::vector<Metric> metrics;
  nlohmann::json config;
};

struct FailureRecord {
  std::string sample_id;
  std::string error;
};

/// Contents of one append-only results log.
struct ResultsLog {
  std::filesystem::path path;
  ResultsHeader header;
  std::vector<SampleResult> results;
  std::vector<FailureRecord> failures;  // only samples without a later success
  std::size_t truncated_bytes = 0;      // partial trailing record dropped on read

  /// Reads a log, dropping an incomplete final line (crash mid-write).
  static ResultsLog read(const std::filesystem::path& path);
};

inline constexpr const char* kResultsFile = "results.jsonl";

/// Accepts a results.jsonl file or a directory containing one.
std::filesystem::path results_path(const std::filesystem::path& locator);

struct EvaluateOptions {
  /// Score at most this many new samples, then stop as if interrupted.
  std::optional<std::size_t> max_new_samples;
  std::optional<std::size_t> worker_override;
};

struct RunSummary {
  std::string run_id;
  std::string config_digest;
  std::size_t benchmark_size = 0;
  std::size_t already_done = 0;
  std::size_t newly_scored = 0;
  std::size_t failed = 0;
  std::size_t remaining = 0;  // not attempted (interrupted run)
  std::size_t workers = 1;
  double wall_seconds = 0.0;
  std::filesystem::path results;
  std::vector<std::filesystem::path> reports;
  bool complete = false;

  std::string to_json() const;
  /// 0 success, 3 partial (failures or interrupted).
  int exit_code() const;
};

/// Scores every sample of the manifest not yet in the output log, persists
/// results append-only and, once the benchmark is complete, emits reports.
RunSummary evaluate(const RunConfig& config, const EvaluateOptions& options = {});

enum class ReportFormat { Tsv, Json, Text };
ReportFormat parse_report_format(std::string_view s);

/// Deterministic rendering of reports. Text rounds half-even to 3 decimals;
/// TSV and JSON carry full precision.
std::string render_reports(const std::vector<TaskReport>& reports, const ResultsHeader& header, ReportFormat format);

/// Reads one or more logs that must share a config digest and aggregates them.
std::vector<TaskReport> report_from_logs(const std::vector<std::filesystem::path>& locators, GroupBy group_by,
                                         ResultsHeader* header_out = nullptr);

/// Collects every results log under `dir` into a series (one point per
/// checkpoint step). Logs without a step or with another run id are rejected.
CheckpointSeries load_series(const std::filesystem::path& dir, GroupBy level,
                             const std::optional<std::string>& run_id = std::nullopt);

}  // namespace sdseval
