// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdseval/metrics.hpp"

namespace sdseval {

enum class GroupBy { Source, Task, Ability };

std::string_view to_string(GroupBy g);
GroupBy parse_group_by(std::string_view s);

/// One aggregated metric value for one group.
struct TaskReport {
  Metric metric = Metric::Sds;
  GroupBy group_by = GroupBy::Source;
  std::string group;                 // source name, task label, or ability name
  std::optional<Ability> ability;    // set unless a source group spans abilities
  double value = 0.0;
  std::size_t n = 0;
  std::optional<std::int64_t> checkpoint_step;
};

/// Unweighted mean, the rule behind per-ability table averages.
double unweighted_mean(std::span<const double> values);

/// Source groups take the metric over all their results. Task and ability
/// groups take the unweighted mean over their (task, source) cells, so an
/// ability value is the plain average of its per-source values. Results are
/// canonicalised by sample id first, which makes the output independent of
/// input order. Reports come back sorted by (group, metric).
std::vector<TaskReport> aggregate(std::span<const SampleResult> results, GroupBy group_by,
                                  std::span<const Metric> metrics);

struct CorrelationPair {
  std::string label;
  std::vector<double> pre_scores;
  std::vector<double> post_scores;
};

/// Sample Pearson r. Constant input is an error, never 0.
double pearson(std::span<const double> x, std::span<const double> y);
double pearson(const CorrelationPair& pair);

/// (step, label, score) rows, e.g. fine-tuned scores from an external harness.
struct ScoreRow {
  std::int64_t step = 0;
  std::string label;
  double score = 0.0;
};

/// Tab- or comma-separated; an optional header line starting with "step" is skipped.
std::vector<ScoreRow> read_score_table(const std::filesystem::path& path);
std::vector<ScoreRow> parse_score_table(std::string_view text, const std::string& where = "score table");

/// One pair per label shared by both tables, built only from steps present
/// in both. Labels come back sorted.
std::vector<CorrelationPair> assemble_pairs(std::span<const ScoreRow> pre, std::span<const ScoreRow> post);

struct ReliabilityCurve {
  std::vector<std::size_t> sample_sizes;
  std::vector<double> values;        // mean SDS over the resamples
  std::vector<double> resample_std;  // population std over the resamples
  std::size_t resamples = 0;

  std::string to_tsv() const;
};

/// For each size n: SDS over R seeded without-replacement subsamples.
ReliabilityCurve reliability_curve(std::span<const SampleResult> results, std::span<const std::size_t> sizes,
                                   std::size_t resamples, std::uint64_t seed);

struct SeriesPoint {
  std::int64_t step = 0;
  std::vector<TaskReport> reports;
};

class CheckpointSeries {
 public:
  explicit CheckpointSeries(std::string run_id) : run_id_(std::move(run_id)) {}

  /// Steps must be strictly increasing.
  void add(std::int64_t step, std::vector<TaskReport> reports);

  const std::string& run_id() const { return run_id_; }
  const std::vector<SeriesPoint>& points() const { return points_; }
  bool empty() const { return points_.empty(); }

 private:
  std::string run_id_;
  std::vector<SeriesPoint> points_;
};

struct SeriesMatrix {
  Metric metric = Metric::Sds;
  std::vector<std::int64_t> steps;
  std::vector<std::string> columns;
  std::vector<std::vector<std::optional<double>>> cells;  // [step][column]

  /// Wide table; missing cells print as NA.
  std::string to_tsv() const;
  /// step, label, score rows (what read_score_table consumes); missing cells skipped.
  std::string to_long_tsv() const;
};

/// Dense steps x groups matrix for one metric at one grouping level. An
/// empty filter selects every group present.
SeriesMatrix series_table(const CheckpointSeries& series, Metric metric, GroupBy level,
                          std::span<const std::string> filter = {});

/// Advisory stand-in for saturation: first step whose least-squares slope
/// over the trailing `window` points is below `epsilon`.
std::optional<std::int64_t> detect_saturation(std::span<const std::int64_t> steps,
                                              std::span<const std::optional<double>> values, std::size_t window,
                                              double epsilon);

}  // namespace sdseval
