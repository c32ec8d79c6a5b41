// SPDX-License-Identifier: Apache-2.0
#include "sdseval/analysis.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <set>

#include "sdseval/error.hpp"
#include "sdseval/util.hpp"

namespace sdseval {

namespace {

using ResultRefs = std::vector<const SampleResult*>;

double metric_over(Metric metric, const ResultRefs& refs) {
  std::vector<SampleResult> copy;
  copy.reserve(refs.size());
  for (const auto* r : refs) copy.push_back(*r);
  return compute_metric(metric, copy);
}

std::int64_t parse_step(std::string_view s, const std::string& where) {
  s = trim(s);
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size()) fail(ErrorCode::Parse, fmt::format("{}: bad step '{}'", where, s));
  return v;
}

double parse_score(std::string_view s, const std::string& where) {
  s = trim(s);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) {
    fail(ErrorCode::Parse, fmt::format("{}: bad score '{}'", where, s));
  }
  return v;
}

}  // namespace

std::string_view to_string(GroupBy g) {
  switch (g) {
    case GroupBy::Source: return "source";
    case GroupBy::Task: return "task";
    case GroupBy::Ability: return "ability";
  }
  return "unknown";
}

GroupBy parse_group_by(std::string_view s) {
  for (auto g : {GroupBy::Source, GroupBy::Task, GroupBy::Ability}) {
    if (to_string(g) == s) return g;
  }
  fail(ErrorCode::Config, fmt::format("unknown grouping '{}' (source, task or ability)", s));
}

double unweighted_mean(std::span<const double> values) {
  if (values.empty()) fail(ErrorCode::InvalidArgument, "mean of an empty group");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

std::vector<TaskReport> aggregate(std::span<const SampleResult> results, GroupBy group_by,
                                  std::span<const Metric> metrics) {
  if (results.empty()) fail(ErrorCode::InvalidArgument, "aggregate: no results");
  if (metrics.empty()) fail(ErrorCode::InvalidArgument, "aggregate: no metrics requested");

  ResultRefs sorted;
  sorted.reserve(results.size());
  for (const auto& r : results) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) { return a->sample_id < b->sample_id; });

  if (std::find(metrics.begin(), metrics.end(), Metric::Sds) != metrics.end()) {
    const std::size_t m = sorted.front()->candidate_count();
    for (const auto* r : sorted) {
      if (r->candidate_count() != m) {
        fail(ErrorCode::InvalidArgument,
             fmt::format("SDS needs one candidate count per report; found {} and {} (sample '{}')", m,
                         r->candidate_count(), r->sample_id));
      }
    }
  }

  std::vector<TaskReport> out;
  if (group_by == GroupBy::Source) {
    std::map<std::string, ResultRefs> groups;
    for (const auto* r : sorted) groups[r->source].push_back(r);
    for (const auto& [source, refs] : groups) {
      std::optional<Ability> ability = refs.front()->task.ability();
      for (const auto* r : refs) {
        if (r->task.ability() != *ability) ability.reset();
        if (!ability) break;
      }
      for (Metric m : metrics) {
        out.push_back({.metric = m, .group_by = group_by, .group = source, .ability = ability,
                       .value = metric_over(m, refs), .n = refs.size()});
      }
    }
  } else {
    // Leaf cells are (task, source); groups average their cells unweighted.
    using CellKey = std::pair<std::string, std::string>;
    std::map<std::string, std::map<CellKey, ResultRefs>> groups;
    std::map<std::string, Ability> group_ability;
    for (const auto* r : sorted) {
      std::string key = group_by == GroupBy::Task ? r->task.label() : std::string(to_string(r->task.ability()));
      groups[key][{r->task.label(), r->source}].push_back(r);
      group_ability.emplace(key, r->task.ability());
    }
    for (const auto& [key, cells] : groups) {
      std::size_t n = 0;
      for (const auto& [cell, refs] : cells) n += refs.size();
      for (Metric m : metrics) {
        std::vector<double> cell_values;
        for (const auto& [cell, refs] : cells) cell_values.push_back(metric_over(m, refs));
        out.push_back({.metric = m, .group_by = group_by, .group = key, .ability = group_ability.at(key),
                       .value = unweighted_mean(cell_values), .n = n});
      }
    }
  }
  std::stable_sort(out.begin(), out.end(), [](const TaskReport& a, const TaskReport& b) {
    if (a.group != b.group) return a.group < b.group;
    return static_cast<int>(a.metric) < static_cast<int>(b.metric);
  });
  return out;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorCode::InvalidArgument, "pearson: vectors differ in length");
  if (x.size() < 2) fail(ErrorCode::InvalidArgument, "pearson: need at least 2 points");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) fail(ErrorCode::InvalidArgument, "pearson: non-finite value");
  }
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double e) { return e == v.front(); });
  };
  if (constant(x) || constant(y)) fail(ErrorCode::InvalidArgument, "pearson: constant vector, r is undefined");

  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) fail(ErrorCode::InvalidArgument, "pearson: zero variance");
  return std::clamp(sxy / (std::sqrt(sxx) * std::sqrt(syy)), -1.0, 1.0);
}

double pearson(const CorrelationPair& pair) {
  try {
    return pearson(pair.pre_scores, pair.post_scores);
  } catch (const Error& e) {
    fail(e.code(), fmt::format("{}: {}", pair.label, e.what()));
  }
}

std::vector<ScoreRow> parse_score_table(std::string_view text, const std::string& where) {
  std::vector<ScoreRow> rows;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const char sep = line.find('\t') != std::string_view::npos ? '\t' : ',';
    auto cols = split(line, sep);
    const std::string loc = fmt::format("{}:{}", where, line_no);
    if (cols.size() != 3) fail(ErrorCode::Parse, fmt::format("{}: expected 3 columns, got {}", loc, cols.size()));
    if (rows.empty() && trim(cols[0]) == "step") continue;
    rows.push_back({parse_step(cols[0], loc), std::string(trim(cols[1])), parse_score(cols[2], loc)});
  }
  return rows;
}

std::vector<ScoreRow> read_score_table(const std::filesystem::path& path) {
  return parse_score_table(read_file(path), path.string());
}

std::vector<CorrelationPair> assemble_pairs(std::span<const ScoreRow> pre, std::span<const ScoreRow> post) {
  using Table = std::map<std::string, std::map<std::int64_t, double>>;
  auto index = [](std::span<const ScoreRow> rows, const char* side) {
    Table t;
    for (const auto& r : rows) {
      if (!t[r.label].emplace(r.step, r.score).second) {
        fail(ErrorCode::Validation, fmt::format("{} table repeats ({}, {})", side, r.step, r.label));
      }
    }
    return t;
  };
  Table a = index(pre, "pre-training");
  Table b = index(post, "fine-tuned");
  std::vector<CorrelationPair> out;
  for (const auto& [label, steps] : a) {
    auto it = b.find(label);
    if (it == b.end()) continue;
    CorrelationPair pair{.label = label};
    for (const auto& [step, score] : steps) {
      auto other = it->second.find(step);
      if (other == it->second.end()) continue;
      pair.pre_scores.push_back(score);
      pair.post_scores.push_back(other->second);
    }
    out.push_back(std::move(pair));
  }
  return out;
}

ReliabilityCurve reliability_curve(std::span<const SampleResult> results, std::span<const std::size_t> sizes,
                                   std::size_t resamples, std::uint64_t seed) {
  if (results.empty()) fail(ErrorCode::InvalidArgument, "reliability: no results");
  if (resamples < 1) fail(ErrorCode::InvalidArgument, "reliability: need at least one resample");
  std::vector<SampleResult> pool(results.begin(), results.end());
  std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });

  ReliabilityCurve curve;
  curve.resamples = resamples;
  std::size_t prev = 0;
  for (std::size_t n : sizes) {
    if (n < 1) fail(ErrorCode::InvalidArgument, "reliability: sample sizes must be >= 1");
    if (n <= prev) fail(ErrorCode::InvalidArgument, "reliability: sample sizes must be increasing");
    if (n > pool.size()) {
      fail(ErrorCode::InvalidArgument, fmt::format("reliability: size {} exceeds the {} available results", n,
                                                   pool.size()));
    }
    prev = n;
    auto rng = SeededRng::derive(seed, fmt::format("reliability/{}", n));
    std::vector<double> draws;
    draws.reserve(resamples);
    std::vector<SampleResult> subset;
    for (std::size_t r = 0; r < resamples; ++r) {
      subset.clear();
      for (auto i : rng.sample_indices(pool.size(), n)) subset.push_back(pool[i]);
      std::sort(subset.begin(), subset.end(), [](const auto& a, const auto& b) { return a.sample_id < b.sample_id; });
      draws.push_back(sds(subset));
    }
    const auto [lo, hi] = std::minmax_element(draws.begin(), draws.end());
    const double mean = *lo == *hi ? *lo : unweighted_mean(draws);
    double var = 0.0;
    if (*lo != *hi) {
      for (double d : draws) var += (d - mean) * (d - mean);
      var /= static_cast<double>(draws.size());
    }
    curve.sample_sizes.push_back(n);
    curve.values.push_back(mean);
    curve.resample_std.push_back(std::sqrt(var));
  }
  return curve;
}

std::string ReliabilityCurve::to_tsv() const {
  std::string out = "size\tsds_mean\tsds_std\tresamples\n";
  for (std::size_t i = 0; i < sample_sizes.size(); ++i) {
    out += fmt::format("{}\t{}\t{}\t{}\n", sample_sizes[i], format_double(values[i]), format_double(resample_std[i]),
                       resamples);
  }
  return out;
}

void CheckpointSeries::add(std::int64_t step, std::vector<TaskReport> reports) {
  if (!points_.empty() && step <= points_.back().step) {
    fail(ErrorCode::Validation, fmt::format("checkpoint step {} does not follow step {}", step, points_.back().step));
  }
  for (auto& r : reports) r.checkpoint_step = step;
  points_.push_back({step, std::move(reports)});
}

SeriesMatrix series_table(const CheckpointSeries& series, Metric metric, GroupBy level,
                          std::span<const std::string> filter) {
  if (series.empty()) fail(ErrorCode::InvalidArgument, "series is empty");
  std::set<std::string> present;
  for (const auto& p : series.points()) {
    for (const auto& r : p.reports) {
      if (r.metric == metric && r.group_by == level) present.insert(r.group);
    }
  }
  SeriesMatrix m;
  m.metric = metric;
  if (filter.empty()) {
    m.columns.assign(present.begin(), present.end());
  } else {
    for (const auto& f : filter) {
      if (!present.count(f)) {
        fail(ErrorCode::InvalidArgument, fmt::format("no {} reports for {} '{}' in the series", to_string(metric),
                                                     to_string(level), f));
      }
      m.columns.push_back(f);
    }
  }
  if (m.columns.empty()) {
    fail(ErrorCode::InvalidArgument, fmt::format("series holds no {} reports at {} level", to_string(metric),
                                                 to_string(level)));
  }
  for (const auto& p : series.points()) {
    m.steps.push_back(p.step);
    std::vector<std::optional<double>> row(m.columns.size());
    for (const auto& r : p.reports) {
      if (r.metric != metric || r.group_by != level) continue;
      auto it = std::find(m.columns.begin(), m.columns.end(), r.group);
      if (it != m.columns.end()) row[static_cast<std::size_t>(it - m.columns.begin())] = r.value;
    }
    m.cells.push_back(std::move(row));
  }
  return m;
}

std::string SeriesMatrix::to_tsv() const {
  std::string out = "step";
  for (const auto& c : columns) out += "\t" + c;
  out += "\n";
  for (std::size_t i = 0; i < steps.size(); ++i) {
    out += std::to_string(steps[i]);
    for (const auto& cell : cells[i]) out += "\t" + (cell ? format_double(*cell) : std::string("NA"));
    out += "\n";
  }
  return out;
}

std::string SeriesMatrix::to_long_tsv() const {
  std::string out = "step\tlabel\tscore\n";
  for (std::size_t i = 0; i < steps.size(); ++i) {
    for (std::size_t j = 0; j < columns.size(); ++j) {
      if (cells[i][j]) out += fmt::format("{}\t{}\t{}\n", steps[i], columns[j], format_double(*cells[i][j]));
    }
  }
  return out;
}

std::optional<std::int64_t> detect_saturation(std::span<const std::int64_t> steps,
                                              std::span<const std::optional<double>> values, std::size_t window,
                                              double epsilon) {
  if (steps.size() != values.size()) fail(ErrorCode::InvalidArgument, "saturation: steps and values differ in length");
  if (window < 2) fail(ErrorCode::InvalidArgument, "saturation: window must be >= 2");
  std::vector<std::pair<double, double>> pts;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    if (!values[i]) continue;
    pts.emplace_back(static_cast<double>(steps[i]), *values[i]);
    if (pts.size() < window) continue;
    double mx = 0, my = 0;
    for (std::size_t k = pts.size() - window; k < pts.size(); ++k) {
      mx += pts[k].first;
      my += pts[k].second;
    }
    mx /= static_cast<double>(window);
    my /= static_cast<double>(window);
    double sxy = 0, sxx = 0;
    for (std::size_t k = pts.size() - window; k < pts.size(); ++k) {
      sxy += (pts[k].first - mx) * (pts[k].second - my);
      sxx += (pts[k].first - mx) * (pts[k].first - mx);
    }
    if (sxx > 0 && sxy / sxx < epsilon) return steps[i];
  }
  return std::nullopt;
}

}  // namespace sdseval
