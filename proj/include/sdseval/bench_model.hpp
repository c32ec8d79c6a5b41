// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sdseval {

enum class Ability { Perception, Reasoning };

std::string_view to_string(Ability a);
Ability parse_ability(std::string_view s);

/// A task label together with its ability. The seven benchmark categories
/// have a fixed ability; other label sets (finer per-benchmark taxonomies)
/// are written "perception:<label>" or "reasoning:<label>" so the ability is
/// always explicit.
class TaskCategory {
 public:
  static TaskCategory parse(std::string_view label);
  /// The seven canonical categories in table order: perception first.
  static const std::vector<TaskCategory>& canonical();

  const std::string& name() const { return name_; }
  Ability ability() const { return ability_; }
  bool is_canonical() const;
  /// Round-trips through parse().
  std::string label() const;

  friend bool operator==(const TaskCategory&, const TaskCategory&) = default;

 private:
  TaskCategory(std::string name, Ability ability) : name_(std::move(name)), ability_(ability) {}

  std::string name_;
  Ability ability_;
};

/// One benchmark question in the unified candidate-scoring format.
struct Sample {
  std::string id;
  TaskCategory task = TaskCategory::parse("general_vqa");
  std::string source;
  std::optional<std::string> image_ref;
  std::string question;
  std::vector<std::string> candidates;
  std::size_t answer_index = 0;
  /// Review bookkeeping for generated samples ("pending-review"); absent for
  /// samples taken from curated sources.
  std::optional<std::string> status;

  /// Throws Validation naming the sample id when an invariant is broken.
  void validate() const;
  std::size_t candidate_count() const { return candidates.size(); }
};

/// Canonical single-line JSON rendering (fixed key order, no trailing newline).
std::string serialize_sample(const Sample& sample);
Sample parse_sample(std::string_view line);

/// Reads a line-delimited benchmark file. Errors name the line number for
/// malformed records and the sample id for invariant violations.
std::vector<Sample> load_samples(const std::filesystem::path& path,
                                 const std::optional<TaskCategory>& expected_task = std::nullopt);
void write_samples(const std::filesystem::path& path, const std::vector<Sample>& samples);
std::string serialize_samples(const std::vector<Sample>& samples);

struct ManifestEntry {
  std::string source;
  TaskCategory task;
  std::size_t sample_count = 0;
  std::filesystem::path file;  // relative paths resolve against the manifest directory
};

struct BenchmarkManifest {
  std::string name;
  std::vector<ManifestEntry> entries;
  std::size_t declared_total = 0;
  std::filesystem::path base_dir;

  static BenchmarkManifest load(const std::filesystem::path& path);
  std::filesystem::path resolve(const ManifestEntry& e) const;
  std::size_t entry_total() const;
};

struct EntryCheck {
  std::string source;
  std::string task;
  std::size_t declared = 0;
  std::size_t parsed = 0;
  bool passed = false;
  std::string message;
};

struct ValidationReport {
  std::string name;
  std::vector<EntryCheck> entries;
  std::size_t declared_total = 0;
  std::size_t entry_total = 0;   // sum of declared per-entry counts
  std::size_t parsed_total = 0;  // samples actually loaded
  bool passed = false;
  std::vector<std::string> problems;

  std::string to_json() const;
  std::string to_text() const;
};

/// Never throws for data problems; they become report entries.
ValidationReport validate_manifest(const BenchmarkManifest& manifest);

/// Loads every entry of a manifest, in entry order. Throws on the first
/// problem; callers validate first when they want a full report.
std::vector<Sample> load_benchmark(const BenchmarkManifest& manifest);

}  // namespace sdseval
