// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdseval/bench_model.hpp"
#include "sdseval/metrics.hpp"
#include "sdseval/util.hpp"

namespace sdseval::testing {

/// Scratch directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("sdseval-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline Sample make_sample(const std::string& id, std::vector<std::string> candidates, std::size_t answer,
                          const std::string& task = "general_vqa", const std::string& source = "Synthetic") {
  Sample s;
  s.id = id;
  s.task = TaskCategory::parse(task);
  s.source = source;
  s.image_ref = "images/" + id + ".jpg";
  s.question = "What is shown in image " + id + "?";
  s.candidates = std::move(candidates);
  s.answer_index = answer;
  return s;
}

/// n samples with m distinct multi-word candidates each; answer position
/// cycles so it is not fixed.
inline std::vector<Sample> synthetic_samples(std::size_t n, std::size_t m, const std::string& task = "general_vqa",
                                             const std::string& source = "Synthetic",
                                             const std::string& prefix = "s") {
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::string> cands;
    for (std::size_t c = 0; c < m; ++c) {
      cands.push_back("option " + std::to_string(c) + " for item " + std::to_string(i) +
                      std::string(1 + (i + c) % 3, 'x'));
    }
    char id[32];
    std::snprintf(id, sizeof id, "%s%06zu", prefix.c_str(), i);
    out.push_back(make_sample(id, std::move(cands), (i * 7) % m, task, source));
  }
  return out;
}

/// Writes samples plus a one-entry-per-file manifest; returns the manifest path.
struct BenchPart {
  std::string source;
  std::string task;
  std::vector<Sample> samples;
};

inline std::filesystem::path write_benchmark(const std::filesystem::path& dir, const std::vector<BenchPart>& parts,
                                             const std::string& name = "synthetic") {
  std::filesystem::create_directories(dir);
  nlohmann::json m;
  m["name"] = name;
  m["entries"] = nlohmann::json::array();
  std::size_t total = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const std::string file = "part" + std::to_string(i) + ".jsonl";
    write_samples(dir / file, parts[i].samples);
    m["entries"].push_back({{"source", parts[i].source},
                            {"task", parts[i].task},
                            {"sample_count", parts[i].samples.size()},
                            {"file", file}});
    total += parts[i].samples.size();
  }
  m["declared_total"] = total;
  write_file(dir / "manifest.json", m.dump(2));
  return dir / "manifest.json";
}

/// Run config JSON; extra keys override the defaults.
inline std::filesystem::path write_run_config(const std::filesystem::path& path, const std::filesystem::path& manifest,
                                              const nlohmann::json& provider, const std::filesystem::path& output_dir,
                                              const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json cfg{{"run_id", "test-run"},
                     {"manifest", manifest.string()},
                     {"provider", provider},
                     {"metrics", {"sds", "acc_logits"}},
                     {"seed", 0},
                     {"batch_size", 16},
                     {"output_dir", output_dir.string()}};
  for (const auto& [k, v] : extra.items()) cfg[k] = v;
  write_file(path, cfg.dump(2));
  return path;
}

/// SampleResult with M=2 and the given correct-answer probability.
inline SampleResult result_with_p(const std::string& id, double p, const std::string& task = "general_vqa",
                                  const std::string& source = "Synthetic") {
  SampleResult r;
  r.sample_id = id;
  r.task = TaskCategory::parse(task);
  r.source = source;
  r.answer_index = 0;
  r.normalized_scores = {p, 1.0 - p};
  r.p_correct = p;
  r.chosen_logits = p > 0.5 ? 0 : 1;
  r.correct_logits = p > 0.5;
  return r;
}

}  // namespace sdseval::testing
