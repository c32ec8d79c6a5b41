// SPDX-License-Identifier: Apache-2.0
#include "sdseval/bench_model.hpp"

#include <fmt/core.h>

#include <array>
#include <fstream>
#include "json.hpp"
#include <set>
#include <unordered_set>

#include "sdseval/error.hpp"
#include "sdseval/util.hpp"

namespace sdseval {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

struct CanonicalTask {
  std::string_view name;
  Ability ability;
};

constexpr std::array<CanonicalTask, 7> kTaxonomy{{
    {"natural_concept_identification", Ability::Perception},
    {"cultural_concept_identification", Ability::Perception},
    {"general_vqa", Ability::Perception},
    {"spatial_reasoning", Ability::Reasoning},
    {"mathematical_reasoning", Ability::Reasoning},
    {"physical_reasoning", Ability::Reasoning},
    {"multiple_discipline_vqa", Ability::Reasoning},
}};

const CanonicalTask* find_canonical(std::string_view name) {
  for (const auto& t : kTaxonomy) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

template <typename T>
T require_field(const json& rec, const char* key, std::string_view where) {
  auto it = rec.find(key);
  if (it == rec.end()) fail(ErrorCode::Parse, fmt::format("{}: missing field '{}'", where, key));
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    fail(ErrorCode::Parse, fmt::format("{}: field '{}' has the wrong type", where, key));
  }
}

}  // namespace

std::string_view to_string(Ability a) { return a == Ability::Perception ? "perception" : "reasoning"; }

Ability parse_ability(std::string_view s) {
  if (s == "perception") return Ability::Perception;
  if (s == "reasoning") return Ability::Reasoning;
  fail(ErrorCode::Parse, fmt::format("unknown ability '{}'", s));
}

TaskCategory TaskCategory::parse(std::string_view label) {
  if (const auto* t = find_canonical(label)) return TaskCategory(std::string(t->name), t->ability);
  auto colon = label.find(':');
  if (colon != std::string_view::npos) {
    auto name = label.substr(colon + 1);
    if (name.empty()) fail(ErrorCode::Parse, fmt::format("empty task name in '{}'", label));
    Ability ability = parse_ability(label.substr(0, colon));
    if (const auto* t = find_canonical(name)) {
      if (t->ability != ability) {
        fail(ErrorCode::Parse, fmt::format("task '{}' belongs to {}", name, to_string(t->ability)));
      }
    }
    return TaskCategory(std::string(name), ability);
  }
  fail(ErrorCode::Parse,
       fmt::format("unknown task '{}' (use a canonical category or 'perception:<name>' / 'reasoning:<name>')", label));
}

const std::vector<TaskCategory>& TaskCategory::canonical() {
  static const std::vector<TaskCategory> all = [] {
    std::vector<TaskCategory> v;
    for (const auto& t : kTaxonomy) v.push_back(TaskCategory(std::string(t.name), t.ability));
    return v;
  }();
  return all;
}

bool TaskCategory::is_canonical() const { return find_canonical(name_) != nullptr; }

std::string TaskCategory::label() const {
  if (is_canonical()) return name_;
  return std::string(to_string(ability_)) + ":" + name_;
}

void Sample::validate() const {
  auto bad = [this](const std::string& why) {
    fail(ErrorCode::Validation, fmt::format("sample '{}': {}", id, why));
  };
  if (id.empty()) fail(ErrorCode::Validation, "sample with empty id");
  if (trim(question).empty()) bad("question is empty");
  if (candidates.size() < 2) bad(fmt::format("needs at least 2 candidates, has {}", candidates.size()));
  if (answer_index >= candidates.size()) {
    bad(fmt::format("answer_index {} out of range for {} candidates", answer_index, candidates.size()));
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto norm = normalize_whitespace(candidates[i]);
    if (norm.empty()) bad(fmt::format("candidate {} is empty", i));
    if (!seen.insert(norm).second) bad(fmt::format("duplicate candidate \"{}\"", norm));
  }
}

std::string serialize_sample(const Sample& s) {
  ordered_json j;
  j["id"] = s.id;
  j["task"] = s.task.label();
  j["source"] = s.source;
  if (s.image_ref) j["image_ref"] = *s.image_ref;
  j["question"] = s.question;
  j["candidates"] = s.candidates;
  j["answer_index"] = s.answer_index;
  if (s.status) j["status"] = *s.status;
  return j.dump();
}

Sample parse_sample(std::string_view line) {
  json rec;
  try {
    rec = json::parse(line);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Parse, fmt::format("malformed record: {}", e.what()));
  }
  if (!rec.is_object()) fail(ErrorCode::Parse, "record is not an object");
  Sample s;
  s.id = require_field<std::string>(rec, "id", "record");
  const std::string where = fmt::format("sample '{}'", s.id);
  s.task = TaskCategory::parse(require_field<std::string>(rec, "task", where));
  s.source = require_field<std::string>(rec, "source", where);
  if (auto it = rec.find("image_ref"); it != rec.end() && !it->is_null()) {
    if (!it->is_string()) fail(ErrorCode::Parse, where + ": image_ref must be a string");
    s.image_ref = it->get<std::string>();
  }
  s.question = require_field<std::string>(rec, "question", where);
  s.candidates = require_field<std::vector<std::string>>(rec, "candidates", where);
  auto idx = rec.find("answer_index");
  if (idx == rec.end() || !idx->is_number_integer()) {
    fail(ErrorCode::Parse, where + ": answer_index must be an integer");
  }
  auto raw = idx->get<std::int64_t>();
  if (raw < 0) fail(ErrorCode::Validation, fmt::format("{}: answer_index {} is negative", where, raw));
  s.answer_index = static_cast<std::size_t>(raw);
  if (auto it = rec.find("status"); it != rec.end() && !it->is_null()) s.status = it->get<std::string>();
  return s;
}

std::vector<Sample> load_samples(const std::filesystem::path& path, const std::optional<TaskCategory>& expected_task) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open benchmark file " + path.string());
  std::vector<Sample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    Sample s;
    try {
      s = parse_sample(line);
    } catch (const Error& e) {
      fail(e.code(), fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
    s.validate();
    if (expected_task && !(s.task == *expected_task)) {
      fail(ErrorCode::Validation, fmt::format("sample '{}': task '{}' does not match expected '{}'", s.id,
                                              s.task.label(), expected_task->label()));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::string serialize_samples(const std::vector<Sample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    out += serialize_sample(s);
    out += '\n';
  }
  return out;
}

void write_samples(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  write_file(path, serialize_samples(samples));
}

BenchmarkManifest BenchmarkManifest::load(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Parse, fmt::format("{}: {}", path.string(), e.what()));
  }
  BenchmarkManifest m;
  m.base_dir = path.parent_path();
  const std::string where = path.string();
  m.name = doc.value("name", std::string{});
  m.declared_total = require_field<std::size_t>(doc, "declared_total", where);
  for (const auto& e : doc.value("entries", json::array())) {
    ManifestEntry entry{
        .source = require_field<std::string>(e, "source", where),
        .task = TaskCategory::parse(require_field<std::string>(e, "task", where)),
        .sample_count = require_field<std::size_t>(e, "sample_count", where),
        .file = require_field<std::string>(e, "file", where),
    };
    m.entries.push_back(std::move(entry));
  }
  return m;
}

std::filesystem::path BenchmarkManifest::resolve(const ManifestEntry& e) const {
  return e.file.is_absolute() ? e.file : base_dir / e.file;
}

std::size_t BenchmarkManifest::entry_total() const {
  std::size_t total = 0;
  for (const auto& e : entries) total += e.sample_count;
  return total;
}

ValidationReport validate_manifest(const BenchmarkManifest& manifest) {
  ValidationReport r;
  r.name = manifest.name;
  r.declared_total = manifest.declared_total;
  r.entry_total = manifest.entry_total();
  std::unordered_set<std::string> ids;
  bool all_entries_ok = true;
  for (const auto& e : manifest.entries) {
    EntryCheck c{.source = e.source, .task = e.task.label(), .declared = e.sample_count};
    try {
      auto samples = load_samples(manifest.resolve(e), e.task);
      c.parsed = samples.size();
      std::vector<std::string> dups;
      for (const auto& s : samples) {
        if (!ids.insert(s.id).second) dups.push_back(s.id);
      }
      if (!dups.empty()) {
        c.message = fmt::format("duplicate sample id '{}' ({} total)", dups.front(), dups.size());
      } else if (c.parsed != c.declared) {
        c.message = fmt::format("declared {} samples, file has {}", c.declared, c.parsed);
      } else {
        c.passed = true;
      }
    } catch (const Error& err) {
      c.message = err.what();
    }
    r.parsed_total += c.parsed;
    all_entries_ok = all_entries_ok && c.passed;
    r.entries.push_back(std::move(c));
  }
  if (r.entry_total != r.declared_total) {
    r.problems.push_back(fmt::format("declared_total {} but entries declare {}", r.declared_total, r.entry_total));
  }
  if (r.parsed_total != r.declared_total) {
    long long d = static_cast<long long>(r.declared_total) - static_cast<long long>(r.parsed_total);
    r.problems.push_back(fmt::format("declared_total {} but files contain {} (discrepancy {})", r.declared_total,
                                     r.parsed_total, d));
  }
  r.passed = all_entries_ok && r.problems.empty();
  return r;
}

std::string ValidationReport::to_json() const {
  ordered_json j;
  j["name"] = name;
  j["passed"] = passed;
  j["declared_total"] = declared_total;
  j["entry_total"] = entry_total;
  j["parsed_total"] = parsed_total;
  j["discrepancy"] = static_cast<long long>(declared_total) - static_cast<long long>(parsed_total);
  j["entries"] = ordered_json::array();
  for (const auto& e : entries) {
    ordered_json je;
    je["source"] = e.source;
    je["task"] = e.task;
    je["declared"] = e.declared;
    je["parsed"] = e.parsed;
    je["passed"] = e.passed;
    if (!e.message.empty()) je["message"] = e.message;
    j["entries"].push_back(std::move(je));
  }
  j["problems"] = problems;
  return j.dump();
}

std::string ValidationReport::to_text() const {
  std::string out = fmt::format("manifest {}\n", name.empty() ? "(unnamed)" : name);
  for (const auto& e : entries) {
    out += fmt::format("  [{}] {:<24} {:<34} {:>6}/{:<6} {}\n", e.passed ? "ok" : "FAIL", e.source, e.task, e.parsed,
                       e.declared, e.message);
  }
  for (const auto& p : problems) out += "  problem: " + p + "\n";
  out += fmt::format("total {} (declared {}) -> {}\n", parsed_total, declared_total, passed ? "PASS" : "FAIL");
  return out;
}

std::vector<Sample> load_benchmark(const BenchmarkManifest& manifest) {
  std::vector<Sample> all;
  for (const auto& e : manifest.entries) {
    auto samples = load_samples(manifest.resolve(e), e.task);
    all.insert(all.end(), std::make_move_iterator(samples.begin()), std::make_move_iterator(samples.end()));
  }
  return all;
}

}  // namespace sdseval
