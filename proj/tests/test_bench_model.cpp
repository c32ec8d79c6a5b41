// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <random>

#include "doctest.h"
#include "sdseval/bench_model.hpp"
#include "sdseval/error.hpp"
#include "test_support.hpp"

using namespace sdseval;
using sdseval::testing::TempDir;

namespace {

std::string record(const std::string& id, const std::string& cands, int answer, const std::string& task = "general_vqa") {
  return R"({"id":")" + id + R"(","task":")" + task + R"(","source":"MMBench","image_ref":"img/)" + id +
         R"(.png","question":"What is this?","candidates":)" + cands + R"(,"answer_index":)" + std::to_string(answer) +
         "}";
}

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an sdseval::Error");
  return ErrorCode::InvalidArgument;
}

std::string message_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  FAIL("expected an sdseval::Error");
  return {};
}

}  // namespace

TEST_CASE("taxonomy partitions the seven categories into perception and reasoning") {
  const auto& all = TaskCategory::canonical();
  REQUIRE(all.size() == 7);
  std::size_t perception = 0, reasoning = 0;
  for (const auto& t : all) {
    (t.ability() == Ability::Perception ? perception : reasoning)++;
    CHECK(TaskCategory::parse(t.label()) == t);
  }
  CHECK(perception == 3);
  CHECK(reasoning == 4);
  CHECK(TaskCategory::parse("spatial_reasoning").ability() == Ability::Reasoning);
  CHECK(TaskCategory::parse("general_vqa").ability() == Ability::Perception);
}

TEST_CASE("custom task labels carry an explicit ability") {
  auto t = TaskCategory::parse("perception:image_scene");
  CHECK(t.name() == "image_scene");
  CHECK(t.ability() == Ability::Perception);
  CHECK_FALSE(t.is_canonical());
  CHECK(t.label() == "perception:image_scene");
  CHECK(code_of([] { TaskCategory::parse("image_scene"); }) == ErrorCode::Parse);
  // A canonical name cannot be moved to the other ability.
  CHECK(code_of([] { TaskCategory::parse("perception:spatial_reasoning"); }) == ErrorCode::Parse);
}

TEST_CASE("load_samples returns records in file order") {
  TempDir dir;
  write_file(dir / "b.jsonl", record("a1", R"(["cat","dog"])", 1) + "\n" + record("a2", R"(["red","blue"])", 0) + "\n");
  auto samples = load_samples(dir / "b.jsonl");
  REQUIRE(samples.size() == 2);
  CHECK(samples[0].id == "a1");
  CHECK(samples[0].candidates == std::vector<std::string>{"cat", "dog"});
  CHECK(samples[0].answer_index == 1);
  CHECK(samples[0].image_ref == std::optional<std::string>("img/a1.png"));
  CHECK(samples[1].id == "a2");
}

TEST_CASE("load_samples rejects invariant violations naming the sample") {
  TempDir dir;
  SUBCASE("answer index out of range") {
    write_file(dir / "b.jsonl", record("bad-index", R"(["cat","dog"])", 5) + "\n");
    auto msg = message_of([&] { load_samples(dir / "b.jsonl"); });
    CHECK(msg.find("bad-index") != std::string::npos);
    CHECK(code_of([&] { load_samples(dir / "b.jsonl"); }) == ErrorCode::Validation);
  }
  SUBCASE("duplicate candidates") {
    write_file(dir / "b.jsonl", record("dup", R"(["cat","cat"])", 0) + "\n");
    CHECK(message_of([&] { load_samples(dir / "b.jsonl"); }).find("dup") != std::string::npos);
  }
  SUBCASE("duplicates after whitespace normalization") {
    write_file(dir / "b.jsonl", record("ws", R"(["big  cat"," big cat "])", 0) + "\n");
    CHECK(code_of([&] { load_samples(dir / "b.jsonl"); }) == ErrorCode::Validation);
  }
  SUBCASE("single candidate") {
    write_file(dir / "b.jsonl", record("one", R"(["cat"])", 0) + "\n");
    CHECK(code_of([&] { load_samples(dir / "b.jsonl"); }) == ErrorCode::Validation);
  }
  SUBCASE("empty question") {
    write_file(dir / "b.jsonl",
               R"({"id":"q","task":"general_vqa","source":"x","question":"  ","candidates":["a","b"],"answer_index":0})"
               "\n");
    CHECK(message_of([&] { load_samples(dir / "b.jsonl"); }).find("question") != std::string::npos);
  }
}

TEST_CASE("malformed lines are reported with their line number") {
  TempDir dir;
  write_file(dir / "b.jsonl", record("ok", R"(["a","b"])", 0) + "\n{not json\n");
  auto msg = message_of([&] { load_samples(dir / "b.jsonl"); });
  CHECK(msg.find(":2:") != std::string::npos);
  CHECK(code_of([&] { load_samples(dir / "b.jsonl"); }) == ErrorCode::Parse);
}

TEST_CASE("task mismatch against the expected task") {
  TempDir dir;
  write_file(dir / "b.jsonl", record("t1", R"(["a","b"])", 0, "physical_reasoning") + "\n");
  CHECK_NOTHROW(load_samples(dir / "b.jsonl", TaskCategory::parse("physical_reasoning")));
  CHECK(code_of([&] { load_samples(dir / "b.jsonl", TaskCategory::parse("general_vqa")); }) == ErrorCode::Validation);
}

TEST_CASE("image_ref is optional") {
  auto s = parse_sample(R"({"id":"t","task":"general_vqa","source":"x","question":"q?","candidates":["a","b"],"answer_index":1})");
  CHECK_FALSE(s.image_ref.has_value());
  CHECK_NOTHROW(s.validate());
  CHECK(serialize_sample(s).find("image_ref") == std::string::npos);
}

TEST_CASE("serialization is canonical: reloading a canonical file reproduces it byte for byte") {
  // Property over generated samples, including unicode, quotes and custom tasks.
  std::mt19937_64 gen(1234);
  const std::vector<std::string> words{"cat", "Ünïcödé", "quote\"d", "tab\there", "π r²", "left of the book"};
  for (int round = 0; round < 50; ++round) {
    std::vector<Sample> samples;
    std::size_t n = 1 + gen() % 6;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t m = 2 + gen() % 4;
      std::vector<std::string> cands;
      for (std::size_t c = 0; c < m; ++c) cands.push_back(words[gen() % words.size()] + " #" + std::to_string(c));
      auto s = sdseval::testing::make_sample("r" + std::to_string(round) + "-" + std::to_string(i), cands, gen() % m,
                                             gen() % 2 ? "reasoning:chart_qa" : "cultural_concept_identification");
      if (gen() % 3 == 0) s.image_ref.reset();
      if (gen() % 4 == 0) s.status = "pending-review";
      samples.push_back(std::move(s));
    }
    TempDir dir;
    const std::string canonical = serialize_samples(samples);
    write_file(dir / "x.jsonl", canonical);
    CHECK(serialize_samples(load_samples(dir / "x.jsonl")) == canonical);
  }
}

TEST_CASE("non-canonical key order is normalized on re-serialization") {
  TempDir dir;
  write_file(dir / "x.jsonl",
             R"({"answer_index":0,"candidates":["a","b"],"question":"q","source":"s","task":"general_vqa","id":"z"})"
             "\n");
  auto text = serialize_samples(load_samples(dir / "x.jsonl"));
  CHECK(text == R"({"id":"z","task":"general_vqa","source":"s","question":"q","candidates":["a","b"],"answer_index":0})"
                "\n");
}

TEST_CASE("validate_manifest: benchmark-shaped manifest totals 15894") {
  TempDir dir;
  using sdseval::testing::BenchPart;
  using sdseval::testing::synthetic_samples;
  std::vector<BenchPart> parts{
      {"MMBench", "general_vqa", synthetic_samples(1164, 4, "general_vqa", "MMBench", "mmb")},
      {"MathVista", "mathematical_reasoning", synthetic_samples(1000, 2, "mathematical_reasoning", "MathVista", "mv")},
      {"SeePhys", "physical_reasoning", synthetic_samples(2000, 2, "physical_reasoning", "SeePhys", "sp")},
      {"MMMU-Pro", "multiple_discipline_vqa", synthetic_samples(1730, 4, "multiple_discipline_vqa", "MMMU-Pro", "mm")},
      {"Wiki-Animal", "natural_concept_identification",
       synthetic_samples(2000, 2, "natural_concept_identification", "Wiki-Animal", "wa")},
      {"Wiki-Plant", "natural_concept_identification",
       synthetic_samples(2000, 2, "natural_concept_identification", "Wiki-Plant", "wp")},
      {"Wiki-Celebrity", "cultural_concept_identification",
       synthetic_samples(2000, 2, "cultural_concept_identification", "Wiki-Celebrity", "wc")},
      {"Wiki-Attraction", "cultural_concept_identification",
       synthetic_samples(2000, 2, "cultural_concept_identification", "Wiki-Attraction", "wt")},
      {"Spatial", "spatial_reasoning", synthetic_samples(2000, 2, "spatial_reasoning", "Spatial", "sr")},
  };
  auto path = sdseval::testing::write_benchmark(dir.path(), parts, "m3-shaped");
  auto report = validate_manifest(BenchmarkManifest::load(path));
  CHECK(report.passed);
  CHECK(report.parsed_total == 15894);
  CHECK(report.declared_total == 15894);
  CHECK(report.entries.size() == 9);
}

TEST_CASE("validate_manifest reports count discrepancies instead of throwing") {
  TempDir dir;
  auto path = sdseval::testing::write_benchmark(
      dir.path(), {{"Synthetic", "general_vqa", sdseval::testing::synthetic_samples(9, 2)}});
  auto doc = nlohmann::json::parse(read_file(path));
  doc["declared_total"] = 10;
  doc["entries"][0]["sample_count"] = 10;
  write_file(path, doc.dump());
  ValidationReport report;
  CHECK_NOTHROW(report = validate_manifest(BenchmarkManifest::load(path)));
  CHECK_FALSE(report.passed);
  CHECK(report.parsed_total == 9);
  auto j = nlohmann::json::parse(report.to_json());
  CHECK(j["discrepancy"] == 1);
  CHECK_FALSE(report.entries[0].passed);
}

TEST_CASE("validate_manifest: empty manifest passes vacuously") {
  TempDir dir;
  write_file(dir / "m.json", R"({"name":"empty","entries":[],"declared_total":0})");
  auto report = validate_manifest(BenchmarkManifest::load(dir / "m.json"));
  CHECK(report.passed);
  CHECK(report.parsed_total == 0);
}

TEST_CASE("validate_manifest flags missing files, bad records and duplicate ids") {
  TempDir dir;
  auto path = sdseval::testing::write_benchmark(
      dir.path(), {{"A", "general_vqa", sdseval::testing::synthetic_samples(3, 2, "general_vqa", "A", "dup")},
                   {"B", "general_vqa", sdseval::testing::synthetic_samples(3, 2, "general_vqa", "B", "dup")}});
  auto report = validate_manifest(BenchmarkManifest::load(path));
  CHECK_FALSE(report.passed);
  CHECK(report.entries[1].message.find("duplicate") != std::string::npos);

  auto doc = nlohmann::json::parse(read_file(path));
  doc["entries"][0]["file"] = "missing.jsonl";
  write_file(path, doc.dump());
  report = validate_manifest(BenchmarkManifest::load(path));
  CHECK_FALSE(report.entries[0].passed);
  CHECK(report.entries[0].message.find("missing.jsonl") != std::string::npos);
}

TEST_CASE("manifest total is invariant under entry reordering") {
  TempDir dir;
  using sdseval::testing::synthetic_samples;
  auto path = sdseval::testing::write_benchmark(
      dir.path(), {{"A", "general_vqa", synthetic_samples(5, 2, "general_vqa", "A", "a")},
                   {"B", "spatial_reasoning", synthetic_samples(7, 2, "spatial_reasoning", "B", "b")},
                   {"C", "physical_reasoning", synthetic_samples(11, 2, "physical_reasoning", "C", "c")}});
  auto base = validate_manifest(BenchmarkManifest::load(path));
  auto doc = nlohmann::json::parse(read_file(path));
  std::vector<nlohmann::json> entries(doc["entries"].begin(), doc["entries"].end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.dump() < b.dump(); });
  do {
    doc["entries"] = entries;
    write_file(path, doc.dump());
    auto r = validate_manifest(BenchmarkManifest::load(path));
    CHECK(r.passed);
    CHECK(r.parsed_total == base.parsed_total);
  } while (std::next_permutation(entries.begin(), entries.end(),
                                 [](const auto& a, const auto& b) { return a.dump() < b.dump(); }));
}
