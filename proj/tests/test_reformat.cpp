// SPDX-License-Identifier: Apache-2.0
#include <cstdlib>
#include <set>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "sdseval/error.hpp"
#include "sdseval/reformat.hpp"
#include "test_support.hpp"

using namespace sdseval;
using json = nlohmann::json;
using sdseval::testing::TempDir;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an sdseval::Error");
  return ErrorCode::InvalidArgument;
}

SourceRecord mcq(const std::string& id, std::size_t n_options, std::size_t answer) {
  SourceRecord r;
  r.raw_kind = RawKind::Mcq;
  r.id = id;
  r.source = "MMBench";
  r.image_ref = "img/" + id + ".png";
  r.question = "Which one?";
  for (std::size_t i = 0; i < n_options; ++i) {
    r.options.push_back({std::string(1, static_cast<char>('A' + i)), "option text " + std::to_string(i)});
  }
  r.answer = std::string(1, static_cast<char>('A' + answer));
  return r;
}

SourceRecord numeric(const std::string& id, const std::string& answer) {
  SourceRecord r;
  r.raw_kind = RawKind::FreeFormNumeric;
  r.id = id;
  r.source = "MathVista";
  r.task = TaskCategory::parse("mathematical_reasoning");
  r.question = "How long is the side?";
  r.answer = answer;
  return r;
}

DistractorPolicy policy(std::size_t target, std::uint64_t seed = 0) {
  DistractorPolicy p;
  p.target_candidate_count = target;
  p.seed = seed;
  return p;
}

}  // namespace

TEST_CASE("mcq reformat keeps the answer and target-1 distinct distractors") {
  for (std::size_t n = 2; n <= 6; ++n) {
    for (std::size_t target = 2; target <= n; ++target) {
      for (std::size_t ans = 0; ans < n; ++ans) {
        auto rec = mcq("q" + std::to_string(n) + std::to_string(ans), n, ans);
        auto s = reformat_mcq(rec, policy(target, 42));
        REQUIRE(s.candidate_count() == target);
        CHECK(s.candidates[s.answer_index] == rec.options[ans].content);
        CHECK(std::set<std::string>(s.candidates.begin(), s.candidates.end()).size() == target);
        // Retained options appear in source order.
        std::vector<std::size_t> pos;
        for (const auto& c : s.candidates) {
          for (std::size_t i = 0; i < n; ++i) {
            if (rec.options[i].content == c) pos.push_back(i);
          }
        }
        CHECK(std::is_sorted(pos.begin(), pos.end()));
      }
    }
  }
}

TEST_CASE("mcq reformat is deterministic per seed and rejects short option lists") {
  auto rec = mcq("det", 6, 3);
  auto a = reformat_mcq(rec, policy(3, 9));
  auto b = reformat_mcq(rec, policy(3, 9));
  CHECK(serialize_sample(a) == serialize_sample(b));
  std::set<std::string> outcomes;
  for (std::uint64_t seed = 0; seed < 40; ++seed) outcomes.insert(serialize_sample(reformat_mcq(rec, policy(3, seed))));
  CHECK(outcomes.size() > 1);
  CHECK(code_of([&] { reformat_mcq(mcq("short", 3, 0), policy(4)); }) == ErrorCode::Validation);
}

TEST_CASE("mcq answer letter must name an option") {
  auto rec = mcq("bad", 4, 0);
  rec.answer = "Z";
  CHECK(code_of([&] { reformat_mcq(rec, policy(2)); }) == ErrorCode::Validation);
}

TEST_CASE("numeric perturbation moves by exactly one delta and keeps precision") {
  struct Case {
    std::string answer, up, down;
  };
  std::vector<Case> cases{{"7", "8", "6"},         {"3.25", "3.35", "3.15"}, {"2.5", "2.6", "2.4"},
                          {"-4", "-3", "-5"},      {"0.1", "0.2", "0.0"},    {"100", "101", "99"},
                          {"12.000", "12.100", "11.900"}};
  auto p = policy(2);
  for (const auto& c : cases) {
    std::set<std::string> expected{c.up, c.down};
    std::set<std::string> seen;
    for (std::uint64_t seed = 0; seed < 64; ++seed) {
      auto rng = SeededRng(seed);
      auto d = perturb_numeric(c.answer, p, rng);
      CHECK_MESSAGE(expected.count(d) == 1, c.answer << " -> " << d);
      seen.insert(d);
    }
    CHECK(seen == expected);
  }
}

TEST_CASE("numeric perturbation honours custom deltas and the sign floor") {
  auto p = policy(2);
  p.int_delta = 5;
  p.dec_delta = "0.05";
  for (std::uint64_t seed = 0; seed < 32; ++seed) {
    auto rng = SeededRng(seed);
    auto d = perturb_numeric("20", p, rng);
    CHECK((d == "25" || d == "15"));
    rng = SeededRng(seed);
    d = perturb_numeric("1.5", p, rng);
    CHECK((d == "1.55" || d == "1.45"));
  }
  p.allow_negative = false;
  for (std::uint64_t seed = 0; seed < 32; ++seed) {
    auto rng = SeededRng(seed);
    CHECK(perturb_numeric("2", p, rng).front() != '-');
  }
  auto rng = SeededRng(0);
  CHECK(code_of([&] { perturb_numeric("twelve", p, rng); }) == ErrorCode::Validation);
}

TEST_CASE("numeric reformat produces answer plus one or two distractors") {
  auto s = reformat_numeric(numeric("n1", "3.5"), policy(2, 4));
  CHECK(s.candidate_count() == 2);
  CHECK(s.candidates[s.answer_index] == "3.5");
  auto t = reformat_numeric(numeric("n1", "3.5"), policy(3, 4));
  std::set<std::string> c(t.candidates.begin(), t.candidates.end());
  CHECK(c == std::set<std::string>{"3.4", "3.5", "3.6"});
  CHECK(t.candidates[t.answer_index] == "3.5");
  CHECK(code_of([] { reformat_numeric(numeric("n2", "1"), policy(4)); }) == ErrorCode::Validation);
}

TEST_CASE("expression distractors retry on rejected responses and are audited") {
  ScriptedClient client({"", "  x+1 ", "```\n2x - 1\n```"});
  AuditLog audit;
  auto d = generate_expression_distractor("x+1", "Simplify", client, 3, &audit, "e1");
  CHECK(d == "2x - 1");
  auto entries = audit.entries();
  REQUIRE(entries.size() == 3);
  CHECK(entries[0]["verdict"] == "rejected-empty");
  CHECK(entries[2]["verdict"] == "accepted");
  CHECK(entries[2]["request_digest"] == sha256_hex(entries[2]["prompt"].get<std::string>()));

  ScriptedClient stubborn({"x+1"});
  CHECK(code_of([&] { generate_expression_distractor("x+1", "q", stubborn, 2); }) == ErrorCode::Client);
  CHECK(stubborn.calls() == 2);
}

TEST_CASE("expression reformat yields distinct candidates") {
  SourceRecord rec;
  rec.raw_kind = RawKind::FreeFormExpression;
  rec.id = "ex";
  rec.source = "SeePhys";
  rec.task = TaskCategory::parse("physical_reasoning");
  rec.question = "Find the force";
  rec.answer = "m a";
  ScriptedClient client({"m g", "m g", "m a", "2 m a"});
  auto p = policy(3);
  p.max_attempts = 3;
  auto s = reformat_expression(rec, p, client);
  CHECK(s.candidate_count() == 3);
  CHECK(s.candidates[s.answer_index] == "m a");
  CHECK(std::set<std::string>(s.candidates.begin(), s.candidates.end()).size() == 3);
}

TEST_CASE("wiki reformat draws titles from the category pool") {
  SourceRecord rec;
  rec.raw_kind = RawKind::WikiTitle;
  rec.id = "w1";
  rec.source = "Wiki-Animal";
  rec.task = TaskCategory::parse("natural_concept_identification");
  rec.question = "The image shows";
  rec.answer = "Red fox";
  rec.title_pool = {"Arctic fox", "Red  fox", "Gray wolf", "Coyote"};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto rng = record_rng(seed, rec.id);
    auto s = reformat_wiki(rec, policy(2, seed), rng);
    CHECK(s.candidates[s.answer_index] == "Red fox");
    const auto& other = s.candidates[1 - s.answer_index];
    CHECK((other == "Arctic fox" || other == "Gray wolf" || other == "Coyote"));
  }
  rec.title_pool = {"Red fox"};
  auto rng = record_rng(0, rec.id);
  CHECK(code_of([&] { reformat_wiki(rec, policy(2), rng); }) == ErrorCode::Validation);
}

TEST_CASE("spatial triplets parse, retry and are marked pending review") {
  CHECK(parse_spatial_triplet(R"({"question":"Is the cup left of the plate?","answer":"Yes","distractor":"No"})")
            .distractor == "No");
  CHECK(code_of([] { parse_spatial_triplet(R"({"question":"q","answer":"Yes","distractor":" Yes "})"); }) ==
        ErrorCode::Client);
  CHECK(code_of([] { parse_spatial_triplet("not json"); }) == ErrorCode::Client);

  SourceRecord rec;
  rec.raw_kind = RawKind::SpatialTriplet;
  rec.id = "sp1";
  rec.source = "Spatial";
  rec.task = TaskCategory::parse("spatial_reasoning");
  rec.image_ref = "img/sp1.png";
  rec.description = "A cup stands to the left of a plate.";
  ScriptedClient client({"garbage", R"({"question":"Where is the cup?","answer":"left of the plate","distractor":"right of the plate"})"});
  AuditLog audit;
  auto s = build_spatial_sample(rec, client, policy(2), &audit);
  CHECK(s.status == std::optional<std::string>("pending-review"));
  CHECK(s.candidates[s.answer_index] == "left of the plate");
  CHECK(audit.entries().size() == 2);
  CHECK(code_of([&] { build_spatial_sample(rec, client, policy(3)); }) == ErrorCode::Validation);
}

TEST_CASE("policy parsing") {
  auto p = DistractorPolicy::from_json({{"target_candidate_count", 4}, {"seed", 3}, {"dec_delta", 0.5}});
  CHECK(p.target_candidate_count == 4);
  CHECK(p.dec_delta == "0.5");
  CHECK(code_of([] { DistractorPolicy::from_json({{"target_candidate_count", 1}}); }) == ErrorCode::Config);
  CHECK(code_of([] { DistractorPolicy::from_json({{"dec_delta", "-0.1"}}); }) == ErrorCode::Config);
  auto q = DistractorPolicy::from_json({{"llm", {{"kind", "script"}, {"script", {"a"}}, {"max_retries", 4}}}});
  CHECK(q.max_attempts == 5);
}

TEST_CASE("run_reformat maps fields and writes a loadable benchmark file") {
  TempDir dir;
  write_file(dir / "raw.jsonl",
             R"({"qid":"m1","q":"Which animal?","choices":["cat","dog","cow","hen"],"label":"c","img":"a.png"})"
             "\n"
             R"({"qid":"m2","q":"Which color?","choices":{"A":"red","B":"blue","C":"green"},"label":"A"})"
             "\n");
  json cfg{{"source", "MMBench"},
           {"task", "general_vqa"},
           {"kind", "mcq"},
           {"input", "raw.jsonl"},
           {"output", "out/mmbench.jsonl"},
           {"fields", {{"id", "qid"}, {"question", "q"}, {"options", "choices"}, {"answer", "label"}, {"image", "img"}}}};
  auto config = SourceConfig::from_json(cfg, dir.path());
  auto summary = run_reformat(config, policy(2, 1));
  CHECK(summary.records == 2);
  CHECK(summary.emitted == 2);
  auto samples = load_samples(dir / "out/mmbench.jsonl");
  REQUIRE(samples.size() == 2);
  CHECK(samples[0].candidates[samples[0].answer_index] == "cow");
  CHECK(samples[0].image_ref == std::optional<std::string>("a.png"));
  CHECK(samples[1].candidates[samples[1].answer_index] == "red");

  auto first = read_file(dir / "out/mmbench.jsonl");
  run_reformat(config, policy(2, 1));
  CHECK(read_file(dir / "out/mmbench.jsonl") == first);
}

TEST_CASE("wiki sources group title pools by category") {
  TempDir dir;
  std::string raw;
  for (int i = 0; i < 6; ++i) {
    raw += json{{"id", "w" + std::to_string(i)}, {"title", "Title " + std::to_string(i)}, {"category", i % 2 ? "odd" : "even"}}
               .dump() +
           "\n";
  }
  write_file(dir / "wiki.jsonl", raw);
  auto config = SourceConfig::from_json({{"source", "Wiki-Plant"},
                                         {"task", "natural_concept_identification"},
                                         {"kind", "wiki_title"},
                                         {"input", "wiki.jsonl"},
                                         {"output", "wiki.out.jsonl"}},
                                        dir.path());
  auto records = read_source_records(config);
  REQUIRE(records.size() == 6);
  CHECK(records[0].title_pool == std::vector<std::string>{"Title 2", "Title 4"});
  run_reformat(config, policy(2, 5));
  for (const auto& s : load_samples(dir / "wiki.out.jsonl")) {
    int self = s.id.back() - '0';
    int other = s.candidates[1 - s.answer_index].back() - '0';
    CHECK(self % 2 == other % 2);
    CHECK(s.question == "The image shows");
  }
}

TEST_CASE("duplicate source ids are rejected") {
  TempDir dir;
  write_file(dir / "raw.jsonl", R"({"id":"a","question":"q","answer":"1"})"
                                "\n"
                                R"({"id":"a","question":"q","answer":"2"})"
                                "\n");
  auto config = SourceConfig::from_json({{"source", "MathVista"},
                                         {"task", "mathematical_reasoning"},
                                         {"kind", "free_form_numeric"},
                                         {"input", "raw.jsonl"},
                                         {"output", "o.jsonl"}},
                                        dir.path());
  CHECK(code_of([&] { read_source_records(config); }) == ErrorCode::Validation);
}

TEST_CASE("chat client talks to an OpenAI-style endpoint") {
  httplib::Server server;
  std::string seen_auth, seen_model;
  int requests = 0;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    ++requests;
    seen_auth = req.get_header_value("Authorization");
    auto body = json::parse(req.body);
    seen_model = body["model"];
    json reply{{"choices", {{{"message", {{"role", "assistant"}, {"content", "y - 2"}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  server.Post("/broken/chat/completions",
              [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("SDSEVAL_TEST_KEY", "secret-token", 1);
  LlmEndpoint ep;
  ep.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  ep.model = "distractor-model";
  ep.api_key_env = "SDSEVAL_TEST_KEY";
  ep.timeout = std::chrono::milliseconds(5000);
  auto client = make_client(ep);
  CHECK(client->complete("prompt") == "y - 2");
  CHECK(seen_auth == "Bearer secret-token");
  CHECK(seen_model == "distractor-model");

  ep.base_url = "http://127.0.0.1:" + std::to_string(port) + "/broken";
  auto broken = make_client(ep);
  CHECK(code_of([&] { broken->complete("prompt"); }) == ErrorCode::Client);

  server.stop();
  th.join();
  CHECK(requests == 1);
}
