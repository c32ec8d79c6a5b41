// SPDX-License-Identifier: Apache-2.0
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>

#include "doctest.h"
#include "test_support.hpp"

using json = nlohmann::json;
using sdseval::read_file;
using sdseval::write_file;
using sdseval::testing::synthetic_samples;
using sdseval::testing::TempDir;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run cli(const TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt";
  const auto err = dir / "stderr.txt";
  const std::string cmd = std::string("'") + SDSEVAL_CLI_PATH + "' " + args + " >'" + out.string() + "' 2>'" +
                          err.string() + "'";
  int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_CASE("cli: usage errors exit 2") {
  TempDir dir;
  CHECK(cli(dir, "").code == 2);
  CHECK(cli(dir, "frobnicate").code == 2);
  CHECK(cli(dir, "report x --group-by planet").code == 2);
  auto v = cli(dir, "--version");
  CHECK(v.code == 0);
  CHECK(v.out.find('.') != std::string::npos);
}

TEST_CASE("cli: validate, evaluate, report") {
  TempDir dir;
  auto manifest = sdseval::testing::write_benchmark(
      dir / "bench", {{"MMBench", "general_vqa", synthetic_samples(30, 2, "general_vqa", "MMBench", "m")},
                      {"SeePhys", "physical_reasoning", synthetic_samples(20, 2, "physical_reasoning", "SeePhys", "p")}});

  auto v = cli(dir, "validate " + q(manifest));
  CHECK(v.code == 0);
  CHECK(v.out.find("PASS") != std::string::npos);
  auto vj = cli(dir, "validate --json " + q(manifest));
  CHECK(json::parse(vj.out)["parsed_total"] == 50);

  auto run = sdseval::testing::write_run_config(dir / "run.json", manifest, {{"kind", "mock-uniform"}}, dir / "out");
  auto partial = cli(dir, "evaluate " + q(run) + " --limit 10");
  CHECK(partial.code == 3);
  auto e = cli(dir, "evaluate " + q(run) + " --workers 3");
  CHECK(e.code == 0);
  CHECK(json::parse(e.out)["complete"] == true);

  auto text = cli(dir, "report " + q(dir / "out") + " --group-by ability --format text");
  CHECK(text.code == 0);
  CHECK(text.out.find("perception") != std::string::npos);
  CHECK(text.out.find("0.500") != std::string::npos);
  auto to_file = cli(dir, "report " + q(dir / "out") + " --format json --out " + q(dir / "r.json"));
  CHECK(to_file.code == 0);
  CHECK(json::parse(read_file(dir / "r.json"))["reports"].size() == 4);

  auto bad_cfg = dir / "bad.json";
  write_file(bad_cfg, R"({"manifest":"nowhere.json","provider":{"kind":"mock-hash","params":{"seed":"x"}},"output_dir":"o"})");
  auto b = cli(dir, "evaluate " + q(bad_cfg));
  CHECK(b.code == 2);
  CHECK(b.err.find("error:") != std::string::npos);
}

TEST_CASE("cli: validation failures exit 4") {
  TempDir dir;
  auto manifest = sdseval::testing::write_benchmark(dir / "bench", {{"S", "general_vqa", synthetic_samples(5, 2)}});
  auto doc = json::parse(read_file(manifest));
  doc["declared_total"] = 6;
  write_file(manifest, doc.dump());
  auto v = cli(dir, "validate " + q(manifest));
  CHECK(v.code == 4);
  CHECK(v.out.find("FAIL") != std::string::npos);
}

TEST_CASE("cli: reformat") {
  TempDir dir;
  write_file(dir / "raw.jsonl", R"({"id":"n1","question":"Length?","answer":"4.5"})"
                                "\n"
                                R"({"id":"n2","question":"Count?","answer":"12"})"
                                "\n");
  write_file(dir / "source.json", json{{"source", "MathVista"},
                                       {"task", "mathematical_reasoning"},
                                       {"kind", "free_form_numeric"},
                                       {"input", "raw.jsonl"},
                                       {"output", "mathvista.jsonl"}}
                                      .dump());
  write_file(dir / "policy.json", R"({"target_candidate_count":2,"seed":3})");
  auto r = cli(dir, "reformat " + q(dir / "source.json") + " " + q(dir / "policy.json"));
  CHECK(r.code == 0);
  CHECK(json::parse(r.out)["emitted"] == 2);
  auto samples = sdseval::load_samples(dir / "mathvista.jsonl");
  CHECK(samples[1].candidates[samples[1].answer_index] == "12");
}

TEST_CASE("cli: correlate, reliability, series") {
  TempDir dir;
  write_file(dir / "pre.csv", "step,label,score\n100,general_vqa,1\n200,general_vqa,2\n300,general_vqa,3\n"
                              "400,general_vqa,4\n100,spatial_reasoning,0.5\n200,spatial_reasoning,0.5\n");
  write_file(dir / "post.csv", "100,general_vqa,1\n200,general_vqa,3\n300,general_vqa,2\n400,general_vqa,4\n"
                               "100,spatial_reasoning,40\n200,spatial_reasoning,41\n");
  auto c = cli(dir, "correlate " + q(dir / "pre.csv") + " " + q(dir / "post.csv"));
  CHECK(c.code == 0);
  auto at = c.out.find("general_vqa\t4\t");
  REQUIRE(at != std::string::npos);
  CHECK(std::abs(std::stod(c.out.substr(at + 14)) - 0.8) < 1e-12);
  CHECK(c.out.find("spatial_reasoning\t2\tNA\t") != std::string::npos);

  auto manifest = sdseval::testing::write_benchmark(
      dir / "bench", {{"S", "general_vqa", synthetic_samples(200, 2, "general_vqa", "S", "g")}});
  for (int step : {100, 200}) {
    auto run = sdseval::testing::write_run_config(dir / "run.json", manifest,
                                                  {{"kind", "mock-hash"}, {"params", {{"seed", step}}}},
                                                  dir / "ckpt" / std::to_string(step), {{"checkpoint_step", step}});
    REQUIRE(cli(dir, "evaluate " + q(run)).code == 0);
  }
  auto rel = cli(dir, "reliability " + q(dir / "ckpt/100") + " --sizes 10,50,200 --resamples 20 --seed 1");
  CHECK(rel.code == 0);
  CHECK(rel.out.rfind("size\tsds_mean\tsds_std\tresamples\n", 0) == 0);
  CHECK(rel.out.find("\n200\t") != std::string::npos);
  CHECK(cli(dir, "reliability " + q(dir / "ckpt/100") + " --sizes 300").code != 0);

  auto s = cli(dir, "series " + q(dir / "ckpt") + " --metric acc_logits --group-by ability");
  CHECK(s.code == 0);
  CHECK(s.out.find("perception") != std::string::npos);
  auto lng = cli(dir, "series " + q(dir / "ckpt") + " --long");
  CHECK(lng.code == 0);
  CHECK(lng.out.find("200\tgeneral_vqa\t") != std::string::npos);
}
