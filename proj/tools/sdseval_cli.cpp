// SPDX-License-Identifier: Apache-2.0
// Command-line front end. Talks to the library only through the C API.
#include <cstdio>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sdseval/sdseval.h"

namespace {

int exit_code(sdseval_status st) {
  switch (st) {
    case SDSEVAL_OK: return 0;
    case SDSEVAL_CONFIG_ERROR: return 2;
    case SDSEVAL_PARTIAL: return 3;
    case SDSEVAL_VALIDATION_FAILED: return 4;
    default: return 1;
  }
}

// Prints the owned string (if any) and the error (if any); returns the exit code.
int finish(sdseval_status st, char* out, FILE* stream = stdout) {
  if (out) {
    std::fputs(out, stream);
    std::size_t len = std::char_traits<char>::length(out);
    if (len > 0 && out[len - 1] != '\n') std::fputc('\n', stream);
    sdseval_string_free(out);
  }
  if (st != SDSEVAL_OK && *sdseval_last_error()) std::fprintf(stderr, "error: %s\n", sdseval_last_error());
  return exit_code(st);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Soft discrimination scoring and answer-ranking evaluation for pre-trained multi-modal models"};
  app.set_version_flag("--version", std::string(sdseval_version()));
  app.require_subcommand(1);
  int rc = 0;

  auto* validate = app.add_subcommand("validate", "Check a benchmark manifest against its files");
  std::string manifest;
  bool as_json = false;
  validate->add_option("manifest", manifest, "Manifest file")->required();
  validate->add_flag("--json", as_json, "Print the report as JSON");
  validate->callback([&] {
    char* json = nullptr;
    char* text = nullptr;
    auto st = sdseval_validate_manifest(manifest.c_str(), &json, &text);
    if (as_json) {
      sdseval_string_free(text);
      rc = finish(st, json);
    } else {
      sdseval_string_free(json);
      rc = finish(st, text);
    }
  });

  auto* reformat = app.add_subcommand("reformat", "Convert a source benchmark into the unified sample format");
  std::string source_config, policy;
  reformat->add_option("source-config", source_config, "Per-source config (fields, paths, kind)")->required();
  reformat->add_option("policy", policy, "Distractor policy")->required();
  reformat->callback([&] {
    char* out = nullptr;
    auto st = sdseval_reformat(source_config.c_str(), policy.c_str(), &out);
    rc = finish(st, out);
  });

  auto* evaluate = app.add_subcommand("evaluate", "Score a benchmark with a provider; resumes interrupted runs");
  std::string run_config;
  std::size_t limit = 0, workers = 0;
  evaluate->add_option("run-config", run_config, "Run config")->required();
  evaluate->add_option("--limit", limit, "Stop after scoring this many new samples");
  evaluate->add_option("--workers", workers, "Override worker_count");
  evaluate->callback([&] {
    sdseval_evaluate_options opts{limit, workers};
    char* out = nullptr;
    auto st = sdseval_evaluate(run_config.c_str(), &opts, &out);
    rc = finish(st, out);
  });

  auto* report = app.add_subcommand("report", "Aggregate results logs into report tables");
  std::vector<std::string> results;
  std::string group_by = "source", format = "tsv", output;
  report->add_option("results", results, "results.jsonl files or run directories")->required();
  report->add_option("--group-by", group_by, "source | task | ability")->check(CLI::IsMember({"source", "task", "ability"}));
  report->add_option("--format", format, "tsv | json | text")->check(CLI::IsMember({"tsv", "json", "text"}));
  report->add_option("--out", output, "Write to this file instead of stdout");
  report->callback([&] {
    std::vector<const char*> paths;
    for (const auto& r : results) paths.push_back(r.c_str());
    char* out = nullptr;
    auto st = sdseval_report(paths.data(), paths.size(), group_by.c_str(), format.c_str(),
                             output.empty() ? nullptr : output.c_str(), &out);
    if (!output.empty() && out) {
      sdseval_string_free(out);
      out = nullptr;
    }
    rc = finish(st, out);
  });

  auto* correlate = app.add_subcommand("correlate", "Pearson r between pre-training and fine-tuned scores");
  std::string pre, post;
  correlate->add_option("pre", pre, "step,label,score table of pre-training scores")->required();
  correlate->add_option("post", post, "step,label,score table of fine-tuned scores")->required();
  correlate->callback([&] {
    char* out = nullptr;
    auto st = sdseval_correlate(pre.c_str(), post.c_str(), &out);
    rc = finish(st, out);
  });

  auto* reliability = app.add_subcommand("reliability", "SDS mean and spread over seeded subsamples");
  std::string rel_results, task;
  std::vector<std::size_t> sizes;
  std::size_t resamples = 100;
  std::uint64_t seed = 0;
  reliability->add_option("results", rel_results, "results.jsonl or run directory")->required();
  reliability->add_option("--sizes", sizes, "Increasing sample sizes")->delimiter(',')->required();
  reliability->add_option("--resamples", resamples, "Subsamples per size");
  reliability->add_option("--seed", seed, "Subsampling seed");
  reliability->add_option("--task", task, "Only results of this task label");
  reliability->callback([&] {
    char* out = nullptr;
    auto st = sdseval_reliability(rel_results.c_str(), sizes.data(), sizes.size(), resamples, seed,
                                  task.empty() ? nullptr : task.c_str(), &out);
    rc = finish(st, out);
  });

  auto* series = app.add_subcommand("series", "Steps x groups matrix over a directory of checkpoint runs");
  std::string results_dir, metric = "sds", level = "task", filter, run_id;
  bool long_format = false;
  std::size_t window = 0;
  double epsilon = 1e-4;
  series->add_option("results-dir", results_dir, "Directory holding one run directory per checkpoint")->required();
  series->add_option("--metric", metric, "sds | acc_logits | acc_ppl | ppl | nll");
  series->add_option("--group-by", level, "source | task | ability");
  series->add_option("--tasks", filter, "Comma-separated group labels to keep");
  series->add_option("--run-id", run_id, "Select one run id");
  series->add_flag("--long", long_format, "Emit step,label,score rows");
  series->add_option("--saturation-window", window, "Trailing window for the advisory saturation scan");
  series->add_option("--saturation-epsilon", epsilon, "Slope threshold for the saturation scan");
  series->callback([&] {
    sdseval_series_options opts{metric.c_str(),
                                level.c_str(),
                                filter.empty() ? nullptr : filter.c_str(),
                                run_id.empty() ? nullptr : run_id.c_str(),
                                long_format ? 1 : 0,
                                window,
                                epsilon};
    char* out = nullptr;
    auto st = sdseval_series(results_dir.c_str(), &opts, &out);
    rc = finish(st, out);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return rc;
}
