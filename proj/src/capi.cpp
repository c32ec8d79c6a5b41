// SPDX-License-Identifier: Apache-2.0
#include "sdseval/sdseval.h"

#include <fmt/core.h>

#include <cstdlib>
#include <cstring>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sdseval/analysis.hpp"
#include "sdseval/bench_model.hpp"
#include "sdseval/error.hpp"
#include "sdseval/metrics.hpp"
#include "sdseval/reformat.hpp"
#include "sdseval/runner.hpp"
#include "sdseval/util.hpp"

struct sdseval_samples {
  std::vector<sdseval::Sample> samples;
};

struct sdseval_provider {
  std::unique_ptr<sdseval::LogitProvider> impl;
};

namespace {

using sdseval::ErrorCode;

thread_local std::string g_last_error;

sdseval_status to_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return SDSEVAL_INVALID_ARGUMENT;
    case ErrorCode::Parse: return SDSEVAL_PARSE_ERROR;
    case ErrorCode::Validation: return SDSEVAL_VALIDATION_FAILED;
    case ErrorCode::Config: return SDSEVAL_CONFIG_ERROR;
    case ErrorCode::Provider: return SDSEVAL_PROVIDER_ERROR;
    case ErrorCode::Client: return SDSEVAL_CLIENT_ERROR;
    case ErrorCode::Io: return SDSEVAL_IO_ERROR;
  }
  return SDSEVAL_ERROR;
}

template <typename F>
sdseval_status guarded(F&& f) {
  g_last_error.clear();
  try {
    return f();
  } catch (const sdseval::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SDSEVAL_ERROR;
  } catch (...) {
    g_last_error = "unknown error";
    return SDSEVAL_ERROR;
  }
}

void require(bool cond, const char* what) {
  if (!cond) sdseval::fail(ErrorCode::InvalidArgument, what);
}

char* dup_string(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.data(), s.size() + 1);
  return p;
}

void emit(char** out, const std::string& s) {
  if (out) *out = dup_string(s);
}

std::vector<std::vector<double>> sequences(const double* nlls, const size_t* lengths, size_t n_seq) {
  require(n_seq == 0 || (lengths != nullptr), "lengths must not be NULL");
  std::vector<std::vector<double>> seqs;
  std::size_t offset = 0;
  for (size_t i = 0; i < n_seq; ++i) {
    require(lengths[i] == 0 || nlls != nullptr, "nlls must not be NULL");
    seqs.emplace_back(nlls + offset, nlls + offset + lengths[i]);
    offset += lengths[i];
  }
  return seqs;
}

// Holds a registered vtable; destroy() runs once the registration and every
// provider built from it are gone.
struct PluginHandle {
  sdseval_plugin_vtable vt;
  ~PluginHandle() {
    if (vt.destroy) vt.destroy(vt.user_data);
  }
};

class CPluginProvider final : public sdseval::LogitProvider {
 public:
  CPluginProvider(std::string id, std::shared_ptr<PluginHandle> handle) : id_(std::move(id)), handle_(std::move(handle)) {}

  sdseval::TokenLogits score_tokens(const sdseval::Sample& sample, std::size_t candidate) const override {
    sdseval::check_candidate(sample, candidate);
    sdseval::TokenLogits tl;
    tl.logits = call(handle_->vt.score_tokens, sample, candidate, "score_tokens");
    // The plugin owns tokenization; tokens are reported by position.
    for (std::size_t i = 0; i < tl.logits.size(); ++i) tl.tokens.push_back(fmt::format("#{}", i));
    return tl;
  }

  std::vector<double> label_nll(const sdseval::Sample& sample, std::size_t candidate) const override {
    sdseval::check_candidate(sample, candidate);
    if (!handle_->vt.provides_nll || !handle_->vt.label_nll) {
      sdseval::fail(ErrorCode::Provider, fmt::format("plugin '{}' does not expose label NLLs", id_));
    }
    return call(handle_->vt.label_nll, sample, candidate, "label_nll");
  }

  bool provides_nll() const override { return handle_->vt.provides_nll && handle_->vt.label_nll; }
  bool reentrant() const override { return handle_->vt.reentrant != 0; }
  std::string name() const override { return "plugin:" + id_; }

 private:
  using Fn = int (*)(void*, const char*, size_t, double*, size_t, size_t*, char*, size_t);

  std::vector<double> call(Fn fn, const sdseval::Sample& sample, std::size_t candidate, const char* what) const {
    const std::string record = sdseval::serialize_sample(sample);
    std::vector<double> buf(64);
    for (int round = 0; round < 2; ++round) {
      std::size_t count = 0;
      char err[512] = {0};
      int rc = fn(handle_->vt.user_data, record.c_str(), candidate, buf.data(), buf.size(), &count, err, sizeof err);
      if (rc != 0) {
        sdseval::fail(ErrorCode::Provider, fmt::format("plugin '{}' {} failed: {}", id_, what,
                                                       err[0] ? err : "no message"));
      }
      if (count == 0) {
        sdseval::fail(ErrorCode::Provider, fmt::format("plugin '{}': sample '{}' candidate {} has zero tokens", id_,
                                                       sample.id, candidate));
      }
      if (count <= buf.size()) {
        buf.resize(count);
        return buf;
      }
      buf.assign(count, 0.0);
    }
    sdseval::fail(ErrorCode::Provider, fmt::format("plugin '{}' reported inconsistent token counts", id_));
  }

  std::string id_;
  std::shared_ptr<PluginHandle> handle_;
};

std::string correlate_tsv(const std::vector<sdseval::CorrelationPair>& pairs) {
  std::string out = "label\tn\tpearson_r\tnote\n";
  for (const auto& p : pairs) {
    try {
      double r = sdseval::pearson(p);
      out += fmt::format("{}\t{}\t{}\t\n", p.label, p.pre_scores.size(), sdseval::format_double(r));
    } catch (const sdseval::Error& e) {
      out += fmt::format("{}\t{}\tNA\t{}\n", p.label, p.pre_scores.size(), sdseval::normalize_whitespace(e.what()));
    }
  }
  return out;
}

}  // namespace

extern "C" {

const char* sdseval_version(void) { return "0.1.0"; }

const char* sdseval_last_error(void) { return g_last_error.c_str(); }

void sdseval_string_free(char* s) { std::free(s); }

sdseval_status sdseval_mean_logit(const double* logits, size_t n, double* out) {
  return guarded([&] {
    require(out && (logits || n == 0), "null argument");
    *out = sdseval::mean_logit(std::span<const double>(logits, n));
    return SDSEVAL_OK;
  });
}

sdseval_status sdseval_normalize_scores(const double* mean_logits, size_t n, double* out) {
  return guarded([&] {
    require(out && (mean_logits || n == 0), "null argument");
    auto p = sdseval::normalize_scores(std::span<const double>(mean_logits, n));
    std::copy(p.begin(), p.end(), out);
    return SDSEVAL_OK;
  });
}

sdseval_status sdseval_sds(const double* p_correct, size_t n, double* out) {
  return guarded([&] {
    require(out && (p_correct || n == 0), "null argument");
    require(n > 0, "sds: empty input");
    for (size_t i = 0; i < n; ++i) require(p_correct[i] >= 0.0 && p_correct[i] <= 1.0, "p_correct outside [0, 1]");
    *out = sdseval::unweighted_mean(std::span<const double>(p_correct, n));
    return SDSEVAL_OK;
  });
}

sdseval_status sdseval_mean_nll(const double* nlls, const size_t* lengths, size_t n_seq, double* out) {
  return guarded([&] {
    require(out != nullptr, "null argument");
    auto seqs = sequences(nlls, lengths, n_seq);
    *out = sdseval::mean_nll(std::span<const std::vector<double>>(seqs));
    return SDSEVAL_OK;
  });
}

sdseval_status sdseval_perplexity(const double* nlls, const size_t* lengths, size_t n_seq, double* out) {
  return guarded([&] {
    require(out != nullptr, "null argument");
    auto seqs = sequences(nlls, lengths, n_seq);
    *out = sdseval::perplexity(std::span<const std::vector<double>>(seqs));
    return SDSEVAL_OK;
  });
}

sdseval_status sdseval_pearson(const double* x, const double* y, size_t n, double* out) {
  return guarded([&] {
    require(out && ((x && y) || n == 0), "null argument");
    *out = sdseval::pearson(std::span<const double>(x, n), std::span<const double>(y, n));
    return SDSEVAL_OK;
  });
}

sdseval_status sdseval_samples_load(const char* path, const char* expected_task, sdseval_samples** out) {
  return guarded([&] {
    require(path && out, "null argument");
    std::optional<sdseval::TaskCategory> task;
    if (expected_task) task = sdseval::TaskCategory::parse(expected_task);
    auto handle = std::make_unique<sdseval_samples>();
    handle->samples = sdseval::load_samples(path, task);
    *out = handle.release();
    return SDSEVAL_OK;
  });
}

size_t sdseval_samples_count(const sdseval_samples* samples) { return samples ? samples->samples.size() : 0; }

sdseval_status sdseval_samples_get_json(const sdseval_samples* samples, size_t i, char** out) {
  return guarded([&] {
    require(samples && out, "null argument");
    require(i < samples->samples.size(), "sample index out of range");
    emit(out, sdseval::serialize_sample(samples->samples[i]));
    return SDSEVAL_OK;
  });
}

void sdseval_samples_free(sdseval_samples* samples) { delete samples; }

sdseval_status sdseval_validate_manifest(const char* manifest_path, char** report_json, char** report_text) {
  return guarded([&] {
    require(manifest_path != nullptr, "null argument");
    auto manifest = sdseval::BenchmarkManifest::load(manifest_path);
    auto report = sdseval::validate_manifest(manifest);
    emit(report_json, report.to_json());
    emit(report_text, report.to_text());
    return report.passed ? SDSEVAL_OK : SDSEVAL_VALIDATION_FAILED;
  });
}

sdseval_status sdseval_register_plugin(const char* id, const sdseval_plugin_vtable* vtable) {
  return guarded([&] {
    require(id && *id && vtable && vtable->score_tokens, "plugin needs an id and a score_tokens callback");
    auto handle = std::make_shared<PluginHandle>(PluginHandle{*vtable});
    std::string name = id;
    sdseval::ProviderRegistry::instance().add(name, [name, handle](const nlohmann::json&) {
      return std::make_unique<CPluginProvider>(name, handle);
    });
    return SDSEVAL_OK;
  });
}

sdseval_status sdseval_unregister_plugin(const char* id) {
  return guarded([&] {
    require(id != nullptr, "null argument");
    if (!sdseval::ProviderRegistry::instance().remove(id)) {
      sdseval::fail(ErrorCode::InvalidArgument, fmt::format("plugin '{}' is not registered", id));
    }
    return SDSEVAL_OK;
  });
}

sdseval_status sdseval_provider_create(const char* spec_json, const char* base_dir, sdseval_provider** out) {
  return guarded([&] {
    require(spec_json && out, "null argument");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(spec_json);
    } catch (const nlohmann::json::parse_error& e) {
      sdseval::fail(ErrorCode::Config, fmt::format("provider spec: {}", e.what()));
    }
    auto spec = sdseval::ProviderSpec::from_json(j);
    auto handle = std::make_unique<sdseval_provider>();
    handle->impl = sdseval::make_provider(spec, base_dir ? std::filesystem::path(base_dir) : std::filesystem::path{});
    *out = handle.release();
    return SDSEVAL_OK;
  });
}

void sdseval_provider_free(sdseval_provider* provider) { delete provider; }

int sdseval_provider_provides_nll(const sdseval_provider* provider) {
  return provider && provider->impl->provides_nll() ? 1 : 0;
}

sdseval_status sdseval_provider_score_tokens(const sdseval_provider* provider, const sdseval_samples* samples,
                                             size_t sample_index, size_t candidate, double* logits, size_t cap,
                                             size_t* count) {
  return guarded([&] {
    require(provider && samples && count && (logits || cap == 0), "null argument");
    require(sample_index < samples->samples.size(), "sample index out of range");
    auto tl = provider->impl->score_tokens(samples->samples[sample_index], candidate);
    tl.validate();
    *count = tl.logits.size();
    require(tl.logits.size() <= cap, "output buffer too small; *count holds the required size");
    std::copy(tl.logits.begin(), tl.logits.end(), logits);
    return SDSEVAL_OK;
  });
}

sdseval_status sdseval_provider_label_nll(const sdseval_provider* provider, const sdseval_samples* samples,
                                          size_t sample_index, size_t candidate, double* nlls, size_t cap,
                                          size_t* count) {
  return guarded([&] {
    require(provider && samples && count && (nlls || cap == 0), "null argument");
    require(sample_index < samples->samples.size(), "sample index out of range");
    auto v = provider->impl->label_nll(samples->samples[sample_index], candidate);
    *count = v.size();
    require(v.size() <= cap, "output buffer too small; *count holds the required size");
    std::copy(v.begin(), v.end(), nlls);
    return SDSEVAL_OK;
  });
}

sdseval_status sdseval_reformat(const char* source_config_path, const char* policy_path, char** summary_json) {
  return guarded([&] {
    require(source_config_path && policy_path, "null argument");
    auto config = sdseval::SourceConfig::load(source_config_path);
    nlohmann::json pj;
    try {
      pj = nlohmann::json::parse(sdseval::read_file(policy_path));
    } catch (const nlohmann::json::parse_error& e) {
      sdseval::fail(ErrorCode::Config, fmt::format("{}: {}", policy_path, e.what()));
    }
    auto policy = sdseval::DistractorPolicy::from_json(pj);
    auto summary = sdseval::run_reformat(config, policy);
    emit(summary_json, summary.to_json());
    return SDSEVAL_OK;
  });
}

sdseval_status sdseval_evaluate(const char* run_config_path, const sdseval_evaluate_options* options,
                                char** summary_json) {
  return guarded([&] {
    require(run_config_path != nullptr, "null argument");
    auto config = sdseval::RunConfig::load(run_config_path);
    sdseval::EvaluateOptions opts;
    if (options && options->max_new_samples > 0) opts.max_new_samples = options->max_new_samples;
    if (options && options->worker_override > 0) opts.worker_override = options->worker_override;
    auto summary = sdseval::evaluate(config, opts);
    emit(summary_json, summary.to_json());
    return summary.exit_code() == 0 ? SDSEVAL_OK : SDSEVAL_PARTIAL;
  });
}

sdseval_status sdseval_report(const char* const* results, size_t n_results, const char* group_by, const char* format,
                              const char* output_path, char** out) {
  return guarded([&] {
    require(results || n_results == 0, "null argument");
    std::vector<std::filesystem::path> paths;
    for (size_t i = 0; i < n_results; ++i) {
      require(results[i] != nullptr, "null results path");
      paths.emplace_back(results[i]);
    }
    auto g = sdseval::parse_group_by(group_by ? group_by : "source");
    auto f = sdseval::parse_report_format(format ? format : "tsv");
    sdseval::ResultsHeader header;
    auto reports = sdseval::report_from_logs(paths, g, &header);
    auto text = sdseval::render_reports(reports, header, f);
    if (output_path) sdseval::write_file(output_path, text);
    emit(out, text);
    return SDSEVAL_OK;
  });
}

sdseval_status sdseval_correlate(const char* pre_path, const char* post_path, char** out_tsv) {
  return guarded([&] {
    require(pre_path && post_path, "null argument");
    auto pre = sdseval::read_score_table(pre_path);
    auto post = sdseval::read_score_table(post_path);
    auto pairs = sdseval::assemble_pairs(pre, post);
    if (pairs.empty()) sdseval::fail(ErrorCode::Validation, "the two tables share no labels");
    emit(out_tsv, correlate_tsv(pairs));
    return SDSEVAL_OK;
  });
}

sdseval_status sdseval_reliability(const char* results, const size_t* sizes, size_t n_sizes, size_t resamples,
                                   uint64_t seed, const char* task_filter, char** out_tsv) {
  return guarded([&] {
    require(results && (sizes || n_sizes == 0), "null argument");
    require(n_sizes > 0, "no sample sizes given");
    auto log = sdseval::ResultsLog::read(results);
    std::vector<sdseval::SampleResult> selected;
    for (auto& r : log.results) {
      if (!task_filter || r.task.label() == task_filter) selected.push_back(std::move(r));
    }
    if (selected.empty()) sdseval::fail(ErrorCode::InvalidArgument, "no results match the task filter");
    std::vector<std::size_t> sz(sizes, sizes + n_sizes);
    auto curve = sdseval::reliability_curve(selected, sz, resamples, seed);
    emit(out_tsv, curve.to_tsv());
    return SDSEVAL_OK;
  });
}

sdseval_status sdseval_series(const char* results_dir, const sdseval_series_options* options, char** out_tsv) {
  return guarded([&] {
    require(results_dir != nullptr, "null argument");
    sdseval_series_options opts{};
    if (options) opts = *options;
    auto metric = sdseval::parse_metric(opts.metric ? opts.metric : "sds");
    auto level = sdseval::parse_group_by(opts.group_by ? opts.group_by : "task");
    std::vector<std::string> filter;
    if (opts.filter && *opts.filter) {
      for (auto& f : sdseval::split(opts.filter, ',')) {
        if (!sdseval::trim(f).empty()) filter.emplace_back(sdseval::trim(f));
      }
    }
    std::optional<std::string> run_id;
    if (opts.run_id) run_id = opts.run_id;
    auto series = sdseval::load_series(results_dir, level, run_id);
    auto matrix = sdseval::series_table(series, metric, level, filter);
    std::string text = opts.long_format ? matrix.to_long_tsv() : matrix.to_tsv();
    if (opts.saturation_window > 0) {
      for (std::size_t c = 0; c < matrix.columns.size(); ++c) {
        std::vector<std::optional<double>> col;
        for (const auto& row : matrix.cells) col.push_back(row[c]);
        auto step = sdseval::detect_saturation(matrix.steps, col, opts.saturation_window, opts.saturation_epsilon);
        text += fmt::format("# saturation (advisory slope-threshold stand-in, window {}, epsilon {}) {}: {}\n",
                            opts.saturation_window, sdseval::format_double(opts.saturation_epsilon),
                            matrix.columns[c], step ? std::to_string(*step) : std::string("none"));
      }
    }
    emit(out_tsv, text);
    return SDSEVAL_OK;
  });
}

}  // extern "C"
