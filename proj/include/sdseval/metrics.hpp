// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdseval/adapter.hpp"
#include "sdseval/bench_model.hpp"

namespace sdseval {

struct CandidateScore {
  std::size_t candidate_index = 0;
  double mean_logit = 0.0;
  std::size_t token_count = 1;
  std::optional<double> mean_nll;
};

/// Outcome of one sample. Beyond the scores it carries the identity fields
/// (task, source, answer) the aggregation and the results log need.
struct SampleResult {
  std::string sample_id;
  TaskCategory task = TaskCategory::parse("general_vqa");
  std::string source;
  std::size_t answer_index = 0;

  std::vector<double> normalized_scores;
  double p_correct = 0.0;
  std::size_t chosen_logits = 0;
  bool correct_logits = false;
  std::optional<std::size_t> chosen_ppl;
  std::optional<bool> correct_ppl;

  /// Pooled label NLL of the correct candidate (sum over its tokens) and the
  /// token count, for token-weighted perplexity across samples.
  std::optional<double> answer_nll_sum;
  std::optional<std::size_t> answer_tokens;

  std::size_t candidate_count() const { return normalized_scores.size(); }
};

enum class Metric { Sds, AccLogits, AccPpl, Ppl, Nll };
enum class RankStrategy { Logits, Ppl };

std::string_view to_string(Metric m);
Metric parse_metric(std::string_view s);
/// Metrics that need the provider's NLL channel.
bool needs_nll(Metric m);

double mean_logit(const TokenLogits& tl);
double mean_logit(std::span<const double> logits);

/// Softmax over mean logits, double precision with max subtraction.
std::vector<double> normalize_scores(std::span<const double> mean_logits);
std::vector<double> normalize_scores(std::span<const CandidateScore> scores);

SampleResult score_sample(const Sample& sample, std::span<const CandidateScore> scores);

/// Mean p_correct. Rejects mixed candidate counts.
double sds(std::span<const SampleResult> results);
double accuracy(std::span<const SampleResult> results, RankStrategy strategy);

/// Token-weighted pooling of per-token NLL sequences.
double mean_nll(std::span<const std::vector<double>> nlls);
double perplexity(std::span<const std::vector<double>> nlls);

/// Same pooling over the correct-candidate NLLs stored in results.
double mean_nll(std::span<const SampleResult> results);
double perplexity(std::span<const SampleResult> results);

/// Dispatch by metric.
double compute_metric(Metric metric, std::span<const SampleResult> results);

}  // namespace sdseval
