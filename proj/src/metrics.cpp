// SPDX-License-Identifier: Apache-2.0
#include "sdseval/metrics.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cmath>

#include "sdseval/error.hpp"

namespace sdseval {

namespace {

void require_nonempty(std::size_t n, std::string_view what) {
  if (n == 0) fail(ErrorCode::InvalidArgument, fmt::format("{}: empty input", what));
}

struct NllPool {
  double sum = 0.0;
  std::size_t tokens = 0;
};

NllPool pool(std::span<const std::vector<double>> nlls) {
  require_nonempty(nlls.size(), "nll pooling");
  NllPool p;
  for (const auto& seq : nlls) {
    for (double v : seq) {
      if (!std::isfinite(v)) fail(ErrorCode::InvalidArgument, "non-finite token NLL");
      p.sum += v;
    }
    p.tokens += seq.size();
  }
  if (p.tokens == 0) fail(ErrorCode::InvalidArgument, "nll pooling: no tokens");
  return p;
}

NllPool pool(std::span<const SampleResult> results) {
  require_nonempty(results.size(), "nll pooling");
  NllPool p;
  for (const auto& r : results) {
    if (!r.answer_nll_sum || !r.answer_tokens) {
      fail(ErrorCode::InvalidArgument, fmt::format("result '{}' carries no label NLL", r.sample_id));
    }
    p.sum += *r.answer_nll_sum;
    p.tokens += *r.answer_tokens;
  }
  if (p.tokens == 0) fail(ErrorCode::InvalidArgument, "nll pooling: no tokens");
  return p;
}

}  // namespace

std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::Sds: return "sds";
    case Metric::AccLogits: return "acc_logits";
    case Metric::AccPpl: return "acc_ppl";
    case Metric::Ppl: return "ppl";
    case Metric::Nll: return "nll";
  }
  return "unknown";
}

Metric parse_metric(std::string_view s) {
  for (auto m : {Metric::Sds, Metric::AccLogits, Metric::AccPpl, Metric::Ppl, Metric::Nll}) {
    if (to_string(m) == s) return m;
  }
  fail(ErrorCode::Config, fmt::format("unknown metric '{}'", s));
}

bool needs_nll(Metric m) { return m == Metric::AccPpl || m == Metric::Ppl || m == Metric::Nll; }

double mean_logit(std::span<const double> logits) {
  require_nonempty(logits.size(), "mean_logit");
  double sum = 0.0;
  for (double l : logits) {
    if (!std::isfinite(l)) fail(ErrorCode::InvalidArgument, "mean_logit: non-finite logit");
    sum += l;
  }
  return sum / static_cast<double>(logits.size());
}

double mean_logit(const TokenLogits& tl) { return mean_logit(std::span<const double>(tl.logits)); }

std::vector<double> normalize_scores(std::span<const double> mean_logits) {
  if (mean_logits.size() < 2) {
    fail(ErrorCode::InvalidArgument, fmt::format("normalize_scores: need at least 2 candidates, got {}",
                                                 mean_logits.size()));
  }
  double top = mean_logits[0];
  for (double s : mean_logits) {
    if (!std::isfinite(s)) fail(ErrorCode::InvalidArgument, "normalize_scores: non-finite mean logit");
    top = std::max(top, s);
  }
  std::vector<double> p(mean_logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = std::exp(mean_logits[i] - top);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

std::vector<double> normalize_scores(std::span<const CandidateScore> scores) {
  std::vector<double> s;
  s.reserve(scores.size());
  for (const auto& c : scores) s.push_back(c.mean_logit);
  return normalize_scores(s);
}

SampleResult score_sample(const Sample& sample, std::span<const CandidateScore> scores) {
  if (scores.size() != sample.candidates.size()) {
    fail(ErrorCode::InvalidArgument, fmt::format("sample '{}': {} scores for {} candidates", sample.id,
                                                 scores.size(), sample.candidates.size()));
  }
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].candidate_index != i) {
      fail(ErrorCode::InvalidArgument, fmt::format("sample '{}': score {} is for candidate {}", sample.id, i,
                                                   scores[i].candidate_index));
    }
    if (scores[i].token_count == 0) fail(ErrorCode::InvalidArgument, "candidate score with zero tokens");
  }
  if (sample.answer_index >= scores.size()) {
    fail(ErrorCode::InvalidArgument, fmt::format("sample '{}': answer index out of range", sample.id));
  }

  SampleResult r;
  r.sample_id = sample.id;
  r.task = sample.task;
  r.source = sample.source;
  r.answer_index = sample.answer_index;
  r.normalized_scores = normalize_scores(scores);
  r.p_correct = r.normalized_scores[sample.answer_index];

  // Strict comparisons keep the lowest index on ties.
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i].mean_logit > scores[best].mean_logit) best = i;
  }
  r.chosen_logits = best;
  r.correct_logits = best == sample.answer_index;

  bool have_nll = std::all_of(scores.begin(), scores.end(), [](const auto& c) { return c.mean_nll.has_value(); });
  if (have_nll) {
    std::size_t lowest = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
      if (*scores[i].mean_nll < *scores[lowest].mean_nll) lowest = i;
    }
    r.chosen_ppl = lowest;
    r.correct_ppl = lowest == sample.answer_index;
    const auto& ans = scores[sample.answer_index];
    r.answer_nll_sum = *ans.mean_nll * static_cast<double>(ans.token_count);
    r.answer_tokens = ans.token_count;
  }
  return r;
}

double sds(std::span<const SampleResult> results) {
  require_nonempty(results.size(), "sds");
  const std::size_t m = results.front().candidate_count();
  double sum = 0.0;
  for (const auto& r : results) {
    if (r.candidate_count() != m) {
      fail(ErrorCode::InvalidArgument,
           fmt::format("sds: mixed candidate counts ({} and {}); report them separately", m, r.candidate_count()));
    }
    sum += r.p_correct;
  }
  return sum / static_cast<double>(results.size());
}

double accuracy(std::span<const SampleResult> results, RankStrategy strategy) {
  require_nonempty(results.size(), "accuracy");
  std::size_t hits = 0;
  for (const auto& r : results) {
    if (strategy == RankStrategy::Logits) {
      hits += r.correct_logits ? 1 : 0;
    } else {
      if (!r.correct_ppl) {
        fail(ErrorCode::InvalidArgument, fmt::format("accuracy(ppl): result '{}' has no NLLs", r.sample_id));
      }
      hits += *r.correct_ppl ? 1 : 0;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

double mean_nll(std::span<const std::vector<double>> nlls) {
  auto p = pool(nlls);
  return p.sum / static_cast<double>(p.tokens);
}

double perplexity(std::span<const std::vector<double>> nlls) { return std::exp(mean_nll(nlls)); }

double mean_nll(std::span<const SampleResult> results) {
  auto p = pool(results);
  return p.sum / static_cast<double>(p.tokens);
}

double perplexity(std::span<const SampleResult> results) { return std::exp(mean_nll(results)); }

double compute_metric(Metric metric, std::span<const SampleResult> results) {
  switch (metric) {
    case Metric::Sds: return sds(results);
    case Metric::AccLogits: return accuracy(results, RankStrategy::Logits);
    case Metric::AccPpl: return accuracy(results, RankStrategy::Ppl);
    case Metric::Ppl: return perplexity(results);
    case Metric::Nll: return mean_nll(results);
  }
  fail(ErrorCode::InvalidArgument, "unhandled metric");
}

}  // namespace sdseval
