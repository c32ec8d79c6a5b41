// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sdseval/bench_model.hpp"

namespace sdseval {

/// Per-token raw scores for one candidate, as produced by a model.
struct TokenLogits {
  std::vector<std::string> tokens;
  std::vector<double> logits;

  /// len(tokens) == len(logits) >= 1, every logit finite.
  void validate() const;
};

enum class ProviderKind { MockUniform, MockHash, Table, Precomputed, Plugin };

std::string_view to_string(ProviderKind k);
ProviderKind parse_provider_kind(std::string_view s);

struct ProviderSpec {
  ProviderKind kind = ProviderKind::MockUniform;
  nlohmann::json params = nlohmann::json::object();

  static ProviderSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  /// Checks seed / file presence for the kinds that need them.
  void validate() const;
};

/// The model seen by the metrics layer: per-candidate token logits and
/// per-token label NLLs. A candidate is scored from (image_ref, question,
/// its own preceding tokens) only; other candidates and the answer index
/// must never influence the result.
class LogitProvider {
 public:
  virtual ~LogitProvider() = default;

  virtual TokenLogits score_tokens(const Sample& sample, std::size_t candidate) const = 0;
  /// One NLL >= 0 per candidate token. Throws Provider when unsupported.
  virtual std::vector<double> label_nll(const Sample& sample, std::size_t candidate) const = 0;

  virtual bool provides_nll() const = 0;
  /// Non-reentrant providers are driven by a single worker.
  virtual bool reentrant() const = 0;
  virtual std::string name() const = 0;
};

using ProviderFactory = std::function<std::unique_ptr<LogitProvider>(const nlohmann::json& params)>;

/// Named registry for plugin providers (real checkpoints, out-of-process
/// backends). Populated by embedding code or through the C API.
class ProviderRegistry {
 public:
  static ProviderRegistry& instance();

  void add(const std::string& id, ProviderFactory factory);
  bool remove(const std::string& id);
  bool contains(const std::string& id) const;
  std::vector<std::string> ids() const;
  std::unique_ptr<LogitProvider> create(const std::string& id, const nlohmann::json& params) const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, ProviderFactory> factories_;
};

/// Builds a provider; relative table/precomputed paths resolve against base_dir.
std::unique_ptr<LogitProvider> make_provider(const ProviderSpec& spec, const std::filesystem::path& base_dir = {});

/// Whitespace tokenizer used by the mock providers.
std::vector<std::string> whitespace_tokens(std::string_view text);

/// Checks the argument contract shared by every provider call.
void check_candidate(const Sample& sample, std::size_t candidate);

}  // namespace sdseval
