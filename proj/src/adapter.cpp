// SPDX-License-Identifier: Apache-2.0
#include "sdseval/adapter.hpp"

#include <fmt/core.h>

#include <cmath>
#include <fstream>
#include <utility>

#include "sdseval/error.hpp"
#include "sdseval/util.hpp"

namespace sdseval {

using json = nlohmann::json;

namespace {

constexpr double kDefaultVocab = 32000.0;

double vocab_size(const json& params) {
  double v = params.value("vocab_size", kDefaultVocab);
  if (!(v >= 1.0) || !std::isfinite(v)) fail(ErrorCode::Config, "vocab_size must be >= 1");
  return v;
}

void require_image(const json& params, const Sample& sample) {
  if (params.value("require_image", false) && !sample.image_ref) {
    fail(ErrorCode::Provider, fmt::format("sample '{}' has no image_ref but the provider requires one", sample.id));
  }
}

std::vector<std::string> candidate_tokens(const Sample& sample, std::size_t candidate) {
  auto tokens = whitespace_tokens(sample.candidates[candidate]);
  if (tokens.empty()) {
    fail(ErrorCode::Provider, fmt::format("sample '{}' candidate {} tokenizes to zero tokens", sample.id, candidate));
  }
  return tokens;
}

class MockUniformProvider final : public LogitProvider {
 public:
  explicit MockUniformProvider(json params) : params_(std::move(params)), nll_(std::log(vocab_size(params_))) {}

  TokenLogits score_tokens(const Sample& sample, std::size_t candidate) const override {
    check_candidate(sample, candidate);
    require_image(params_, sample);
    TokenLogits tl;
    tl.tokens = candidate_tokens(sample, candidate);
    tl.logits.assign(tl.tokens.size(), 0.0);
    return tl;
  }

  std::vector<double> label_nll(const Sample& sample, std::size_t candidate) const override {
    check_candidate(sample, candidate);
    require_image(params_, sample);
    return std::vector<double>(candidate_tokens(sample, candidate).size(), nll_);
  }

  bool provides_nll() const override { return true; }
  bool reentrant() const override { return true; }
  std::string name() const override { return "mock-uniform"; }

 private:
  json params_;
  double nll_;
};

// Pseudo-logits from a hash of the conditioning context. The target token
// gets logit l and the remaining V-1 vocabulary entries get 0, which fixes
// the simulated NLL at log(e^l + V - 1) - l.
class MockHashProvider final : public LogitProvider {
 public:
  explicit MockHashProvider(json params)
      : params_(std::move(params)),
        seed_(params_.at("seed").get<std::uint64_t>()),
        scale_(params_.value("logit_scale", 4.0)),
        vocab_(vocab_size(params_)) {
    if (!(scale_ > 0.0) || !std::isfinite(scale_)) fail(ErrorCode::Config, "logit_scale must be positive");
  }

  TokenLogits score_tokens(const Sample& sample, std::size_t candidate) const override {
    check_candidate(sample, candidate);
    require_image(params_, sample);
    TokenLogits tl;
    tl.tokens = candidate_tokens(sample, candidate);
    tl.logits = logits_for(sample, tl.tokens);
    return tl;
  }

  std::vector<double> label_nll(const Sample& sample, std::size_t candidate) const override {
    check_candidate(sample, candidate);
    require_image(params_, sample);
    auto logits = logits_for(sample, candidate_tokens(sample, candidate));
    std::vector<double> out;
    out.reserve(logits.size());
    for (double l : logits) out.push_back(std::log(std::exp(l) + vocab_ - 1.0) - l);
    return out;
  }

  bool provides_nll() const override { return true; }
  bool reentrant() const override { return true; }
  std::string name() const override { return "mock-hash"; }

 private:
  std::vector<double> logits_for(const Sample& sample, const std::vector<std::string>& tokens) const {
    std::string context = sample.image_ref.value_or("");
    context += '\x1e';
    context += sample.question;
    context += '\x1e';
    std::vector<double> out;
    out.reserve(tokens.size());
    for (const auto& tok : tokens) {
      context += tok;
      context += '\x1f';
      auto rng = SeededRng::derive(seed_, context);
      out.push_back((2.0 * rng.unit() - 1.0) * scale_);
    }
    return out;
  }

  json params_;
  std::uint64_t seed_;
  double scale_;
  double vocab_;
};

struct StoredCandidate {
  TokenLogits logits;
  std::optional<std::vector<double>> nlls;
};

using StoreKey = std::pair<std::string, std::size_t>;

StoredCandidate parse_stored(const json& rec, const std::string& where) {
  StoredCandidate sc;
  try {
    sc.logits.tokens = rec.at("tokens").get<std::vector<std::string>>();
    sc.logits.logits = rec.at("logits").get<std::vector<double>>();
    if (auto it = rec.find("nlls"); it != rec.end() && !it->is_null()) sc.nlls = it->get<std::vector<double>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, fmt::format("{}: {}", where, e.what()));
  }
  try {
    sc.logits.validate();
  } catch (const Error& e) {
    fail(ErrorCode::Validation, fmt::format("{}: {}", where, e.what()));
  }
  if (sc.nlls) {
    if (sc.nlls->size() != sc.logits.tokens.size()) {
      fail(ErrorCode::Validation, fmt::format("{}: {} nlls for {} tokens", where, sc.nlls->size(),
                                              sc.logits.tokens.size()));
    }
    for (double v : *sc.nlls) {
      if (!std::isfinite(v) || v < 0.0) fail(ErrorCode::Validation, where + ": nlls must be finite and >= 0");
    }
  }
  return sc;
}

// Table (single JSON document) and precomputed (line-delimited) providers
// share the lookup; they differ only in how the file is read.
class StoredLogitsProvider final : public LogitProvider {
 public:
  StoredLogitsProvider(std::string kind, json params, std::map<StoreKey, StoredCandidate> store)
      : kind_(std::move(kind)), params_(std::move(params)), store_(std::move(store)) {
    all_nll_ = !store_.empty();
    for (const auto& [key, sc] : store_) all_nll_ = all_nll_ && sc.nlls.has_value();
  }

  TokenLogits score_tokens(const Sample& sample, std::size_t candidate) const override {
    return lookup(sample, candidate).logits;
  }

  std::vector<double> label_nll(const Sample& sample, std::size_t candidate) const override {
    const auto& sc = lookup(sample, candidate);
    if (!sc.nlls) {
      fail(ErrorCode::Provider, fmt::format("no stored nlls for sample '{}' candidate {}", sample.id, candidate));
    }
    return *sc.nlls;
  }

  bool provides_nll() const override { return all_nll_; }
  bool reentrant() const override { return true; }
  std::string name() const override { return kind_; }

 private:
  const StoredCandidate& lookup(const Sample& sample, std::size_t candidate) const {
    check_candidate(sample, candidate);
    require_image(params_, sample);
    auto it = store_.find({sample.id, candidate});
    if (it == store_.end()) {
      fail(ErrorCode::Provider, fmt::format("no stored logits for sample '{}' candidate {}", sample.id, candidate));
    }
    return it->second;
  }

  std::string kind_;
  json params_;
  std::map<StoreKey, StoredCandidate> store_;
  bool all_nll_ = false;
};

void insert_record(std::map<StoreKey, StoredCandidate>& store, const json& rec, const std::string& where) {
  std::string sid;
  std::size_t cand = 0;
  try {
    sid = rec.at("sample_id").get<std::string>();
    cand = rec.at("candidate_index").get<std::size_t>();
  } catch (const json::exception& e) {
    fail(ErrorCode::Parse, fmt::format("{}: {}", where, e.what()));
  }
  auto [it, inserted] = store.emplace(StoreKey{sid, cand}, parse_stored(rec, where));
  if (!inserted) fail(ErrorCode::Validation, fmt::format("{}: duplicate entry for ('{}', {})", where, sid, cand));
}

std::filesystem::path param_file(const json& params, const std::filesystem::path& base_dir) {
  std::filesystem::path p = params.at("file").get<std::string>();
  if (p.is_relative() && !base_dir.empty()) p = base_dir / p;
  return p;
}

std::map<StoreKey, StoredCandidate> load_table(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Parse, fmt::format("{}: {}", path.string(), e.what()));
  }
  std::map<StoreKey, StoredCandidate> store;
  const json& entries = doc.is_array() ? doc : doc.value("entries", json::array());
  std::size_t i = 0;
  for (const auto& rec : entries) insert_record(store, rec, fmt::format("{} entry {}", path.string(), i++));
  return store;
}

std::map<StoreKey, StoredCandidate> load_precomputed(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open precomputed logits " + path.string());
  std::map<StoreKey, StoredCandidate> store;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = fmt::format("{}:{}", path.string(), line_no);
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::Parse, fmt::format("{}: {}", where, e.what()));
    }
    insert_record(store, rec, where);
  }
  return store;
}

}  // namespace

void TokenLogits::validate() const {
  if (logits.empty()) fail(ErrorCode::Validation, "token logits are empty");
  if (tokens.size() != logits.size()) {
    fail(ErrorCode::Validation, fmt::format("{} tokens but {} logits", tokens.size(), logits.size()));
  }
  for (double l : logits) {
    if (!std::isfinite(l)) fail(ErrorCode::Validation, "non-finite logit");
  }
}

std::string_view to_string(ProviderKind k) {
  switch (k) {
    case ProviderKind::MockUniform: return "mock-uniform";
    case ProviderKind::MockHash: return "mock-hash";
    case ProviderKind::Table: return "table";
    case ProviderKind::Precomputed: return "precomputed";
    case ProviderKind::Plugin: return "plugin";
  }
  return "unknown";
}

ProviderKind parse_provider_kind(std::string_view s) {
  for (auto k : {ProviderKind::MockUniform, ProviderKind::MockHash, ProviderKind::Table, ProviderKind::Precomputed,
                 ProviderKind::Plugin}) {
    if (to_string(k) == s) return k;
  }
  fail(ErrorCode::Config, fmt::format("unknown provider kind '{}'", s));
}

ProviderSpec ProviderSpec::from_json(const json& j) {
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string()) {
    fail(ErrorCode::Config, "provider spec needs a string 'kind'");
  }
  ProviderSpec spec;
  spec.kind = parse_provider_kind(j["kind"].get<std::string>());
  spec.params = j.value("params", json::object());
  if (!spec.params.is_object()) fail(ErrorCode::Config, "provider params must be an object");
  return spec;
}

json ProviderSpec::to_json() const { return json{{"kind", to_string(kind)}, {"params", params}}; }

void ProviderSpec::validate() const {
  switch (kind) {
    case ProviderKind::MockHash:
      if (!params.contains("seed") || !params["seed"].is_number_integer() ||
          params["seed"].get<std::int64_t>() < 0) {
        fail(ErrorCode::Config, "mock-hash provider needs a non-negative integer 'seed'");
      }
      break;
    case ProviderKind::Table:
    case ProviderKind::Precomputed:
      if (!params.contains("file") || !params["file"].is_string()) {
        fail(ErrorCode::Config, fmt::format("{} provider needs a 'file'", to_string(kind)));
      }
      break;
    case ProviderKind::Plugin:
      if (!params.contains("plugin") || !params["plugin"].is_string()) {
        fail(ErrorCode::Config, "plugin provider needs a 'plugin' identifier");
      }
      break;
    case ProviderKind::MockUniform:
      break;
  }
}

ProviderRegistry& ProviderRegistry::instance() {
  static ProviderRegistry registry;
  return registry;
}

void ProviderRegistry::add(const std::string& id, ProviderFactory factory) {
  if (id.empty() || !factory) fail(ErrorCode::InvalidArgument, "plugin registration needs an id and a factory");
  std::lock_guard lock(mu_);
  factories_[id] = std::move(factory);
}

bool ProviderRegistry::remove(const std::string& id) {
  std::lock_guard lock(mu_);
  return factories_.erase(id) > 0;
}

bool ProviderRegistry::contains(const std::string& id) const {
  std::lock_guard lock(mu_);
  return factories_.count(id) > 0;
}

std::vector<std::string> ProviderRegistry::ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, f] : factories_) out.push_back(id);
  return out;
}

std::unique_ptr<LogitProvider> ProviderRegistry::create(const std::string& id, const json& params) const {
  ProviderFactory factory;
  {
    std::lock_guard lock(mu_);
    auto it = factories_.find(id);
    if (it == factories_.end()) fail(ErrorCode::Provider, fmt::format("plugin '{}' is not registered", id));
    factory = it->second;
  }
  auto p = factory(params);
  if (!p) fail(ErrorCode::Provider, fmt::format("plugin '{}' failed to construct", id));
  return p;
}

std::unique_ptr<LogitProvider> make_provider(const ProviderSpec& spec, const std::filesystem::path& base_dir) {
  spec.validate();
  switch (spec.kind) {
    case ProviderKind::MockUniform:
      return std::make_unique<MockUniformProvider>(spec.params);
    case ProviderKind::MockHash:
      return std::make_unique<MockHashProvider>(spec.params);
    case ProviderKind::Table:
      return std::make_unique<StoredLogitsProvider>("table", spec.params,
                                                    load_table(param_file(spec.params, base_dir)));
    case ProviderKind::Precomputed:
      return std::make_unique<StoredLogitsProvider>("precomputed", spec.params,
                                                    load_precomputed(param_file(spec.params, base_dir)));
    case ProviderKind::Plugin:
      return ProviderRegistry::instance().create(spec.params["plugin"].get<std::string>(), spec.params);
  }
  fail(ErrorCode::Config, "unhandled provider kind");
}

std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> out;
  for (auto& part : split(normalize_whitespace(text), ' ')) {
    if (!part.empty()) out.push_back(std::move(part));
  }
  return out;
}

void check_candidate(const Sample& sample, std::size_t candidate) {
  if (candidate >= sample.candidates.size()) {
    fail(ErrorCode::InvalidArgument, fmt::format("candidate index {} out of range for sample '{}' ({} candidates)",
                                                 candidate, sample.id, sample.candidates.size()));
  }
}

}  // namespace sdseval
