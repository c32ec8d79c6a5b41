// SPDX-License-Identifier: Apache-2.0
#include "sdseval/reformat.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cctype>
#include <map>
#include <set>

#include "sdseval/error.hpp"

namespace sdseval {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr const char* kWikiQuestion = "The image shows";
constexpr const char* kPendingReview = "pending-review";

// Fixed-point decimal: value = mantissa / 10^scale.
struct Decimal {
  __int128 mantissa = 0;
  int scale = 0;
  bool has_point = false;
};

std::optional<Decimal> parse_decimal(std::string_view text) {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  bool negative = false;
  if (text.front() == '+' || text.front() == '-') {
    negative = text.front() == '-';
    text.remove_prefix(1);
  }
  Decimal d;
  bool any_digit = false;
  for (char c : text) {
    if (c == '.') {
      if (d.has_point) return std::nullopt;
      d.has_point = true;
      continue;
    }
    if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
    any_digit = true;
    if (d.mantissa > (static_cast<__int128>(1) << 100)) return std::nullopt;
    d.mantissa = d.mantissa * 10 + (c - '0');
    if (d.has_point) ++d.scale;
  }
  if (!any_digit) return std::nullopt;
  if (negative) d.mantissa = -d.mantissa;
  return d;
}

__int128 pow10(int n) {
  __int128 p = 1;
  while (n-- > 0) p *= 10;
  return p;
}

Decimal rescale(Decimal d, int scale) {
  d.mantissa *= pow10(scale - d.scale);
  d.scale = scale;
  return d;
}

std::string format_decimal(const Decimal& d) {
  __int128 m = d.mantissa < 0 ? -d.mantissa : d.mantissa;
  std::string digits;
  do {
    digits.insert(digits.begin(), static_cast<char>('0' + static_cast<int>(m % 10)));
    m /= 10;
  } while (m > 0);
  if (d.scale > 0) {
    if (digits.size() <= static_cast<std::size_t>(d.scale)) {
      digits.insert(digits.begin(), static_cast<std::size_t>(d.scale) - digits.size() + 1, '0');
    }
    digits.insert(digits.end() - d.scale, '.');
  }
  return (d.mantissa < 0 ? "-" : "") + digits;
}

/// Places the answer at a seeded position among the distractors.
Sample assemble(const SourceRecord& rec, std::string question, const std::string& answer,
                std::vector<std::string> distractors, SeededRng& rng) {
  Sample s;
  s.id = rec.id;
  s.task = rec.task;
  s.source = rec.source;
  s.image_ref = rec.image_ref;
  s.question = std::move(question);
  std::size_t pos = static_cast<std::size_t>(rng.below(distractors.size() + 1));
  distractors.insert(distractors.begin() + static_cast<std::ptrdiff_t>(pos), answer);
  s.candidates = std::move(distractors);
  s.answer_index = pos;
  s.validate();
  return s;
}

void require_kind(const SourceRecord& rec, RawKind kind) {
  if (rec.raw_kind != kind) {
    fail(ErrorCode::InvalidArgument, fmt::format("record '{}' is {}, expected {}", rec.id, to_string(rec.raw_kind),
                                                 to_string(kind)));
  }
}

std::string strip_code_fence(std::string_view text) {
  text = trim(text);
  if (text.substr(0, 3) == "```") {
    auto nl = text.find('\n');
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    auto close = text.rfind("```");
    if (close != std::string_view::npos) text = text.substr(0, close);
  }
  return std::string(trim(text));
}

std::string fill(std::string_view tmpl, const std::map<std::string, std::string>& vars) {
  std::string out(tmpl);
  for (const auto& [key, value] : vars) {
    const std::string token = "{" + key + "}";
    for (auto pos = out.find(token); pos != std::string::npos; pos = out.find(token, pos + value.size())) {
      out.replace(pos, token.size(), value);
    }
  }
  return out;
}

std::string json_scalar_to_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
  if (v.is_number_float()) return v.dump();
  fail(ErrorCode::Parse, "expected a string or number");
}

}  // namespace

const char* const kSpatialPromptTemplate =
    "[non-canonical placeholder prompt]\n"
    "Spatial description of an image:\n{description}\n\n"
    "Write one question about the relative position of two objects in the image, its correct answer, and a "
    "distractor stating the opposite spatial relation. Respond with a JSON object with string fields "
    "\"question\", \"answer\" and \"distractor\" and nothing else.";

const char* const kExpressionPromptTemplate =
    "Question:\n{question}\n\nCorrect answer: {answer}\n\n"
    "Write one incorrect but plausible answer in the same notation by changing only some variables or "
    "quantities of the correct answer. Reply with the expression only.";

std::string_view to_string(RawKind k) {
  switch (k) {
    case RawKind::Mcq: return "mcq";
    case RawKind::FreeFormNumeric: return "free_form_numeric";
    case RawKind::FreeFormExpression: return "free_form_expression";
    case RawKind::WikiTitle: return "wiki_title";
    case RawKind::SpatialTriplet: return "spatial_triplet";
  }
  return "unknown";
}

RawKind parse_raw_kind(std::string_view s) {
  for (auto k : {RawKind::Mcq, RawKind::FreeFormNumeric, RawKind::FreeFormExpression, RawKind::WikiTitle,
                 RawKind::SpatialTriplet}) {
    if (to_string(k) == s) return k;
  }
  fail(ErrorCode::Config, fmt::format("unknown source kind '{}'", s));
}

void SourceRecord::validate() const {
  auto bad = [this](const std::string& why) {
    fail(ErrorCode::Validation, fmt::format("source record '{}': {}", id, why));
  };
  if (id.empty()) fail(ErrorCode::Validation, "source record with empty id");
  switch (raw_kind) {
    case RawKind::Mcq: {
      if (options.size() < 2) bad(fmt::format("mcq needs at least 2 options, has {}", options.size()));
      bool found = std::any_of(options.begin(), options.end(), [&](const auto& o) { return o.letter == answer; });
      if (!found) bad(fmt::format("answer letter '{}' is not among the options", answer));
      break;
    }
    case RawKind::FreeFormNumeric:
    case RawKind::FreeFormExpression:
    case RawKind::WikiTitle:
      if (trim(answer).empty()) bad("empty answer");
      break;
    case RawKind::SpatialTriplet:
      if (trim(description).empty()) bad("empty spatial description");
      break;
  }
}

LlmEndpoint LlmEndpoint::from_json(const json& j) {
  LlmEndpoint e;
  e.kind = j.value("kind", std::string("chat"));
  e.base_url = j.value("base_url", std::string{});
  e.api_key_env = j.value("api_key_env", std::string{});
  e.model = j.value("model", std::string{});
  e.timeout = std::chrono::milliseconds(static_cast<long long>(j.value("timeout_seconds", 30.0) * 1000.0));
  e.max_retries = j.value("max_retries", 3);
  e.script = j.value("script", std::vector<std::string>{});
  if (e.kind != "chat" && e.kind != "script") fail(ErrorCode::Config, "llm kind must be 'chat' or 'script'");
  if (e.kind == "chat" && (e.base_url.empty() || e.model.empty())) {
    fail(ErrorCode::Config, "chat llm endpoint needs base_url and model");
  }
  if (e.kind == "script" && e.script.empty()) fail(ErrorCode::Config, "script llm endpoint needs responses");
  if (e.max_retries < 0) fail(ErrorCode::Config, "max_retries must be >= 0");
  if (e.timeout.count() <= 0) fail(ErrorCode::Config, "timeout_seconds must be positive");
  return e;
}

DistractorPolicy DistractorPolicy::from_json(const json& j) {
  DistractorPolicy p;
  try {
    p.target_candidate_count = j.value("target_candidate_count", std::size_t{2});
    p.seed = j.value("seed", std::uint64_t{0});
    p.int_delta = j.value("int_delta", std::int64_t{1});
    if (auto it = j.find("dec_delta"); it != j.end()) {
      p.dec_delta = it->is_string() ? it->get<std::string>() : format_double(it->get<double>());
    }
    p.allow_negative = j.value("allow_negative", true);
    if (auto it = j.find("llm"); it != j.end() && !it->is_null()) {
      p.llm = LlmEndpoint::from_json(*it);
      p.max_attempts = p.llm->max_retries + 1;
    }
    p.max_attempts = j.value("max_attempts", p.max_attempts);
  } catch (const json::exception& e) {
    fail(ErrorCode::Config, fmt::format("distractor policy: {}", e.what()));
  }
  p.validate();
  return p;
}

void DistractorPolicy::validate() const {
  if (target_candidate_count < 2) fail(ErrorCode::Config, "target_candidate_count must be >= 2");
  if (int_delta <= 0) fail(ErrorCode::Config, "int_delta must be > 0");
  auto d = parse_decimal(dec_delta);
  if (!d || d->mantissa <= 0) fail(ErrorCode::Config, fmt::format("dec_delta '{}' must be a positive decimal", dec_delta));
  if (max_attempts < 1) fail(ErrorCode::Config, "max_attempts must be >= 1");
}

AuditLog::AuditLog(const std::filesystem::path& path) {
  out_.emplace(path, std::ios::binary | std::ios::app);
  if (!*out_) fail(ErrorCode::Io, "cannot open audit log " + path.string());
}

void AuditLog::record(const std::string& purpose, const std::string& record_id, const std::string& prompt,
                      const std::string& response, const std::string& verdict) {
  ordered_json j;
  j["purpose"] = purpose;
  j["record_id"] = record_id;
  j["request_digest"] = sha256_hex(prompt);
  j["prompt"] = prompt;
  j["response"] = response;
  j["verdict"] = verdict;
  std::lock_guard lock(mu_);
  if (out_) {
    *out_ << j.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
    out_->flush();
  }
  entries_.push_back(json::parse(j.dump(-1, ' ', false, json::error_handler_t::replace)));
}

std::vector<json> AuditLog::entries() const {
  std::lock_guard lock(mu_);
  return entries_;
}

std::string ScriptedClient::complete(const std::string&) {
  if (responses_.empty()) fail(ErrorCode::Client, "scripted client has no responses");
  return responses_[calls_++ % responses_.size()];
}

std::unique_ptr<LlmClient> make_client(const LlmEndpoint& endpoint) {
  if (endpoint.kind == "script") return std::make_unique<ScriptedClient>(endpoint.script);
  return make_chat_client(endpoint);
}

SeededRng record_rng(std::uint64_t seed, std::string_view record_id) { return SeededRng::derive(seed, record_id); }

Sample reformat_mcq(const SourceRecord& rec, const DistractorPolicy& policy) {
  require_kind(rec, RawKind::Mcq);
  rec.validate();
  const std::size_t target = policy.target_candidate_count;
  if (rec.options.size() < target) {
    fail(ErrorCode::Validation, fmt::format("record '{}': {} options but target is {} candidates", rec.id,
                                            rec.options.size(), target));
  }
  std::size_t answer_pos = 0;
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < rec.options.size(); ++i) {
    if (rec.options[i].letter == rec.answer) {
      answer_pos = i;
    } else {
      others.push_back(i);
    }
  }
  auto rng = record_rng(policy.seed, rec.id);
  auto picks = rng.sample_indices(others.size(), target - 1);
  std::vector<std::size_t> kept{answer_pos};
  for (auto p : picks) kept.push_back(others[p]);
  // Retained options keep their source order.
  std::sort(kept.begin(), kept.end());

  Sample s;
  s.id = rec.id;
  s.task = rec.task;
  s.source = rec.source;
  s.image_ref = rec.image_ref;
  s.question = rec.question;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    s.candidates.push_back(rec.options[kept[i]].content);
    if (kept[i] == answer_pos) s.answer_index = i;
  }
  s.validate();
  return s;
}

std::string perturb_numeric(std::string_view answer, const DistractorPolicy& policy, SeededRng& rng) {
  auto value = parse_decimal(answer);
  if (!value) fail(ErrorCode::Validation, fmt::format("answer '{}' is not numeric", answer));
  Decimal delta;
  if (value->has_point) {
    delta = *parse_decimal(policy.dec_delta);
  } else {
    delta.mantissa = policy.int_delta;
  }
  const int scale = std::max(value->scale, delta.scale);
  Decimal a = rescale(*value, scale);
  Decimal d = rescale(delta, scale);
  bool up = rng.coin();
  Decimal out = a;
  out.mantissa = up ? a.mantissa + d.mantissa : a.mantissa - d.mantissa;
  if (!policy.allow_negative && out.mantissa < 0 && a.mantissa >= 0) out.mantissa = a.mantissa + d.mantissa;
  return format_decimal(out);
}

Sample reformat_numeric(const SourceRecord& rec, const DistractorPolicy& policy) {
  require_kind(rec, RawKind::FreeFormNumeric);
  rec.validate();
  const std::size_t needed = policy.target_candidate_count - 1;
  if (needed > 2) {
    fail(ErrorCode::Validation, fmt::format("record '{}': numeric perturbation yields at most 2 distractors, {} needed",
                                            rec.id, needed));
  }
  auto rng = record_rng(policy.seed, rec.id);
  const std::string answer(trim(rec.answer));
  std::vector<std::string> distractors{perturb_numeric(answer, policy, rng)};
  if (needed == 2) {
    // The second distractor takes the other sign.
    auto value = *parse_decimal(answer);
    auto first = *parse_decimal(distractors.front());
    int scale = std::max(value.scale, first.scale);
    Decimal mirrored = rescale(value, scale);
    mirrored.mantissa = 2 * mirrored.mantissa - rescale(first, scale).mantissa;
    distractors.push_back(format_decimal(mirrored));
  }
  return assemble(rec, rec.question, answer, std::move(distractors), rng);
}

std::string generate_expression_distractor(const std::string& answer, const std::string& question,
                                           LlmClient& client, int max_attempts, AuditLog* audit,
                                           const std::string& record_id) {
  if (max_attempts < 1) fail(ErrorCode::InvalidArgument, "max_attempts must be >= 1");
  const std::string prompt = fill(kExpressionPromptTemplate, {{"question", question}, {"answer", answer}});
  const std::string norm_answer = normalize_whitespace(answer);
  std::string last_problem;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    std::string response;
    try {
      response = client.complete(prompt);
    } catch (const Error& e) {
      last_problem = e.what();
      if (audit) audit->record("expression_distractor", record_id, prompt, "", std::string("client-error: ") + e.what());
      continue;
    }
    std::string candidate = strip_code_fence(response);
    if (candidate.empty()) {
      last_problem = "empty response";
      if (audit) audit->record("expression_distractor", record_id, prompt, response, "rejected-empty");
      continue;
    }
    if (normalize_whitespace(candidate) == norm_answer) {
      last_problem = "response equals the answer";
      if (audit) audit->record("expression_distractor", record_id, prompt, response, "rejected-equal");
      continue;
    }
    if (audit) audit->record("expression_distractor", record_id, prompt, response, "accepted");
    return candidate;
  }
  fail(ErrorCode::Client,
       fmt::format("expression distractor for '{}' failed after {} attempts: {}", answer, max_attempts, last_problem));
}

Sample reformat_expression(const SourceRecord& rec, const DistractorPolicy& policy, LlmClient& client,
                           AuditLog* audit) {
  require_kind(rec, RawKind::FreeFormExpression);
  rec.validate();
  const std::string answer(trim(rec.answer));
  std::set<std::string> seen{normalize_whitespace(answer)};
  std::vector<std::string> distractors;
  int budget = policy.max_attempts * static_cast<int>(policy.target_candidate_count - 1);
  while (distractors.size() + 1 < policy.target_candidate_count) {
    if (budget <= 0) {
      fail(ErrorCode::Client, fmt::format("record '{}': could not collect {} distinct distractors", rec.id,
                                          policy.target_candidate_count - 1));
    }
    auto d = generate_expression_distractor(answer, rec.question, client, policy.max_attempts, audit, rec.id);
    --budget;
    if (seen.insert(normalize_whitespace(d)).second) distractors.push_back(std::move(d));
  }
  auto rng = record_rng(policy.seed, rec.id);
  return assemble(rec, rec.question, answer, std::move(distractors), rng);
}

Sample reformat_wiki(const SourceRecord& rec, const DistractorPolicy& policy, SeededRng& rng) {
  require_kind(rec, RawKind::WikiTitle);
  rec.validate();
  const std::string answer(trim(rec.answer));
  const std::string norm_answer = normalize_whitespace(answer);
  std::vector<std::string> pool;
  std::set<std::string> seen{norm_answer};
  for (const auto& t : rec.title_pool) {
    if (normalize_whitespace(t).empty()) continue;
    if (seen.insert(normalize_whitespace(t)).second) pool.push_back(t);
  }
  const std::size_t needed = policy.target_candidate_count - 1;
  if (pool.size() < needed) {
    fail(ErrorCode::Validation, fmt::format("record '{}': title pool has {} usable titles, {} distractors needed",
                                            rec.id, pool.size(), needed));
  }
  std::vector<std::string> distractors;
  for (auto i : rng.sample_indices(pool.size(), needed)) distractors.push_back(pool[i]);
  return assemble(rec, kWikiQuestion, answer, std::move(distractors), rng);
}

SpatialTriplet parse_spatial_triplet(const std::string& response) {
  json j;
  try {
    j = json::parse(strip_code_fence(response));
  } catch (const json::parse_error&) {
    fail(ErrorCode::Client, "spatial triplet response is not JSON");
  }
  if (!j.is_object()) fail(ErrorCode::Client, "spatial triplet response is not an object");
  SpatialTriplet t;
  for (auto [key, dst] : {std::pair{"question", &t.question}, std::pair{"answer", &t.answer},
                          std::pair{"distractor", &t.distractor}}) {
    if (!j.contains(key) || !j[key].is_string()) {
      fail(ErrorCode::Client, fmt::format("spatial triplet lacks string field '{}'", key));
    }
    *dst = std::string(trim(j[key].get<std::string>()));
    if (dst->empty()) fail(ErrorCode::Client, fmt::format("spatial triplet field '{}' is empty", key));
  }
  if (normalize_whitespace(t.answer) == normalize_whitespace(t.distractor)) {
    fail(ErrorCode::Client, "spatial triplet distractor equals the answer");
  }
  return t;
}

Sample build_spatial_sample(const SourceRecord& rec, LlmClient& client, const DistractorPolicy& policy,
                            AuditLog* audit) {
  require_kind(rec, RawKind::SpatialTriplet);
  rec.validate();
  if (policy.target_candidate_count != 2) {
    fail(ErrorCode::Validation, "spatial triplets provide exactly one distractor; target_candidate_count must be 2");
  }
  const std::string prompt = fill(kSpatialPromptTemplate, {{"description", rec.description}});
  std::string last_problem;
  for (int attempt = 1; attempt <= policy.max_attempts; ++attempt) {
    std::string response;
    try {
      response = client.complete(prompt);
    } catch (const Error& e) {
      last_problem = e.what();
      if (audit) audit->record("spatial_triplet", rec.id, prompt, "", std::string("client-error: ") + e.what());
      continue;
    }
    SpatialTriplet t;
    try {
      t = parse_spatial_triplet(response);
    } catch (const Error& e) {
      last_problem = e.what();
      if (audit) audit->record("spatial_triplet", rec.id, prompt, response, std::string("malformed: ") + e.what());
      continue;
    }
    if (audit) audit->record("spatial_triplet", rec.id, prompt, response, "accepted");
    auto rng = record_rng(policy.seed, rec.id);
    Sample s = assemble(rec, t.question, t.answer, {t.distractor}, rng);
    s.status = kPendingReview;
    return s;
  }
  fail(ErrorCode::Client,
       fmt::format("record '{}': spatial triplet failed after {} attempts: {}", rec.id, policy.max_attempts,
                   last_problem));
}

SourceConfig SourceConfig::load(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::Config, fmt::format("{}: {}", path.string(), e.what()));
  }
  return from_json(j, path.parent_path());
}

SourceConfig SourceConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
  SourceConfig c;
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  try {
    c.source = j.at("source").get<std::string>();
    c.task = TaskCategory::parse(j.at("task").get<std::string>());
    c.kind = parse_raw_kind(j.at("kind").get<std::string>());
    c.input = resolve(j.at("input").get<std::string>());
    c.output = resolve(j.at("output").get<std::string>());
    if (j.contains("audit_log")) {
      c.audit_log = resolve(j["audit_log"].get<std::string>());
    } else {
      c.audit_log = c.output;
      c.audit_log += ".audit.jsonl";
    }
    c.fields = j.value("fields", json::object());
  } catch (const json::exception& e) {
    fail(ErrorCode::Config, fmt::format("source config: {}", e.what()));
  } catch (const Error& e) {
    fail(ErrorCode::Config, fmt::format("source config: {}", e.what()));
  }
  return c;
}

std::string SourceConfig::field(const std::string& role) const {
  auto it = fields.find(role);
  return it != fields.end() && it->is_string() ? it->get<std::string>() : role;
}

std::vector<SourceRecord> read_source_records(const SourceConfig& config) {
  std::ifstream in(config.input, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open source file " + config.input.string());

  struct Pending {
    SourceRecord rec;
    std::string category;
  };
  std::vector<Pending> pending;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = fmt::format("{}:{}", config.input.string(), line_no);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::Parse, fmt::format("{}: {}", where, e.what()));
    }
    auto get = [&](const std::string& role, bool required) -> std::optional<json> {
      auto it = j.find(config.field(role));
      if (it == j.end() || it->is_null()) {
        if (required) fail(ErrorCode::Parse, fmt::format("{}: missing field '{}'", where, config.field(role)));
        return std::nullopt;
      }
      return *it;
    };
    Pending p;
    SourceRecord& r = p.rec;
    r.raw_kind = config.kind;
    r.source = config.source;
    r.task = config.task;
    try {
      auto id = get("id", false);
      r.id = id ? json_scalar_to_string(*id) : fmt::format("{}-{}", config.source, line_no);
      if (auto img = get("image", false)) r.image_ref = img->get<std::string>();
      switch (config.kind) {
        case RawKind::Mcq: {
          r.question = get("question", true)->get<std::string>();
          auto opts = *get("options", true);
          if (opts.is_array()) {
            for (std::size_t i = 0; i < opts.size(); ++i) {
              r.options.push_back({std::string(1, static_cast<char>('A' + i)), json_scalar_to_string(opts[i])});
            }
          } else if (opts.is_object()) {
            for (const auto& [letter, content] : opts.items()) {
              r.options.push_back({letter, json_scalar_to_string(content)});
            }
          } else {
            fail(ErrorCode::Parse, "options must be an array or an object");
          }
          std::string letter(trim(json_scalar_to_string(*get("answer", true))));
          for (auto& ch : letter) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
          r.answer = letter;
          break;
        }
        case RawKind::FreeFormNumeric:
        case RawKind::FreeFormExpression:
          r.question = get("question", true)->get<std::string>();
          r.answer = json_scalar_to_string(*get("answer", true));
          break;
        case RawKind::WikiTitle:
          r.question = kWikiQuestion;
          r.answer = get("title", true)->get<std::string>();
          if (auto cat = get("category", false)) p.category = json_scalar_to_string(*cat);
          break;
        case RawKind::SpatialTriplet:
          r.description = get("description", true)->get<std::string>();
          break;
      }
    } catch (const json::exception& e) {
      fail(ErrorCode::Parse, fmt::format("{}: {}", where, e.what()));
    } catch (const Error& e) {
      fail(e.code(), fmt::format("{}: {}", where, e.what()));
    }
    pending.push_back(std::move(p));
  }

  if (config.kind == RawKind::WikiTitle) {
    std::map<std::string, std::vector<std::string>> by_category;
    for (const auto& p : pending) by_category[p.category].push_back(p.rec.answer);
    for (auto& p : pending) {
      const std::string self = normalize_whitespace(p.rec.answer);
      for (const auto& t : by_category[p.category]) {
        if (normalize_whitespace(t) != self) p.rec.title_pool.push_back(t);
      }
    }
  }

  std::vector<SourceRecord> out;
  out.reserve(pending.size());
  std::set<std::string> ids;
  for (auto& p : pending) {
    if (!ids.insert(p.rec.id).second) fail(ErrorCode::Validation, fmt::format("duplicate record id '{}'", p.rec.id));
    out.push_back(std::move(p.rec));
  }
  return out;
}

std::string ReformatSummary::to_json() const {
  ordered_json j;
  j["records"] = records;
  j["emitted"] = emitted;
  j["pending_review"] = pending_review;
  j["output"] = output.string();
  j["audit_log"] = audit_log.string();
  return j.dump();
}

ReformatSummary run_reformat(const SourceConfig& config, const DistractorPolicy& policy, LlmClient* client) {
  policy.validate();
  auto records = read_source_records(config);

  std::unique_ptr<LlmClient> owned;
  std::optional<AuditLog> audit;
  const bool needs_client = config.kind == RawKind::FreeFormExpression || config.kind == RawKind::SpatialTriplet;
  if (needs_client) {
    if (!client) {
      if (!policy.llm) fail(ErrorCode::Config, fmt::format("{} sources need an llm endpoint in the policy",
                                                           to_string(config.kind)));
      owned = make_client(*policy.llm);
      client = owned.get();
    }
    std::filesystem::remove(config.audit_log);
    audit.emplace(config.audit_log);
  }

  std::vector<Sample> samples;
  samples.reserve(records.size());
  ReformatSummary summary;
  summary.records = records.size();
  for (const auto& rec : records) {
    switch (config.kind) {
      case RawKind::Mcq:
        samples.push_back(reformat_mcq(rec, policy));
        break;
      case RawKind::FreeFormNumeric:
        samples.push_back(reformat_numeric(rec, policy));
        break;
      case RawKind::FreeFormExpression:
        samples.push_back(reformat_expression(rec, policy, *client, &*audit));
        break;
      case RawKind::WikiTitle: {
        auto rng = record_rng(policy.seed, rec.id);
        samples.push_back(reformat_wiki(rec, policy, rng));
        break;
      }
      case RawKind::SpatialTriplet:
        samples.push_back(build_spatial_sample(rec, *client, policy, &*audit));
        break;
    }
    if (samples.back().candidate_count() != policy.target_candidate_count) {
      fail(ErrorCode::Validation, fmt::format("record '{}' produced {} candidates", rec.id,
                                              samples.back().candidate_count()));
    }
    if (samples.back().status) ++summary.pending_review;
  }
  if (!config.output.parent_path().empty()) std::filesystem::create_directories(config.output.parent_path());
  write_samples(config.output, samples);
  summary.emitted = samples.size();
  summary.output = config.output;
  if (audit) summary.audit_log = config.audit_log;
  return summary;
}

}  // namespace sdseval
