// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdseval/bench_model.hpp"
#include "sdseval/util.hpp"

namespace sdseval {

enum class RawKind { Mcq, FreeFormNumeric, FreeFormExpression, WikiTitle, SpatialTriplet };

std::string_view to_string(RawKind k);
RawKind parse_raw_kind(std::string_view s);

struct McqOption {
  std::string letter;
  std::string content;
};

/// One record read from a source benchmark, before reformatting.
struct SourceRecord {
  RawKind raw_kind = RawKind::Mcq;
  std::string id;
  std::string source;
  TaskCategory task = TaskCategory::parse("general_vqa");
  std::optional<std::string> image_ref;
  std::string question;
  std::vector<McqOption> options;  // mcq
  std::string answer;              // mcq letter, numeric string, expression, or wiki title
  std::vector<std::string> title_pool;  // wiki: other titles of the same category
  std::string description;         // spatial

  void validate() const;
};

/// Endpoint settings for the chat-completion client. The key itself is
/// read from the named environment variable, never from config.
struct LlmEndpoint {
  std::string kind = "chat";  // "chat" or "script"
  std::string base_url;
  std::string api_key_env;
  std::string model;
  std::chrono::milliseconds timeout{30000};
  int max_retries = 3;
  std::vector<std::string> script;  // canned responses for kind "script"

  static LlmEndpoint from_json(const nlohmann::json& j);
};

struct DistractorPolicy {
  std::size_t target_candidate_count = 2;
  std::uint64_t seed = 0;
  std::int64_t int_delta = 1;
  std::string dec_delta = "0.1";  // kept as text so decimal arithmetic stays exact
  bool allow_negative = true;
  int max_attempts = 3;  // client calls per requested distractor
  std::optional<LlmEndpoint> llm;

  static DistractorPolicy from_json(const nlohmann::json& j);
  void validate() const;
};

/// Minimal request/response contract for an external text generator.
class LlmClient {
 public:
  virtual ~LlmClient() = default;
  /// Returns the model's text. Throws Error(Client) on transport failure or timeout.
  virtual std::string complete(const std::string& prompt) = 0;
};

/// Line-delimited audit trail, one record per client call.
class AuditLog {
 public:
  AuditLog() = default;
  explicit AuditLog(const std::filesystem::path& path);

  void record(const std::string& purpose, const std::string& record_id, const std::string& prompt,
              const std::string& response, const std::string& verdict);
  std::vector<nlohmann::json> entries() const;

 private:
  mutable std::mutex mu_;
  std::optional<std::ofstream> out_;
  std::vector<nlohmann::json> entries_;
};

/// Always returns the next canned response, cycling.
class ScriptedClient final : public LlmClient {
 public:
  explicit ScriptedClient(std::vector<std::string> responses) : responses_(std::move(responses)) {}
  std::string complete(const std::string& prompt) override;
  std::size_t calls() const { return calls_; }

 private:
  std::vector<std::string> responses_;
  std::size_t calls_ = 0;
};

/// POSTs to `<base_url>/chat/completions` and returns the first choice's content.
std::unique_ptr<LlmClient> make_chat_client(const LlmEndpoint& endpoint);
std::unique_ptr<LlmClient> make_client(const LlmEndpoint& endpoint);

/// Per-record RNG stream derived from (seed, record id).
SeededRng record_rng(std::uint64_t seed, std::string_view record_id);

Sample reformat_mcq(const SourceRecord& rec, const DistractorPolicy& policy);
std::string perturb_numeric(std::string_view answer, const DistractorPolicy& policy, SeededRng& rng);
Sample reformat_numeric(const SourceRecord& rec, const DistractorPolicy& policy);

std::string generate_expression_distractor(const std::string& answer, const std::string& question, LlmClient& client,
                                           int max_attempts, AuditLog* audit = nullptr,
                                           const std::string& record_id = {});
Sample reformat_expression(const SourceRecord& rec, const DistractorPolicy& policy, LlmClient& client,
                           AuditLog* audit = nullptr);

Sample reformat_wiki(const SourceRecord& rec, const DistractorPolicy& policy, SeededRng& rng);

/// Spatial question/answer/distractor triplet returned by the client.
struct SpatialTriplet {
  std::string question;
  std::string answer;
  std::string distractor;
};

/// Placeholder prompt for spatial triplet generation. Not a canonical
/// prompt; replace it with a vetted one before building real data.
extern const char* const kSpatialPromptTemplate;
extern const char* const kExpressionPromptTemplate;

SpatialTriplet parse_spatial_triplet(const std::string& response);
Sample build_spatial_sample(const SourceRecord& rec, LlmClient& client, const DistractorPolicy& policy,
                            AuditLog* audit = nullptr);

/// Column/field mapping and paths for one source benchmark.
struct SourceConfig {
  std::string source;
  TaskCategory task = TaskCategory::parse("general_vqa");
  RawKind kind = RawKind::Mcq;
  std::filesystem::path input;
  std::filesystem::path output;
  std::filesystem::path audit_log;  // defaults to <output>.audit.jsonl
  nlohmann::json fields = nlohmann::json::object();

  static SourceConfig load(const std::filesystem::path& path);
  static SourceConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
  std::string field(const std::string& role) const;
};

std::vector<SourceRecord> read_source_records(const SourceConfig& config);

struct ReformatSummary {
  std::size_t records = 0;
  std::size_t emitted = 0;
  std::size_t pending_review = 0;
  std::filesystem::path output;
  std::filesystem::path audit_log;

  std::string to_json() const;
};

/// Reformats every record of a source benchmark and writes the unified file.
/// The client is only consulted for expression and spatial sources; pass
/// nullptr to build one from the policy.
ReformatSummary run_reformat(const SourceConfig& config, const DistractorPolicy& policy, LlmClient* client = nullptr);

}  // namespace sdseval
