#pragma once

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "acof/llmclient.hpp"
#include "acof/metrics.hpp"
#include "acof/orchestrator.hpp"

namespace acof::cli {

using nlohmann::json;

enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 1,
  kExitRuntime = 2,
  kExitDivergence = 3,
};

// ---------------------------------------------------------------------------
// configuration

/// Parses a JSON config file. Throws ConfigError.
json load_config_json(const std::filesystem::path& path);

/// Applies "dotted.path=value". The value is parsed as JSON when possible
/// and taken as a string otherwise; missing objects are created.
void apply_override(json& config, std::string_view assignment);

/// Builds a RunConfig. Unknown keys and bad values throw ConfigError whose
/// message starts with the dotted path of the offending field. Relative
/// paths resolve against base_dir.
orch::RunConfig config_from_json(const json& config, const std::filesystem::path& base_dir = {});

/// Complete, normalized form of a config (every field present).
json config_to_json(const orch::RunConfig& config);

/// load_config_json + overrides + config_from_json + validate.
orch::RunConfig load_config(const std::filesystem::path& path,
                            const std::vector<std::string>& overrides = {});

/// True when the stack is fully deterministic (no LLM agents in play and a
/// deterministic evaluator).
bool replayable(const orch::RunConfig& config);

// ---------------------------------------------------------------------------
// run log

json record_to_json(const EvaluationRecord& record, const ParameterSpace& space);
EvaluationRecord record_from_json(const json& payload);

/// Streams run events as JSON lines: {"seq", "ts", "kind", "payload"}.
/// Every line is flushed as it is written.
class JsonlLogWriter final : public orch::RunObserver {
 public:
  /// `secret`, when non-empty, is scrubbed from every line before writing.
  JsonlLogWriter(const std::filesystem::path& path, const orch::RunConfig& config,
                 const agents::PromptTemplates& templates, std::string secret = {});

  void on_eval(const EvaluationRecord& record, const eval::EvalResult& result) override;
  void on_round_start(std::uint32_t round) override;
  void on_actor_proposal(std::uint32_t round, const agents::ProposedRegion& proposal,
                         const std::vector<llm::TranscriptEntry>& transcript) override;
  void on_critic_audit(std::uint32_t round, const agents::AuditResult& audit,
                       const std::vector<llm::TranscriptEntry>& transcript) override;
  void on_batch(std::uint32_t round, const Region& region, std::size_t size,
                bool model_based) override;
  void on_round_summary(const RoundSummary& summary) override;
  void on_agent_fallback(std::uint32_t round, std::string_view agent, std::string_view reason,
                         const std::vector<llm::TranscriptEntry>& transcript) override;
  void on_run_end(const orch::RunResult& result) override;

  /// Closing record for a run that threw.
  void write_abort(std::string_view error);

  std::uint64_t records_written() const { return seq_; }

 private:
  void write(std::string_view kind, json payload);

  std::ofstream out_;
  ParameterSpace space_;
  std::string secret_;
  std::uint64_t seq_ = 0;
};

struct ParsedLog {
  json config;  // config_snapshot payload's "config"
  json snapshot;
  std::vector<json> events;  // every parsed record in order
  std::vector<EvaluationRecord> records;
  std::vector<std::uint64_t> record_seq;  // log sequence number of each record
  std::size_t round_summaries = 0;
  bool complete = false;  // run_end with status ok was seen
  std::optional<std::string> warning;
};

/// Reads the longest valid prefix of a log. Throws ConfigError when the file
/// is missing or does not start with a config snapshot.
ParsedLog read_log(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// reports

json report_to_json(const metrics::MetricsReport& report, std::string_view mode);
/// One-row text table: top-k means, reliability rates, regret and regions.
std::string report_table(const metrics::MetricsReport& report, std::string_view mode);

/// Header: step,round,<parameter names>,fom,sim_valid,phys_feasible.
void write_cloud_csv(std::ostream& out, const std::vector<EvaluationRecord>& records,
                     const ParameterSpace& space);

/// RFC-4180 field quoting.
std::string csv_field(std::string_view text);

// ---------------------------------------------------------------------------
// commands

struct Streams {
  std::FILE* out = stdout;
  std::FILE* err = stderr;
};

struct RunOptions {
  std::filesystem::path log;     // default: <config stem>.jsonl in the working directory
  std::filesystem::path report;  // default: <log stem>.report.json
  std::filesystem::path table;   // default: <log stem>.table.txt
  bool quiet = false;
  /// Test hook: transport for LLM agents (default HttpTransport).
  std::shared_ptr<llm::Transport> transport;
  llm::Sleeper sleeper;
};

struct ReportOptions {
  std::optional<std::size_t> top_k;
  std::optional<std::size_t> min_cluster_size;
  std::optional<std::size_t> min_samples;
  std::optional<bool> include_seeding;
  std::filesystem::path out;    // default: <log stem>.report.json
  std::filesystem::path table;  // default: <log stem>.table.txt
};

/// Default report/table paths derived from a log path.
std::filesystem::path default_report_path(const std::filesystem::path& log);
std::filesystem::path default_table_path(const std::filesystem::path& log);

int cmd_run(const std::filesystem::path& config_path, const std::vector<std::string>& overrides,
            RunOptions options = {}, Streams io = {});
int cmd_report(const std::filesystem::path& log_path, const ReportOptions& options = {},
               Streams io = {});
int cmd_export_cloud(const std::filesystem::path& log_path, std::filesystem::path out = {},
                     Streams io = {});
int cmd_replay(const std::filesystem::path& log_path, const std::filesystem::path& config_path,
               const std::vector<std::string>& overrides = {}, Streams io = {});
int cmd_validate_config(const std::filesystem::path& config_path,
                        const std::vector<std::string>& overrides = {}, Streams io = {});

}  // namespace acof::cli
