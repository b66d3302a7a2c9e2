#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "acof/agents.hpp"
#include "acof/bayesopt.hpp"
#include "acof/evaluators.hpp"
#include "acof/metrics.hpp"
#include "acof/types.hpp"

namespace acof::orch {

enum class Mode { acof, single_llm, pure_bo };

std::string_view to_string(Mode mode);
Mode mode_from_string(std::string_view text);

enum class AgentKind { heuristic, llm };

std::string_view to_string(AgentKind kind);
AgentKind agent_kind_from_string(std::string_view text);

struct LlmSettings {
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-4o-mini";
  double temperature = 0.2;
  int max_tokens = 2048;
  double timeout_s = 120.0;
  int max_attempts = 3;
  std::filesystem::path templates_dir;  // empty = built-in templates
};

struct AgentSettings {
  AgentKind kind = AgentKind::heuristic;
  std::size_t top_k = 10;
  double margin = 0.2;
  double eps_min = 0.01;
  double stagnation_tau = 0.01;
  std::size_t memo_window = 5;
  std::size_t summary_size = 10;
  int max_retries = 2;
  LlmSettings llm;
};

struct RunConfig {
  Mode mode = Mode::acof;
  ParameterSpace space;
  SpecTargets targets;
  eval::EvaluatorSpec evaluator;
  std::size_t seed_budget = 200;
  std::size_t round_budget = 100;
  std::size_t rounds = 3;
  bo::AcquisitionParams acquisition;
  bo::FitOptions gp;
  /// Train the GP on invalid attempts too, scored at the fom floor.
  bool penalize_invalid = false;
  AgentSettings agents;
  std::uint64_t seed = 0;
  std::size_t parallel_evaluations = 1;
  metrics::MetricsOptions metrics;

  /// Throws ValidationError naming the offending field.
  void validate() const;
  std::size_t total_budget() const { return seed_budget + rounds * round_budget; }
};

/// Number of uniform draws that open the seeding phase.
std::size_t uniform_seed_count(const RunConfig& config);

/// The previous round's legal region if known, else the full domain.
Region fallback_region(const std::optional<Region>& previous, const ParameterSpace& space);

struct RoundRecord {
  std::uint32_t round = 0;
  std::optional<agents::ProposedRegion> proposal;  // absent in pure_bo
  std::optional<agents::AuditResult> audit;        // acof only
  Region region;                                   // where BO sampled
  RoundSummary summary;
};

struct RunResult {
  std::vector<EvaluationRecord> records;
  std::vector<RoundRecord> rounds;
  metrics::MetricsReport report;
  double wall_seconds = 0.0;
  double eval_seconds = 0.0;
  std::size_t agent_fallbacks = 0;
};

/// Progress events in the order they happen. Every method has an empty
/// default so observers override only what they need.
class RunObserver {
 public:
  virtual ~RunObserver() = default;
  virtual void on_eval(const EvaluationRecord&, const eval::EvalResult&) {}
  virtual void on_round_start(std::uint32_t /*round*/) {}
  virtual void on_actor_proposal(std::uint32_t, const agents::ProposedRegion&,
                                 const std::vector<llm::TranscriptEntry>&) {}
  virtual void on_critic_audit(std::uint32_t, const agents::AuditResult&,
                               const std::vector<llm::TranscriptEntry>&) {}
  virtual void on_batch(std::uint32_t /*round*/, const Region& /*region*/,
                        std::size_t /*size*/, bool /*model_based*/) {}
  virtual void on_round_summary(const RoundSummary&) {}
  virtual void on_agent_fallback(std::uint32_t, std::string_view /*agent*/,
                                 std::string_view /*reason*/,
                                 const std::vector<llm::TranscriptEntry>&) {}
  virtual void on_run_end(const RunResult&) {}
};

/// Collaborators the run needs beyond its configuration. Null members are
/// built from the config (heuristic agents, make_evaluator).
struct RunDependencies {
  std::shared_ptr<const eval::Evaluator> evaluator;
  std::shared_ptr<agents::Actor> actor;
  std::shared_ptr<agents::Critic> critic;
  RunObserver* observer = nullptr;
};

/// Seeds with pure BO over the full domain, then alternates proposal,
/// audit, region-restricted BO and summary for `rounds` rounds.
RunResult run(const RunConfig& config, RunDependencies deps = {});

}  // namespace acof::orch
