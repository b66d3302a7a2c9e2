#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "acof/llmclient.hpp"
#include "acof/types.hpp"

namespace acof::agents {

struct ProposedRegion {
  Region region;  // unaudited
  std::string rationale;
};

struct Repair {
  std::string param;
  std::string reason;
};

struct AuditResult {
  bool approved_as_is = false;
  Region region;  // legal, every normalized width >= eps_min
  std::string memo;
  std::vector<Repair> repairs;
};

/// Evidence available to the agents at the start of a round.
struct AgentContext {
  const ParameterSpace* space = nullptr;
  SpecTargets targets;
  std::uint32_t round = 1;
  std::optional<RoundSummary> previous_summary;       // absent only in round 1
  std::vector<EvaluationRecord> calibration_records;  // round 1 only
  std::vector<std::string> accumulated_memos;         // oldest first
  /// Global best fom after each completed round (index 0 = seeding); absent
  /// when nothing valid had been found yet.
  std::vector<std::optional<double>> best_fom_history;

  void validate() const;
};

class Actor {
 public:
  virtual ~Actor() = default;
  /// Throws AgentFailure when no usable proposal could be produced.
  virtual ProposedRegion propose(const AgentContext& ctx) = 0;
  /// Transcript entries produced since the last call.
  virtual std::vector<llm::TranscriptEntry> drain_transcript() { return {}; }
};

class Critic {
 public:
  virtual ~Critic() = default;
  virtual AuditResult audit(const ProposedRegion& proposal, const AgentContext& ctx) = 0;
  virtual std::vector<llm::TranscriptEntry> drain_transcript() { return {}; }
};

// ---------------------------------------------------------------------------
// deterministic implementations

struct HeuristicActorOptions {
  std::size_t top_k = 10;
  double margin = 0.2;  // fraction of global width added per side
};

/// Bounding box of the top-k feasible designs, expanded by a margin. No
/// clamping: proposals may leave the legal domain.
class HeuristicActor final : public Actor {
 public:
  explicit HeuristicActor(HeuristicActorOptions options = {}) : options_(options) {}
  ProposedRegion propose(const AgentContext& ctx) override;

 private:
  HeuristicActorOptions options_;
};

struct HeuristicCriticOptions {
  double eps_min = 0.01;         // minimum normalized width
  double stagnation_tau = 0.01;  // minimum best-fom gain between rounds
};

/// True when the last completed round improved the global best by less
/// than tau (or nothing valid exists yet).
bool stagnation_fired(const AgentContext& ctx, double tau);

struct RepairOutcome {
  Region region;
  std::vector<Repair> repairs;
};

/// Legality pipeline shared by every audit path: NaN -> full range, swap
/// reversed pairs, clamp to bounds, optionally double widths about their
/// centers, then widen anything narrower than eps_min (shifted to stay
/// inside the bounds). Untouched dimensions are returned bit-identical.
RepairOutcome repair_region(const Region& proposal, const ParameterSpace& space, double eps_min,
                            bool widen);

class HeuristicCritic final : public Critic {
 public:
  explicit HeuristicCritic(HeuristicCriticOptions options = {}) : options_(options) {}
  AuditResult audit(const ProposedRegion& proposal, const AgentContext& ctx) override;

 private:
  HeuristicCriticOptions options_;
};

/// Round digest: global best, top-s of the round's feasible designs
/// (falling back to sim-valid ones), per-parameter stats over the round's
/// feasible designs and attempt counts.
RoundSummary summarize_round(std::uint32_t round, std::span<const EvaluationRecord> round_records,
                             std::span<const EvaluationRecord> all_records, std::string memo,
                             std::size_t s);

// ---------------------------------------------------------------------------
// prompts

/// Plain-text templates with {{name}} placeholders.
struct PromptTemplates {
  std::string actor_system;
  std::string actor_user;
  std::string critic_system;
  std::string critic_user;

  /// Templates compiled from the repository's prompts/ directory.
  static PromptTemplates defaults();
  /// Loads actor_system.txt, actor_user.txt, critic_system.txt and
  /// critic_user.txt from dir.
  static PromptTemplates load(const std::filesystem::path& dir);

  /// SHA-256 of each template, keyed by file name.
  std::map<std::string, std::string> hashes() const;
};

/// Replaces every {{key}}; throws TemplateError on an unknown placeholder.
std::string fill_template(const std::string& tmpl, const std::map<std::string, std::string>& values);

/// Four-significant-digit rendering used for every number in prompts.
std::string fmt4(double value);

struct PromptOptions {
  std::size_t memo_window = 5;
  std::size_t calibration_rows = 10;
};

std::vector<llm::Message> build_actor_prompt(const AgentContext& ctx, const PromptTemplates& t,
                                             const PromptOptions& options = {});
std::vector<llm::Message> build_critic_prompt(const ProposedRegion& proposal,
                                              const AgentContext& ctx, const PromptTemplates& t,
                                              const PromptOptions& options = {});

// ---------------------------------------------------------------------------
// response parsing

/// First top-level JSON object in text (prose and code fences tolerated).
/// Throws ParseError when none parses.
std::string extract_json_object(std::string_view text);

ProposedRegion parse_region_response(std::string_view text, const ParameterSpace& space);

struct AuditPayload {
  bool approved = false;
  Region corrected;  // unaudited until repaired
  std::string memo;
};

AuditPayload parse_audit_response(std::string_view text, const ParameterSpace& space);

// ---------------------------------------------------------------------------
// LLM-backed implementations

struct LlmAgentOptions {
  std::string model;
  double temperature = 0.2;
  int max_tokens = 2048;
  int max_retries = 2;  // extra attempts after a parse failure
  PromptOptions prompt;
};

class LlmActor final : public Actor {
 public:
  LlmActor(llm::ChatClient& client, PromptTemplates templates, LlmAgentOptions options);
  ProposedRegion propose(const AgentContext& ctx) override;
  std::vector<llm::TranscriptEntry> drain_transcript() override;

 private:
  llm::ChatClient& client_;
  PromptTemplates templates_;
  LlmAgentOptions options_;
  std::size_t call_start_ = 0;
};

class LlmCritic final : public Critic {
 public:
  LlmCritic(llm::ChatClient& client, PromptTemplates templates, LlmAgentOptions options,
            double eps_min = 0.01);
  /// Throws AgentFailure after exhausting parse retries or on transport errors.
  AuditResult audit(const ProposedRegion& proposal, const AgentContext& ctx) override;
  std::vector<llm::TranscriptEntry> drain_transcript() override;

 private:
  llm::ChatClient& client_;
  PromptTemplates templates_;
  LlmAgentOptions options_;
  double eps_min_;
  std::size_t call_start_ = 0;
};

}  // namespace acof::agents
