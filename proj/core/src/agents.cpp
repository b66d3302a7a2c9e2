#include "acof/agents.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "acof/digest.hpp"
#include "acof/errors.hpp"

namespace acof::agents {

using nlohmann::json;

void AgentContext::validate() const {
  if (space == nullptr) throw ValidationError("agent context has no parameter space");
  if (round < 1) throw ValidationError("agent context round must be >= 1");
  if ((round == 1) != !previous_summary.has_value()) {
    throw ValidationError("previous summary must be absent exactly in round 1");
  }
}

// ---------------------------------------------------------------------------
// heuristic actor

ProposedRegion HeuristicActor::propose(const AgentContext& ctx) {
  ctx.validate();
  const ParameterSpace& space = *ctx.space;

  std::vector<const EvaluationRecord*> chosen;
  std::string source;
  if (ctx.round == 1) {
    std::vector<const EvaluationRecord*> pool;
    for (const auto& r : ctx.calibration_records) {
      if (r.phys_feasible) pool.push_back(&r);
    }
    if (pool.empty()) {
      for (const auto& r : ctx.calibration_records) {
        if (r.fom) pool.push_back(&r);
      }
    }
    std::stable_sort(pool.begin(), pool.end(),
                     [](const auto* a, const auto* b) { return ranks_before(*a, *b); });
    pool.resize(std::min(pool.size(), options_.top_k));
    chosen = std::move(pool);
    source = "calibration designs";
  } else {
    const auto& summary = *ctx.previous_summary;
    for (const auto& r : summary.top_records) {
      if (chosen.size() == options_.top_k) break;
      chosen.push_back(&r);
    }
    if (chosen.empty() && summary.best_record) chosen.push_back(&*summary.best_record);
    source = "designs of round " + std::to_string(summary.round);
  }

  ProposedRegion out;
  if (chosen.empty()) {
    out.region = space.full_region();
    out.rationale = "No valid evidence yet; searching the full legal domain.";
    return out;
  }

  const std::size_t d = space.dimension();
  out.region.ranges.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (const auto* r : chosen) {
      const double z = space.to_unit(i, r->point.values[i]);
      lo = std::min(lo, z);
      hi = std::max(hi, z);
    }
    out.region.ranges[i] = {space.to_native(i, lo - options_.margin),
                            space.to_native(i, hi + options_.margin)};
  }
  std::ostringstream os;
  os << "Bounding box of the top " << chosen.size() << " " << source << " (best fom "
     << fmt4(*chosen.front()->fom) << "), expanded by " << fmt4(options_.margin)
     << " of each global range per side.";
  out.rationale = os.str();
  return out;
}

// ---------------------------------------------------------------------------
// heuristic critic

bool stagnation_fired(const AgentContext& ctx, double tau) {
  const auto& h = ctx.best_fom_history;
  if (h.size() < 2) return false;
  const auto& last = h[h.size() - 1];
  const auto& prev = h[h.size() - 2];
  if (!last) return true;
  if (!prev) return false;
  return *last - *prev < tau;
}

RepairOutcome repair_region(const Region& proposal, const ParameterSpace& space, double eps_min,
                            bool widen) {
  space.check_dimension(proposal.size(), "proposal");
  if (!(eps_min > 0.0 && eps_min <= 1.0)) throw DomainError("eps_min must lie in (0, 1]");
  // Widen slightly past eps_min so the width survives the native round trip.
  const double target_width = std::min(1.0, eps_min * (1.0 + 1e-6));

  RepairOutcome out;
  out.region = proposal;
  for (std::size_t i = 0; i < proposal.size(); ++i) {
    const auto& p = space[i];
    Interval r = proposal.ranges[i];
    std::vector<std::string> reasons;

    if (std::isnan(r.lo) || std::isnan(r.hi)) {
      r = {p.lower, p.upper};
      reasons.emplace_back("non-numeric bound replaced by the legal range");
    }
    if (r.lo > r.hi) {
      std::swap(r.lo, r.hi);
      reasons.emplace_back("reversed bounds swapped");
    }
    if (r.lo < p.lower || r.hi > p.upper) {
      r.lo = std::clamp(r.lo, p.lower, p.upper);
      r.hi = std::clamp(r.hi, p.lower, p.upper);
      reasons.emplace_back("clipped to legal bounds");
    }

    Interval u = space.unit_interval(i, r);
    bool unit_changed = false;
    if (widen) {
      const double c = 0.5 * (u.lo + u.hi);
      const double w = 2.0 * (u.hi - u.lo);
      u = {std::max(0.0, c - 0.5 * w), std::min(1.0, c + 0.5 * w)};
      unit_changed = true;
      reasons.emplace_back("width doubled after stagnation");
    }
    if (!(u.hi - u.lo >= eps_min)) {
      const double c = 0.5 * (u.lo + u.hi);
      u = {c - 0.5 * target_width, c + 0.5 * target_width};
      if (u.lo < 0.0) u = {0.0, target_width};
      if (u.hi > 1.0) u = {1.0 - target_width, 1.0};
      unit_changed = true;
      reasons.emplace_back("widened to the minimum width");
    }
    if (unit_changed) {
      r.lo = std::clamp(space.to_native(i, u.lo), p.lower, p.upper);
      r.hi = std::clamp(space.to_native(i, u.hi), p.lower, p.upper);
    }

    if (!reasons.empty()) {
      std::string joined;
      for (const auto& s : reasons) joined += (joined.empty() ? "" : "; ") + s;
      out.repairs.push_back({p.name, std::move(joined)});
      out.region.ranges[i] = r;
    }
  }
  return out;
}

AuditResult HeuristicCritic::audit(const ProposedRegion& proposal, const AgentContext& ctx) {
  ctx.validate();
  const bool stagnant = stagnation_fired(ctx, options_.stagnation_tau);
  auto repaired = repair_region(proposal.region, *ctx.space, options_.eps_min, stagnant);

  AuditResult result;
  result.region = std::move(repaired.region);
  result.repairs = std::move(repaired.repairs);
  result.approved_as_is = result.repairs.empty();

  std::ostringstream memo;
  memo << "Round " << ctx.round << ": ";
  if (result.approved_as_is) {
    memo << "proposal approved as-is.";
  } else {
    if (stagnant) {
      memo << "best fom stalled (improvement below " << fmt4(options_.stagnation_tau)
           << "), every range widened 2x about its center. ";
    }
    std::size_t legality = 0;
    for (const auto& r : result.repairs) {
      if (r.reason != "width doubled after stagnation") ++legality;
    }
    if (legality > 0) {
      memo << "repaired " << legality << " range(s):";
      std::size_t shown = 0;
      for (const auto& r : result.repairs) {
        if (r.reason == "width doubled after stagnation") continue;
        if (shown++ == 6) {
          memo << " ...";
          break;
        }
        memo << " " << r.param << " (" << r.reason << ")";
      }
      memo << ".";
    }
  }
  result.memo = memo.str();
  return result;
}

// ---------------------------------------------------------------------------
// summaries

RoundSummary summarize_round(std::uint32_t round, std::span<const EvaluationRecord> round_records,
                             std::span<const EvaluationRecord> all_records, std::string memo,
                             std::size_t s) {
  if (round_records.empty()) throw StructuralError("summarize_round: empty round");
  RoundSummary out;
  out.round = round;
  out.critic_memo = std::move(memo);

  for (const auto& r : all_records) {
    if (!r.fom) continue;
    if (!out.best_record || ranks_before(r, *out.best_record)) out.best_record = r;
  }

  std::vector<const EvaluationRecord*> feasible, valid;
  for (const auto& r : round_records) {
    ++out.counts.attempted;
    if (r.meas.sim_valid) {
      ++out.counts.sim_valid;
      valid.push_back(&r);
    }
    if (r.phys_feasible) {
      ++out.counts.phys_feasible;
      feasible.push_back(&r);
    }
  }

  auto ranked = feasible.empty() ? valid : feasible;
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto* a, const auto* b) { return ranks_before(*a, *b); });
  for (std::size_t i = 0; i < std::min(s, ranked.size()); ++i) out.top_records.push_back(*ranked[i]);

  if (!feasible.empty()) {
    const std::size_t d = feasible.front()->point.size();
    out.stats.assign(d, {std::numeric_limits<double>::infinity(),
                         -std::numeric_limits<double>::infinity(), 0.0});
    for (const auto* r : feasible) {
      for (std::size_t i = 0; i < d; ++i) {
        const double v = r->point.values[i];
        out.stats[i].min = std::min(out.stats[i].min, v);
        out.stats[i].max = std::max(out.stats[i].max, v);
        out.stats[i].mean += v;
      }
    }
    for (auto& st : out.stats) st.mean /= static_cast<double>(feasible.size());
  }
  return out;
}

// ---------------------------------------------------------------------------
// prompts

namespace {

#include "acof_prompt_defaults.inc"

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read prompt template " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string render_x(const DesignPoint& p) {
  std::string out = "[";
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    if (i) out += ", ";
    out += fmt4(p.values[i]);
  }
  return out + "]";
}

std::string render_design(const EvaluationRecord& r) {
  std::ostringstream os;
  os << "step " << r.step << ": x=" << render_x(r.point);
  if (r.meas.sim_valid) {
    os << " gain=" << fmt4(r.meas.gain_db) << " dB, ugbw=" << fmt4(r.meas.ugbw_hz)
       << " Hz, pm=" << fmt4(r.meas.pm_deg) << " deg, power=" << fmt4(r.meas.power_w)
       << " W, fom=" << fmt4(*r.fom);
  } else {
    os << " (simulation invalid)";
  }
  return os.str();
}

std::string parameter_table(const ParameterSpace& space) {
  std::ostringstream os;
  for (const auto& p : space.params()) {
    os << p.name << " | " << (p.unit.empty() ? "-" : p.unit) << " | [" << fmt4(p.lower) << ", "
       << fmt4(p.upper) << "] | " << to_string(p.scale) << "\n";
  }
  std::string s = os.str();
  if (!s.empty()) s.pop_back();
  return s;
}

std::string targets_line(const SpecTargets& t) {
  return "gain >= " + fmt4(t.gain_db) + " dB, UGBW >= " + fmt4(t.ugbw_hz) +
         " Hz, phase margin >= " + fmt4(t.pm_deg) + " deg, power <= " + fmt4(t.power_w) + " W";
}

std::string evidence_block(const AgentContext& ctx, const PromptOptions& options) {
  std::ostringstream os;
  if (!ctx.previous_summary) {
    std::vector<const EvaluationRecord*> ranked;
    for (const auto& r : ctx.calibration_records) {
      if (r.fom) ranked.push_back(&r);
    }
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto* a, const auto* b) { return ranks_before(*a, *b); });
    const std::size_t n = std::min(options.calibration_rows, ranked.size());
    os << "Calibration designs (best " << n << " of " << ctx.calibration_records.size()
       << " seed evaluations by fom; x in parameter-table order):";
    for (std::size_t i = 0; i < n; ++i) os << "\n" << render_design(*ranked[i]);
    if (n == 0) os << "\n(no valid calibration design)";
    return os.str();
  }
  const auto& s = *ctx.previous_summary;
  os << "Summary of round " << s.round << ": attempted " << s.counts.attempted << ", sim-valid "
     << s.counts.sim_valid << ", physically feasible " << s.counts.phys_feasible << ".\n";
  os << "Best design so far: "
     << (s.best_record ? render_design(*s.best_record) : std::string("none")) << "\n";
  os << "Strongest designs of round " << s.round << " (x in parameter-table order):";
  for (const auto& r : s.top_records) os << "\n" << render_design(r);
  if (s.top_records.empty()) os << "\n(none valid)";
  if (!s.stats.empty()) {
    os << "\nFeasible-design statistics per parameter, table order (min / max / mean):";
    for (std::size_t i = 0; i < s.stats.size(); ++i) {
      os << "\n#" << (i + 1) << ": " << fmt4(s.stats[i].min) << " / " << fmt4(s.stats[i].max)
         << " / " << fmt4(s.stats[i].mean);
    }
  }
  return os.str();
}

std::string memo_block(const AgentContext& ctx, std::size_t window) {
  const auto& m = ctx.accumulated_memos;
  const std::size_t first = m.size() > window ? m.size() - window : 0;
  std::string out;
  for (std::size_t i = first; i < m.size(); ++i) {
    if (!out.empty()) out += "\n";
    out += "- " + m[i];
  }
  return out.empty() ? "(none)" : out;
}

}  // namespace

PromptTemplates PromptTemplates::defaults() {
  return {kDefaultActorSystem, kDefaultActorUser, kDefaultCriticSystem, kDefaultCriticUser};
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& dir) {
  return {read_text(dir / "actor_system.txt"), read_text(dir / "actor_user.txt"),
          read_text(dir / "critic_system.txt"), read_text(dir / "critic_user.txt")};
}

std::map<std::string, std::string> PromptTemplates::hashes() const {
  return {{"actor_system.txt", sha256_hex(actor_system)},
          {"actor_user.txt", sha256_hex(actor_user)},
          {"critic_system.txt", sha256_hex(critic_system)},
          {"critic_user.txt", sha256_hex(critic_user)}};
}

std::string fill_template(const std::string& tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t pos = 0;
  for (;;) {
    const auto open = tmpl.find("{{", pos);
    if (open == std::string::npos) {
      out.append(tmpl, pos, std::string::npos);
      return out;
    }
    out.append(tmpl, pos, open - pos);
    const auto close = tmpl.find("}}", open + 2);
    const std::string key =
        tmpl.substr(open + 2, close == std::string::npos ? std::string::npos : close - open - 2);
    const auto it = values.find(key);
    if (close == std::string::npos || it == values.end()) {
      throw TemplateError(key, "unknown prompt placeholder: " + key);
    }
    out += it->second;
    pos = close + 2;
  }
}

std::string fmt4(double value) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.4g", value);
  return buf;
}

std::vector<llm::Message> build_actor_prompt(const AgentContext& ctx, const PromptTemplates& t,
                                             const PromptOptions& options) {
  ctx.validate();
  const std::map<std::string, std::string> values{
      {"round", std::to_string(ctx.round)},
      {"parameter_table", parameter_table(*ctx.space)},
      {"targets", targets_line(ctx.targets)},
      {"evidence", evidence_block(ctx, options)},
      {"memos", memo_block(ctx, options.memo_window)},
  };
  return {{llm::Role::system, fill_template(t.actor_system, values)},
          {llm::Role::user, fill_template(t.actor_user, values)}};
}

std::vector<llm::Message> build_critic_prompt(const ProposedRegion& proposal,
                                              const AgentContext& ctx, const PromptTemplates& t,
                                              const PromptOptions& options) {
  ctx.validate();
  const auto& space = *ctx.space;
  space.check_dimension(proposal.region.size(), "proposal");
  std::ostringstream prop;
  for (std::size_t i = 0; i < space.dimension(); ++i) {
    prop << space[i].name << ": [" << fmt4(proposal.region.ranges[i].lo) << ", "
         << fmt4(proposal.region.ranges[i].hi) << "]\n";
  }
  prop << "Rationale: " << (proposal.rationale.empty() ? "(none)" : proposal.rationale);
  const std::map<std::string, std::string> values{
      {"round", std::to_string(ctx.round)},
      {"parameter_table", parameter_table(space)},
      {"targets", targets_line(ctx.targets)},
      {"proposal", prop.str()},
      {"evidence", evidence_block(ctx, options)},
      {"memos", memo_block(ctx, options.memo_window)},
  };
  return {{llm::Role::system, fill_template(t.critic_system, values)},
          {llm::Role::user, fill_template(t.critic_user, values)}};
}

// ---------------------------------------------------------------------------
// parsing

std::string extract_json_object(std::string_view text) {
  for (std::size_t start = text.find('{'); start != std::string_view::npos;
       start = text.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') ++depth;
      else if (c == '}' && --depth == 0) {
        const auto candidate = text.substr(start, i - start + 1);
        if (json::accept(candidate)) return std::string(candidate);
        break;
      }
    }
  }
  throw ParseError("no JSON object found");
}

namespace {

Region parse_ranges(const json& doc, const char* key, const ParameterSpace& space) {
  if (!doc.contains(key)) throw ParseError(std::string("missing: ") + key);
  const auto& ranges = doc.at(key);
  if (!ranges.is_object()) throw ParseError(std::string(key) + " is not an object");
  Region region;
  region.ranges.reserve(space.dimension());
  for (const auto& p : space.params()) {
    if (!ranges.contains(p.name)) throw ParseError("missing: " + p.name);
    const auto& pair = ranges.at(p.name);
    if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number() || !pair[1].is_number()) {
      throw ParseError("non-numeric range for " + p.name);
    }
    region.ranges.push_back({pair[0].get<double>(), pair[1].get<double>()});
  }
  return region;
}

}  // namespace

ProposedRegion parse_region_response(std::string_view text, const ParameterSpace& space) {
  const auto doc = json::parse(extract_json_object(text));
  ProposedRegion out;
  out.region = parse_ranges(doc, "ranges", space);
  if (doc.contains("rationale") && doc["rationale"].is_string()) {
    out.rationale = doc["rationale"].get<std::string>();
  }
  return out;
}

AuditPayload parse_audit_response(std::string_view text, const ParameterSpace& space) {
  const auto doc = json::parse(extract_json_object(text));
  AuditPayload out;
  if (!doc.contains("approved")) throw ParseError("missing: approved");
  if (!doc["approved"].is_boolean()) throw ParseError("approved is not a boolean");
  if (!doc.contains("memo")) throw ParseError("missing: memo");
  if (!doc["memo"].is_string()) throw ParseError("memo is not a string");
  out.approved = doc["approved"].get<bool>();
  out.memo = doc["memo"].get<std::string>();
  out.corrected = parse_ranges(doc, "corrected_ranges", space);
  return out;
}

// ---------------------------------------------------------------------------
// LLM-backed agents

namespace {

constexpr const char* kRetryInstruction =
    "Your previous reply could not be used (%s). Reply again with only the JSON object "
    "described above, covering every parameter.";

template <typename Parse>
auto ask_with_retries(llm::ChatClient& client, std::vector<llm::Message> messages,
                      const LlmAgentOptions& options, const char* role, Parse parse) {
  std::string last_raw;
  std::string last_reason;
  for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
    llm::ChatRequest req{options.model, messages, options.temperature, options.max_tokens};
    std::string raw;
    try {
      raw = client.complete(req);
    } catch (const TransportError& e) {
      throw AgentFailure(std::string(role) + " transport failure: " + e.what(), last_raw);
    }
    try {
      return parse(raw);
    } catch (const ParseError& e) {
      last_raw = raw;
      last_reason = e.what();
    } catch (const json::exception& e) {
      last_raw = raw;
      last_reason = e.what();
    }
    client.record_parse_retry(req, last_raw, last_reason);
    char buf[512];
    std::snprintf(buf, sizeof buf, kRetryInstruction, last_reason.c_str());
    messages.push_back({llm::Role::assistant, last_raw});
    messages.push_back({llm::Role::user, buf});
  }
  throw AgentFailure(std::string(role) + " reply unusable after " +
                         std::to_string(options.max_retries + 1) + " attempts: " + last_reason,
                     last_raw);
}

std::vector<llm::TranscriptEntry> drain_from(const llm::ChatClient& client, std::size_t& mark) {
  const auto& entries = client.transcript().entries();
  const auto first = static_cast<std::ptrdiff_t>(std::min(mark, entries.size()));
  std::vector<llm::TranscriptEntry> out(entries.begin() + first, entries.end());
  mark = entries.size();
  return out;
}

}  // namespace

LlmActor::LlmActor(llm::ChatClient& client, PromptTemplates templates, LlmAgentOptions options)
    : client_(client), templates_(std::move(templates)), options_(std::move(options)) {}

ProposedRegion LlmActor::propose(const AgentContext& ctx) {
  call_start_ = client_.transcript().size();
  auto messages = build_actor_prompt(ctx, templates_, options_.prompt);
  return ask_with_retries(client_, std::move(messages), options_, "actor",
                          [&](const std::string& raw) { return parse_region_response(raw, *ctx.space); });
}

std::vector<llm::TranscriptEntry> LlmActor::drain_transcript() {
  return drain_from(client_, call_start_);
}

LlmCritic::LlmCritic(llm::ChatClient& client, PromptTemplates templates, LlmAgentOptions options,
                     double eps_min)
    : client_(client), templates_(std::move(templates)), options_(std::move(options)), eps_min_(eps_min) {}

AuditResult LlmCritic::audit(const ProposedRegion& proposal, const AgentContext& ctx) {
  call_start_ = client_.transcript().size();
  const auto& space = *ctx.space;
  auto messages = build_critic_prompt(proposal, ctx, templates_, options_.prompt);
  const auto payload = ask_with_retries(
      client_, std::move(messages), options_, "critic",
      [&](const std::string& raw) { return parse_audit_response(raw, space); });

  auto repaired = repair_region(payload.corrected, space, eps_min_, false);
  AuditResult result;
  result.region = std::move(repaired.region);
  result.memo = payload.memo;
  for (std::size_t i = 0; i < space.dimension(); ++i) {
    std::string reason;
    if (!(payload.corrected.ranges[i] == proposal.region.ranges[i])) reason = "critic correction";
    for (const auto& r : repaired.repairs) {
      if (r.param == space[i].name) reason += (reason.empty() ? "" : "; ") + r.reason;
    }
    if (reason.empty() && !(result.region.ranges[i] == proposal.region.ranges[i])) {
      reason = "critic correction";
    }
    if (!reason.empty()) result.repairs.push_back({space[i].name, std::move(reason)});
  }
  result.approved_as_is = result.repairs.empty();
  return result;
}

std::vector<llm::TranscriptEntry> LlmCritic::drain_transcript() {
  return drain_from(client_, call_start_);
}

}  // namespace acof::agents
