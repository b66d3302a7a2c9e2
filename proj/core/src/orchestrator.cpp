#include "acof/orchestrator.hpp"

#include <algorithm>
#include <chrono>
#include <future>

#include "acof/errors.hpp"
#include "acof/fom.hpp"
#include "acof/rng.hpp"

namespace acof::orch {

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::acof: return "acof";
    case Mode::single_llm: return "single_llm";
    case Mode::pure_bo: return "pure_bo";
  }
  return "acof";
}

Mode mode_from_string(std::string_view text) {
  if (text == "acof") return Mode::acof;
  if (text == "single_llm") return Mode::single_llm;
  if (text == "pure_bo") return Mode::pure_bo;
  throw ValidationError("unknown mode '" + std::string(text) +
                        "' (expected acof, single_llm or pure_bo)");
}

std::string_view to_string(AgentKind kind) {
  return kind == AgentKind::llm ? "llm" : "heuristic";
}

AgentKind agent_kind_from_string(std::string_view text) {
  if (text == "heuristic") return AgentKind::heuristic;
  if (text == "llm") return AgentKind::llm;
  throw ValidationError("unknown agent kind '" + std::string(text) + "' (expected heuristic or llm)");
}

void RunConfig::validate() const {
  if (space.dimension() == 0) throw ValidationError("space: no parameters");
  targets.validate();
  evaluator.validate();
  if (seed_budget < 2) throw ValidationError("seed_budget: must be >= 2");
  if (acquisition.batch_size < 1) throw ValidationError("acquisition.batch_size: must be >= 1");
  if (rounds > 0 && round_budget < acquisition.batch_size) {
    throw ValidationError("round_budget: must be >= acquisition.batch_size");
  }
  acquisition.validate();
  if (gp.max_points < 2 || gp.keep_best + gp.keep_recent < gp.max_points) {
    throw ValidationError("gp: max_points must be >= 2 and covered by keep_best + keep_recent");
  }
  if (parallel_evaluations < 1) throw ValidationError("parallel_evaluations: must be >= 1");
  if (!(agents.eps_min > 0.0 && agents.eps_min <= 1.0)) {
    throw ValidationError("agents.eps_min: must lie in (0, 1]");
  }
  if (agents.top_k < 1) throw ValidationError("agents.top_k: must be >= 1");
  if (!(agents.margin >= 0.0)) throw ValidationError("agents.margin: must be >= 0");
  if (agents.summary_size < 1) throw ValidationError("agents.summary_size: must be >= 1");
  if (agents.max_retries < 0) throw ValidationError("agents.max_retries: must be >= 0");
  if (metrics.top_k < 1) throw ValidationError("metrics.top_k: must be >= 1");
  metrics.hdbscan.validate();
  if (evaluator.kind == eval::EvaluatorKind::synthetic_opamp && space.dimension() < 3) {
    throw ValidationError("space: synthetic_opamp needs at least 3 parameters");
  }
}

std::size_t uniform_seed_count(const RunConfig& config) {
  const std::size_t q = config.acquisition.batch_size;
  return std::min(config.seed_budget, std::max<std::size_t>(2 * q, 20));
}

Region fallback_region(const std::optional<Region>& previous, const ParameterSpace& space) {
  return previous ? *previous : space.full_region();
}

namespace {

using Clock = std::chrono::steady_clock;

class Runner {
 public:
  Runner(const RunConfig& config, RunDependencies deps)
      : cfg_(config),
        deps_(std::move(deps)),
        seeding_rng_(config.seed, "seeding"),
        pool_rng_(config.seed, "pool"),
        heuristic_critic_({config.agents.eps_min, config.agents.stagnation_tau}) {}

  RunResult execute() {
    const auto start = Clock::now();
    prepare();
    seed();
    std::optional<Region> previous_region;
    std::optional<RoundSummary> previous_summary;
    std::vector<std::string> memos;
    std::vector<std::optional<double>> best_history{best_fom()};
    std::vector<EvaluationRecord> calibration = result_.records;

    for (std::uint32_t n = 1; n <= cfg_.rounds; ++n) {
      if (observer()) observer()->on_round_start(n);
      RoundRecord rr;
      rr.round = n;

      agents::AgentContext ctx;
      ctx.space = &cfg_.space;
      ctx.targets = cfg_.targets;
      ctx.round = n;
      ctx.previous_summary = previous_summary;
      if (n == 1) ctx.calibration_records = calibration;
      const std::size_t window = cfg_.agents.memo_window;
      ctx.accumulated_memos.assign(
          memos.end() - static_cast<std::ptrdiff_t>(std::min(window, memos.size())), memos.end());
      ctx.best_fom_history = best_history;

      std::string memo;
      if (cfg_.mode == Mode::pure_bo) {
        rr.region = cfg_.space.full_region();
      } else {
        rr.proposal = propose(ctx, previous_region);
        if (cfg_.mode == Mode::single_llm) {
          rr.region = degeneracy_floor(clip_region(rr.proposal->region, cfg_.space));
        } else {
          rr.audit = audit(*rr.proposal, ctx);
          rr.region = rr.audit->region;
          memo = rr.audit->memo;
        }
      }

      const std::size_t first = result_.records.size();
      search(n, rr.region, cfg_.round_budget);
      for (std::size_t i = first; i < result_.records.size(); ++i) {
        if (!region_contains(rr.region, result_.records[i].point)) {
          throw StructuralError("round " + std::to_string(n) + ": step " +
                                std::to_string(result_.records[i].step) +
                                " left the round's search region");
        }
      }

      std::span<const EvaluationRecord> all(result_.records);
      rr.summary = agents::summarize_round(n, all.subspan(first), all, memo,
                                           cfg_.agents.summary_size);
      if (observer()) observer()->on_round_summary(rr.summary);
      if (!memo.empty()) memos.push_back(memo);
      best_history.push_back(best_fom());
      previous_summary = rr.summary;
      previous_region = rr.region;
      result_.rounds.push_back(std::move(rr));
    }

    result_.report = metrics::compute_report(result_.records, cfg_.space, cfg_.metrics);
    result_.wall_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    if (observer()) observer()->on_run_end(result_);
    return std::move(result_);
  }

 private:
  RunObserver* observer() const { return deps_.observer; }

  void prepare() {
    cfg_.validate();
    if (!deps_.evaluator) deps_.evaluator = eval::make_evaluator(cfg_.evaluator, cfg_.space, cfg_.targets);
    if (cfg_.mode == Mode::pure_bo || cfg_.rounds == 0) return;
    if (cfg_.agents.kind == AgentKind::llm && (!deps_.actor || (cfg_.mode == Mode::acof && !deps_.critic))) {
      throw ConfigError("llm agents must be supplied by the caller");
    }
    if (!deps_.actor) {
      deps_.actor = std::make_shared<agents::HeuristicActor>(
          agents::HeuristicActorOptions{cfg_.agents.top_k, cfg_.agents.margin});
    }
    if (cfg_.mode == Mode::acof && !deps_.critic) {
      deps_.critic = std::make_shared<agents::HeuristicCritic>(
          agents::HeuristicCriticOptions{cfg_.agents.eps_min, cfg_.agents.stagnation_tau});
    }
  }

  std::optional<double> best_fom() const {
    std::optional<double> best;
    for (const auto& r : result_.records) {
      if (r.fom && (!best || *r.fom > *best)) best = r.fom;
    }
    return best;
  }

  void seed() {
    const Region full = cfg_.space.full_region();
    const std::size_t q = cfg_.acquisition.batch_size;
    const std::size_t uniform = uniform_seed_count(cfg_);
    while (result_.records.size() < uniform) {
      const std::size_t count = std::min(q, uniform - result_.records.size());
      if (observer()) observer()->on_batch(0, full, count, false);
      evaluate(bo::sample_uniform(full, cfg_.space, count, seeding_rng_), 0);
    }
    search(0, full, cfg_.seed_budget - uniform);
  }

  // BO inside region for `budget` evaluations in batches of q.
  void search(std::uint32_t round, const Region& region, std::size_t budget) {
    const std::size_t q = cfg_.acquisition.batch_size;
    for (std::size_t done = 0; done < budget;) {
      const std::size_t count = std::min(q, budget - done);
      auto batch = propose(region, count);
      if (observer()) observer()->on_batch(round, region, count, batch.second);
      evaluate(std::move(batch.first), round);
      done += count;
    }
  }

  std::pair<std::vector<DesignPoint>, bool> propose(const Region& region, std::size_t count) {
    std::vector<bo::Observation> obs;
    for (const auto& r : result_.records) {
      if (r.fom) {
        obs.push_back({cfg_.space.normalize(r.point), *r.fom});
      } else if (cfg_.penalize_invalid) {
        obs.push_back({cfg_.space.normalize(r.point), kFomFloor});
      }
    }
    if (obs.size() >= 2) {
      try {
        const auto model = bo::GpModel::fit(obs, cfg_.gp);
        auto params = cfg_.acquisition;
        params.batch_size = count;
        return {bo::propose_batch(model, region, cfg_.space, params, pool_rng_), true};
      } catch (const NumericalError&) {
        // fall through to uniform sampling
      }
    }
    return {bo::sample_uniform(region, cfg_.space, count, pool_rng_), false};
  }

  void evaluate(std::vector<DesignPoint> points, std::uint32_t round) {
    const auto start = Clock::now();
    const auto& evaluator = *deps_.evaluator;
    std::vector<eval::EvalResult> results(points.size());
    const std::size_t parallel = std::min(cfg_.parallel_evaluations, points.size());
    std::exception_ptr failure;
    std::size_t completed = 0;
    if (parallel <= 1) {
      for (; completed < points.size(); ++completed) {
        try {
          results[completed] = evaluator.run(points[completed]);
        } catch (...) {
          failure = std::current_exception();
          break;
        }
      }
    } else {
      for (std::size_t wave = 0; wave < points.size() && !failure; wave += parallel) {
        std::vector<std::future<eval::EvalResult>> futures;
        const std::size_t end = std::min(points.size(), wave + parallel);
        for (std::size_t i = wave; i < end; ++i) {
          futures.push_back(std::async(std::launch::async,
                                       [&evaluator, &p = points[i]] { return evaluator.run(p); }));
        }
        for (std::size_t i = wave; i < end; ++i) {
          try {
            results[i] = futures[i - wave].get();
            if (!failure) completed = i + 1;
          } catch (...) {
            if (!failure) failure = std::current_exception();
          }
        }
      }
    }
    result_.eval_seconds += std::chrono::duration<double>(Clock::now() - start).count();

    for (std::size_t i = 0; i < completed; ++i) {
      auto rec = EvaluationRecord::make(result_.records.size() + 1, round, std::move(points[i]),
                                        results[i].meas, cfg_.targets);
      if (observer()) observer()->on_eval(rec, results[i]);
      result_.records.push_back(std::move(rec));
    }
    if (failure) std::rethrow_exception(failure);
  }

  agents::ProposedRegion propose(const agents::AgentContext& ctx,
                                 const std::optional<Region>& previous) {
    auto& actor = *deps_.actor;
    try {
      auto proposal = actor.propose(ctx);
      if (observer()) observer()->on_actor_proposal(ctx.round, proposal, actor.drain_transcript());
      return proposal;
    } catch (const std::exception& e) {
      ++result_.agent_fallbacks;
      if (observer()) observer()->on_agent_fallback(ctx.round, "actor", e.what(), actor.drain_transcript());
      agents::ProposedRegion fallback{fallback_region(previous, cfg_.space),
                                      previous ? "fallback: previous round's region"
                                               : "fallback: full legal domain"};
      if (observer()) observer()->on_actor_proposal(ctx.round, fallback, {});
      return fallback;
    }
  }

  agents::AuditResult audit(const agents::ProposedRegion& proposal, const agents::AgentContext& ctx) {
    auto& critic = *deps_.critic;
    agents::AuditResult result;
    try {
      result = critic.audit(proposal, ctx);
      if (observer()) observer()->on_critic_audit(ctx.round, result, critic.drain_transcript());
    } catch (const std::exception& e) {
      ++result_.agent_fallbacks;
      if (observer()) observer()->on_agent_fallback(ctx.round, "critic", e.what(), critic.drain_transcript());
      result = heuristic_critic_.audit(proposal, ctx);
      if (observer()) observer()->on_critic_audit(ctx.round, result, {});
    }
    if (!is_legal(result.region, cfg_.space)) {
      throw StructuralError("critic returned an illegal region in round " + std::to_string(ctx.round));
    }
    return result;
  }

  // Single-LLM mode keeps the clipped proposal except for zero-width
  // dimensions, which are widened to eps_min so BO stays well-posed.
  Region degeneracy_floor(const Region& clipped) const {
    const auto repaired = agents::repair_region(clipped, cfg_.space, cfg_.agents.eps_min, false);
    Region out = clipped;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (!(clipped.ranges[i].hi > clipped.ranges[i].lo)) out.ranges[i] = repaired.region.ranges[i];
    }
    return out;
  }

  RunConfig cfg_;
  RunDependencies deps_;
  RandomStream seeding_rng_;
  RandomStream pool_rng_;
  agents::HeuristicCritic heuristic_critic_;
  RunResult result_;
};

}  // namespace

RunResult run(const RunConfig& config, RunDependencies deps) {
  return Runner(config, std::move(deps)).execute();
}

}  // namespace acof::orch
