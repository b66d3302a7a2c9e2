// Runs every acceptance criterion and prints one PASS/FAIL line each.
// Exits 1 when any criterion fails.

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "acof/agents.hpp"
#include "acof/bayesopt.hpp"
#include "acof/cli.hpp"
#include "acof/fom.hpp"
#include "acof/llmclient.hpp"
#include "acof/metrics.hpp"
#include "acof/orchestrator.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace acof;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using Points = std::vector<std::vector<double>>;

/// Outcome of one criterion: pass flag plus a short detail line.
struct Verdict {
  bool pass = true;
  std::string detail;

  void fail(const std::string& why) {
    if (pass) detail = why;
    pass = false;
  }
  void check(bool ok, const std::string& why) {
    if (!ok) fail(why);
  }
};

fs::path config_path(const std::string& name) { return fs::path(ACOF_SOURCE_DIR) / "configs" / name; }

std::FILE* null_stream() {
  static std::FILE* f = std::fopen("/dev/null", "w");
  return f;
}

cli::Streams silent() { return {null_stream(), null_stream()}; }

cli::RunOptions quiet_to(const fs::path& log) {
  cli::RunOptions o;
  o.log = log;
  o.quiet = true;
  return o;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) {
    if (!l.empty() && l.back() == '\r') l.pop_back();
    out.push_back(l);
  }
  return out;
}

std::vector<json> events_of(const fs::path& log) {
  std::vector<json> out;
  for (const auto& l : lines_of(testutil::slurp(log))) {
    if (!l.empty()) out.push_back(json::parse(l));
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

Points blobs(const Points& centers, std::size_t per_blob, double sigma, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> g(0.0, sigma);
  Points out;
  for (const auto& c : centers) {
    for (std::size_t i = 0; i < per_blob; ++i) {
      auto p = c;
      for (auto& v : p) v += g(gen);
      out.push_back(p);
    }
  }
  return out;
}

std::vector<int> canonical(const std::vector<int>& labels) {
  std::map<int, int> ids;
  std::vector<int> out;
  for (int l : labels) {
    if (l < 0) {
      out.push_back(-1);
      continue;
    }
    auto [it, _] = ids.try_emplace(l, static_cast<int>(ids.size()));
    out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------

Verdict ac1_fom_at_target() {
  Verdict v;
  const SpecTargets rows[] = {
      {85.0, 900e6, 100.0, 0.554e-3},
      {95.0, 500e6, 100.0, 0.194e-3},
      {85.0, 20e6, 100.0, 0.277e-3},
      {85.0, 1200e6, 120.0, 1.320e-3},
  };
  for (const auto& t : rows) {
    const Measurements m{t.gain_db, t.ugbw_hz, t.pm_deg, t.power_w, true};
    const double f = compute_fom(m, t).total;
    v.check(f == 0.0, "fom " + fmt(f) + " at gain target " + fmt(t.gain_db));
  }
  if (v.pass) v.detail = "fom == 0 exactly for 4 target rows";
  return v;
}

Verdict ac2_gp_oracle() {
  Verdict v;
  std::mt19937_64 gen(4242);
  std::uniform_real_distribution<double> u(0.0, 1.0), ls(0.1, 2.0);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 2 + trial % 7, d = 1 + trial % 4;
    std::vector<bo::Observation> obs(n);
    for (auto& o : obs) {
      o.z.resize(d);
      for (auto& z : o.z) z = u(gen);
      o.value = -3.0 * u(gen);
    }
    Points x;
    std::vector<double> y;
    for (const auto& o : obs) {
      x.push_back(o.z);
      y.push_back(o.value);
    }
    // Alternate fixed kernels with fitted ones so both build paths are covered.
    const bool fitted = trial % 2 == 1;
    bo::Kernel k{0.2 + 3 * u(gen), {}, 1e-4 + 1e-2 * u(gen)};
    for (std::size_t j = 0; j < d; ++j) k.lengthscales.push_back(ls(gen));
    const auto m = fitted ? bo::GpModel::fit(obs) : bo::GpModel::fit_with_kernel(obs, k);
    const auto& mk = m.kernel();
    for (int q = 0; q < 5; ++q) {
      std::vector<double> z(d);
      for (auto& c : z) c = u(gen);
      const auto p = m.predict(z);
      const auto ref = oracle::dense_gp(x, y, mk.signal_variance, mk.lengthscales, mk.noise_variance, z,
                                        m.target_scale());
      worst = std::max({worst, std::abs(p.mean - ref.mean), std::abs(p.variance - ref.variance)});
    }
  }
  v.check(worst <= 1e-8, "max abs deviation " + fmt(worst));
  if (v.pass) v.detail = "50 instances, max abs deviation " + fmt(worst);
  return v;
}

Verdict ac3_ei_oracle() {
  Verdict v;
  const double f_best = -1.0, xi = 0.0;
  std::uint64_t seed = 77;
  int cases = 0;
  for (double gap : {-1.0, -0.3, 0.0, 0.3, 1.0}) {
    for (double sigma : {0.05, 0.2, 0.5, 1.0, 2.0}) {
      const double mean = f_best + gap;
      const double ei = bo::expected_improvement(mean, sigma * sigma, f_best, xi);
      const double mc = oracle::mc_expected_improvement(mean, sigma, f_best, xi, 1'000'000, seed++);
      const bool ok = ei < 5e-3 ? std::abs(ei - mc) <= 1e-4 : std::abs(ei - mc) <= 0.02 * std::abs(mc);
      v.check(ok, "gap " + fmt(gap) + " sigma " + fmt(sigma) + ": ei " + fmt(ei) + " mc " + fmt(mc));
      ++cases;
    }
  }
  if (v.pass) v.detail = std::to_string(cases) + " grid points within tolerance";
  return v;
}

Verdict ac4_hdbscan() {
  Verdict v;
  using metrics::hdbscan;

  // (a) three well separated blobs
  const auto pts = blobs({{0.2, 0.2, 0.2}, {0.8, 0.2, 0.5}, {0.5, 0.8, 0.8}}, 50, 0.02, 5);
  std::vector<EvaluationRecord> recs;
  for (std::size_t i = 0; i < pts.size(); ++i) recs.push_back(testutil::invalid_record(i + 1, 0, pts[i]));
  const auto regions = metrics::count_regions(recs, testutil::unit_space(3));
  v.check(regions == 3, "three blobs gave " + std::to_string(regions) + " regions");

  // (b) random small instances against the brute-force oracle
  std::mt19937_64 gen(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int partitions = 0;
  for (int inst = 0; inst < 20; ++inst) {
    const std::size_t n = 8 + gen() % 23;
    const std::size_t d = 1 + gen() % 3;
    const std::size_t mcs = 2 + gen() % 4;
    const std::size_t ms = 1 + gen() % 4;
    const std::size_t groups = 1 + gen() % 3;
    Points centers(groups, std::vector<double>(d));
    for (auto& c : centers) for (auto& x : c) x = u(gen);
    std::normal_distribution<double> g(0.0, 0.05);
    Points p;
    for (std::size_t i = 0; i < n; ++i) {
      auto q = centers[i % groups];
      for (auto& x : q) x += g(gen);
      p.push_back(q);
    }
    const auto got = hdbscan(p, {mcs, ms});
    const auto want = oracle::hdbscan(p, mcs, ms);
    const std::string tag = "instance " + std::to_string(inst) + ": ";
    if (got.tree.size() != want.tree.size()) {
      v.fail(tag + "condensed tree size differs");
      continue;
    }
    double total = 0.0;
    for (int c : got.selected) total += got.tree[c].stability;
    v.check(std::abs(total - want.selected_stability) <= 1e-9 * (1 + total), tag + "selected stability differs");
    if (want.unique_optimum) {
      v.check(canonical(got.labels) == canonical(want.labels), tag + "labels differ");
      ++partitions;
    }
  }
  v.check(partitions >= 15, "only " + std::to_string(partitions) + " instances had a unique optimum");

  // (c) fewer points than the minimum cluster size
  const auto few = blobs({{0.5, 0.5}}, 5, 0.02, 8);
  const auto r = hdbscan(few, {10, 5});
  v.check(r.clusters == 0, "n < min_cluster_size gave " + std::to_string(r.clusters));

  if (v.pass) v.detail = "3 blobs -> 3; 20 oracle instances agree (" + std::to_string(partitions) +
                         " partitions compared); n < mcs -> 0";
  return v;
}

Verdict ac5_critic_fuzz() {
  Verdict v;
  const auto space = testutil::device_space(6);
  const double eps = 0.01;
  agents::HeuristicCritic critic({eps, 0.01});
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> u(-1.0, 2.0), in(0.0, 1.0);
  std::uniform_int_distribution<int> kind(0, 5);
  const double nan = std::numeric_limits<double>::quiet_NaN();

  auto context = [&](bool stagnating) {
    agents::AgentContext ctx;
    ctx.space = &space;
    ctx.targets = testutil::reference_targets();
    ctx.round = 2;
    ctx.previous_summary = RoundSummary{};
    ctx.previous_summary->round = 1;
    ctx.best_fom_history = {-1.0, stagnating ? -1.0 : -0.5};
    return ctx;
  };

  int legal = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    agents::ProposedRegion prop;
    for (const auto& p : space.params()) {
      const double w = p.upper - p.lower;
      double lo = p.lower + u(gen) * w, hi = p.lower + u(gen) * w;
      switch (kind(gen)) {
        case 0: hi = lo; break;                       // zero width
        case 1: if (lo < hi) std::swap(lo, hi); break;  // reversed
        case 2: lo = p.lower - w; hi = p.upper + w; break;  // out of bounds both sides
        case 3: lo = nan; break;
        default: break;
      }
      prop.region.ranges.push_back({lo, hi});
    }
    const auto a = critic.audit(prop, context(trial % 3 == 0));
    if (is_legal(a.region, space, eps * (1 - 1e-9))) ++legal;
  }
  v.check(legal == 1000, std::to_string(1000 - legal) + " of 1000 audits were illegal");

  // legal, wide proposals without stagnation come back untouched
  int untouched = 0;
  for (int trial = 0; trial < 200; ++trial) {
    agents::ProposedRegion prop;
    for (std::size_t i = 0; i < space.dimension(); ++i) {
      const double a = in(gen) * 0.5, b = a + 0.1 + in(gen) * 0.4;
      prop.region.ranges.push_back({space.to_native(i, a), space.to_native(i, b)});
    }
    if (!is_legal(prop.region, space, eps)) continue;
    const auto a = critic.audit(prop, context(false));
    if (a.approved_as_is && a.repairs.empty() && a.region == prop.region) ++untouched;
    else v.fail("legal proposal was modified in pass-through trial " + std::to_string(trial));
  }
  v.check(untouched > 0, "no pass-through trial ran");
  if (v.pass) v.detail = "1000/1000 legal; " + std::to_string(untouched) + " wide proposals passed bit-identical";
  return v;
}

/// Eval lines of a log with the timestamp stripped: everything from "kind" on.
std::vector<std::string> eval_lines(const fs::path& log) {
  std::vector<std::string> out;
  for (const auto& l : lines_of(testutil::slurp(log))) {
    const auto k = l.find("\"kind\":");
    if (k == std::string::npos) continue;
    const auto tail = l.substr(k);
    if (tail.rfind("\"kind\":\"eval\"", 0) == 0 || tail.rfind("\"kind\":\"seed_eval\"", 0) == 0) {
      out.push_back(tail);
    }
  }
  return out;
}

Verdict ac6_determinism(const testutil::TempDir& dir) {
  Verdict v;
  const auto cfg = config_path("synthetic_acof.json");
  const auto a = dir / "det_a.jsonl", b = dir / "det_b.jsonl";
  v.check(cli::cmd_run(cfg, {}, quiet_to(a), silent()) == cli::kExitOk, "first run failed");
  v.check(cli::cmd_run(cfg, {}, quiet_to(b), silent()) == cli::kExitOk, "second run failed");
  if (!v.pass) return v;
  const auto ea = eval_lines(a), eb = eval_lines(b);
  v.check(!ea.empty() && ea == eb, "eval sequences differ");
  const int rc = cli::cmd_replay(a, cfg, {}, silent());
  v.check(rc == cli::kExitOk, "replay exited " + std::to_string(rc));
  if (v.pass) v.detail = std::to_string(ea.size()) + " eval lines identical; replay exit 0";
  return v;
}

Verdict ac7_budget() {
  Verdict v;
  auto cfg = cli::load_config(config_path("synthetic_acof.json"));
  cfg.seed_budget = 200;
  cfg.rounds = 3;
  cfg.round_budget = 100;
  cfg.mode = orch::Mode::acof;
  const auto res = orch::run(cfg);
  v.check(res.records.size() == 500, std::to_string(res.records.size()) + " records");
  v.check(res.rounds.size() == 3, std::to_string(res.rounds.size()) + " summaries");
  std::size_t outside = 0;
  for (const auto& r : res.records) {
    if (r.round == 0) continue;
    const auto& region = res.rounds.at(r.round - 1).region;
    for (std::size_t i = 0; i < region.size(); ++i) {
      const double x = r.point.values[i];
      if (x < region.ranges[i].lo || x > region.ranges[i].hi) {
        ++outside;
        break;
      }
    }
  }
  v.check(outside == 0, std::to_string(outside) + " round points outside their audited region");
  if (v.pass) v.detail = "500 records, 3 summaries, every round point inside its region";
  return v;
}

Verdict ac8_directional() {
  Verdict v;
  double regret_acof = 0.0, regret_bo = 0.0;
  int wins = 0;
  std::string per_seed;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto cfg = cli::load_config(config_path("multi_pocket_acof.json"));
    cfg.seed = seed;
    cfg.mode = orch::Mode::acof;
    const auto a = orch::run(cfg);
    cfg.mode = orch::Mode::pure_bo;
    const auto b = orch::run(cfg);
    regret_acof += a.report.regret / 5.0;
    regret_bo += b.report.regret / 5.0;
    const double ta = a.report.top_k ? a.report.top_k->fom : kFomFloor;
    const double tb = b.report.top_k ? b.report.top_k->fom : kFomFloor;
    if (ta >= tb) ++wins;
    per_seed += (per_seed.empty() ? "" : " ") + std::string(ta >= tb ? "W" : "L");
  }
  v.check(regret_acof <= regret_bo, "mean regret acof " + fmt(regret_acof) + " > pure_bo " + fmt(regret_bo));
  v.check(wins >= 4, "top-10 wins " + std::to_string(wins) + "/5");
  v.detail = (v.pass ? "" : v.detail + "; ") + "mean regret acof " + fmt(regret_acof) + " vs pure_bo " +
             fmt(regret_bo) + ", top-10 wins " + std::to_string(wins) + "/5 [" + per_seed + "]";
  return v;
}

Verdict ac9_reliability(const testutil::TempDir& dir) {
  Verdict v;
  // Three parameters put the trap on a single coordinate, so it is hit often.
  auto cfg = cli::load_config_json(config_path("synthetic_acof.json"));
  auto& params = cfg["space"]["parameters"];
  params.erase(params.begin() + 3, params.end());
  const auto cfg_path = dir / "reliability.json";
  testutil::spit(cfg_path, cfg.dump(2));

  const auto log = dir / "reliability.jsonl";
  const auto csv = dir / "reliability.cloud.csv";
  v.check(cli::cmd_run(cfg_path, {}, quiet_to(log), silent()) == cli::kExitOk, "run failed");
  v.check(cli::cmd_export_cloud(log, csv, silent()) == cli::kExitOk, "export failed");
  if (!v.pass) return v;

  const auto report = json::parse(testutil::slurp(cli::default_report_path(log)));
  const auto rows = lines_of(testutil::slurp(csv));
  const auto header = rows.at(0);
  std::vector<std::string> cols;
  for (std::stringstream hs(header); hs.good();) {
    std::string c;
    std::getline(hs, c, ',');
    cols.push_back(c);
  }
  const std::size_t col_valid = cols.size() - 2, col_feasible = cols.size() - 1;
  std::size_t n = 0, valid = 0, feasible = 0, trapped = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].empty()) continue;
    std::vector<std::string> f;
    for (std::stringstream rs(rows[i]); rs.good();) {
      std::string c;
      std::getline(rs, c, ',');
      f.push_back(c);
    }
    ++n;
    const bool ok = f.at(col_valid) == "1";
    valid += ok;
    feasible += f.at(col_feasible) == "1";
    // first design coordinate is normalized, so the trap reads directly
    if (std::stod(f.at(2)) < 0.05) {
      ++trapped;
      v.check(!ok, "row " + std::to_string(i) + " inside the trap is sim-valid");
    }
  }
  const double sim_rate = double(valid) / double(n), feas_rate = double(feasible) / double(n);
  v.check(n == 500 && report["records"] == 500, "record count " + std::to_string(n));
  v.check(sim_rate == report["sim_valid_rate"].get<double>(), "sim_valid rate differs: " + fmt(sim_rate));
  v.check(feas_rate == report["phys_feasible_rate"].get<double>(), "phys_feasible rate differs: " + fmt(feas_rate));
  v.check(trapped > 0, "no design landed in the trap");
  if (v.pass) {
    v.detail = "rates from cloud equal report (" + fmt(sim_rate) + ", " + fmt(feas_rate) + "); " +
               std::to_string(trapped) + " trapped records invalid and counted in 500";
  }
  return v;
}

Verdict ac10_llm_robustness(const testutil::TempDir& dir) {
  Verdict v;
  const std::string secret = "sk-acceptance-0f1e2d3c4b5a";
  testutil::EnvGuard key(llm::kApiKeyEnv, secret);

  std::string ranges, partial;
  for (int i = 0; i < 6; ++i) {
    const std::string r = std::string(i ? ", " : "") + "\"w" + std::to_string(i) + "\": [2e-6, 3e-5]";
    ranges += r;
    if (i < 5) partial += r;
  }
  const std::string actor = "{\"ranges\": {" + ranges + "}, \"rationale\": \"key " + secret + "\"}";
  const std::string missing = "{\"ranges\": {" + partial + "}, \"rationale\": \"forgot one\"}";
  const std::string critic = "{\"approved\": true, \"corrected_ranges\": {" + ranges + "}, \"memo\": \"ok\"}";
  const std::string fenced = "Here you go:\n```json\n" + critic + "\n```\n";

  auto transport = std::make_shared<llm::ScriptedTransport>();
  transport->reply(actor)                                   // round 1 actor: valid
      .reply(fenced)                                        // round 1 critic: fenced
      .reply(missing)                                       // round 2 actor: parse retry
      .reply(std::string("I cannot comply, ") + secret)     // round 2 actor: parse retry
      .timeout().timeout().timeout()                        // round 2 actor: transport gives up
      .reply(critic)                                        // round 2 critic on the fallback region
      .reply(actor)
      .reply(critic);
  const std::size_t scripted = transport->remaining();

  cli::RunOptions opt = quiet_to(dir / "llm.jsonl");
  opt.transport = transport;
  opt.sleeper = [](std::chrono::milliseconds) {};
  const std::vector<std::string> small{"budget.seed_budget=30", "budget.round_budget=20", "budget.rounds=3",
                                       "acquisition.pool_size=128"};
  const int rc = cli::cmd_run(config_path("synthetic_llm.json"), small, opt, silent());
  v.check(rc == cli::kExitOk, "run exited " + std::to_string(rc));
  v.check(transport->remaining() == 0, std::to_string(transport->remaining()) + " scripted replies unused");
  if (!v.pass) return v;

  const auto events = events_of(opt.log);
  std::size_t entries = 0, retries = 0, timeouts = 0, fallbacks = 0;
  json round1_region, round2_proposal;
  for (const auto& e : events) {
    const auto& p = e["payload"];
    if (p.contains("transcript")) {
      for (const auto& t : p["transcript"]) {
        ++entries;
        retries += t["outcome"] == "parse_retry";
        timeouts += t["outcome"] == "timeout";
      }
    }
    if (e["kind"] == "agent_fallback") {
      ++fallbacks;
      v.check(p["agent"] == "actor" && p["round"] == 2, "unexpected fallback " + p.dump());
    }
    if (e["kind"] == "critic_audit" && p["round"] == 1) round1_region = p["region"];
    if (e["kind"] == "actor_proposal" && p["round"] == 2) round2_proposal = p;
  }
  v.check(fallbacks == 1, std::to_string(fallbacks) + " fallbacks");
  v.check(retries == 2, std::to_string(retries) + " parse retries logged");
  v.check(timeouts == 3, std::to_string(timeouts) + " timeouts logged");
  // every transport call plus one extra line per parse retry
  v.check(entries == scripted + retries, std::to_string(entries) + " transcript entries for " +
                                             std::to_string(scripted) + " calls");
  v.check(!round1_region.is_null() && round2_proposal.value("region", json()) == round1_region,
          "round 2 did not fall back to the round 1 region");

  for (const auto& f : fs::directory_iterator(dir.path())) {
    v.check(testutil::slurp(f.path()).find(secret) == std::string::npos, "key found in " + f.path().string());
  }
  for (const auto& seen : transport->seen()) {
    v.check(seen.body.find(secret) == std::string::npos, "key sent inside a request body");
  }
  if (v.pass) {
    v.detail = "2 parse retries, 3 timeouts, 1 actor fallback, " + std::to_string(entries) +
               " transcript entries, key absent from all files";
  }
  return v;
}

Verdict ac11_regret() {
  Verdict v;
  auto seq = [](const std::vector<double>& foms) {
    std::vector<EvaluationRecord> out;
    for (std::size_t i = 0; i < foms.size(); ++i) out.push_back(testutil::record_with_fom(i + 1, 0, foms[i], {0.5}));
    return out;
  };
  const double a = metrics::regret(seq({-1.0, -0.5, -0.5, -0.25}));
  const double b = metrics::regret(seq({0.0, 0.0, 0.0, 0.0}));
  v.check(std::abs(a - 0.5625) <= 1e-15, "regret " + fmt(a));
  v.check(b == 0.0, "all-zero regret " + fmt(b));
  if (v.pass) v.detail = "regret 0.5625 and 0";
  return v;
}

}  // namespace

int main() {
  testutil::TempDir dir;
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"AC1", ac1_fom_at_target},
      {"AC2", ac2_gp_oracle},
      {"AC3", ac3_ei_oracle},
      {"AC4", ac4_hdbscan},
      {"AC5", ac5_critic_fuzz},
      {"AC6", [&] { return ac6_determinism(dir); }},
      {"AC7", ac7_budget},
      {"AC8", ac8_directional},
      {"AC9", [&] { return ac9_reliability(dir); }},
      {"AC10", [&] { return ac10_llm_robustness(dir); }},
      {"AC11", ac11_regret},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v.fail(std::string("threw: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %s %s (%.1fs)\n", name.c_str(), v.pass ? "PASS" : "FAIL", v.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !v.pass;
  }
  return failed == 0 ? 0 : 1;
}
