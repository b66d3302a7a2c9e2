#include "acof/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <ctime>
#include <set>
#include <sstream>

#include "acof/errors.hpp"
#include "acof/fom.hpp"

namespace acof::cli {

namespace fs = std::filesystem;

namespace {

// Typed access to one JSON object that remembers which keys were consumed so
// that leftovers (typos) can be reported with their full dotted path.
class Reader {
 public:
  Reader(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) fail(path_.empty() ? "config" : path_, "expected an object");
  }

  bool has(const char* key) const { return node_.contains(key); }

  const json* get(const char* key) {
    seen_.insert(key);
    const auto it = node_.find(key);
    return it == node_.end() ? nullptr : &*it;
  }

  double number(const char* key, double fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_number()) fail(at(key), "expected a number");
    return v->get<double>();
  }

  double required_number(const char* key) {
    if (!has(key)) fail(at(key), "required");
    return number(key, 0.0);
  }

  std::uint64_t integer(const char* key, std::uint64_t fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (v->is_number_unsigned()) return v->get<std::uint64_t>();
    if (v->is_number_integer()) {
      const auto i = v->get<std::int64_t>();
      if (i < 0) fail(at(key), "must be >= 0");
      return static_cast<std::uint64_t>(i);
    }
    if (v->is_number_float()) {
      const double d = v->get<double>();
      if (d >= 0.0 && d == std::floor(d) && d < 1.8e19) return static_cast<std::uint64_t>(d);
    }
    fail(at(key), "expected a non-negative integer");
  }

  bool boolean(const char* key, bool fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_boolean()) fail(at(key), "expected true or false");
    return v->get<bool>();
  }

  std::string string(const char* key, const std::string& fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_string()) fail(at(key), "expected a string");
    return v->get<std::string>();
  }

  std::optional<Reader> child(const char* key) {
    const json* v = get(key);
    if (!v) return std::nullopt;
    return Reader(*v, at(key));
  }

  std::string at(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  void finish() const {
    for (const auto& [key, value] : node_.items()) {
      if (seen_.count(key)) continue;
      if (key == "api_key" || key == "key") {
        fail(at(key), "API keys are read from ACOF_API_KEY only, never from config files");
      }
      fail(at(key), "unknown key");
    }
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw ConfigError(path + ": " + what);
  }

 private:
  const json& node_;
  std::string path_;
  std::set<std::string, std::less<>> seen_;
};

template <typename Fn>
auto wrap(const std::string& path, Fn fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()) % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms.count()));
  return out;
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json region_json(const Region& region) {
  json out = json::array();
  for (const auto& r : region.ranges) out.push_back({nullable(r.lo), nullable(r.hi)});
  return out;
}

json transcript_json(const std::vector<llm::TranscriptEntry>& entries) {
  json out = json::array();
  for (const auto& e : entries) {
    out.push_back({{"request_digest", e.request_digest},
                   {"outcome", llm::to_string(e.outcome)},
                   {"latency_ms", e.latency_ms},
                   {"response", e.response}});
  }
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

void say(std::FILE* f, const char* fmt, ...) {
  if (f == nullptr) return;
  va_list args;
  va_start(args, fmt);
  std::vfprintf(f, fmt, args);
  va_end(args);
  std::fflush(f);
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

// ---------------------------------------------------------------------------
// configuration

json load_config_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  try {
    return json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": not valid JSON (" + e.what() + ")");
  }
}

void apply_override(json& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError("override '" + std::string(assignment) + "' is not of the form key.path=value");
  }
  const std::string key(assignment.substr(0, eq));
  const std::string raw(assignment.substr(eq + 1));
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  json* node = &config;
  std::size_t pos = 0;
  for (;;) {
    const auto dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    pos = dot + 1;
  }
}

orch::RunConfig config_from_json(const json& doc, const fs::path& base_dir) {
  orch::RunConfig c;
  Reader root(doc, "");

  c.mode = wrap("mode", [&] { return orch::mode_from_string(root.string("mode", "acof")); });
  c.seed = root.integer("seed", 0);
  c.parallel_evaluations = root.integer("parallel_evaluations", 1);

  {
    auto space = root.child("space");
    if (!space) Reader::fail("space", "required");
    const json* params = space->get("parameters");
    if (!params || !params->is_array() || params->empty()) {
      Reader::fail("space.parameters", "expected a non-empty array");
    }
    std::vector<ParameterSpec> specs;
    for (std::size_t i = 0; i < params->size(); ++i) {
      const std::string path = "space.parameters[" + std::to_string(i) + "]";
      Reader p((*params)[i], path);
      ParameterSpec spec;
      spec.name = p.string("name", "");
      spec.lower = p.required_number("lower");
      spec.upper = p.required_number("upper");
      spec.unit = p.string("unit", "");
      spec.scale = wrap(path + ".scale", [&] { return scale_from_string(p.string("scale", "linear")); });
      p.finish();
      wrap(path, [&] { spec.validate(); });
      specs.push_back(std::move(spec));
    }
    space->finish();
    c.space = wrap("space.parameters", [&] { return ParameterSpace(std::move(specs)); });
  }

  {
    auto t = root.child("targets");
    if (!t) Reader::fail("targets", "required");
    c.targets.gain_db = t->required_number("gain_db");
    c.targets.ugbw_hz = t->required_number("ugbw_hz");
    c.targets.pm_deg = t->required_number("pm_deg");
    c.targets.power_w = t->required_number("power_w");
    t->finish();
    wrap("targets", [&] { c.targets.validate(); });
  }

  if (auto e = root.child("evaluator")) {
    c.evaluator.kind = wrap("evaluator.kind", [&] {
      return eval::evaluator_kind_from_string(e->string("kind", "synthetic_opamp"));
    });
    c.evaluator.template_path = resolve(base_dir, e->string("template", ""));
    if (auto m = e->child("measurements")) {
      for (const auto& [name, binding] : doc.at("evaluator").at("measurements").items()) {
        const std::string path = "evaluator.measurements." + name;
        m->get(name.c_str());
        Reader b(binding, path);
        eval::MeasurementBinding mb;
        mb.field = wrap(path + ".field", [&] { return eval::meas_field_from_string(b.string("field", "")); });
        mb.multiplier = b.number("multiplier", 1.0);
        b.finish();
        if (!(std::isfinite(mb.multiplier) && mb.multiplier != 0.0)) {
          Reader::fail(path + ".multiplier", "must be finite and non-zero");
        }
        c.evaluator.measurement_map[name] = mb;
      }
      m->finish();
    }
    if (auto n = e->child("ngspice")) {
      c.evaluator.ngspice.executable = n->string("executable", c.evaluator.ngspice.executable);
      if (c.evaluator.ngspice.executable.find('/') != std::string::npos) {
        c.evaluator.ngspice.executable = resolve(base_dir, c.evaluator.ngspice.executable).string();
      }
      const double timeout = n->number("timeout_s", 60.0);
      if (!(timeout > 0.0)) Reader::fail("evaluator.ngspice.timeout_s", "must be > 0");
      c.evaluator.ngspice.timeout = std::chrono::milliseconds(static_cast<long long>(timeout * 1000.0));
      c.evaluator.ngspice.work_root = resolve(base_dir, n->string("work_root", ""));
      c.evaluator.ngspice.keep_workdirs = n->boolean("keep_workdirs", false);
      n->finish();
    }
    e->finish();
    wrap("evaluator", [&] { c.evaluator.validate(); });
  }

  if (auto b = root.child("budget")) {
    c.seed_budget = b->integer("seed_budget", c.seed_budget);
    c.round_budget = b->integer("round_budget", c.round_budget);
    c.rounds = b->integer("rounds", c.rounds);
    b->finish();
  }

  if (auto a = root.child("acquisition")) {
    c.acquisition.batch_size = a->integer("batch_size", c.acquisition.batch_size);
    c.acquisition.pool_size = a->integer("pool_size", c.acquisition.pool_size);
    c.acquisition.xi = a->number("xi", c.acquisition.xi);
    c.acquisition.min_pairwise_distance =
        a->number("min_pairwise_distance", c.acquisition.min_pairwise_distance);
    a->finish();
  }

  if (auto g = root.child("gp")) {
    c.gp.max_points = g->integer("max_points", c.gp.max_points);
    c.gp.keep_best = g->integer("keep_best", c.gp.keep_best);
    c.gp.keep_recent = g->integer("keep_recent", c.gp.keep_recent);
    c.gp.hyper_subset = g->integer("hyper_subset", c.gp.hyper_subset);
    c.gp.steps_per_start = static_cast<int>(g->integer("steps_per_start", c.gp.steps_per_start));
    c.penalize_invalid = g->boolean("penalize_invalid", c.penalize_invalid);
    g->finish();
  }

  if (auto a = root.child("agents")) {
    auto& s = c.agents;
    s.kind = wrap("agents.kind", [&] { return orch::agent_kind_from_string(a->string("kind", "heuristic")); });
    s.top_k = a->integer("top_k", s.top_k);
    s.margin = a->number("margin", s.margin);
    s.eps_min = a->number("eps_min", s.eps_min);
    s.stagnation_tau = a->number("stagnation_tau", s.stagnation_tau);
    s.memo_window = a->integer("memo_window", s.memo_window);
    s.summary_size = a->integer("summary_size", s.summary_size);
    s.max_retries = static_cast<int>(a->integer("max_retries", static_cast<std::uint64_t>(s.max_retries)));
    if (auto l = a->child("llm")) {
      s.llm.base_url = l->string("base_url", s.llm.base_url);
      s.llm.model = l->string("model", s.llm.model);
      s.llm.temperature = l->number("temperature", s.llm.temperature);
      s.llm.max_tokens = static_cast<int>(l->integer("max_tokens", static_cast<std::uint64_t>(s.llm.max_tokens)));
      s.llm.timeout_s = l->number("timeout_s", s.llm.timeout_s);
      s.llm.max_attempts = static_cast<int>(l->integer("max_attempts", static_cast<std::uint64_t>(s.llm.max_attempts)));
      s.llm.templates_dir = resolve(base_dir, l->string("templates_dir", ""));
      l->finish();
      if (!(s.llm.temperature >= 0.0 && s.llm.temperature <= 2.0)) {
        Reader::fail("agents.llm.temperature", "must lie in [0, 2]");
      }
      if (s.llm.max_tokens <= 0) Reader::fail("agents.llm.max_tokens", "must be > 0");
      if (!(s.llm.timeout_s > 0.0)) Reader::fail("agents.llm.timeout_s", "must be > 0");
      if (s.llm.max_attempts < 1) Reader::fail("agents.llm.max_attempts", "must be >= 1");
    }
    a->finish();
  }

  if (auto m = root.child("metrics")) {
    c.metrics.top_k = m->integer("top_k", c.metrics.top_k);
    c.metrics.hdbscan.min_cluster_size = m->integer("min_cluster_size", c.metrics.hdbscan.min_cluster_size);
    c.metrics.hdbscan.min_samples = m->integer("min_samples", c.metrics.hdbscan.min_samples);
    c.metrics.regret_include_seeding = m->boolean("regret_include_seeding", c.metrics.regret_include_seeding);
    m->finish();
  }

  root.finish();
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

json config_to_json(const orch::RunConfig& c) {
  json params = json::array();
  for (const auto& p : c.space.params()) {
    params.push_back({{"name", p.name},
                      {"lower", p.lower},
                      {"upper", p.upper},
                      {"unit", p.unit},
                      {"scale", to_string(p.scale)}});
  }
  json measurements = json::object();
  for (const auto& [name, b] : c.evaluator.measurement_map) {
    measurements[name] = {{"field", eval::to_string(b.field)}, {"multiplier", b.multiplier}};
  }
  const auto& s = c.agents;
  return {
      {"mode", orch::to_string(c.mode)},
      {"seed", c.seed},
      {"parallel_evaluations", c.parallel_evaluations},
      {"space", {{"parameters", std::move(params)}}},
      {"targets",
       {{"gain_db", c.targets.gain_db},
        {"ugbw_hz", c.targets.ugbw_hz},
        {"pm_deg", c.targets.pm_deg},
        {"power_w", c.targets.power_w}}},
      {"evaluator",
       {{"kind", eval::to_string(c.evaluator.kind)},
        {"template", c.evaluator.template_path.string()},
        {"measurements", std::move(measurements)},
        {"ngspice",
         {{"executable", c.evaluator.ngspice.executable},
          {"timeout_s", static_cast<double>(c.evaluator.ngspice.timeout.count()) / 1000.0},
          {"work_root", c.evaluator.ngspice.work_root.string()},
          {"keep_workdirs", c.evaluator.ngspice.keep_workdirs}}}}},
      {"budget",
       {{"seed_budget", c.seed_budget}, {"round_budget", c.round_budget}, {"rounds", c.rounds}}},
      {"acquisition",
       {{"batch_size", c.acquisition.batch_size},
        {"pool_size", c.acquisition.pool_size},
        {"xi", c.acquisition.xi},
        {"min_pairwise_distance", c.acquisition.min_pairwise_distance}}},
      {"gp",
       {{"max_points", c.gp.max_points},
        {"keep_best", c.gp.keep_best},
        {"keep_recent", c.gp.keep_recent},
        {"hyper_subset", c.gp.hyper_subset},
        {"steps_per_start", c.gp.steps_per_start},
        {"penalize_invalid", c.penalize_invalid}}},
      {"agents",
       {{"kind", orch::to_string(s.kind)},
        {"top_k", s.top_k},
        {"margin", s.margin},
        {"eps_min", s.eps_min},
        {"stagnation_tau", s.stagnation_tau},
        {"memo_window", s.memo_window},
        {"summary_size", s.summary_size},
        {"max_retries", s.max_retries},
        {"llm",
         {{"base_url", s.llm.base_url},
          {"model", s.llm.model},
          {"temperature", s.llm.temperature},
          {"max_tokens", s.llm.max_tokens},
          {"timeout_s", s.llm.timeout_s},
          {"max_attempts", s.llm.max_attempts},
          {"templates_dir", s.llm.templates_dir.string()}}}}},
      {"metrics",
       {{"top_k", c.metrics.top_k},
        {"min_cluster_size", c.metrics.hdbscan.min_cluster_size},
        {"min_samples", c.metrics.hdbscan.min_samples},
        {"regret_include_seeding", c.metrics.regret_include_seeding}}},
  };
}

orch::RunConfig load_config(const fs::path& path, const std::vector<std::string>& overrides) {
  json doc = load_config_json(path);
  for (const auto& o : overrides) apply_override(doc, o);
  return config_from_json(doc, path.parent_path());
}

bool replayable(const orch::RunConfig& c) {
  const bool agents_used = c.mode != orch::Mode::pure_bo && c.rounds > 0;
  if (agents_used && c.agents.kind == orch::AgentKind::llm) return false;
  return c.evaluator.kind != eval::EvaluatorKind::ngspice;
}

// ---------------------------------------------------------------------------
// run log

json record_to_json(const EvaluationRecord& r, const ParameterSpace& space) {
  json meas = r.meas.sim_valid
                  ? json{{"gain_db", r.meas.gain_db},
                         {"ugbw_hz", r.meas.ugbw_hz},
                         {"pm_deg", r.meas.pm_deg},
                         {"power_w", r.meas.power_w}}
                  : json(nullptr);
  return {{"step", r.step},
          {"round", r.round},
          {"x", r.point.values},
          {"z", space.normalize(r.point)},
          {"meas", std::move(meas)},
          {"sim_valid", r.meas.sim_valid},
          {"fom", r.fom ? json(*r.fom) : json(nullptr)},
          {"phys_feasible", r.phys_feasible}};
}

EvaluationRecord record_from_json(const json& p) {
  EvaluationRecord r;
  r.step = p.at("step").get<std::uint64_t>();
  r.round = p.at("round").get<std::uint32_t>();
  r.point.values = p.at("x").get<std::vector<double>>();
  const bool valid = p.at("sim_valid").get<bool>();
  if (valid) {
    const auto& m = p.at("meas");
    r.meas = {m.at("gain_db").get<double>(), m.at("ugbw_hz").get<double>(),
              m.at("pm_deg").get<double>(), m.at("power_w").get<double>(), true};
    r.fom = p.at("fom").get<double>();
  } else {
    r.meas = Measurements::invalid();
  }
  r.phys_feasible = p.at("phys_feasible").get<bool>();
  r.validate();
  return r;
}

JsonlLogWriter::JsonlLogWriter(const fs::path& path, const orch::RunConfig& config,
                               const agents::PromptTemplates& templates, std::string secret)
    : space_(config.space), secret_(std::move(secret)) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw ConfigError("cannot open log file " + path.string());
  json hashes = json::object();
  for (const auto& [name, digest] : templates.hashes()) hashes[name] = digest;
  write("config_snapshot", {{"config", config_to_json(config)},
                            {"seed", config.seed},
                            {"prompt_hashes", std::move(hashes)},
                            {"total_budget", config.total_budget()}});
}

void JsonlLogWriter::write(std::string_view kind, json payload) {
  // Assembled by hand so the envelope fields lead each line.
  std::string text = "{\"seq\":" + std::to_string(++seq_) + ",\"ts\":\"" + timestamp() +
                     "\",\"kind\":" + json(kind).dump() + ",\"payload\":" +
                     payload.dump(-1, ' ', false, json::error_handler_t::replace) + "}";
  if (!secret_.empty()) {
    for (std::size_t pos = 0; (pos = text.find(secret_, pos)) != std::string::npos; pos += 3) {
      text.replace(pos, secret_.size(), "***");
    }
  }
  out_ << text << '\n';
  out_.flush();
}

void JsonlLogWriter::on_eval(const EvaluationRecord& record, const eval::EvalResult& result) {
  json payload = record_to_json(record, space_);
  if (!result.reason.empty()) payload["reason"] = result.reason;
  if (!result.transcript.empty()) payload["output"] = result.transcript;
  write(record.round == 0 ? "seed_eval" : "eval", std::move(payload));
}

void JsonlLogWriter::on_round_start(std::uint32_t round) { write("round_start", {{"round", round}}); }

void JsonlLogWriter::on_actor_proposal(std::uint32_t round, const agents::ProposedRegion& proposal,
                                       const std::vector<llm::TranscriptEntry>& transcript) {
  write("actor_proposal", {{"round", round},
                           {"region", region_json(proposal.region)},
                           {"rationale", proposal.rationale},
                           {"transcript", transcript_json(transcript)}});
}

void JsonlLogWriter::on_critic_audit(std::uint32_t round, const agents::AuditResult& audit,
                                     const std::vector<llm::TranscriptEntry>& transcript) {
  json repairs = json::array();
  for (const auto& r : audit.repairs) repairs.push_back({{"param", r.param}, {"reason", r.reason}});
  write("critic_audit", {{"round", round},
                         {"approved_as_is", audit.approved_as_is},
                         {"region", region_json(audit.region)},
                         {"memo", audit.memo},
                         {"repairs", std::move(repairs)},
                         {"transcript", transcript_json(transcript)}});
}

void JsonlLogWriter::on_batch(std::uint32_t round, const Region& region, std::size_t size,
                              bool model_based) {
  write("batch", {{"round", round},
                  {"size", size},
                  {"source", model_based ? "gp" : "uniform"},
                  {"region", region_json(region)}});
}

void JsonlLogWriter::on_round_summary(const RoundSummary& s) {
  json top = json::array();
  for (const auto& r : s.top_records) top.push_back(r.step);
  json stats = json::array();
  for (const auto& st : s.stats) stats.push_back({{"min", st.min}, {"max", st.max}, {"mean", st.mean}});
  write("round_summary",
        {{"round", s.round},
         {"best_step", s.best_record ? json(s.best_record->step) : json(nullptr)},
         {"best_fom", s.best_record ? json(*s.best_record->fom) : json(nullptr)},
         {"top_steps", std::move(top)},
         {"memo", s.critic_memo},
         {"stats", std::move(stats)},
         {"counts",
          {{"attempted", s.counts.attempted},
           {"sim_valid", s.counts.sim_valid},
           {"phys_feasible", s.counts.phys_feasible}}}});
}

void JsonlLogWriter::on_agent_fallback(std::uint32_t round, std::string_view agent,
                                       std::string_view reason,
                                       const std::vector<llm::TranscriptEntry>& transcript) {
  write("agent_fallback", {{"round", round},
                           {"agent", agent},
                           {"reason", reason},
                           {"transcript", transcript_json(transcript)}});
}

void JsonlLogWriter::on_run_end(const orch::RunResult& result) {
  write("run_end", {{"status", "ok"},
                    {"records", result.records.size()},
                    {"rounds", result.rounds.size()},
                    {"agent_fallbacks", result.agent_fallbacks},
                    {"wall_seconds", result.wall_seconds},
                    {"eval_seconds", result.eval_seconds}});
}

void JsonlLogWriter::write_abort(std::string_view error) {
  write("run_end", {{"status", "aborted"}, {"error", error}});
}

ParsedLog read_log(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read log file " + path.string());
  ParsedLog log;
  std::string line;
  std::uint64_t expected = 1;
  while (std::getline(in, line)) {
    if (in.eof() && !line.empty()) {
      // Final line without newline: an interrupted write.
      log.warning = "log ends in a partial record after seq " + std::to_string(expected - 1);
      break;
    }
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object() || !rec.contains("seq") || !rec.contains("kind") ||
        !rec.contains("payload")) {
      log.warning = "unparseable record after seq " + std::to_string(expected - 1) +
                    "; using the prefix";
      break;
    }
    if (!rec["seq"].is_number_unsigned() || rec["seq"].get<std::uint64_t>() != expected) {
      log.warning = "sequence gap after seq " + std::to_string(expected - 1) + "; using the prefix";
      break;
    }
    const std::string kind = rec["kind"].is_string() ? rec["kind"].get<std::string>() : "";
    const json& payload = rec["payload"];
    if (expected == 1) {
      if (kind != "config_snapshot" || !payload.contains("config")) {
        throw ConfigError(path.string() + ": log does not start with a config snapshot");
      }
      log.snapshot = payload;
      log.config = payload["config"];
    } else if (kind == "seed_eval" || kind == "eval") {
      try {
        log.records.push_back(record_from_json(payload));
        log.record_seq.push_back(expected);
      } catch (const std::exception& e) {
        log.warning = "malformed eval record at seq " + std::to_string(expected) + ": " + e.what();
        break;
      }
    } else if (kind == "round_summary") {
      ++log.round_summaries;
    } else if (kind == "run_end") {
      log.complete = payload.value("status", "") == "ok";
    }
    log.events.push_back(std::move(rec));
    ++expected;
  }
  if (expected == 1) throw ConfigError(path.string() + ": empty log");
  if (!log.warning && !log.complete) log.warning = "log has no successful run_end record";
  return log;
}

// ---------------------------------------------------------------------------
// reports

json report_to_json(const metrics::MetricsReport& r, std::string_view mode) {
  json top = nullptr;
  if (r.top_k) {
    top = {{"k_used", r.top_k->k_used},
           {"gain_db", r.top_k->gain_db},
           {"ugbw_hz", r.top_k->ugbw_hz},
           {"pm_deg", r.top_k->pm_deg},
           {"power_w", r.top_k->power_w},
           {"fom", r.top_k->fom}};
  }
  json rounds = json::array();
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  for (const auto& rs : r.rounds) {
    rounds.push_back({{"round", rs.round},
                      {"attempted", rs.attempted},
                      {"sim_valid", rs.sim_valid},
                      {"phys_feasible", rs.phys_feasible},
                      {"best_fom", opt(rs.best_fom)},
                      {"mean_fom", opt(rs.mean_fom)},
                      {"best_so_far", opt(rs.best_so_far)}});
  }
  return {{"mode", mode},
          {"records", r.records},
          {"seed_records", r.seed_records},
          {"top_k", std::move(top)},
          {"sim_valid_rate", r.rates.sim_valid},
          {"phys_feasible_rate", r.rates.phys_feasible},
          {"regret", r.regret},
          {"regions", r.regions},
          {"parameters",
           {{"k", r.options.top_k},
            {"min_cluster_size", r.options.hdbscan.min_cluster_size},
            {"min_samples", r.options.hdbscan.min_samples},
            {"regret_include_seeding", r.options.regret_include_seeding}}},
          {"rounds", std::move(rounds)}};
}

std::string report_table(const metrics::MetricsReport& r, std::string_view mode) {
  const std::vector<std::string> head{"Method",   "Gain (dB)",        "UGBW (MHz)",         "PM (deg)",
                                      "Power (mW)", "FoM",            "Sim. Valid (%)", "Phys. Feasible (%)",
                                      "Regions",  "Regret"};
  std::vector<std::string> row{std::string(mode)};
  if (r.top_k) {
    row.push_back(fixed(r.top_k->gain_db, 2));
    row.push_back(fixed(r.top_k->ugbw_hz / 1e6, 2));
    row.push_back(fixed(r.top_k->pm_deg, 2));
    row.push_back(fixed(r.top_k->power_w * 1e3, 3));
    row.push_back(fixed(r.top_k->fom, 3));
  } else {
    row.insert(row.end(), 5, "-");
  }
  row.push_back(fixed(100.0 * r.rates.sim_valid, 1));
  row.push_back(fixed(100.0 * r.rates.phys_feasible, 1));
  row.push_back(std::to_string(r.regions));
  row.push_back(fixed(r.regret, 3));

  std::string out;
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      const std::size_t w = std::max(head[i].size(), row[i].size());
      std::string cell = cells[i];
      cell.resize(w, ' ');
      out += (i ? " | " : "") + cell;
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += '\n';
  };
  emit(head);
  std::vector<std::string> rule;
  for (std::size_t i = 0; i < head.size(); ++i) {
    rule.push_back(std::string(std::max(head[i].size(), row[i].size()), '-'));
  }
  emit(rule);
  emit(row);
  out += "top-" + std::to_string(r.options.top_k) + " means";
  if (r.top_k && r.top_k->k_used < r.options.top_k) {
    out += " (only " + std::to_string(r.top_k->k_used) + " valid)";
  }
  out += "; " + std::to_string(r.records) + " attempts\n";
  return out;
}

std::string csv_field(std::string_view text) {
  if (text.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(text);
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_cloud_csv(std::ostream& out, const std::vector<EvaluationRecord>& records,
                     const ParameterSpace& space) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  out << "step,round";
  for (const auto& p : space.params()) out << ',' << csv_field(p.name);
  out << ",fom,sim_valid,phys_feasible\r\n";
  for (const auto& r : records) {
    out << r.step << ',' << r.round;
    for (double z : space.normalize(r.point)) out << ',' << num(std::clamp(z, 0.0, 1.0));
    out << ',' << (r.fom ? num(*r.fom) : std::string()) << ',' << (r.meas.sim_valid ? 1 : 0) << ','
        << (r.phys_feasible ? 1 : 0) << "\r\n";
  }
}

// ---------------------------------------------------------------------------
// commands

fs::path default_report_path(const fs::path& log) {
  fs::path p = log;
  return p.replace_extension(".report.json");
}

fs::path default_table_path(const fs::path& log) {
  fs::path p = log;
  return p.replace_extension(".table.txt");
}

namespace {

// Forwards to the log writer and prints a line per round.
class ProgressObserver final : public orch::RunObserver {
 public:
  ProgressObserver(orch::RunObserver& inner, std::FILE* err) : inner_(inner), err_(err) {}

  void on_eval(const EvaluationRecord& r, const eval::EvalResult& e) override {
    inner_.on_eval(r, e);
    if (r.round == 0 && err_ && r.step % 50 == 0) say(err_, "seeding: %llu evaluations\n", static_cast<unsigned long long>(r.step));
  }
  void on_round_start(std::uint32_t n) override { inner_.on_round_start(n); }
  void on_actor_proposal(std::uint32_t n, const agents::ProposedRegion& p,
                         const std::vector<llm::TranscriptEntry>& t) override {
    inner_.on_actor_proposal(n, p, t);
  }
  void on_critic_audit(std::uint32_t n, const agents::AuditResult& a,
                       const std::vector<llm::TranscriptEntry>& t) override {
    inner_.on_critic_audit(n, a, t);
  }
  void on_batch(std::uint32_t n, const Region& r, std::size_t s, bool m) override {
    inner_.on_batch(n, r, s, m);
  }
  void on_round_summary(const RoundSummary& s) override {
    inner_.on_round_summary(s);
    say(err_, "round %u: %zu/%zu sim-valid, %zu feasible, best fom %s\n", s.round,
        s.counts.sim_valid, s.counts.attempted, s.counts.phys_feasible,
        s.best_record ? fixed(*s.best_record->fom, 4).c_str() : "n/a");
  }
  void on_agent_fallback(std::uint32_t n, std::string_view agent, std::string_view reason,
                         const std::vector<llm::TranscriptEntry>& t) override {
    inner_.on_agent_fallback(n, agent, reason, t);
    say(err_, "round %u: %.*s failed (%.*s); using fallback\n", n, static_cast<int>(agent.size()),
        agent.data(), static_cast<int>(reason.size()), reason.data());
  }
  void on_run_end(const orch::RunResult& r) override { inner_.on_run_end(r); }

 private:
  orch::RunObserver& inner_;
  std::FILE* err_;
};

struct AgentStack {
  std::shared_ptr<llm::ChatClient> client;
  std::shared_ptr<agents::Actor> actor;
  std::shared_ptr<agents::Critic> critic;
  std::string secret;
};

agents::PromptTemplates templates_for(const orch::RunConfig& c) {
  return c.agents.llm.templates_dir.empty() ? agents::PromptTemplates::defaults()
                                            : agents::PromptTemplates::load(c.agents.llm.templates_dir);
}

bool uses_llm(const orch::RunConfig& c) {
  return c.mode != orch::Mode::pure_bo && c.rounds > 0 && c.agents.kind == orch::AgentKind::llm;
}

AgentStack build_llm_stack(const orch::RunConfig& c, const agents::PromptTemplates& templates,
                           std::shared_ptr<llm::Transport> transport, llm::Sleeper sleeper) {
  AgentStack stack;
  if (!uses_llm(c)) return stack;
  llm::EndpointConfig endpoint;
  endpoint.base_url = c.agents.llm.base_url;
  endpoint.model = c.agents.llm.model;
  endpoint.api_key = llm::api_key_from_env();
  endpoint.timeout = std::chrono::milliseconds(static_cast<long long>(c.agents.llm.timeout_s * 1000.0));
  endpoint.max_attempts = c.agents.llm.max_attempts;
  stack.secret = endpoint.api_key;
  if (!transport) transport = std::make_shared<llm::HttpTransport>();
  stack.client = std::make_shared<llm::ChatClient>(endpoint, std::move(transport), std::move(sleeper));

  agents::LlmAgentOptions options;
  options.model = c.agents.llm.model;
  options.temperature = c.agents.llm.temperature;
  options.max_tokens = c.agents.llm.max_tokens;
  options.max_retries = c.agents.max_retries;
  options.prompt.memo_window = c.agents.memo_window;
  // Both agents borrow the client, which the stack owns for the whole run.
  stack.actor = std::make_shared<agents::LlmActor>(*stack.client, templates, options);
  if (c.mode == orch::Mode::acof) {
    stack.critic = std::make_shared<agents::LlmCritic>(*stack.client, templates, options, c.agents.eps_min);
  }
  return stack;
}

}  // namespace

int cmd_validate_config(const fs::path& config_path, const std::vector<std::string>& overrides,
                        Streams io) {
  try {
    const auto c = load_config(config_path, overrides);
    (void)eval::make_evaluator(c.evaluator, c.space, c.targets);
    (void)templates_for(c);
    if (uses_llm(c)) (void)llm::api_key_from_env();
    say(io.out, "config ok: mode %s, %zu parameters, evaluator %s, budget %zu (%zu seed + %zu x %zu)\n",
        std::string(orch::to_string(c.mode)).c_str(), c.space.dimension(),
        std::string(eval::to_string(c.evaluator.kind)).c_str(), c.total_budget(), c.seed_budget,
        c.rounds, c.round_budget);
    return kExitOk;
  } catch (const std::exception& e) {
    say(io.err, "config error: %s\n", e.what());
    return kExitConfig;
  }
}

int cmd_run(const fs::path& config_path, const std::vector<std::string>& overrides,
            RunOptions options, Streams io) {
  orch::RunConfig config;
  agents::PromptTemplates templates;
  AgentStack stack;
  orch::RunDependencies deps;
  try {
    config = load_config(config_path, overrides);
    templates = templates_for(config);
    stack = build_llm_stack(config, templates, options.transport, options.sleeper);
    deps.evaluator = eval::make_evaluator(config.evaluator, config.space, config.targets);
    deps.actor = stack.actor;
    deps.critic = stack.critic;
  } catch (const std::exception& e) {
    say(io.err, "config error: %s\n", e.what());
    return kExitConfig;
  }

  if (options.log.empty()) options.log = config_path.stem().string() + ".jsonl";
  if (options.report.empty()) options.report = default_report_path(options.log);
  if (options.table.empty()) options.table = default_table_path(options.log);

  std::unique_ptr<JsonlLogWriter> writer;
  try {
    writer = std::make_unique<JsonlLogWriter>(options.log, config, templates, stack.secret);
  } catch (const std::exception& e) {
    say(io.err, "error: %s\n", e.what());
    return kExitConfig;
  }
  ProgressObserver progress(*writer, options.quiet ? nullptr : io.err);
  deps.observer = &progress;

  try {
    const auto result = orch::run(config, std::move(deps));
    const auto mode = orch::to_string(config.mode);
    write_text(options.report, report_to_json(result.report, mode).dump(2) + "\n");
    write_text(options.table, report_table(result.report, mode));
    if (!options.quiet) {
      say(io.out, "%s", report_table(result.report, mode).c_str());
      say(io.out, "log: %s\nreport: %s\n", options.log.string().c_str(), options.report.string().c_str());
    }
    return kExitOk;
  } catch (const std::exception& e) {
    writer->write_abort(e.what());
    say(io.err, "run aborted: %s (partial log kept at %s)\n", e.what(), options.log.string().c_str());
    return kExitRuntime;
  }
}

int cmd_report(const fs::path& log_path, const ReportOptions& options, Streams io) {
  ParsedLog log;
  orch::RunConfig config;
  try {
    log = read_log(log_path);
    config = config_from_json(log.config);
  } catch (const std::exception& e) {
    say(io.err, "error: %s\n", e.what());
    return kExitConfig;
  }
  if (log.warning) say(io.err, "warning: %s\n", log.warning->c_str());

  auto m = config.metrics;
  if (options.top_k) m.top_k = *options.top_k;
  if (options.min_cluster_size) m.hdbscan.min_cluster_size = *options.min_cluster_size;
  if (options.min_samples) m.hdbscan.min_samples = *options.min_samples;
  if (options.include_seeding) m.regret_include_seeding = *options.include_seeding;
  try {
    if (m.top_k < 1) throw ConfigError("k must be >= 1");
    m.hdbscan.validate();
    const auto report = metrics::compute_report(log.records, config.space, m);
    const auto mode = orch::to_string(config.mode);
    const fs::path out = options.out.empty() ? default_report_path(log_path) : options.out;
    const fs::path table = options.table.empty() ? default_table_path(log_path) : options.table;
    write_text(out, report_to_json(report, mode).dump(2) + "\n");
    write_text(table, report_table(report, mode));
    say(io.out, "%s", report_table(report, mode).c_str());
    return kExitOk;
  } catch (const ValidationError& e) {
    say(io.err, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const ConfigError& e) {
    say(io.err, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    say(io.err, "error: %s\n", e.what());
    return kExitRuntime;
  }
}

int cmd_export_cloud(const fs::path& log_path, fs::path out, Streams io) {
  ParsedLog log;
  orch::RunConfig config;
  try {
    log = read_log(log_path);
    config = config_from_json(log.config);
  } catch (const std::exception& e) {
    say(io.err, "error: %s\n", e.what());
    return kExitConfig;
  }
  if (log.warning) say(io.err, "warning: %s\n", log.warning->c_str());
  if (out.empty()) {
    out = log_path;
    out.replace_extension(".cloud.csv");
  }
  std::ostringstream os;
  write_cloud_csv(os, log.records, config.space);
  try {
    write_text(out, os.str());
  } catch (const std::exception& e) {
    say(io.err, "error: %s\n", e.what());
    return kExitRuntime;
  }
  say(io.out, "%zu rows written to %s\n", log.records.size(), out.string().c_str());
  return kExitOk;
}

namespace {

struct Divergence {
  std::uint64_t seq;
  std::string what;
};

class ReplayChecker final : public orch::RunObserver {
 public:
  ReplayChecker(const ParsedLog& log, const ParameterSpace& space) : log_(log), space_(space) {}

  void on_eval(const EvaluationRecord& r, const eval::EvalResult&) override {
    if (next_ >= log_.records.size()) {
      throw Divergence{0, "rerun produced step " + std::to_string(r.step) +
                              " but the log holds only " + std::to_string(log_.records.size()) +
                              " evaluations"};
    }
    const auto& old = log_.records[next_];
    const auto seq = log_.record_seq[next_];
    ++next_;
    if (old.step != r.step || old.round != r.round) {
      throw Divergence{seq, "step/round differ"};
    }
    const auto za = space_.normalize(old.point);
    const auto zb = space_.normalize(r.point);
    for (std::size_t i = 0; i < za.size(); ++i) {
      if (!(std::abs(za[i] - zb[i]) <= 1e-12)) {
        throw Divergence{seq, "parameter " + space_[i].name + " differs at step " + std::to_string(r.step)};
      }
    }
    if (old.fom.has_value() != r.fom.has_value() ||
        (old.fom && !(std::abs(*old.fom - *r.fom) <= 1e-12))) {
      throw Divergence{seq, "fom differs at step " + std::to_string(r.step)};
    }
  }

  std::size_t matched() const { return next_; }

 private:
  const ParsedLog& log_;
  const ParameterSpace& space_;
  std::size_t next_ = 0;
};

}  // namespace

int cmd_replay(const fs::path& log_path, const fs::path& config_path,
               const std::vector<std::string>& overrides, Streams io) {
  ParsedLog log;
  orch::RunConfig config;
  try {
    config = load_config(config_path, overrides);
    log = read_log(log_path);
    const auto logged = config_from_json(log.config);
    if (!replayable(config) || !replayable(logged)) {
      say(io.err, "non-replayable stack: replay needs heuristic agents and a synthetic evaluator\n");
      return kExitConfig;
    }
  } catch (const std::exception& e) {
    say(io.err, "error: %s\n", e.what());
    return kExitConfig;
  }

  ReplayChecker checker(log, config.space);
  orch::RunDependencies deps;
  deps.observer = &checker;
  try {
    orch::run(config, std::move(deps));
  } catch (const Divergence& d) {
    if (d.seq) {
      say(io.err, "replay diverged at seq %llu: %s\n", static_cast<unsigned long long>(d.seq), d.what.c_str());
    } else {
      say(io.err, "replay diverged: %s\n", d.what.c_str());
    }
    return kExitDivergence;
  } catch (const std::exception& e) {
    say(io.err, "replay aborted: %s\n", e.what());
    return kExitRuntime;
  }
  if (checker.matched() != log.records.size()) {
    say(io.err, "replay diverged: log holds %zu evaluations, rerun produced %zu\n",
        log.records.size(), checker.matched());
    return kExitDivergence;
  }
  say(io.out, "replay ok: %zu evaluations identical\n", checker.matched());
  return kExitOk;
}

}  // namespace acof::cli
