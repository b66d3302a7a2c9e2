#include <gtest/gtest.h>

#include <cstdio>
#include <sstream>

#include "acof/cli.hpp"
#include "acof/errors.hpp"
#include "test_util.hpp"

using namespace acof;
using namespace acof::cli;
namespace fs = std::filesystem;

namespace {

constexpr const char* kSecret = "sk-proj-SECRETSECRET42";

const std::vector<std::string> kSmall{"budget.seed_budget=30", "budget.round_budget=20",
                                      "budget.rounds=2", "acquisition.pool_size=128"};

json base_config() {
  return load_config_json(fs::path(ACOF_SOURCE_DIR) / "configs" / "synthetic_acof.json");
}

fs::path write_config(const testutil::TempDir& dir, const json& cfg, const std::string& name = "cfg.json") {
  const auto p = dir / name;
  testutil::spit(p, cfg.dump(2));
  return p;
}

/// Captures what a command prints.
struct Capture {
  std::FILE* out = std::tmpfile();
  std::FILE* err = std::tmpfile();
  ~Capture() {
    std::fclose(out);
    std::fclose(err);
  }
  Streams streams() const { return {out, err}; }
  static std::string read(std::FILE* f) {
    std::fflush(f);
    std::rewind(f);
    std::string s;
    char buf[4096];
    for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, f)) > 0;) s.append(buf, n);
    return s;
  }
  std::string out_text() const { return read(out); }
  std::string err_text() const { return read(err); }
};

std::string config_error(const json& cfg) {
  try {
    config_from_json(cfg);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

RunOptions quiet_to(const fs::path& log) {
  RunOptions o;
  o.log = log;
  o.quiet = true;
  return o;
}

}  // namespace

// ---------------------------------------------------------------------------
// config

TEST(Config, ShippedConfigsValidate) {
  for (const char* name : {"synthetic_acof.json", "multi_pocket_pure_bo.json", "multi_pocket_acof.json",
                           "synthetic_llm.json"}) {
    EXPECT_NO_THROW(load_config(fs::path(ACOF_SOURCE_DIR) / "configs" / name)) << name;
  }
}

TEST(Config, ErrorsNameTheField) {
  auto cfg = base_config();
  cfg["budget"]["rounds"] = "three";
  EXPECT_EQ(config_error(cfg).rfind("budget.rounds", 0), 0u) << config_error(cfg);

  cfg = base_config();
  cfg["acquisition"]["batchsize"] = 4;
  EXPECT_NE(config_error(cfg).find("acquisition.batchsize: unknown key"), std::string::npos);

  cfg = base_config();
  cfg["space"]["parameters"][2]["scale"] = "cubic";
  EXPECT_NE(config_error(cfg).find("space.parameters[2].scale"), std::string::npos) << config_error(cfg);

  cfg = base_config();
  cfg.erase("targets");
  EXPECT_NE(config_error(cfg).find("targets"), std::string::npos);
}

TEST(Config, ApiKeysAreRefusedInConfigFiles) {
  auto cfg = base_config();
  cfg["agents"]["llm"]["api_key"] = kSecret;
  const auto msg = config_error(cfg);
  EXPECT_NE(msg.find("ACOF_API_KEY"), std::string::npos);
  EXPECT_EQ(msg.find(kSecret), std::string::npos);
}

TEST(Config, ValidationErrorsBecomeConfigErrors) {
  testutil::TempDir dir;
  auto cfg = base_config();
  cfg["space"]["parameters"][0]["lower"] = 1.0;
  const auto p = write_config(dir, cfg);
  EXPECT_THROW(load_config(p), ConfigError);
  Capture cap;
  EXPECT_EQ(cmd_validate_config(p, {}, cap.streams()), kExitConfig);
  EXPECT_NE(cap.err_text().find("w0"), std::string::npos);
}

TEST(Config, Overrides) {
  json cfg = base_config();
  apply_override(cfg, "budget.rounds=5");
  apply_override(cfg, "agents.kind=llm");
  apply_override(cfg, "acquisition.xi=0.01");
  apply_override(cfg, "metrics.regret_include_seeding=false");
  EXPECT_EQ(cfg["budget"]["rounds"], 5);
  EXPECT_EQ(cfg["agents"]["kind"], "llm");
  EXPECT_DOUBLE_EQ(cfg["acquisition"]["xi"].get<double>(), 0.01);
  EXPECT_EQ(cfg["metrics"]["regret_include_seeding"], false);
  apply_override(cfg, "gp.keep_best=7");
  EXPECT_EQ(cfg["gp"]["keep_best"], 7);
  EXPECT_THROW(apply_override(cfg, "no_equals_sign"), ConfigError);
}

TEST(Config, NormalizedFormRoundTrips) {
  const auto c = config_from_json(base_config());
  const auto j = config_to_json(c);
  EXPECT_EQ(config_to_json(config_from_json(j)), j);
}

TEST(Config, Replayability) {
  auto c = config_from_json(base_config());
  EXPECT_TRUE(replayable(c));
  c.agents.kind = orch::AgentKind::llm;
  EXPECT_FALSE(replayable(c));
  c.mode = orch::Mode::pure_bo;
  EXPECT_TRUE(replayable(c));
}

// ---------------------------------------------------------------------------
// run, report, export

class RunFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testutil::TempDir;
    config_ = new fs::path(write_config(*dir_, base_config()));
    log_ = new fs::path(*dir_ / "run.jsonl");
    rc_ = cmd_run(*config_, kSmall, quiet_to(*log_));
  }
  static void TearDownTestSuite() {
    delete log_;
    delete config_;
    delete dir_;
  }
  static testutil::TempDir* dir_;
  static fs::path* config_;
  static fs::path* log_;
  static int rc_;
};

testutil::TempDir* RunFixture::dir_ = nullptr;
fs::path* RunFixture::config_ = nullptr;
fs::path* RunFixture::log_ = nullptr;
int RunFixture::rc_ = -1;

TEST_F(RunFixture, RunWritesLogReportAndTable) {
  ASSERT_EQ(rc_, kExitOk);
  EXPECT_TRUE(fs::exists(default_report_path(*log_)));
  EXPECT_TRUE(fs::exists(default_table_path(*log_)));
  const auto log = read_log(*log_);
  EXPECT_TRUE(log.complete);
  EXPECT_FALSE(log.warning.has_value());
  EXPECT_EQ(log.records.size(), 70u);
  EXPECT_EQ(log.round_summaries, 2u);
  EXPECT_EQ(log.events.front()["kind"], "config_snapshot");
  EXPECT_EQ(log.events.back()["kind"], "run_end");
  for (std::size_t i = 0; i < log.events.size(); ++i) EXPECT_EQ(log.events[i]["seq"], i + 1);
}

TEST_F(RunFixture, ReportFromLogMatchesRunReport) {
  ASSERT_EQ(rc_, kExitOk);
  ReportOptions opt;
  opt.out = *dir_ / "again.report.json";
  opt.table = *dir_ / "again.table.txt";
  Capture cap;
  ASSERT_EQ(cmd_report(*log_, opt, cap.streams()), kExitOk);
  EXPECT_EQ(testutil::slurp(opt.out), testutil::slurp(default_report_path(*log_)));
  EXPECT_EQ(testutil::slurp(opt.table), testutil::slurp(default_table_path(*log_)));
  EXPECT_NE(cap.out_text().find("Sim. Valid (%)"), std::string::npos);
}

TEST_F(RunFixture, ReportOverridesAreRecorded) {
  ASSERT_EQ(rc_, kExitOk);
  ReportOptions opt;
  opt.top_k = 5;
  opt.include_seeding = false;
  opt.out = *dir_ / "k5.report.json";
  opt.table = *dir_ / "k5.table.txt";
  Capture cap;
  ASSERT_EQ(cmd_report(*log_, opt, cap.streams()), kExitOk);
  const auto report = json::parse(testutil::slurp(opt.out));
  EXPECT_NE(report.dump().find("\"top_k\""), std::string::npos);
  EXPECT_NE(testutil::slurp(opt.out), testutil::slurp(default_report_path(*log_)));
}

TEST_F(RunFixture, TruncatedLogReportsItsPrefix) {
  ASSERT_EQ(rc_, kExitOk);
  const auto text = testutil::slurp(*log_);
  // keep the first 40 lines and half of the 41st
  std::size_t pos = 0;
  for (int i = 0; i < 40; ++i) pos = text.find('\n', pos) + 1;
  const auto cut = *dir_ / "cut.jsonl";
  testutil::spit(cut, text.substr(0, pos + 15));

  const auto log = read_log(cut);
  ASSERT_TRUE(log.warning.has_value());
  EXPECT_FALSE(log.complete);
  EXPECT_EQ(log.events.size(), 40u);
  std::size_t evals = 0;
  for (const auto& e : log.events) evals += e["kind"] == "seed_eval" || e["kind"] == "eval";
  EXPECT_EQ(log.records.size(), evals);

  ReportOptions opt;
  opt.out = *dir_ / "cut.report.json";
  opt.table = *dir_ / "cut.table.txt";
  Capture cap;
  EXPECT_EQ(cmd_report(cut, opt, cap.streams()), kExitOk);
  EXPECT_NE(cap.err_text().find("warning"), std::string::npos);
  EXPECT_NE(testutil::slurp(opt.table).find(std::to_string(evals) + " attempts"), std::string::npos);
}

TEST_F(RunFixture, CloudCsvLayout) {
  ASSERT_EQ(rc_, kExitOk);
  const auto out = *dir_ / "cloud.csv";
  Capture cap;
  ASSERT_EQ(cmd_export_cloud(*log_, out, cap.streams()), kExitOk);
  const auto text = testutil::slurp(out);
  std::vector<std::string> lines;
  std::size_t start = 0;
  for (auto p = text.find("\r\n"); p != std::string::npos; p = text.find("\r\n", start)) {
    lines.push_back(text.substr(start, p - start));
    start = p + 2;
  }
  EXPECT_EQ(start, text.size());  // every line ends in CRLF
  ASSERT_EQ(lines.size(), 71u);
  EXPECT_EQ(lines[0], "step,round,w0,w1,w2,w3,w4,w5,fom,sim_valid,phys_feasible");
  const auto log = read_log(*log_);
  const auto space = config_from_json(log.config).space;
  for (std::size_t i = 0; i < log.records.size(); ++i) {
    const auto& r = log.records[i];
    const auto z = space.normalize(r.point);
    const auto& line = lines[i + 1];
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 10);
    EXPECT_EQ(line.substr(0, line.find(',')), std::to_string(r.step));
    const std::string tail = r.fom ? (r.phys_feasible ? ",1,1" : ",1,0") : ",,0,0";
    EXPECT_EQ(line.substr(line.size() - tail.size()), tail) << line;
    // normalized coordinates round-trip exactly
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    std::getline(ss, field, ',');
    for (std::size_t d = 0; d < 6; ++d) {
      std::getline(ss, field, ',');
      EXPECT_EQ(std::stod(field), z[d]);
    }
  }
}

TEST_F(RunFixture, ReplayMatchesAndDetectsDivergence) {
  ASSERT_EQ(rc_, kExitOk);
  {
    Capture cap;
    EXPECT_EQ(cmd_replay(*log_, *config_, kSmall, cap.streams()), kExitOk);
    EXPECT_NE(cap.out_text().find("replay ok: 70 evaluations identical"), std::string::npos);
  }
  {
    auto diverging = kSmall;
    diverging.push_back("seed=99");
    Capture cap;
    EXPECT_EQ(cmd_replay(*log_, *config_, diverging, cap.streams()), kExitDivergence);
    EXPECT_NE(cap.err_text().find("diverged at seq"), std::string::npos);
  }
  {
    auto longer = kSmall;
    longer.push_back("budget.rounds=3");
    Capture cap;
    EXPECT_EQ(cmd_replay(*log_, *config_, longer, cap.streams()), kExitDivergence);
  }
}

TEST(Replay, RefusesLlmStacks) {
  testutil::TempDir dir;
  auto cfg = base_config();
  const auto heuristic = write_config(dir, cfg, "h.json");
  ASSERT_EQ(cmd_run(heuristic, {"budget.seed_budget=25", "budget.rounds=0"}, quiet_to(dir / "h.jsonl")), kExitOk);
  cfg["agents"]["kind"] = "llm";
  const auto llm_cfg = write_config(dir, cfg, "l.json");
  testutil::EnvGuard key(llm::kApiKeyEnv, std::string(kSecret));
  Capture cap;
  EXPECT_EQ(cmd_replay(dir / "h.jsonl", llm_cfg, {"budget.seed_budget=25"}, cap.streams()), kExitConfig);
  EXPECT_NE(cap.err_text().find("non-replayable"), std::string::npos);
}

TEST(Report, MissingLogIsConfigError) {
  Capture cap;
  EXPECT_EQ(cmd_report("/nonexistent/run.jsonl", {}, cap.streams()), kExitConfig);
  EXPECT_EQ(cmd_export_cloud("/nonexistent/run.jsonl", {}, cap.streams()), kExitConfig);
}

TEST(Report, LogMustStartWithSnapshot) {
  testutil::TempDir dir;
  testutil::spit(dir / "bad.jsonl", "{\"seq\":1,\"ts\":\"x\",\"kind\":\"eval\",\"payload\":{}}\n");
  EXPECT_THROW(read_log(dir / "bad.jsonl"), ConfigError);
}

TEST(Csv, FieldQuoting) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(csv_field("two\nlines"), "\"two\nlines\"");
}

TEST(Csv, InvalidRecordsHaveEmptyFom) {
  const auto space = testutil::unit_space(1);
  std::vector<EvaluationRecord> rs{testutil::invalid_record(1, 0, {0.25})};
  std::ostringstream os;
  write_cloud_csv(os, rs, space);
  EXPECT_EQ(os.str(), "step,round,p0,fom,sim_valid,phys_feasible\r\n1,0,0.25,,0,0\r\n");
}

TEST(Records, JsonRoundTrip) {
  const auto space = testutil::unit_space(2);
  for (const auto& r : {testutil::record_with_fom(3, 1, -0.4, {0.1, 0.2}), testutil::invalid_record(4, 1, {0.3, 0.4})}) {
    const auto back = record_from_json(record_to_json(r, space));
    EXPECT_EQ(back.step, r.step);
    EXPECT_EQ(back.round, r.round);
    EXPECT_EQ(back.point.values, r.point.values);
    EXPECT_EQ(back.fom, r.fom);
    EXPECT_EQ(back.phys_feasible, r.phys_feasible);
    EXPECT_EQ(back.meas.sim_valid, r.meas.sim_valid);
  }
}

// ---------------------------------------------------------------------------
// LLM stack through the CLI

TEST(LlmRun, MissingKeyIsConfigError) {
  testutil::TempDir dir;
  testutil::EnvGuard key(llm::kApiKeyEnv, std::nullopt);
  const auto cfg = fs::path(ACOF_SOURCE_DIR) / "configs" / "synthetic_llm.json";
  Capture cap;
  EXPECT_EQ(cmd_run(cfg, kSmall, quiet_to(dir / "llm.jsonl"), cap.streams()), kExitConfig);
  EXPECT_NE(cap.err_text().find("ACOF_API_KEY"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir / "llm.jsonl"));
  EXPECT_EQ(cmd_validate_config(cfg, {}, cap.streams()), kExitConfig);
}

TEST(LlmRun, KeyNeverReachesTheLog) {
  testutil::TempDir dir;
  testutil::EnvGuard key(llm::kApiKeyEnv, std::string(kSecret));

  std::string ranges;
  for (int i = 0; i < 6; ++i) ranges += std::string(i ? ", " : "") + "\"w" + std::to_string(i) + "\": [2e-6, 3e-5]";
  const std::string actor = "{\"ranges\": {" + ranges + "}, \"rationale\": \"my key is " + kSecret + "\"}";
  const std::string critic = "{\"approved\": true, \"corrected_ranges\": {" + ranges +
                             "}, \"memo\": \"echo " + kSecret + "\"}";
  auto transport = std::make_shared<llm::ScriptedTransport>();
  transport->status(500, std::string("upstream saw Bearer ") + kSecret)
      .reply(actor)
      .reply(critic)
      .reply(std::string("not json, but here is ") + kSecret)
      .reply(actor)
      .reply(critic);

  RunOptions opt = quiet_to(dir / "llm.jsonl");
  opt.transport = transport;
  opt.sleeper = [](std::chrono::milliseconds) {};
  Capture cap;
  const auto cfg = fs::path(ACOF_SOURCE_DIR) / "configs" / "synthetic_llm.json";
  ASSERT_EQ(cmd_run(cfg, kSmall, opt, cap.streams()), kExitOk) << cap.err_text();
  EXPECT_EQ(transport->remaining(), 0u);

  const auto log = testutil::slurp(dir / "llm.jsonl");
  EXPECT_EQ(log.find(kSecret), std::string::npos);
  EXPECT_NE(log.find("***"), std::string::npos);
  EXPECT_NE(log.find("parse_retry"), std::string::npos);
  for (const auto& f : fs::directory_iterator(dir.path())) {
    EXPECT_EQ(testutil::slurp(f.path()).find(kSecret), std::string::npos) << f.path();
  }
  EXPECT_EQ(cap.out_text().find(kSecret), std::string::npos);
  EXPECT_EQ(cap.err_text().find(kSecret), std::string::npos);
  // the key went out only as a header, never inside a request body
  for (const auto& seen : transport->seen()) EXPECT_EQ(seen.body.find(kSecret), std::string::npos);
}
