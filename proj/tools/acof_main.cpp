#include <CLI11.hpp>

#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "acof/cli.hpp"

namespace {

void add_overrides(CLI::App* cmd, std::vector<std::string>& overrides) {
  cmd->add_option("--set", overrides, "Override a config key, e.g. --set budget.rounds=5")
      ->type_name("KEY=VALUE");
}

}  // namespace

int main(int argc, char** argv) {
  using namespace acof::cli;

  CLI::App app{"Actor/critic guided Bayesian optimization for analog circuit sizing"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "acof 0.1.0");

  std::string config;
  std::string log;
  std::vector<std::string> overrides;

  RunOptions run_opts;
  std::string run_log, run_report, run_table;
  auto* run = app.add_subcommand("run", "Run an optimization and write its log and report");
  run->add_option("config", config, "Config file (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--log", run_log, "Run log path (default: <config stem>.jsonl)");
  run->add_option("--report", run_report, "Report path (default: <log stem>.report.json)");
  run->add_option("--table", run_table, "Table path (default: <log stem>.table.txt)");
  run->add_flag("-q,--quiet", run_opts.quiet, "No progress output");
  add_overrides(run, overrides);

  ReportOptions report_opts;
  std::string report_out, report_table_path;
  std::optional<std::size_t> k, mcs, ms;
  bool exclude_seeding = false;
  auto* report = app.add_subcommand("report", "Recompute the metrics report from a run log");
  report->add_option("log", log, "Run log")->required()->check(CLI::ExistingFile);
  report->add_option("-k,--top-k", k, "Designs averaged in the top-k summary");
  report->add_option("--min-cluster-size", mcs, "HDBSCAN minimum cluster size");
  report->add_option("--min-samples", ms, "HDBSCAN core-distance neighbour count");
  report->add_flag("--exclude-seeding", exclude_seeding, "Leave seeding steps out of regret");
  report->add_option("-o,--out", report_out, "Report path");
  report->add_option("--table", report_table_path, "Table path");

  std::string cloud_out;
  auto* cloud = app.add_subcommand("export-cloud", "Export every attempted design as CSV");
  cloud->add_option("log", log, "Run log")->required()->check(CLI::ExistingFile);
  cloud->add_option("-o,--out", cloud_out, "CSV path (default: <log stem>.cloud.csv)");

  auto* replay = app.add_subcommand("replay", "Re-run a deterministic run and compare evaluations");
  replay->add_option("log", log, "Run log")->required()->check(CLI::ExistingFile);
  replay->add_option("config", config, "Config file")->required()->check(CLI::ExistingFile);
  add_overrides(replay, overrides);

  auto* validate = app.add_subcommand("validate-config", "Check a config without running it");
  validate->add_option("config", config, "Config file")->required()->check(CLI::ExistingFile);
  add_overrides(validate, overrides);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (*run) {
    run_opts.log = run_log;
    run_opts.report = run_report;
    run_opts.table = run_table;
    return cmd_run(config, overrides, run_opts);
  }
  if (*report) {
    report_opts.top_k = k;
    report_opts.min_cluster_size = mcs;
    report_opts.min_samples = ms;
    if (exclude_seeding) report_opts.include_seeding = false;
    report_opts.out = report_out;
    report_opts.table = report_table_path;
    return cmd_report(log, report_opts);
  }
  if (*cloud) return cmd_export_cloud(log, cloud_out);
  if (*replay) return cmd_replay(log, config, overrides);
  return cmd_validate_config(config, overrides);
}
