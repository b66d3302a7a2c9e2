#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>

#include "acof/types.hpp"

namespace acof::eval {

/// Measurements plus diagnostics destined for the run log only.
struct EvalResult {
  Measurements meas;
  std::string reason;      // why sim_valid is false; empty otherwise
  std::string transcript;  // raw simulator output, if any
};

/// Maps a design point to measurements. Simulation pathologies come back
/// as sim_valid = false; only structural problems throw.
///
/// Implementations must be safe to call concurrently.
class Evaluator {
 public:
  virtual ~Evaluator() = default;

  virtual EvalResult run(const DesignPoint& point) const = 0;
  Measurements evaluate(const DesignPoint& point) const { return run(point).meas; }

  /// True when identical inputs always give identical outputs.
  virtual bool deterministic() const = 0;
  virtual std::string_view kind() const = 0;
};

/// Smooth three-group op-amp surrogate with a hard failure pocket.
///
/// Parameters are assigned to groups A/B/C round-robin by index; a, b and c
/// are the group means of the normalized coordinates. a < 0.05 fails.
class SyntheticOpamp final : public Evaluator {
 public:
  explicit SyntheticOpamp(ParameterSpace space);

  EvalResult run(const DesignPoint& point) const override;
  bool deterministic() const override { return true; }
  std::string_view kind() const override { return "synthetic_opamp"; }

  static constexpr double kFailureThreshold = 0.05;

 private:
  ParameterSpace space_;
};

/// Gain landscape with three separated Gaussian pockets; bandwidth, phase
/// margin and power sit exactly at target.
class MultiPocket final : public Evaluator {
 public:
  MultiPocket(ParameterSpace space, SpecTargets targets);

  EvalResult run(const DesignPoint& point) const override;
  bool deterministic() const override { return true; }
  std::string_view kind() const override { return "multi_pocket"; }

  static constexpr double kPocketWidth = 0.15;
  const std::vector<std::vector<double>>& centers() const { return centers_; }

 private:
  ParameterSpace space_;
  SpecTargets targets_;
  std::vector<std::vector<double>> centers_;
};

enum class MeasField { gain_db, ugbw_hz, pm_deg, power_w };

std::string_view to_string(MeasField field);
MeasField meas_field_from_string(std::string_view text);

struct MeasurementBinding {
  MeasField field = MeasField::gain_db;
  double multiplier = 1.0;  // simulator value * multiplier = SI value
};

/// Simulator measurement name -> Measurements field.
using MeasurementMap = std::map<std::string, MeasurementBinding, std::less<>>;

struct NetlistTemplate {
  std::string body;
  std::set<std::string, std::less<>> required_params;
  MeasurementMap measurement_map;

  /// Builds a template whose required parameters are the placeholders found
  /// in body.
  static NetlistTemplate from_body(std::string body, MeasurementMap map);
  /// Checks that every required parameter appears in body and that the
  /// measurement map covers all four fields.
  void validate() const;
};

/// Placeholder names ({name}) in order of first appearance.
std::vector<std::string> find_placeholders(std::string_view body);

/// Shortest round-trip scientific rendering without exponent padding:
/// 2e-6, 1.5e-7, 3.3e2.
std::string format_spice_number(double value);

/// Substitutes every {name} with the parameter's native value. Throws
/// TemplateError naming the first unresolved placeholder.
std::string render_netlist(const NetlistTemplate& tmpl, const DesignPoint& point,
                           const ParameterSpace& space);

struct ParseOutcome {
  Measurements meas;
  std::string reason;
};

/// Scans "<name> = <value>" lines. Never throws: anything missing or
/// non-finite yields sim_valid = false with a reason.
ParseOutcome parse_measurements(std::string_view simulator_output, const MeasurementMap& map);

struct NgspiceSettings {
  std::string executable = "ngspice";
  std::chrono::milliseconds timeout{std::chrono::seconds(60)};
  std::filesystem::path work_root;  // empty = system temp directory
  bool keep_workdirs = false;
};

/// Runs ngspice in batch mode on a rendered netlist, one private working
/// directory and child process per call.
class NgspiceEvaluator final : public Evaluator {
 public:
  NgspiceEvaluator(ParameterSpace space, NetlistTemplate tmpl, NgspiceSettings settings);

  EvalResult run(const DesignPoint& point) const override;
  bool deterministic() const override { return false; }
  std::string_view kind() const override { return "ngspice"; }

  /// Resolved absolute path of the simulator executable.
  const std::filesystem::path& executable() const { return executable_; }

 private:
  ParameterSpace space_;
  NetlistTemplate tmpl_;
  NgspiceSettings settings_;
  std::filesystem::path executable_;
};

/// Locates an executable by absolute/relative path or PATH search. Throws
/// ConfigError when it cannot be found.
std::filesystem::path resolve_executable(const std::string& name);

enum class EvaluatorKind { synthetic_opamp, multi_pocket, ngspice };

std::string_view to_string(EvaluatorKind kind);
EvaluatorKind evaluator_kind_from_string(std::string_view text);

struct EvaluatorSpec {
  EvaluatorKind kind = EvaluatorKind::synthetic_opamp;
  // ngspice only
  std::filesystem::path template_path;
  MeasurementMap measurement_map;
  NgspiceSettings ngspice;

  void validate() const;
};

/// Builds the evaluator; for ngspice this loads the template and resolves
/// the executable, so an unreachable simulator fails before any budget is
/// spent.
std::unique_ptr<Evaluator> make_evaluator(const EvaluatorSpec& spec, const ParameterSpace& space,
                                          const SpecTargets& targets);

}  // namespace acof::eval
