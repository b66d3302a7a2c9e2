#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace acof {

enum class Scale { linear, log };

std::string_view to_string(Scale scale);
Scale scale_from_string(std::string_view text);

/// One tunable dimension of the global design domain.
struct ParameterSpec {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
  std::string unit;
  Scale scale = Scale::linear;

  /// Throws ValidationError naming the parameter when bounds are unusable.
  void validate() const;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double width() const { return hi - lo; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Per-dimension search ranges in native units, aligned with a space.
///
/// A region produced by an actor is "unaudited" and may be reversed or
/// exceed the global bounds; critic output is "legal".
struct Region {
  std::vector<Interval> ranges;

  std::size_t size() const { return ranges.size(); }
  friend bool operator==(const Region&, const Region&) = default;
};

struct DesignPoint {
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  friend bool operator==(const DesignPoint&, const DesignPoint&) = default;
};

/// The ordered global design domain. Vectors everywhere align by index.
class ParameterSpace {
 public:
  ParameterSpace() = default;
  explicit ParameterSpace(std::vector<ParameterSpec> params);

  std::size_t dimension() const { return params_.size(); }
  const std::vector<ParameterSpec>& params() const { return params_; }
  const ParameterSpec& operator[](std::size_t i) const { return params_[i]; }
  std::optional<std::size_t> index_of(std::string_view name) const;

  /// Native value -> unit coordinate. No range check; log scale of a
  /// non-positive value yields NaN.
  double to_unit(std::size_t i, double native) const;
  /// Unit coordinate -> native value. Extrapolates outside [0, 1].
  double to_native(std::size_t i, double unit) const;

  std::vector<double> normalize(const DesignPoint& point) const;
  /// Inverse of normalize; results are clamped into the global bounds.
  DesignPoint denormalize(std::span<const double> unit) const;

  Interval unit_interval(std::size_t i, const Interval& native) const;

  bool contains(const DesignPoint& point) const;
  /// Throws StructuralError on dimension mismatch, DomainError when a value
  /// leaves the global bounds.
  void check_point(const DesignPoint& point) const;
  void check_dimension(std::size_t n, std::string_view what) const;

  Region full_region() const;

 private:
  std::vector<ParameterSpec> params_;
};

/// Free-function form of ParameterSpace::normalize.
std::vector<double> normalize(const DesignPoint& point, const ParameterSpace& space);

/// Swap reversed pairs, then clamp every bound into the global range.
Region clip_region(const Region& region, const ParameterSpace& space);

/// True when every range satisfies lower <= lo <= hi <= upper and has a
/// normalized width of at least min_unit_width.
bool is_legal(const Region& region, const ParameterSpace& space, double min_unit_width = 0.0);

/// Closed-interval containment test in native units.
bool region_contains(const Region& region, const DesignPoint& point);

/// Simulated performance of one design. Values carry no meaning when
/// sim_valid is false.
struct Measurements {
  double gain_db = 0.0;
  double ugbw_hz = 0.0;
  double pm_deg = 0.0;
  double power_w = 0.0;
  bool sim_valid = false;

  static Measurements invalid();
};

struct SpecTargets {
  double gain_db = 1.0;
  double ugbw_hz = 1.0;
  double pm_deg = 1.0;
  double power_w = 1.0;

  void validate() const;
};

struct EvaluationRecord {
  std::uint64_t step = 0;
  std::uint32_t round = 0;
  DesignPoint point;
  Measurements meas;
  std::optional<double> fom;
  bool phys_feasible = false;

  /// Scores meas against targets and derives the feasibility flag.
  static EvaluationRecord make(std::uint64_t step, std::uint32_t round, DesignPoint point,
                               const Measurements& meas, const SpecTargets& targets);
  void validate() const;
};

/// Orders records by descending fom, earlier step first on ties. Records
/// without fom sort last.
bool ranks_before(const EvaluationRecord& a, const EvaluationRecord& b);

struct ParamStats {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

struct RoundCounts {
  std::size_t attempted = 0;
  std::size_t sim_valid = 0;
  std::size_t phys_feasible = 0;
};

/// Digest of one round handed back to the actor.
struct RoundSummary {
  std::uint32_t round = 0;
  std::optional<EvaluationRecord> best_record;
  std::vector<EvaluationRecord> top_records;
  std::string critic_memo;
  std::vector<ParamStats> stats;  // empty when the round had no feasible point
  RoundCounts counts;
};

}  // namespace acof
