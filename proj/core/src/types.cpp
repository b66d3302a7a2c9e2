#include "acof/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <utility>

#include "acof/errors.hpp"
#include "acof/fom.hpp"

namespace acof {

std::string_view to_string(Scale scale) { return scale == Scale::log ? "log" : "linear"; }

Scale scale_from_string(std::string_view text) {
  if (text == "linear") return Scale::linear;
  if (text == "log") return Scale::log;
  throw ValidationError("unknown scale '" + std::string(text) + "' (expected linear or log)");
}

void ParameterSpec::validate() const {
  if (name.empty()) throw ValidationError("parameter with empty name");
  if (!std::isfinite(lower) || !std::isfinite(upper)) {
    throw ValidationError("parameter " + name + ": bounds must be finite");
  }
  if (!(lower < upper)) {
    std::ostringstream os;
    os << "parameter " << name << ": lower (" << lower << ") must be < upper (" << upper << ")";
    throw ValidationError(os.str());
  }
  if (scale == Scale::log && !(lower > 0.0)) {
    throw ValidationError("parameter " + name + ": log scale requires lower > 0");
  }
}

ParameterSpace::ParameterSpace(std::vector<ParameterSpec> params) : params_(std::move(params)) {
  if (params_.empty()) throw ValidationError("parameter space must have at least one parameter");
  std::set<std::string, std::less<>> seen;
  for (const auto& p : params_) {
    p.validate();
    if (!seen.insert(p.name).second) {
      throw ValidationError("parameter " + p.name + ": duplicate name");
    }
  }
}

std::optional<std::size_t> ParameterSpace::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return std::nullopt;
}

double ParameterSpace::to_unit(std::size_t i, double native) const {
  const auto& p = params_[i];
  if (p.scale == Scale::log) {
    if (!(native > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    const double lo = std::log(p.lower);
    return (std::log(native) - lo) / (std::log(p.upper) - lo);
  }
  return (native - p.lower) / (p.upper - p.lower);
}

double ParameterSpace::to_native(std::size_t i, double unit) const {
  const auto& p = params_[i];
  if (unit == 0.0) return p.lower;
  if (unit == 1.0) return p.upper;
  if (p.scale == Scale::log) {
    const double lo = std::log(p.lower);
    return std::exp(lo + unit * (std::log(p.upper) - lo));
  }
  return p.lower + unit * (p.upper - p.lower);
}

void ParameterSpace::check_dimension(std::size_t n, std::string_view what) const {
  if (n != params_.size()) {
    std::ostringstream os;
    os << what << " has dimension " << n << ", space has " << params_.size();
    throw StructuralError(os.str());
  }
}

std::vector<double> ParameterSpace::normalize(const DesignPoint& point) const {
  check_dimension(point.size(), "design point");
  std::vector<double> z(point.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = to_unit(i, point.values[i]);
  return z;
}

DesignPoint ParameterSpace::denormalize(std::span<const double> unit) const {
  check_dimension(unit.size(), "unit vector");
  DesignPoint point;
  point.values.resize(unit.size());
  for (std::size_t i = 0; i < unit.size(); ++i) {
    point.values[i] = std::clamp(to_native(i, unit[i]), params_[i].lower, params_[i].upper);
  }
  return point;
}

Interval ParameterSpace::unit_interval(std::size_t i, const Interval& native) const {
  return {to_unit(i, native.lo), to_unit(i, native.hi)};
}

bool ParameterSpace::contains(const DesignPoint& point) const {
  if (point.size() != params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const double v = point.values[i];
    if (!(v >= params_[i].lower && v <= params_[i].upper)) return false;
  }
  return true;
}

void ParameterSpace::check_point(const DesignPoint& point) const {
  check_dimension(point.size(), "design point");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const double v = point.values[i];
    if (!(v >= params_[i].lower && v <= params_[i].upper)) {
      std::ostringstream os;
      os << "parameter " << params_[i].name << " = " << v << " outside [" << params_[i].lower
         << ", " << params_[i].upper << "]";
      throw DomainError(os.str());
    }
  }
}

Region ParameterSpace::full_region() const {
  Region r;
  r.ranges.reserve(params_.size());
  for (const auto& p : params_) r.ranges.push_back({p.lower, p.upper});
  return r;
}

std::vector<double> normalize(const DesignPoint& point, const ParameterSpace& space) {
  return space.normalize(point);
}

Region clip_region(const Region& region, const ParameterSpace& space) {
  space.check_dimension(region.size(), "region");
  Region out = region;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& r = out.ranges[i];
    if (r.lo > r.hi) std::swap(r.lo, r.hi);
    r.lo = std::clamp(r.lo, space[i].lower, space[i].upper);
    r.hi = std::clamp(r.hi, space[i].lower, space[i].upper);
  }
  return out;
}

bool is_legal(const Region& region, const ParameterSpace& space, double min_unit_width) {
  if (region.size() != space.dimension()) return false;
  for (std::size_t i = 0; i < region.size(); ++i) {
    const auto& r = region.ranges[i];
    if (!(space[i].lower <= r.lo && r.lo <= r.hi && r.hi <= space[i].upper)) return false;
    if (min_unit_width > 0.0) {
      const auto u = space.unit_interval(i, r);
      if (!(u.hi - u.lo >= min_unit_width)) return false;
    }
  }
  return true;
}

bool region_contains(const Region& region, const DesignPoint& point) {
  if (region.size() != point.size()) return false;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double v = point.values[i];
    if (!(v >= region.ranges[i].lo && v <= region.ranges[i].hi)) return false;
  }
  return true;
}

Measurements Measurements::invalid() {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  return {nan, nan, nan, nan, false};
}

void SpecTargets::validate() const {
  auto check = [](double v, const char* field) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw ValidationError(std::string("targets.") + field + " must be finite and > 0");
    }
  };
  check(gain_db, "gain_db");
  check(ugbw_hz, "ugbw_hz");
  check(pm_deg, "pm_deg");
  check(power_w, "power_w");
}

EvaluationRecord EvaluationRecord::make(std::uint64_t step, std::uint32_t round, DesignPoint point,
                                        const Measurements& meas, const SpecTargets& targets) {
  EvaluationRecord rec;
  rec.step = step;
  rec.round = round;
  rec.point = std::move(point);
  rec.meas = meas;
  if (meas.sim_valid) rec.fom = compute_fom(meas, targets).total;
  rec.phys_feasible = is_phys_feasible(meas);
  rec.validate();
  return rec;
}

void EvaluationRecord::validate() const {
  if (fom.has_value() != meas.sim_valid) {
    throw ValidationError("record " + std::to_string(step) + ": fom present iff sim_valid");
  }
  if (phys_feasible && !meas.sim_valid) {
    throw ValidationError("record " + std::to_string(step) + ": phys_feasible requires sim_valid");
  }
  if (fom && !std::isfinite(*fom)) {
    throw ValidationError("record " + std::to_string(step) + ": fom must be finite");
  }
}

bool ranks_before(const EvaluationRecord& a, const EvaluationRecord& b) {
  if (a.fom.has_value() != b.fom.has_value()) return a.fom.has_value();
  if (a.fom && *a.fom != *b.fom) return *a.fom > *b.fom;
  return a.step < b.step;
}

}  // namespace acof
