#include "acof/fom.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "acof/errors.hpp"

namespace acof {
namespace {

void require_target(double target) {
  if (!(target > 0.0)) {
    std::ostringstream os;
    os << "target must be > 0 (got " << target << ")";
    throw DomainError(os.str());
  }
}

}  // namespace

double score_maximize(double value, double target) {
  require_target(target);
  return std::clamp((value - target) / target, -1.0, 0.0);
}

double score_minimize(double value, double target) {
  require_target(target);
  return std::clamp((target - value) / target, -1.0, 0.0);
}

FomScore compute_fom(const Measurements& meas, const SpecTargets& targets) {
  if (!meas.sim_valid) {
    throw InvalidMeasurementError("cannot score an invalid simulation result");
  }
  FomScore s;
  s.s_gain = score_maximize(meas.gain_db, targets.gain_db);
  s.s_bw = score_maximize(meas.ugbw_hz, targets.ugbw_hz);
  s.s_pm = score_maximize(meas.pm_deg, targets.pm_deg);
  s.s_power = score_minimize(meas.power_w, targets.power_w);
  s.total = kGainWeight * s.s_gain + s.s_bw + s.s_pm + s.s_power;
  return s;
}

bool is_phys_feasible(const Measurements& meas) {
  return meas.sim_valid && meas.ugbw_hz > 0.0 && meas.pm_deg > 0.0 && meas.power_w > 0.0 &&
         meas.gain_db >= 0.0;
}

}  // namespace acof
