#pragma once

#include "acof/types.hpp"

namespace acof {

/// Component scores and the weighted total. Every component lies in
/// [-1, 0]; zero means the target is met.
struct FomScore {
  double s_gain = 0.0;
  double s_bw = 0.0;
  double s_pm = 0.0;
  double s_power = 0.0;
  double total = 0.0;
};

inline constexpr double kGainWeight = 3.0;
/// Lowest attainable total (every component clamped at -1).
inline constexpr double kFomFloor = -(kGainWeight + 3.0);

/// Relative shortfall below a target that should be exceeded, clamped to [-1, 0].
double score_maximize(double value, double target);
/// Relative excess over a target that should not be exceeded, clamped to [-1, 0].
double score_minimize(double value, double target);

/// Throws InvalidMeasurementError when meas.sim_valid is false.
FomScore compute_fom(const Measurements& meas, const SpecTargets& targets);

/// Physical sanity check: valid output, positive bandwidth, phase margin and
/// power, non-negative gain.
bool is_phys_feasible(const Measurements& meas);

}  // namespace acof
