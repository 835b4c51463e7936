#pragma once

// Car-following laws: IDM, the constant-acceleration heuristic (CAH), and
// the enhanced IDM that blends the two through the coolness factor.

#include <algorithm>
#include <cmath>
#include <optional>

#include "caccsim/core.hpp"

namespace caccsim {

/// Emergency braking floor applied to every commanded acceleration.
inline constexpr double kEmergencyDecel = 9.0;

/// What a driver perceives of the vehicle directly ahead in its lane.
struct LeaderView {
  bool exists{false};
  double gap{0.0};    ///< bumper to bumper
  double speed{0.0};
  double accel{0.0};

  static constexpr LeaderView none() { return {}; }
  static constexpr LeaderView of(double gap, double speed, double accel = 0.0) {
    return {true, gap, speed, accel};
  }
};

/// Gap between the rear of `leader` and the front of `follower`.
inline double bumper_gap(const VehicleState& follower, const VehicleState& leader) {
  return leader.position - leader.length - follower.position;
}

namespace detail {

inline double free_term(double v, const DriverParams& p) {
  double r = v / p.v_des;
  if (p.delta == 4.0) {
    double r2 = r * r;
    return r2 * r2;
  }
  return std::pow(r, p.delta);
}

inline double clamp_command(double accel, const DriverParams& p) {
  return std::clamp(accel, -kEmergencyDecel, p.a);
}

/// Unclamped IDM value; the blend works on the raw law.
inline double idm_raw(double v, const LeaderView& leader, const DriverParams& p);

}  // namespace detail

/// Desired dynamic gap s*(v, v_lead), floored at s0.
inline double desired_gap(double v, double v_lead, const DriverParams& p) {
  double s = p.s0 + v * p.T + v * (v - v_lead) / (2.0 * std::sqrt(p.a * p.b));
  return std::max(p.s0, s);
}

inline double detail::idm_raw(double v, const LeaderView& leader, const DriverParams& p) {
  double free = 1.0 - free_term(v, p);
  if (!leader.exists) return p.a * free;
  if (!(leader.gap > 0.0))
    throw DegenerateInput("idm: non-positive gap to leader");
  double ratio = desired_gap(v, leader.speed, p) / leader.gap;
  return p.a * (free - ratio * ratio);
}

/// Plain IDM acceleration, clamped to [-kEmergencyDecel, a].
inline double idm_accel(double v, const LeaderView& leader, const DriverParams& p) {
  return detail::clamp_command(detail::idm_raw(v, leader, p), p);
}

/// Heaviside step with the convention theta(0) = 1.
constexpr double heaviside(double z) { return z >= 0.0 ? 1.0 : 0.0; }

/// Constant-acceleration heuristic. The leader's acceleration is capped at
/// the subject's own IDM acceleration before entering the formula.
inline double cah_accel(double v, double own_accel_idm, const LeaderView& leader) {
  if (!leader.exists || !(leader.gap > 0.0))
    throw DegenerateInput("cah: requires a leader at positive gap");
  const double s = leader.gap;
  const double vl = leader.speed;
  const double a_eff = std::min(leader.accel, own_accel_idm);
  const double denom = vl * vl - 2.0 * s * a_eff;
  // The first branch is only entered with a positive denominator; with a
  // stopped leader that is not braking the second branch gives the
  // stopping-distance deceleration instead of 0/0.
  if (vl * (v - vl) <= -2.0 * s * a_eff && denom > 0.0)
    return v * v * a_eff / denom;
  const double dv = v - vl;
  return a_eff - dv * dv * heaviside(dv) / (2.0 * s);
}

/// Enhanced IDM: IDM whenever it is at least as permissive as CAH,
/// otherwise the coolness-weighted blend that relaxes overreaction.
inline double eidm_accel(double v, const LeaderView& leader, const DriverParams& p) {
  const double idm = detail::idm_raw(v, leader, p);
  if (!leader.exists) return detail::clamp_command(idm, p);
  const double cah = cah_accel(v, std::min(idm, p.a), leader);
  if (idm >= cah) return detail::clamp_command(idm, p);
  const double c = p.coolness;
  const double blended =
      (1.0 - c) * idm + c * (cah + p.b * std::tanh((idm - cah) / p.b));
  return detail::clamp_command(blended, p);
}

/// Time gap a vehicle keeps to the vehicle in front of it.
///
/// `in_lane_leader` is the vehicle directly ahead in the same lane and
/// `platoon_predecessor` the member ahead of this vehicle in its platoon.
/// The short intra-platoon gap only applies when those coincide.
inline double effective_time_gap(const VehicleState& vehicle,
                                 std::optional<VehicleId> in_lane_leader,
                                 std::optional<VehicleId> platoon_predecessor,
                                 const CaccParams& cacc, const DriverParams& hv_params) {
  if (vehicle.cls == VehicleClass::HV) return hv_params.T;
  if (vehicle.role == Role::Follower && in_lane_leader && platoon_predecessor &&
      *in_lane_leader == *platoon_predecessor)
    return cacc.t_follower;
  return cacc.t_leader;
}

}  // namespace caccsim
