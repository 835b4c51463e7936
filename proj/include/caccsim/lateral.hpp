#pragma once

// Discretionary lane changing (MOBIL) and the gap-acceptance check shared
// with CAV maneuvers.

#include <optional>
#include <vector>

#include "caccsim/core.hpp"
#include "caccsim/longitudinal.hpp"

namespace caccsim {

/// The vehicle directly behind a lane position, seen from the front.
struct FollowerView {
  bool exists{false};
  double gap{0.0};  ///< from the follower's front bumper to the rear of the vehicle ahead of it
  double speed{0.0};
  double accel{0.0};
  const DriverParams* params{nullptr};

  static constexpr FollowerView none() { return {}; }
  static constexpr FollowerView of(double gap, double speed, const DriverParams& p,
                                   double accel = 0.0) {
    return {true, gap, speed, accel, &p};
  }
};

struct LaneNeighbors {
  bool available{false};
  LeaderView leader;
  FollowerView follower;
};

/// Leaders and followers around a subject in its own and the adjacent lanes.
/// Gaps for the adjacent lanes are measured as if the subject already
/// occupied that lane at its current position.
struct NeighborSet {
  LaneNeighbors current;
  LaneNeighbors left;
  LaneNeighbors right;
};

enum class LaneChoice { Stay, Left, Right };

inline int target_lane(int lane, LaneChoice side) {
  return side == LaneChoice::Left ? lane - 1 : side == LaneChoice::Right ? lane + 1 : lane;
}

/// Safety of moving `subject_speed` into a lane with the given neighbors.
inline bool gap_acceptable(double subject_speed, const LeaderView& target_leader,
                           const FollowerView& target_follower, const DriverParams& p,
                           double b_safe) {
  if (target_leader.exists) {
    if (target_leader.gap < p.s0) return false;
    if (idm_accel(subject_speed, target_leader, p) < -b_safe) return false;
  }
  if (target_follower.exists) {
    const DriverParams& fp = target_follower.params ? *target_follower.params : p;
    if (target_follower.gap < fp.s0) return false;
    auto as_leader = LeaderView::of(target_follower.gap, subject_speed);
    if (idm_accel(target_follower.speed, as_leader, fp) < -b_safe) return false;
  }
  return true;
}

namespace detail {

/// MOBIL incentive for moving into `target`; nullopt when unsafe.
inline std::optional<double> mobil_incentive(const VehicleState& subject, const LaneNeighbors& current,
                                             const LaneNeighbors& target, const DriverParams& p) {
  if (!target.available) return std::nullopt;
  if (!gap_acceptable(subject.speed, target.leader, target.follower, p, p.b_safe))
    return std::nullopt;

  const double v = subject.speed;
  const double a_c = idm_accel(v, current.leader, p);
  const double a_c_new = idm_accel(v, target.leader, p);

  double gain_n = 0.0;
  if (target.follower.exists) {
    const auto& nf = target.follower;
    const DriverParams& np = nf.params ? *nf.params : p;
    LeaderView before = LeaderView::none();
    if (target.leader.exists)
      before = LeaderView::of(nf.gap + subject.length + target.leader.gap, target.leader.speed,
                              target.leader.accel);
    const double a_n = idm_accel(nf.speed, before, np);
    const double a_n_new = idm_accel(nf.speed, LeaderView::of(nf.gap, v), np);
    gain_n = a_n_new - a_n;
  }

  double gain_o = 0.0;
  if (current.follower.exists) {
    const auto& of = current.follower;
    const DriverParams& op = of.params ? *of.params : p;
    const double a_o = idm_accel(of.speed, LeaderView::of(of.gap, v), op);
    LeaderView after = LeaderView::none();
    if (current.leader.exists)
      after = LeaderView::of(of.gap + subject.length + current.leader.gap, current.leader.speed,
                             current.leader.accel);
    const double a_o_new = idm_accel(of.speed, after, op);
    gain_o = a_o_new - a_o;
  }

  return (a_c_new - a_c) + p.politeness * (gain_n + gain_o);
}

}  // namespace detail

/// Symmetric MOBIL. Picks the side with the larger incentive above the
/// threshold; equal incentives go right.
inline LaneChoice mobil_decision(const VehicleState& subject, const NeighborSet& nbrs,
                                 const DriverParams& p) {
  if (subject.lane_change_cooldown > 0.0) return LaneChoice::Stay;
  auto left = detail::mobil_incentive(subject, nbrs.current, nbrs.left, p);
  auto right = detail::mobil_incentive(subject, nbrs.current, nbrs.right, p);
  const bool go_left = left && *left > p.a_thr;
  const bool go_right = right && *right > p.a_thr;
  if (go_right && (!go_left || *right >= *left)) return LaneChoice::Right;
  if (go_left) return LaneChoice::Left;
  return LaneChoice::Stay;
}

/// Moves the subject one lane, starts the cooldown and records the change.
inline VehicleState execute_lane_change(const VehicleState& subject, LaneChoice side, int lane_count,
                                        double cooldown_s, double time, LaneChangeKind kind,
                                        std::vector<Event>& log) {
  if (side == LaneChoice::Stay) throw std::invalid_argument("lane change needs a side");
  const int to = target_lane(subject.lane, side);
  if (to < 0 || to >= lane_count)
    throw std::out_of_range("lane change into non-existent lane " + std::to_string(to));
  VehicleState out = subject;
  out.lane = to;
  out.lane_change_cooldown = cooldown_s;
  log.push_back(Event{time, EventKind::LaneChange, subject.id, subject.cls, subject.lane, to, kind});
  return out;
}

}  // namespace caccsim
