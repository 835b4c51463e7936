#pragma once

// CAV platoon lifecycle: the membership registry, opportunity scanning,
// the front/mid/rear join state machine, splitting, and preferential-lane
// drift.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "caccsim/core.hpp"
#include "caccsim/lateral.hpp"
#include "caccsim/longitudinal.hpp"
#include "caccsim/snapshot.hpp"

namespace caccsim {

enum class JoinState : std::uint8_t { Approaching, AwaitingGap, Merging, Completed, Aborted };

inline std::string_view to_string(JoinState s) {
  switch (s) {
    case JoinState::Approaching: return "Approaching";
    case JoinState::AwaitingGap: return "AwaitingGap";
    case JoinState::Merging: return "Merging";
    case JoinState::Completed: return "Completed";
    case JoinState::Aborted: return "Aborted";
  }
  return "Aborted";
}

/// One free agent's attempt to join a platoon or pair up with another free agent.
struct JoinPlan {
  VehicleId subject_id{};
  std::optional<PlatoonId> target_platoon_id;
  std::optional<VehicleId> target_vehicle_id;  ///< set when the target is a free agent
  JoinType join_type{JoinType::Rear};
  int target_lane{0};
  std::size_t insertion_index{0};
  JoinState state{JoinState::Approaching};
  double deadline{0.0};  ///< absolute simulation time

  bool finished() const noexcept {
    return state == JoinState::Completed || state == JoinState::Aborted;
  }
};

// ---------------------------------------------------------------------------
// Pure membership operations
// ---------------------------------------------------------------------------

inline bool admission_check(const Platoon& platoon, const CaccParams& cacc) {
  return !platoon.dissolving &&
         platoon.size() + 1 <= static_cast<std::size_t>(cacc.max_platoon_size);
}

struct SplitResult {
  std::vector<Platoon> platoons;      ///< surviving platoons (size >= 2)
  std::vector<VehicleId> released;    ///< vehicles that are free agents afterwards
};

namespace detail {

inline void keep_or_release(std::vector<VehicleId> members, PlatoonId id, int lane, SplitResult& out) {
  if (members.size() >= 2) {
    Platoon p;
    p.id = id;
    p.leader_id = members.front();
    p.member_ids = std::move(members);
    p.lane = lane;
    out.platoons.push_back(std::move(p));
  } else {
    for (auto v : members) out.released.push_back(v);
  }
}

}  // namespace detail

/// Removes `departing` from `platoon`. A leaving leader is succeeded by the
/// next member; a leaving middle member splits the platoon in two; any
/// piece of one vehicle reverts to a free agent. The front piece keeps the
/// original id.
inline SplitResult dissolve_or_split(const Platoon& platoon, VehicleId departing,
                                     IdAllocator<PlatoonId>& ids) {
  SplitResult out;
  auto k = platoon.index_of(departing);
  if (!k) throw std::invalid_argument("dissolve_or_split: vehicle is not a member");
  out.released.push_back(departing);
  const auto& m = platoon.member_ids;
  std::vector<VehicleId> front(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(*k));
  std::vector<VehicleId> back(m.begin() + static_cast<std::ptrdiff_t>(*k) + 1, m.end());
  if (front.empty()) {
    detail::keep_or_release(std::move(back), platoon.id, platoon.lane, out);
  } else {
    detail::keep_or_release(std::move(front), platoon.id, platoon.lane, out);
    if (!back.empty()) {
      PlatoonId back_id = back.size() >= 2 ? ids.next() : PlatoonId{};
      detail::keep_or_release(std::move(back), back_id, platoon.lane, out);
    }
  }
  return out;
}

/// Cuts `platoon` in front of member `index`; members keep their vehicles.
inline SplitResult split_at(const Platoon& platoon, std::size_t index, IdAllocator<PlatoonId>& ids) {
  if (index == 0 || index >= platoon.size())
    throw std::invalid_argument("split_at: index must address a follower");
  SplitResult out;
  const auto& m = platoon.member_ids;
  std::vector<VehicleId> front(m.begin(), m.begin() + static_cast<std::ptrdiff_t>(index));
  std::vector<VehicleId> back(m.begin() + static_cast<std::ptrdiff_t>(index), m.end());
  detail::keep_or_release(std::move(front), platoon.id, platoon.lane, out);
  PlatoonId back_id = back.size() >= 2 ? ids.next() : PlatoonId{};
  detail::keep_or_release(std::move(back), back_id, platoon.lane, out);
  return out;
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

/// Authoritative platoon membership. Every mutation records the vehicles
/// whose role may have changed so the caller can mirror it onto
/// VehicleState.
class PlatoonRegistry {
 public:
  const std::map<PlatoonId, Platoon>& all() const noexcept { return platoons_; }
  std::size_t size() const noexcept { return platoons_.size(); }

  const Platoon* find(PlatoonId id) const {
    auto it = platoons_.find(id);
    return it == platoons_.end() ? nullptr : &it->second;
  }
  Platoon* find(PlatoonId id) {
    auto it = platoons_.find(id);
    return it == platoons_.end() ? nullptr : &it->second;
  }

  std::optional<PlatoonId> platoon_of(VehicleId v) const {
    auto it = member_of_.find(v);
    if (it == member_of_.end()) return std::nullopt;
    return it->second;
  }

  PlatoonId create(std::vector<VehicleId> members, int lane) {
    if (members.size() < 2) throw std::invalid_argument("a platoon needs at least two members");
    Platoon p;
    p.id = ids_.next();
    p.leader_id = members.front();
    p.member_ids = std::move(members);
    p.lane = lane;
    PlatoonId id = p.id;
    install(std::move(p));
    return id;
  }

  /// Removes a member; see dissolve_or_split.
  void depart(VehicleId v) {
    auto pid = platoon_of(v);
    if (!pid) return;
    Platoon old = platoons_.at(*pid);
    remove(*pid);
    apply(dissolve_or_split(old, v, ids_));
  }

  void split(PlatoonId pid, std::size_t index) {
    Platoon old = platoons_.at(pid);
    remove(pid);
    apply(split_at(old, index, ids_));
  }

  void insert(PlatoonId pid, std::size_t index, VehicleId v) {
    Platoon& p = platoons_.at(pid);
    if (index > p.size()) throw std::out_of_range("insert: index past the tail");
    p.member_ids.insert(p.member_ids.begin() + static_cast<std::ptrdiff_t>(index), v);
    p.leader_id = p.member_ids.front();
    member_of_[v] = pid;
    for (auto m : p.member_ids) touched_.push_back(m);
  }

  /// Appends all members of `back` behind the tail of `front`.
  void merge(PlatoonId front, PlatoonId back) {
    Platoon b = platoons_.at(back);
    remove(back);
    Platoon& f = platoons_.at(front);
    for (auto m : b.member_ids) {
      f.member_ids.push_back(m);
      member_of_[m] = front;
    }
    for (auto m : f.member_ids) touched_.push_back(m);
  }

  void set_lane(PlatoonId pid, int lane) { platoons_.at(pid).lane = lane; }
  void set_dissolving(PlatoonId pid, bool d) { platoons_.at(pid).dissolving = d; }

  /// Vehicles whose membership changed since the last call (may repeat).
  std::vector<VehicleId> take_touched() { return std::exchange(touched_, {}); }

 private:
  void install(Platoon p) {
    for (auto m : p.member_ids) {
      member_of_[m] = p.id;
      touched_.push_back(m);
    }
    PlatoonId id = p.id;
    platoons_.emplace(id, std::move(p));
  }

  void remove(PlatoonId pid) {
    auto it = platoons_.find(pid);
    for (auto m : it->second.member_ids) {
      member_of_.erase(m);
      touched_.push_back(m);
    }
    platoons_.erase(it);
  }

  void apply(SplitResult r) {
    for (auto& p : r.platoons) install(std::move(p));
    for (auto v : r.released) touched_.push_back(v);
  }

  std::map<PlatoonId, Platoon> platoons_;
  std::unordered_map<VehicleId, PlatoonId> member_of_;
  std::vector<VehicleId> touched_;
  IdAllocator<PlatoonId> ids_;
};

/// Bidirectional consistency between the registry and the vehicle states,
/// plus the size cap and the front-to-back ordering of co-lane members.
/// Returns an empty string when everything holds.
inline std::string check_membership(const TrafficSnapshot& snap, const PlatoonRegistry& reg,
                                    const CaccParams& cacc) {
  for (std::size_t i = 0; i < snap.size(); ++i) {
    const auto& v = snap.vehicle(i);
    auto pid = reg.platoon_of(v.id);
    if (pid != v.platoon_id)
      return "vehicle " + std::to_string(v.id.value) + " platoon id disagrees with registry";
    if (pid) {
      const Platoon* p = reg.find(*pid);
      Role expect = p->leader_id == v.id ? Role::Leader : Role::Follower;
      if (v.role != expect) return "vehicle " + std::to_string(v.id.value) + " has wrong role";
    } else if (v.cls == VehicleClass::CAV && v.role != Role::FreeAgent) {
      return "vehicle " + std::to_string(v.id.value) + " outside platoons is not a free agent";
    }
  }
  for (const auto& [pid, p] : reg.all()) {
    const std::string tag = "platoon " + std::to_string(pid.value);
    if (p.size() < 2) return tag + " has fewer than two members";
    if (p.size() > static_cast<std::size_t>(cacc.max_platoon_size)) return tag + " exceeds size cap";
    if (p.member_ids.front() != p.leader_id) return tag + " leader is not first";
    std::vector<VehicleId> sorted = p.member_ids;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) return tag + " has duplicates";
    for (std::size_t k = 0; k < p.size(); ++k) {
      std::size_t i = snap.find(p.member_ids[k]);
      if (i == TrafficSnapshot::npos) return tag + " references an absent vehicle";
      if (snap.vehicle(i).platoon_id != pid) return tag + " member disagrees on platoon id";
      if (k > 0) {
        std::size_t j = snap.find(p.member_ids[k - 1]);
        const auto& a = snap.vehicle(j);
        const auto& b = snap.vehicle(i);
        if (a.lane == b.lane && !(a.position > b.position))
          return tag + " members out of order: " + std::to_string(a.id.value) + " at " +
                 std::to_string(a.position) + " ahead of " + std::to_string(b.id.value) + " at " +
                 std::to_string(b.position) + " in lane " + std::to_string(a.lane);
      }
    }
  }
  return {};
}

// ---------------------------------------------------------------------------
// Opportunity scanning
// ---------------------------------------------------------------------------

/// Knobs of the local coordination strategy that live outside CaccParams.
struct JoinSettings {
  double deadline_s{30.0};
  double couple_range_m{60.0};
  double approach_speed_advantage_mps{3.0};
  double b_safe{4.0};
};

namespace detail {

/// A platoon or a lone free agent, described by its member indices.
struct JoinTarget {
  std::optional<PlatoonId> platoon;
  std::optional<VehicleId> free_agent;
  std::vector<std::size_t> members;  ///< snapshot indices, front to back
  int lane{0};
  double distance{0.0};
};

inline std::optional<JoinTarget> resolve_target(const TrafficSnapshot& snap, const PlatoonRegistry& reg,
                                                std::optional<PlatoonId> platoon,
                                                std::optional<VehicleId> free_agent) {
  JoinTarget t;
  t.platoon = platoon;
  t.free_agent = free_agent;
  if (platoon) {
    const Platoon* p = reg.find(*platoon);
    if (!p) return std::nullopt;
    for (auto m : p->member_ids) {
      std::size_t i = snap.find(m);
      if (i == TrafficSnapshot::npos) return std::nullopt;
      t.members.push_back(i);
    }
    t.lane = snap.vehicle(t.members.front()).lane;
  } else if (free_agent) {
    std::size_t i = snap.find(*free_agent);
    if (i == TrafficSnapshot::npos) return std::nullopt;
    if (snap.vehicle(i).role != Role::FreeAgent) return std::nullopt;
    t.members.push_back(i);
    t.lane = snap.vehicle(i).lane;
  } else {
    return std::nullopt;
  }
  return t;
}

/// Finds k such that the subject sits between member k-1 and member k.
inline std::optional<std::size_t> mid_slot(const TrafficSnapshot& snap, std::size_t subject,
                                           const std::vector<std::size_t>& members) {
  const auto& s = snap.vehicle(subject);
  for (std::size_t k = 1; k < members.size(); ++k) {
    const auto& pred = snap.vehicle(members[k - 1]);
    const auto& succ = snap.vehicle(members[k]);
    if (pred.rear() > s.position && s.rear() > succ.position) return k;
  }
  return std::nullopt;
}

}  // namespace detail

/// Looks for the best join opportunity of a free-agent CAV.
///
/// `busy(id)` reports vehicles that currently run a join plan of their own;
/// such free agents are not valid targets. Candidates are ranked same lane
/// first, then by longitudinal distance, then by id.
template <typename BusyFn>
std::optional<JoinPlan> scan_opportunities(std::size_t subject, const TrafficSnapshot& snap,
                                           const PlatoonRegistry& reg, const CaccParams& cacc,
                                           const JoinSettings& settings, double now, BusyFn&& busy) {
  const auto& s = snap.vehicle(subject);
  if (s.cls != VehicleClass::CAV || s.role != Role::FreeAgent) return std::nullopt;

  std::vector<detail::JoinTarget> candidates;
  std::vector<PlatoonId> seen;
  for (int lane = 0; lane < snap.lane_count(); ++lane) {
    for (std::size_t j : snap.lane(lane)) {
      if (j == subject) continue;
      const auto& v = snap.vehicle(j);
      if (v.cls != VehicleClass::CAV) continue;
      if (std::abs(v.position - s.position) > cacc.comm_range + v.length + s.length) continue;
      std::optional<detail::JoinTarget> t;
      if (v.platoon_id) {
        if (std::find(seen.begin(), seen.end(), *v.platoon_id) != seen.end()) continue;
        seen.push_back(*v.platoon_id);
        t = detail::resolve_target(snap, reg, v.platoon_id, std::nullopt);
      } else {
        if (busy(v.id)) continue;
        t = detail::resolve_target(snap, reg, std::nullopt, v.id);
      }
      if (!t) continue;
      const auto& head = snap.vehicle(t->members.front());
      const auto& tail = snap.vehicle(t->members.back());
      if (s.position < tail.rear())
        t->distance = tail.rear() - s.position;
      else if (s.rear() > head.position)
        t->distance = s.rear() - head.position;
      else
        t->distance = 0.0;
      if (t->distance > cacc.comm_range) continue;
      candidates.push_back(std::move(*t));
    }
  }

  std::sort(candidates.begin(), candidates.end(), [&](const auto& x, const auto& y) {
    const bool xs = x.lane == s.lane;
    const bool ys = y.lane == s.lane;
    if (xs != ys) return xs;
    if (x.distance != y.distance) return x.distance < y.distance;
    return snap.vehicle(x.members.front()).id < snap.vehicle(y.members.front()).id;
  });

  const auto enabled = [&](JoinType t) { return cacc.join_types_enabled.count(t) > 0; };
  for (const auto& t : candidates) {
    if (t.platoon && !admission_check(*reg.find(*t.platoon), cacc)) continue;
    const std::size_t head = t.members.front();
    const std::size_t tail = t.members.back();
    JoinPlan plan;
    plan.subject_id = s.id;
    plan.target_platoon_id = t.platoon;
    plan.target_vehicle_id = t.free_agent;
    plan.target_lane = t.lane;
    plan.deadline = now + settings.deadline_s;
    plan.state = JoinState::Approaching;
    if (s.position < snap.vehicle(tail).rear()) {
      if (!enabled(JoinType::Rear)) continue;
      // In the own lane only the vehicle directly ahead can be joined.
      if (t.lane == s.lane && snap.leader_of(subject) != tail) continue;
      plan.join_type = JoinType::Rear;
      plan.insertion_index = t.members.size();
    } else if (s.rear() > snap.vehicle(head).position) {
      if (!enabled(JoinType::Front)) continue;
      if (t.lane == s.lane && snap.follower_of(subject) != head) continue;
      plan.join_type = JoinType::Front;
      plan.insertion_index = 0;
    } else {
      if (!enabled(JoinType::Mid) || t.lane == s.lane) continue;
      auto k = detail::mid_slot(snap, subject, t.members);
      if (!k) continue;
      plan.join_type = JoinType::Mid;
      plan.insertion_index = *k;
    }
    return plan;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Join state machine
// ---------------------------------------------------------------------------

/// Longitudinal guidance a joining vehicle must respect this step.
struct JoinGuidance {
  double desired_speed{0.0};       ///< speed the subject may accelerate toward while the plan runs
  LeaderView virtual_leader;       ///< insertion point, followed at t_follower
};

struct JoinStep {
  JoinPlan plan;
  LaneChoice lane_change{LaneChoice::Stay};
  std::optional<JoinGuidance> guidance;
};

/// Advances one join plan against the current snapshot.
///
/// `subject_params` is the parameter set the subject is controlled with.
/// The returned plan is in Merging when the join can complete this step,
/// possibly after the lane change in `lane_change`; the caller finishes it
/// with complete_join once the change has been applied.
inline JoinStep advance_join(const JoinPlan& plan, std::size_t subject, const TrafficSnapshot& snap,
                             const PlatoonRegistry& reg, const CaccParams& cacc,
                             const JoinSettings& settings, const DriverParams& subject_params,
                             double now) {
  JoinStep out{plan, LaneChoice::Stay, std::nullopt};
  if (plan.finished()) return out;
  auto abort = [&] {
    out.plan.state = JoinState::Aborted;
    out.lane_change = LaneChoice::Stay;
    out.guidance.reset();
    return out;
  };
  if (now >= plan.deadline) return abort();
  auto target = detail::resolve_target(snap, reg, plan.target_platoon_id, plan.target_vehicle_id);
  if (!target) return abort();
  if (plan.target_platoon_id) {
    const Platoon* p = reg.find(*plan.target_platoon_id);
    if (!admission_check(*p, cacc)) return abort();
    if (p->dissolving) return abort();
  }
  const auto& s = snap.vehicle(subject);
  if (s.role != Role::FreeAgent) return abort();
  out.plan.target_lane = target->lane;

  const auto& members = target->members;
  const std::size_t head = members.front();
  const std::size_t tail = members.back();

  // Lane flow: speed of whatever is ahead in the subject's lane.
  const std::size_t own_leader = snap.leader_of(subject);
  double lane_flow = subject_params.v_des;
  if (own_leader != TrafficSnapshot::npos &&
      bumper_gap(s, snap.vehicle(own_leader)) <= cacc.comm_range)
    lane_flow = snap.vehicle(own_leader).speed;
  const double sprint_cap = lane_flow + settings.approach_speed_advantage_mps;

  // Expected neighbors in the target lane once the subject is there.
  std::size_t want_leader = TrafficSnapshot::npos;
  std::size_t want_follower = TrafficSnapshot::npos;
  bool aligned = false;
  JoinGuidance g;

  switch (plan.join_type) {
    case JoinType::Rear: {
      const auto& t = snap.vehicle(tail);
      const double vgap = t.rear() - s.position;
      if (vgap <= 0.0) return abort();
      want_leader = tail;
      aligned = vgap <= settings.couple_range_m;
      g.desired_speed = std::max(sprint_cap, 0.0);
      g.virtual_leader = LeaderView::of(vgap, t.speed, t.accel);
      break;
    }
    case JoinType::Front: {
      const auto& h = snap.vehicle(head);
      const double vgap = s.rear() - h.position;
      if (vgap <= 0.0) return abort();
      want_follower = head;
      aligned = vgap <= settings.couple_range_m;
      // Keep pace with the own lane but never fall back below the head's speed.
      g.desired_speed = std::clamp(std::max(h.speed, lane_flow), 0.5, sprint_cap);
      break;
    }
    case JoinType::Mid: {
      const std::size_t k = plan.insertion_index;
      if (k == 0 || k >= members.size()) return abort();
      const auto& pred = snap.vehicle(members[k - 1]);
      const auto& succ = snap.vehicle(members[k]);
      const double front_gap = pred.rear() - s.position;
      const double back_gap = s.rear() - succ.position;
      want_leader = members[k - 1];
      want_follower = members[k];
      aligned = front_gap > 0.0 && back_gap > 0.0;
      if (front_gap > 0.0) {
        g.virtual_leader = LeaderView::of(front_gap, pred.speed, pred.accel);
        g.desired_speed = std::max(sprint_cap, 0.0);
      } else {
        g.desired_speed = std::max(0.5, pred.speed - settings.approach_speed_advantage_mps);
      }
      break;
    }
  }
  out.guidance = g;

  if (s.lane == target->lane) {
    const bool leader_ok = want_leader == TrafficSnapshot::npos || snap.leader_of(subject) == want_leader;
    const bool follower_ok =
        want_follower == TrafficSnapshot::npos || snap.follower_of(subject) == want_follower;
    if (leader_ok && follower_ok && aligned) {
      out.plan.state = JoinState::Merging;
    } else if (leader_ok && follower_ok) {
      out.plan.state = JoinState::Approaching;
    } else {
      out.plan.state = JoinState::AwaitingGap;
    }
    return out;
  }

  if (!aligned) {
    out.plan.state = JoinState::Approaching;
    return out;
  }
  out.plan.state = JoinState::AwaitingGap;
  if (s.lane_change_cooldown > 0.0) return out;

  const LaneChoice side = target->lane < s.lane ? LaneChoice::Left : LaneChoice::Right;
  const int next_lane = target_lane(s.lane, side);
  const LaneNeighbors ln = snap.lane_neighbors(subject, next_lane);
  DriverParams merge_params = subject_params;
  merge_params.T = cacc.t_follower;
  if (next_lane == target->lane) {
    const std::size_t lead = snap.leader_at(next_lane, s.position);
    const std::size_t follow = snap.follower_at(next_lane, s.position);
    if (want_leader != TrafficSnapshot::npos && lead != want_leader) return out;
    if (want_follower != TrafficSnapshot::npos && follow != want_follower) return out;
    if (!gap_acceptable(s.speed, ln.leader, ln.follower, merge_params, settings.b_safe)) return out;
    out.plan.state = JoinState::Merging;
    out.lane_change = side;
    return out;
  }
  if (gap_acceptable(s.speed, ln.leader, ln.follower, subject_params, settings.b_safe))
    out.lane_change = side;
  return out;
}

/// Applies a Merging plan to the registry. Returns the finished plan:
/// Completed on success, Aborted if the target vanished or filled up.
inline JoinPlan complete_join(JoinPlan plan, PlatoonRegistry& reg, const CaccParams& cacc,
                              const TrafficSnapshot& snap) {
  if (plan.state != JoinState::Merging) return plan;
  if (reg.platoon_of(plan.subject_id)) {
    plan.state = JoinState::Aborted;
    return plan;
  }
  if (plan.target_platoon_id) {
    const Platoon* p = reg.find(*plan.target_platoon_id);
    if (!p || !admission_check(*p, cacc)) {
      plan.state = JoinState::Aborted;
      return plan;
    }
    std::size_t index = plan.join_type == JoinType::Front ? 0
                        : plan.join_type == JoinType::Rear ? p->size()
                                                          : plan.insertion_index;
    if (index > p->size()) {
      plan.state = JoinState::Aborted;
      return plan;
    }
    reg.insert(*plan.target_platoon_id, index, plan.subject_id);
  } else if (plan.target_vehicle_id) {
    if (reg.platoon_of(*plan.target_vehicle_id)) {
      plan.state = JoinState::Aborted;
      return plan;
    }
    std::size_t t = snap.find(*plan.target_vehicle_id);
    int lane = t == TrafficSnapshot::npos ? plan.target_lane : snap.vehicle(t).lane;
    if (plan.join_type == JoinType::Front)
      reg.create({plan.subject_id, *plan.target_vehicle_id}, lane);
    else
      reg.create({*plan.target_vehicle_id, plan.subject_id}, lane);
  } else {
    plan.state = JoinState::Aborted;
    return plan;
  }
  plan.state = JoinState::Completed;
  return plan;
}

// ---------------------------------------------------------------------------
// Preferential lane
// ---------------------------------------------------------------------------

struct PlatoonLaneCommand {
  PlatoonId platoon_id{};
  int target_lane{0};
  LaneChoice side{LaneChoice::Stay};
  std::vector<VehicleId> order;  ///< front to back, one member per step
};

/// Issues a one-lane move toward the preferential lane when every member
/// could change safely right now.
inline std::optional<PlatoonLaneCommand> preferential_lane_drift(const Platoon& platoon,
                                                                 const TrafficSnapshot& snap,
                                                                 const CaccParams& cacc, double b_safe) {
  if (platoon.lane == cacc.preferential_lane) return std::nullopt;
  const LaneChoice side = cacc.preferential_lane < platoon.lane ? LaneChoice::Left : LaneChoice::Right;
  const int next_lane = target_lane(platoon.lane, side);
  for (auto m : platoon.member_ids) {
    std::size_t i = snap.find(m);
    if (i == TrafficSnapshot::npos) return std::nullopt;
    const auto& v = snap.vehicle(i);
    if (v.lane != platoon.lane || v.lane_change_cooldown > 0.0) return std::nullopt;
    LaneNeighbors ln = snap.lane_neighbors(i, next_lane);
    if (!ln.available) return std::nullopt;
    if (!gap_acceptable(v.speed, ln.leader, ln.follower, snap.params(i), b_safe)) return std::nullopt;
  }
  return PlatoonLaneCommand{platoon.id, next_lane, side, platoon.member_ids};
}

}  // namespace caccsim
