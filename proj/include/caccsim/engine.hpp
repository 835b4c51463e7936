#pragma once

// Discrete-time simulation loop.
//
// One step at time t reads a snapshot of the world, decides lane changes
// and accelerations from it, integrates to t + dt, removes vehicles that
// left the road, updates platoon bookkeeping, and logs on the log grid.

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <random>
#include <span>
#include <sstream>
#include <vector>

#include "caccsim/clustering.hpp"
#include "caccsim/core.hpp"
#include "caccsim/lateral.hpp"
#include "caccsim/longitudinal.hpp"
#include "caccsim/snapshot.hpp"

namespace caccsim {

/// Ballistic update over one step. The vehicle never reverses: when the
/// speed would cross zero it stops at the stopping point.
inline VehicleState integrate(VehicleState s, double accel, double dt) {
  const double v = s.speed;
  const double v_next = v + accel * dt;
  if (v_next > 0.0) {
    s.position += v * dt + 0.5 * accel * dt * dt;
    s.speed = v_next;
  } else {
    if (accel < 0.0) s.position += v * v / (2.0 * -accel);
    s.speed = 0.0;
  }
  s.accel = accel;
  return s;
}

struct RunCounters {
  std::uint64_t spawned{0};         ///< arrivals generated, queued or not
  std::uint64_t entered{0};
  std::uint64_t exited{0};          ///< downstream boundary and off-ramp
  std::uint64_t offramp_exits{0};
  std::uint64_t queued{0};          ///< currently waiting in the virtual queues
  std::uint64_t max_queued{0};
  std::uint64_t lane_changes_free{0};
  std::uint64_t lane_changes_join{0};
  std::uint64_t lane_changes_drift{0};
  std::uint64_t lane_changes_mandatory{0};
  std::uint64_t lane_changes_rejected{0};  ///< decided but invalid when applied
  std::uint64_t join_plans_created{0};
  std::uint64_t join_plans_completed{0};
  std::uint64_t join_plans_aborted{0};
  std::uint64_t join_plans_superseded{0};  ///< dropped because the vehicle coupled in its lane
  std::uint64_t drift_commands{0};
  std::uint64_t couplings{0};
  std::uint64_t clustering_phases{0};  ///< steps in which the clustering phase ran
  std::uint64_t cav_decisions{0};      ///< CAV-specific longitudinal/lateral evaluations
  std::uint64_t invariant_checks{0};
  std::uint64_t max_platoon_size{0};
  double min_gap{std::numeric_limits<double>::infinity()};
  double min_lane_change_follower_accel{std::numeric_limits<double>::infinity()};
};

class World {
 public:
  explicit World(ScenarioConfig config)
      : config_(std::move(config)),
        dt_ticks_(to_ticks(config_.dt_s, "dt_s")),
        log_ticks_(to_ticks(config_.log_dt_s, "log_dt_s")),
        arrivals_rng_(seed_stream(0)),
        class_rng_(seed_stream(1)),
        lane_rng_(seed_stream(2)),
        route_rng_(seed_stream(3)),
        ramp_rng_(seed_stream(4)) {
    validate(config_);
    const double h_min = min_headway_s() ;
    next_arrival_s_ = config_.demand_vph > 0.0 ? draw_headway(arrivals_rng_, config_.demand_vph, h_min) : inf();
    if (config_.ramps.enabled && config_.ramps.onramp_demand_vph > 0.0)
      next_ramp_arrival_s_ = draw_headway(ramp_rng_, config_.ramps.onramp_demand_vph,
                                          config_.hv.s0 / config_.engine.entry_speed_mps + 1.0);
    else
      next_ramp_arrival_s_ = inf();
  }

  const ScenarioConfig& config() const noexcept { return config_; }
  double clock() const noexcept { return static_cast<double>(ticks_) / kTicksPerSecond; }
  std::int64_t ticks() const noexcept { return ticks_; }
  std::uint64_t step_index() const noexcept { return steps_; }
  std::span<const VehicleState> vehicles() const noexcept { return vehicles_; }
  const PlatoonRegistry& platoons() const noexcept { return registry_; }
  const std::map<VehicleId, JoinPlan>& plans() const noexcept { return plans_; }
  const RunCounters& counters() const noexcept { return counters_; }
  std::uint64_t vehicle_ids_issued() const noexcept { return vehicle_ids_.issued(); }

  /// Records produced since the last drain.
  std::vector<TrajectorySample> drain_samples() { return std::exchange(samples_, {}); }
  std::vector<Event> drain_events() { return std::exchange(events_, {}); }

  /// Places a vehicle directly on the road (scenario construction and tests).
  /// Id, role and platoon fields are assigned here.
  VehicleId place(VehicleState s, bool offramp_bound = false) {
    s.id = vehicle_ids_.next();
    s.role = s.cls == VehicleClass::HV ? Role::NotApplicable : Role::FreeAgent;
    s.platoon_id.reset();
    if (s.lane < 0 || s.lane >= config_.lane_count) throw std::out_of_range("place: lane outside the road");
    vehicles_.push_back(s);
    extras_.push_back(Extra{offramp_bound, 0.0});
    ++counters_.spawned;
    ++counters_.entered;
    return s.id;
  }

  /// Pins a vehicle's acceleration (tests: scripted leaders).
  void script_accel(VehicleId id, std::optional<double> accel) {
    if (accel) scripted_[id] = *accel;
    else scripted_.erase(id);
  }

  /// Forms a platoon from vehicles already on the road (tests).
  PlatoonId form_platoon(std::vector<VehicleId> members) {
    int lane = vehicle(members.front()).lane;
    PlatoonId id = registry_.create(std::move(members), lane);
    sync_roles();
    return id;
  }

  const VehicleState& vehicle(VehicleId id) const {
    auto i = index_of(id);
    if (i == npos) throw std::out_of_range("no vehicle " + std::to_string(id.value));
    return vehicles_[i];
  }
  bool has_vehicle(VehicleId id) const { return index_of(id) != npos; }

  /// Moves arrivals into the virtual queues and inserts as many queued
  /// vehicles as the entry can take at the current clock.
  void spawn_vehicles() {
    const double now = clock();
    const double h_min = min_headway_s();
    while (next_arrival_s_ <= now + 1e-9) {
      Arrival a;
      a.cls = draw_uniform(class_rng_) < config_.mpr ? VehicleClass::CAV : VehicleClass::HV;
      a.offramp = config_.ramps.enabled && draw_uniform(route_rng_) < config_.ramps.offramp_fraction;
      main_queue_.push_back(a);
      ++counters_.spawned;
      next_arrival_s_ += draw_headway(arrivals_rng_, config_.demand_vph, h_min);
    }
    while (next_ramp_arrival_s_ <= now + 1e-9) {
      Arrival a;
      a.cls = draw_uniform(class_rng_) < config_.mpr ? VehicleClass::CAV : VehicleClass::HV;
      ramp_queue_.push_back(a);
      ++counters_.spawned;
      next_ramp_arrival_s_ += draw_headway(ramp_rng_, config_.ramps.onramp_demand_vph,
                                           config_.hv.s0 / config_.engine.entry_speed_mps + 1.0);
    }
    if (!main_queue_.empty() || !ramp_queue_.empty()) insert_from_queues();
    counters_.queued = main_queue_.size() + ramp_queue_.size();
    counters_.max_queued = std::max(counters_.max_queued, counters_.queued);
  }

  /// Advances the world by one step (no spawning; see advance()).
  void step() {
    const double now = clock();
    const double dt = config_.dt_s;
    const bool cav_world = config_.strategy != Strategy::Base;
    const bool local = config_.strategy == Strategy::Local;

    // (1) snapshot
    prepare_params();
    TrafficSnapshot snap(vehicles_, params_, config_.lane_count);
    fill_control_params(snap);

    // (2) clustering decisions
    std::map<VehicleId, JoinStep> join_steps;
    if (local) {
      ++counters_.clustering_phases;
      clustering_phase(snap, now, join_steps);
    }

    // (3) lateral decisions, applied in a deterministic order
    std::vector<LaneIntent> intents = lateral_decisions(snap, now, join_steps);
    apply_lane_changes(snap, intents, now, join_steps);
    if (local) finish_joins(snap, now, join_steps);
    sync_roles();

    // (4) longitudinal decisions on the post-lateral lanes
    fill_control_params(snap);
    std::vector<double> accel(vehicles_.size(), 0.0);
    for (std::size_t i = 0; i < vehicles_.size(); ++i) {
      const auto& v = vehicles_[i];
      if (auto it = scripted_.find(v.id); it != scripted_.end()) {
        accel[i] = it->second;
        continue;
      }
      const LeaderView leader = snap.leader_view(i, snap.leader_of(i));
      if (v.cls == VehicleClass::HV) {
        accel[i] = idm_accel(v.speed, leader, params_[i]);
        continue;
      }
      ++counters_.cav_decisions;
      auto js = join_steps.find(v.id);
      if (js != join_steps.end() && js->second.guidance && plans_.count(v.id)) {
        const JoinGuidance& g = *js->second.guidance;
        const DriverParams& p = params_[i];
        double a = eidm_accel(v.speed, leader, p);
        // The target speed only bounds acceleration; gap keeping is unchanged.
        DriverParams pc = p;
        pc.v_des = std::max(g.desired_speed, 0.1);
        a = std::min(a, std::max(eidm_accel(v.speed, LeaderView::none(), pc), -p.b));
        if (g.virtual_leader.exists && g.virtual_leader.gap > 0.0) {
          DriverParams pv = p;
          pv.T = config_.cacc.t_follower;
          a = std::min(a, eidm_accel(v.speed, g.virtual_leader, pv));
        }
        accel[i] = a;
      } else {
        accel[i] = eidm_accel(v.speed, leader, params_[i]);
      }
    }

    // (5) integrate
    for (std::size_t i = 0; i < vehicles_.size(); ++i) {
      vehicles_[i] = integrate(vehicles_[i], accel[i], dt);
      auto& cd = vehicles_[i].lane_change_cooldown;
      cd = std::max(0.0, cd - dt);
    }
    ticks_ += dt_ticks_;
    ++steps_;

    // (6) boundary exits and platoon bookkeeping
    handle_exits();
    prepare_params();
    TrafficSnapshot after(vehicles_, params_, config_.lane_count);
    if (cav_world) platoon_bookkeeping(after);
    sync_roles();

    // (7) invariants and logging
    if (config_.engine.check_invariants) {
      fill_control_params(after);
      check_invariants(after);
    }
    if (ticks_ % log_ticks_ == 0) log_samples(after);
  }

  /// spawn_vehicles() followed by step().
  void advance() {
    spawn_vehicles();
    step();
  }

 private:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);
  static double inf() { return std::numeric_limits<double>::infinity(); }

  struct Extra {
    bool offramp_bound{false};
    double retry_after{0.0};
  };

  struct Arrival {
    VehicleClass cls{VehicleClass::HV};
    bool offramp{false};
  };

  struct LaneIntent {
    std::size_t index{0};
    LaneChoice side{LaneChoice::Stay};
    LaneChangeKind kind{LaneChangeKind::Free};
  };

  struct Drift {
    PlatoonLaneCommand command;
    std::size_t next{0};
    double last_progress{0.0};
  };

  // -- random streams -------------------------------------------------------

  std::mt19937_64 seed_stream(std::uint64_t stream) const {
    std::seed_seq seq{static_cast<std::uint32_t>(config_.seed & 0xffffffffu),
                      static_cast<std::uint32_t>(config_.seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
  }

  /// Uniform in [0, 1) from the top 53 bits.
  static double draw_uniform(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
  }

  /// Shifted exponential headway with the given mean rate; when the mean
  /// is below the shift the headway is the shift itself.
  static double draw_headway(std::mt19937_64& rng, double vph, double shift) {
    const double mean = 3600.0 / vph;
    if (mean <= shift) return shift;
    return shift - (mean - shift) * std::log1p(-draw_uniform(rng));
  }

  /// Minimum network-wide headway: the single-lane minimum spread over lanes.
  double min_headway_s() const {
    return (config_.hv.s0 / config_.engine.entry_speed_mps + 1.0) / config_.lane_count;
  }

  // -- bookkeeping helpers --------------------------------------------------

  std::size_t index_of(VehicleId id) const {
    auto it = std::lower_bound(vehicles_.begin(), vehicles_.end(), id,
                               [](const VehicleState& v, VehicleId key) { return v.id < key; });
    return it != vehicles_.end() && it->id == id ? static_cast<std::size_t>(it - vehicles_.begin()) : npos;
  }

  const DriverParams& base_params(const VehicleState& v) const {
    return v.cls == VehicleClass::HV ? config_.hv : config_.cav;
  }

  /// Sizes the parameter storage a snapshot is built over.
  void prepare_params() { params_.resize(vehicles_.size()); }

  /// Control parameters for every vehicle: the CAV time gap depends on who
  /// is ahead in the lane and on platoon membership.
  void fill_control_params(const TrafficSnapshot& snap) {
    for (std::size_t i = 0; i < vehicles_.size(); ++i) {
      const auto& v = vehicles_[i];
      DriverParams p = base_params(v);
      if (v.cls == VehicleClass::CAV && config_.strategy != Strategy::Base) {
        std::optional<VehicleId> in_lane;
        if (std::size_t l = snap.leader_of(i); l != npos) in_lane = vehicles_[l].id;
        std::optional<VehicleId> pred;
        if (v.platoon_id) {
          if (const Platoon* pl = registry_.find(*v.platoon_id)) {
            auto k = pl->index_of(v.id);
            if (k && *k > 0) pred = pl->member_ids[*k - 1];
          }
        }
        p.T = effective_time_gap(v, in_lane, pred, config_.cacc, config_.hv);
      }
      params_[i] = p;
    }
  }

  void sync_roles() {
    for (VehicleId id : registry_.take_touched()) {
      std::size_t i = index_of(id);
      if (i == npos) continue;
      auto& v = vehicles_[i];
      auto pid = registry_.platoon_of(id);
      v.platoon_id = pid;
      if (!pid) {
        v.role = Role::FreeAgent;
      } else {
        v.role = registry_.find(*pid)->leader_id == id ? Role::Leader : Role::Follower;
      }
    }
  }

  JoinSettings join_settings() const {
    return JoinSettings{config_.engine.join_deadline_s, config_.engine.couple_range_m,
                        config_.engine.approach_speed_advantage_mps, config_.engine.maneuver_b_safe_mps2};
  }

  // -- spawning -------------------------------------------------------------

  /// Parameters a new vehicle would drive with behind `leader` (npos: none).
  DriverParams entry_params(VehicleClass cls, const TrafficSnapshot& snap, std::size_t leader) const {
    if (cls == VehicleClass::HV) return config_.hv;
    DriverParams p = config_.cav;
    p.T = config_.cacc.t_leader;
    if (config_.strategy == Strategy::Base || leader == npos) return p;
    const auto& l = snap.vehicle(leader);
    if (l.cls != VehicleClass::CAV || extras_[leader].offramp_bound) return p;
    if (bumper_gap(VehicleState{}, l) > config_.engine.couple_range_m) return p;
    if (!l.platoon_id) {
      p.T = config_.cacc.t_follower;
    } else if (const Platoon* pl = registry_.find(*l.platoon_id);
               pl && pl->tail() == l.id && admission_check(*pl, config_.cacc)) {
      p.T = config_.cacc.t_follower;
    }
    return p;
  }

  /// Fastest insertion speed in [v_min, v_max] that the entrant can hold
  /// behind `leader` without braking; nullopt when even v_min is too fast.
  static std::optional<double> insertion_speed(const LeaderView& leader, const DriverParams& p,
                                               double v_min, double v_max) {
    if (!leader.exists) return v_max;
    if (leader.gap < p.s0) return std::nullopt;
    if (idm_accel(v_max, leader, p) >= 0.0) return v_max;
    if (idm_accel(v_min, leader, p) < 0.0) return std::nullopt;
    double lo = v_min, hi = v_max;
    for (int it = 0; it < 40; ++it) {
      double mid = 0.5 * (lo + hi);
      (idm_accel(mid, leader, p) >= 0.0 ? lo : hi) = mid;
    }
    return lo;
  }

  void insert_from_queues() {
    prepare_params();
    const auto& e = config_.engine;
    const double v_max = std::min(e.entry_speed_mps, config_.hv.v_des);
    const double v_min = v_max * e.min_entry_speed_fraction;

    std::vector<VehicleState> added;
    std::vector<Extra> added_extra;
    {
      TrafficSnapshot snap(vehicles_, params_, config_.lane_count);
      fill_control_params(snap);
      std::vector<bool> lane_used(static_cast<std::size_t>(config_.lane_count), false);
      while (!main_queue_.empty()) {
        const Arrival a = main_queue_.front();
        std::vector<std::pair<int, double>> ok;
        for (int lane = 0; lane < config_.lane_count; ++lane) {
          if (lane_used[static_cast<std::size_t>(lane)]) continue;
          std::size_t follower = snap.follower_at(lane, 0.0);
          if (follower != npos && snap.vehicle(follower).position > -e.vehicle_length_m) continue;
          std::size_t leader = snap.leader_at(lane, 0.0);
          LeaderView lv = LeaderView::none();
          if (leader != npos) {
            const auto& l = snap.vehicle(leader);
            lv = LeaderView::of(l.rear(), l.speed, l.accel);
          }
          auto v = insertion_speed(lv, entry_params(a.cls, snap, leader), v_min, v_max);
          if (v) ok.emplace_back(lane, *v);
        }
        if (ok.empty()) break;
        std::size_t pick = static_cast<std::size_t>(draw_uniform(lane_rng_) * static_cast<double>(ok.size()));
        pick = std::min(pick, ok.size() - 1);
        VehicleState s;
        s.cls = a.cls;
        s.lane = ok[pick].first;
        s.position = 0.0;
        s.speed = ok[pick].second;
        s.length = e.vehicle_length_m;
        added.push_back(s);
        added_extra.push_back(Extra{a.offramp, 0.0});
        lane_used[static_cast<std::size_t>(s.lane)] = true;
        main_queue_.pop_front();
      }

      if (!ramp_queue_.empty()) {
        const int lane = config_.lane_count - 1;
        const double x = config_.ramps.onramp_position_m;
        const Arrival a = ramp_queue_.front();
        std::size_t leader = snap.leader_at(lane, x);
        std::size_t follower = snap.follower_at(lane, x);
        LeaderView lv = LeaderView::none();
        if (leader != npos) {
          const auto& l = snap.vehicle(leader);
          lv = LeaderView::of(l.rear() - x, l.speed, l.accel);
        }
        auto v = insertion_speed(lv, entry_params(a.cls, snap, leader), v_min, v_max);
        bool follower_ok = true;
        if (v && follower != npos) {
          const auto& f = snap.vehicle(follower);
          FollowerView fv = FollowerView::of(x - e.vehicle_length_m - f.position, f.speed, params_[follower]);
          follower_ok = gap_acceptable(*v, LeaderView::none(), fv, config_.hv, config_.hv.b_safe);
        }
        if (v && follower_ok) {
          VehicleState s;
          s.cls = a.cls;
          s.lane = lane;
          s.position = x;
          s.speed = *v;
          s.length = e.vehicle_length_m;
          added.push_back(s);
          added_extra.push_back(Extra{false, 0.0});
          ramp_queue_.pop_front();
        }
      }
    }
    for (std::size_t k = 0; k < added.size(); ++k) {
      VehicleState s = added[k];
      s.id = vehicle_ids_.next();
      s.role = s.cls == VehicleClass::HV ? Role::NotApplicable : Role::FreeAgent;
      vehicles_.push_back(s);
      extras_.push_back(added_extra[k]);
      ++counters_.entered;
      events_.push_back(Event{clock(), EventKind::Spawn, s.id, s.cls, s.lane, s.lane, LaneChangeKind::None});
    }
  }

  // -- clustering -----------------------------------------------------------

  void clustering_phase(const TrafficSnapshot& snap, double now, std::map<VehicleId, JoinStep>& steps) {
    const JoinSettings settings = join_settings();
    for (auto& [id, plan] : plans_) {
      std::size_t i = snap.find(id);
      if (i == npos) continue;
      steps.emplace(id, advance_join(plan, i, snap, registry_, config_.cacc, settings, params_[i], now));
    }

    // New plans for idle free agents, staggered over the scan interval.
    const auto scan_ticks = std::max<std::int64_t>(to_ticks(config_.engine.scan_interval_s, "scan"), dt_ticks_);
    const auto slots = scan_ticks / dt_ticks_;
    auto busy = [&](VehicleId v) { return plans_.count(v) > 0; };
    std::vector<JoinPlan> fresh;
    for (std::size_t i = 0; i < snap.size(); ++i) {
      const auto& v = snap.vehicle(i);
      if (v.cls != VehicleClass::CAV || v.role != Role::FreeAgent) continue;
      if (plans_.count(v.id) || extras_[i].offramp_bound || now < extras_[i].retry_after) continue;
      if (static_cast<std::int64_t>((steps_ + v.id.value) % static_cast<std::uint64_t>(slots)) != 0) continue;
      auto plan = scan_opportunities(i, snap, registry_, config_.cacc, settings, now, busy);
      if (plan) fresh.push_back(*plan);
    }
    for (auto& p : fresh) {
      // A vehicle targeted by a plan created earlier this step keeps its role.
      if (p.target_vehicle_id && busy(*p.target_vehicle_id)) continue;
      plans_.emplace(p.subject_id, p);
      ++counters_.join_plans_created;
    }

    for (const auto& [pid, platoon] : registry_.all()) {
      if (drifts_.count(pid) || platoon.dissolving) continue;
      auto cmd = preferential_lane_drift(platoon, snap, config_.cacc, config_.engine.maneuver_b_safe_mps2);
      if (cmd) {
        drifts_.emplace(pid, Drift{*cmd, 0, now});
        ++counters_.drift_commands;
      }
    }
  }

  // -- lateral --------------------------------------------------------------

  std::vector<LaneIntent> lateral_decisions(const TrafficSnapshot& snap, double now,
                                            const std::map<VehicleId, JoinStep>& join_steps) {
    std::vector<LaneIntent> intents;
    const bool local = config_.strategy == Strategy::Local;
    const auto& ramps = config_.ramps;
    for (std::size_t i = 0; i < snap.size(); ++i) {
      const auto& v = snap.vehicle(i);
      if (scripted_.count(v.id)) continue;
      if (v.lane_change_cooldown > 0.0) continue;
      if (extras_[i].offramp_bound && ramps.enabled &&
          v.position >= ramps.offramp_position_m - ramps.mandatory_zone_m &&
          v.position < ramps.offramp_position_m && v.lane < config_.lane_count - 1) {
        intents.push_back(LaneIntent{i, LaneChoice::Right, LaneChangeKind::Mandatory});
        continue;
      }
      if (v.cls == VehicleClass::CAV) {
        ++counters_.cav_decisions;
        if (local) {
          // Plans and drift steer CAVs; idle free agents change lanes like anyone else.
          if (auto it = join_steps.find(v.id); it != join_steps.end()) {
            if (it->second.lane_change != LaneChoice::Stay)
              intents.push_back(LaneIntent{i, it->second.lane_change, LaneChangeKind::Join});
            continue;
          }
          if (v.platoon_id || plans_.count(v.id)) continue;
        }
        if (v.platoon_id && drifts_.count(*v.platoon_id)) continue;
      }
      LaneChoice c = mobil_decision(v, snap.neighbors(i), snap.params(i));
      if (c != LaneChoice::Stay) intents.push_back(LaneIntent{i, c, LaneChangeKind::Free});
    }
    if (local) {
      for (auto& [pid, d] : drifts_) {
        if (d.next >= d.command.order.size()) continue;
        std::size_t i = snap.find(d.command.order[d.next]);
        if (i == npos) continue;
        if (d.next > 0) {
          // Only slot in behind the member that already moved.
          std::size_t pred = snap.find(d.command.order[d.next - 1]);
          if (pred == npos || snap.vehicle(pred).lane != d.command.target_lane ||
              !(snap.vehicle(pred).rear() > snap.vehicle(i).position))
            continue;
        }
        intents.push_back(LaneIntent{i, d.command.side, LaneChangeKind::Drift});
      }
    }
    (void)now;
    // Front-to-back on the road, then by id: a change ahead is seen by those behind.
    std::sort(intents.begin(), intents.end(), [&](const LaneIntent& a, const LaneIntent& b) {
      const auto& va = snap.vehicle(a.index);
      const auto& vb = snap.vehicle(b.index);
      if (va.position != vb.position) return va.position > vb.position;
      return va.id < vb.id;
    });
    return intents;
  }

  void apply_lane_changes(TrafficSnapshot& snap, const std::vector<LaneIntent>& intents, double now,
                          std::map<VehicleId, JoinStep>& join_steps) {
    for (const auto& in : intents) {
      auto& v = vehicles_[in.index];
      const int to = target_lane(v.lane, in.side);
      bool valid = to >= 0 && to < config_.lane_count && v.lane_change_cooldown <= 0.0;
      LaneNeighbors ln;
      DriverParams own = params_[in.index];
      if (valid) {
        ln = snap.lane_neighbors(in.index, to);
        if (in.kind == LaneChangeKind::Join) {
          auto& js = join_steps.at(v.id);
          if (js.plan.state == JoinState::Merging) {
            own.T = config_.cacc.t_follower;
            valid = expected_neighbors_hold(snap, in.index, to, js.plan);
          }
        }
        // A drifting follower slots in behind its own predecessor at the platoon gap.
        if (in.kind == LaneChangeKind::Drift && v.role == Role::Follower) own.T = config_.cacc.t_follower;
        const double limit = in.kind == LaneChangeKind::Join || in.kind == LaneChangeKind::Drift
                                ? config_.engine.maneuver_b_safe_mps2
                                : base_params(v).b_safe;
        valid = valid && gap_acceptable(v.speed, ln.leader, ln.follower, own, limit);
      }
      if (!valid) {
        ++counters_.lane_changes_rejected;
        if (in.kind == LaneChangeKind::Join) {
          auto& js = join_steps.at(v.id);
          if (js.plan.state == JoinState::Merging) js.plan.state = JoinState::AwaitingGap;
          js.lane_change = LaneChoice::Stay;
        }
        continue;
      }
      if (v.platoon_id && in.kind != LaneChangeKind::Drift) registry_.depart(v.id);
      const int from = v.lane;
      v = execute_lane_change(v, in.side, config_.lane_count, config_.engine.lane_change_cooldown_s, now,
                              in.kind, events_);
      snap.relocate(in.index, from);
      count_lane_change(in.kind);

      // The new follower must not need to brake harder than b_safe.
      if (ln.follower.exists) {
        const DriverParams& fp = *ln.follower.params;
        double a = idm_accel(ln.follower.speed, LeaderView::of(ln.follower.gap, v.speed), fp);
        counters_.min_lane_change_follower_accel = std::min(counters_.min_lane_change_follower_accel, a);
        if (config_.engine.check_invariants && a < -fp.b_safe)
          throw InvariantFault(fault_prefix() + "lane change of vehicle " + std::to_string(v.id.value) +
                               " forces follower deceleration " + std::to_string(a));
      }
      if (in.kind == LaneChangeKind::Drift) advance_drift(v.id, to);
    }
    // Drifts that could not proceed this step wait, and give up after a while.
    for (auto it = drifts_.begin(); it != drifts_.end();) {
      const Platoon* p = registry_.find(it->first);
      bool done = !p || it->second.next >= it->second.command.order.size() ||
                  now - it->second.last_progress > config_.engine.drift_stall_s;
      if (p && it->second.next >= it->second.command.order.size()) registry_.set_lane(it->first, it->second.command.target_lane);
      it = done ? drifts_.erase(it) : std::next(it);
    }
  }

  bool expected_neighbors_hold(const TrafficSnapshot& snap, std::size_t i, int lane, const JoinPlan& plan) const {
    auto target = detail::resolve_target(snap, registry_, plan.target_platoon_id, plan.target_vehicle_id);
    if (!target) return false;
    const auto& m = target->members;
    const double x = snap.vehicle(i).position;
    const std::size_t lead = snap.leader_at(lane, x);
    const std::size_t follow = snap.follower_at(lane, x);
    switch (plan.join_type) {
      case JoinType::Rear: return lead == m.back();
      case JoinType::Front: return follow == m.front();
      case JoinType::Mid:
        return plan.insertion_index > 0 && plan.insertion_index < m.size() &&
               lead == m[plan.insertion_index - 1] && follow == m[plan.insertion_index];
    }
    return false;
  }

  void advance_drift(VehicleId moved, int to) {
    for (auto& [pid, d] : drifts_) {
      if (d.next < d.command.order.size() && d.command.order[d.next] == moved) {
        ++d.next;
        d.last_progress = clock();
        if (d.next == 1) registry_.set_lane(pid, to);
        return;
      }
    }
  }

  void count_lane_change(LaneChangeKind k) {
    switch (k) {
      case LaneChangeKind::Free: ++counters_.lane_changes_free; break;
      case LaneChangeKind::Join: ++counters_.lane_changes_join; break;
      case LaneChangeKind::Drift: ++counters_.lane_changes_drift; break;
      case LaneChangeKind::Mandatory: ++counters_.lane_changes_mandatory; break;
      case LaneChangeKind::None: break;
    }
  }

  void finish_joins(const TrafficSnapshot& snap, double now, std::map<VehicleId, JoinStep>& steps) {
    for (auto& [id, js] : steps) {
      auto it = plans_.find(id);
      if (it == plans_.end()) continue;
      JoinPlan plan = js.plan;
      if (plan.state == JoinState::Merging) {
        std::size_t i = snap.find(id);
        const bool in_lane = i != npos && vehicles_[i].lane == plan.target_lane;
        if (in_lane) plan = complete_join(plan, registry_, config_.cacc, snap);
        else plan.state = JoinState::AwaitingGap;
      }
      if (plan.state == JoinState::Completed) {
        ++counters_.join_plans_completed;
        plans_.erase(it);
      } else if (plan.state == JoinState::Aborted) {
        ++counters_.join_plans_aborted;
        std::size_t i = index_of(id);
        if (i != npos) extras_[i].retry_after = now + config_.engine.plan_retry_s;
        plans_.erase(it);
      } else {
        it->second = plan;
      }
    }
  }

  // -- exits and platoon upkeep ----------------------------------------------

  void handle_exits() {
    const auto& ramps = config_.ramps;
    const double now = clock();
    std::vector<VehicleState> kept;
    std::vector<Extra> kept_extra;
    kept.reserve(vehicles_.size());
    kept_extra.reserve(vehicles_.size());
    for (std::size_t i = 0; i < vehicles_.size(); ++i) {
      auto& v = vehicles_[i];
      auto& x = extras_[i];
      bool leave = false;
      EventKind kind = EventKind::Exit;
      if (x.offramp_bound && ramps.enabled && v.position >= ramps.offramp_position_m) {
        if (v.lane == config_.lane_count - 1) {
          leave = true;
          kind = EventKind::OffRampExit;
        } else {
          x.offramp_bound = false;  // missed the ramp
        }
      }
      if (!leave && v.position >= config_.length_m) leave = true;
      if (leave) {
        if (v.platoon_id) registry_.depart(v.id);
        plans_.erase(v.id);
        scripted_.erase(v.id);
        events_.push_back(Event{now, kind, v.id, v.cls, v.lane, v.lane, LaneChangeKind::None});
        ++counters_.exited;
        if (kind == EventKind::OffRampExit) ++counters_.offramp_exits;
        continue;
      }
      kept.push_back(v);
      kept_extra.push_back(x);
    }
    vehicles_ = std::move(kept);
    extras_ = std::move(kept_extra);
  }

  void platoon_bookkeeping(const TrafficSnapshot& snap) {
    const auto& e = config_.engine;
    const auto& ramps = config_.ramps;

    // Members heading for the off-ramp leave their platoon.
    if (ramps.enabled) {
      for (std::size_t i = 0; i < vehicles_.size(); ++i) {
        const auto& v = vehicles_[i];
        if (extras_[i].offramp_bound && v.platoon_id &&
            v.position >= ramps.offramp_position_m - ramps.mandatory_zone_m)
          registry_.depart(v.id);
      }
    }

    // Decouple stretched or lane-separated members.
    std::vector<PlatoonId> work;
    for (const auto& [pid, p] : registry_.all()) work.push_back(pid);
    while (!work.empty()) {
      PlatoonId pid = work.back();
      work.pop_back();
      const Platoon* p = registry_.find(pid);
      if (!p || drifts_.count(pid)) continue;
      for (std::size_t k = 1; k < p->size(); ++k) {
        const auto& pred = snap.vehicle(snap.find(p->member_ids[k - 1]));
        const auto& m = snap.vehicle(snap.find(p->member_ids[k]));
        const double gap = bumper_gap(m, pred);
        if (pred.lane != m.lane || gap > e.decouple_range_m || gap <= 0.0) {
          const std::size_t before = registry_.size();
          registry_.split(pid, k);
          if (registry_.size() > before) {
            // The back piece is the newest platoon.
            work.push_back(std::prev(registry_.all().end())->first);
          }
          if (registry_.find(pid)) work.push_back(pid);
          break;
        }
      }
    }

    // Couple CAVs that follow a CAV closely, front to back in every lane.
    for (int lane = 0; lane < config_.lane_count; ++lane) {
      auto order = snap.lane(lane);
      for (std::size_t r = 1; r < order.size(); ++r) {
        const std::size_t i = order[r];
        const std::size_t j = order[r - 1];
        const auto& v = snap.vehicle(i);
        const auto& l = snap.vehicle(j);
        if (v.cls != VehicleClass::CAV || l.cls != VehicleClass::CAV) continue;
        if (extras_[i].offramp_bound || extras_[j].offramp_bound) continue;
        if (bumper_gap(v, l) > e.couple_range_m) continue;
        auto pv = registry_.platoon_of(v.id);
        auto pl = registry_.platoon_of(l.id);
        if (pv && pl && *pv == *pl) continue;
        if ((pv && drifts_.count(*pv)) || (pl && drifts_.count(*pl))) continue;
        if (pv && registry_.find(*pv)->leader_id != v.id) continue;
        if (pl && registry_.find(*pl)->tail() != l.id) continue;
        const std::size_t back_size = pv ? registry_.find(*pv)->size() : 1;
        if (pl) {
          const Platoon* front = registry_.find(*pl);
          if (front->dissolving) continue;
          if (front->size() + back_size > static_cast<std::size_t>(config_.cacc.max_platoon_size)) continue;
          if (pv) registry_.merge(*pl, *pv);
          else registry_.insert(*pl, front->size(), v.id);
        } else {
          if (1 + back_size > static_cast<std::size_t>(config_.cacc.max_platoon_size)) continue;
          if (pv) registry_.insert(*pv, 0, l.id);
          else registry_.create({l.id, v.id}, lane);
        }
        // Coupling in place supersedes whatever join either vehicle was after.
        if (plans_.erase(v.id)) ++counters_.join_plans_superseded;
        if (plans_.erase(l.id)) ++counters_.join_plans_superseded;
        ++counters_.couplings;
      }
    }

    for (const auto& [pid, p] : registry_.all()) {
      const auto& head = snap.vehicle(snap.find(p.leader_id));
      registry_.set_dissolving(pid, head.position >= config_.length_m - e.dissolve_zone_m);
      if (!drifts_.count(pid)) registry_.set_lane(pid, head.lane);
    }
  }

  // -- invariants and logging ---------------------------------------------------

  std::string fault_prefix() const {
    return "step " + std::to_string(steps_) + " (t=" + std::to_string(clock()) + "s): ";
  }

  void check_invariants(const TrafficSnapshot& snap) {
    ++counters_.invariant_checks;
    for (int lane = 0; lane < snap.lane_count(); ++lane) {
      auto order = snap.lane(lane);
      for (std::size_t r = 1; r < order.size(); ++r) {
        const auto& f = snap.vehicle(order[r]);
        const auto& l = snap.vehicle(order[r - 1]);
        const double gap = bumper_gap(f, l);
        counters_.min_gap = std::min(counters_.min_gap, gap);
        if (!(gap > 0.0))
          throw InvariantFault(fault_prefix() + "overlap in lane " + std::to_string(lane) + " between vehicles " +
                               std::to_string(l.id.value) + " and " + std::to_string(f.id.value) +
                               " (gap " + std::to_string(gap) + " m)");
      }
    }
    for (const auto& v : vehicles_) {
      auto err = check_vehicle(v, config_.lane_count);
      if (!err.empty()) throw InvariantFault(fault_prefix() + "vehicle " + std::to_string(v.id.value) + ": " + err);
    }
    auto err = check_membership(snap, registry_, config_.cacc);
    if (!err.empty()) throw InvariantFault(fault_prefix() + err);
    for (const auto& [pid, p] : registry_.all()) {
      counters_.max_platoon_size = std::max<std::uint64_t>(counters_.max_platoon_size, p.size());
      if (drifts_.count(pid)) continue;
      for (std::size_t k = 1; k < p.size(); ++k) {
        const auto& a = snap.vehicle(snap.find(p.member_ids[k - 1]));
        const auto& b = snap.vehicle(snap.find(p.member_ids[k]));
        if (a.lane != b.lane)
          throw InvariantFault(fault_prefix() + "platoon " + std::to_string(pid.value) + " spans lanes");
      }
    }
    if (config_.strategy != Strategy::Local && !plans_.empty())
      throw InvariantFault(fault_prefix() + "join plans exist outside local coordination");
    const std::uint64_t queued = main_queue_.size() + ramp_queue_.size();
    if (counters_.spawned != vehicles_.size() + counters_.exited + queued)
      throw InvariantFault(fault_prefix() + "vehicle conservation violated");
  }

  void log_samples(const TrafficSnapshot& snap) {
    const double t = clock();
    for (std::size_t i = 0; i < snap.size(); ++i) {
      const auto& v = snap.vehicle(i);
      TrajectorySample s;
      s.time = t;
      s.vehicle_id = v.id;
      s.cls = v.cls;
      s.lane = v.lane;
      s.position = v.position;
      s.speed = v.speed;
      s.accel = v.accel;
      s.platoon_id = v.platoon_id;
      s.role = v.role;
      std::size_t l = snap.leader_of(i);
      if (l != npos) {
        s.leader_id = snap.vehicle(l).id;
        s.leader_class = snap.vehicle(l).cls;
      }
      samples_.push_back(s);
    }
  }

  ScenarioConfig config_;
  std::int64_t dt_ticks_;
  std::int64_t log_ticks_;
  std::int64_t ticks_{0};
  std::uint64_t steps_{0};

  std::vector<VehicleState> vehicles_;  ///< sorted by id
  std::vector<Extra> extras_;           ///< parallel to vehicles_
  std::vector<DriverParams> params_;    ///< parallel to vehicles_, control parameters
  PlatoonRegistry registry_;
  std::map<VehicleId, JoinPlan> plans_;
  std::map<PlatoonId, Drift> drifts_;
  std::map<VehicleId, double> scripted_;
  IdAllocator<VehicleId> vehicle_ids_;

  std::mt19937_64 arrivals_rng_;
  std::mt19937_64 class_rng_;
  std::mt19937_64 lane_rng_;
  std::mt19937_64 route_rng_;
  std::mt19937_64 ramp_rng_;
  double next_arrival_s_{0.0};
  double next_ramp_arrival_s_{0.0};
  std::deque<Arrival> main_queue_;
  std::deque<Arrival> ramp_queue_;

  std::vector<TrajectorySample> samples_;
  std::vector<Event> events_;
  RunCounters counters_;
};

// ---------------------------------------------------------------------------
// Whole runs
// ---------------------------------------------------------------------------

struct RunSummary {
  std::uint64_t steps{0};
  double warmup_s{0.0};
  double duration_s{0.0};
  std::uint64_t samples_logged{0};
  std::uint64_t events_logged{0};
  std::uint64_t present_at_end{0};
  RunCounters counters;
};

struct RunResult {
  std::vector<TrajectorySample> trajectories;
  std::vector<Event> events;
  RunSummary summary;
};

/// Runs a scenario, handing post-warmup records to `on_sample` / `on_event`
/// as they are produced.
template <typename SampleFn, typename EventFn>
RunSummary run_scenario(const ScenarioConfig& config, SampleFn&& on_sample, EventFn&& on_event) {
  World world(config);
  const std::int64_t end = to_ticks(config.duration_s, "duration_s");
  const double warmup = config.warmup_s;
  RunSummary summary;
  summary.warmup_s = config.warmup_s;
  summary.duration_s = config.duration_s;
  while (world.ticks() < end) {
    world.advance();
    for (const auto& e : world.drain_events()) {
      if (e.time < warmup) continue;
      on_event(e);
      ++summary.events_logged;
    }
    for (const auto& s : world.drain_samples()) {
      if (s.time < warmup) continue;
      on_sample(s);
      ++summary.samples_logged;
    }
  }
  summary.steps = world.step_index();
  summary.present_at_end = world.vehicles().size();
  summary.counters = world.counters();
  return summary;
}

inline RunResult run_scenario(const ScenarioConfig& config) {
  RunResult r;
  r.summary = run_scenario(
      config, [&](const TrajectorySample& s) { r.trajectories.push_back(s); },
      [&](const Event& e) { r.events.push_back(e); });
  return r;
}

}  // namespace caccsim
