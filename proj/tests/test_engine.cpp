#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "caccsim/engine.hpp"
#include "caccsim/metrics.hpp"

using namespace caccsim;

namespace {

ScenarioConfig quiet(int lanes = 1, Strategy st = Strategy::Base, double mpr = 0.0) {
  ScenarioConfig c;
  c.strategy = st;
  c.mpr = mpr;
  c.demand_vph = 0.0;
  c.lane_count = lanes;
  c.length_m = 1e6;
  c.duration_s = 1000.0;
  c.warmup_s = 0.0;
  return c;
}

VehicleState car(VehicleClass cls, int lane, double pos, double speed) {
  VehicleState v;
  v.cls = cls;
  v.lane = lane;
  v.position = pos;
  v.speed = speed;
  return v;
}

void run_for(World& w, double seconds) {
  const auto n = static_cast<int>(std::lround(seconds / w.config().dt_s));
  for (int i = 0; i < n; ++i) w.step();
}

// Equilibrium gap of identical IDM vehicles at speed v: a[1 - (v/v0)^d - (s*/s)^2] = 0.
double equilibrium_gap(double v, const DriverParams& p) {
  const double sstar = p.s0 + v * p.T;
  return sstar / std::sqrt(1.0 - std::pow(v / p.v_des, p.delta));
}

}  // namespace

TEST(Integrate, UniformMotion) {
  VehicleState s = car(VehicleClass::HV, 0, 0.0, 20.0);
  VehicleState out = integrate(s, 0.0, 0.1);
  EXPECT_DOUBLE_EQ(out.position, 2.0);
  EXPECT_DOUBLE_EQ(out.speed, 20.0);
}

TEST(Integrate, StopsWithoutReversing) {
  VehicleState s = car(VehicleClass::HV, 0, 0.0, 0.05);
  VehicleState out = integrate(s, -3.0, 0.1);
  EXPECT_DOUBLE_EQ(out.speed, 0.0);
  EXPECT_NEAR(out.position, 0.05 * 0.05 / 6.0, 1e-15);
  EXPECT_NEAR(out.position, 0.000417, 1e-6);
  EXPECT_DOUBLE_EQ(out.accel, -3.0);
}

TEST(Integrate, ConstantAcceleration) {
  VehicleState out = integrate(car(VehicleClass::HV, 0, 0.0, 10.0), 1.0, 0.1);
  EXPECT_NEAR(out.speed, 10.1, 1e-12);
  EXPECT_NEAR(out.position, 1.005, 1e-12);
}

TEST(Step, EmptyWorldOnlyAdvancesClock) {
  World w(quiet());
  for (int i = 0; i < 10; ++i) w.step();
  EXPECT_EQ(w.ticks(), 1000000);
  EXPECT_DOUBLE_EQ(w.clock(), 1.0);
  EXPECT_TRUE(w.vehicles().empty());
  EXPECT_TRUE(w.drain_events().empty());
}

TEST(Step, LoneVehicleAtDesiredSpeed) {
  World w(quiet());
  auto id = w.place(car(VehicleClass::HV, 0, 0.0, 30.0));
  for (int i = 1; i <= 50; ++i) {
    w.step();
    ASSERT_NEAR(w.vehicle(id).position, 3.0 * i, 1e-9);
    ASSERT_DOUBLE_EQ(w.vehicle(id).accel, 0.0);
  }
}

TEST(Step, LoneVehicleConvergesToDesiredSpeed) {
  for (auto cls : {VehicleClass::HV, VehicleClass::CAV}) {
    World w(quiet(1, cls == VehicleClass::HV ? Strategy::Base : Strategy::AdHoc, cls == VehicleClass::HV ? 0.0 : 1.0));
    auto id = w.place(car(cls, 0, 0.0, 0.0));
    run_for(w, 120.0);
    EXPECT_NEAR(w.vehicle(id).speed, 30.0, 0.1);
  }
}

TEST(Step, BaseWorldNeverRunsClusteringOrCavLogic) {
  ScenarioConfig c = quiet(2);
  c.demand_vph = 3000;
  c.length_m = 2000;
  World w(c);
  for (int i = 0; i < 2000; ++i) w.advance();
  EXPECT_EQ(w.counters().clustering_phases, 0u);
  EXPECT_EQ(w.counters().cav_decisions, 0u);
  EXPECT_GT(w.counters().entered, 0u);
  for (const auto& v : w.vehicles()) EXPECT_EQ(v.cls, VehicleClass::HV);
}

TEST(Equilibrium, IdmColumnSettles) {
  ScenarioConfig c = quiet();
  World w(c);
  const double v = 20.0;
  const DriverParams& p = c.hv;
  const double s_eq = equilibrium_gap(v, p);
  double x = 10000.0;
  std::vector<VehicleId> ids;
  ids.push_back(w.place(car(VehicleClass::HV, 0, x, v)));
  w.script_accel(ids[0], 0.0);
  for (int i = 1; i < 20; ++i) {
    x -= 4.5 + s_eq + (i % 2 ? 3.0 : -2.0);
    ids.push_back(w.place(car(VehicleClass::HV, 0, x, v)));
  }
  run_for(w, 300.0);
  for (int i = 1; i < 20; ++i) {
    const double gap = bumper_gap(w.vehicle(ids[i]), w.vehicle(ids[i - 1]));
    EXPECT_NEAR(gap, s_eq, 1e-3) << "vehicle " << i;
  }
}

TEST(Spawn, ZeroMprSpawnsOnlyHumans) {
  ScenarioConfig c;
  c.duration_s = 200;
  c.warmup_s = 0;
  auto r = run_scenario(c);
  ASSERT_FALSE(r.trajectories.empty());
  for (const auto& s : r.trajectories) ASSERT_EQ(s.cls, VehicleClass::HV);
}

TEST(Spawn, ClassShareFollowsMpr) {
  ScenarioConfig c;
  c.strategy = Strategy::AdHoc;
  c.mpr = 0.3;
  c.demand_vph = 4000;
  c.duration_s = 900;
  c.warmup_s = 0;
  c.length_m = 1000;
  auto r = run_scenario(c);
  std::map<VehicleId, VehicleClass> cls;
  for (const auto& s : r.trajectories) cls[s.vehicle_id] = s.cls;
  double cav = 0;
  for (auto& [id, k] : cls) cav += k == VehicleClass::CAV;
  const double n = static_cast<double>(cls.size());
  EXPECT_GT(n, 800);
  EXPECT_NEAR(cav / n, 0.3, 4.0 * std::sqrt(0.3 * 0.7 / n));
}

TEST(Spawn, ArrivalCountMatchesDemand) {
  ScenarioConfig c;
  c.demand_vph = 900;  // mean 4 s, shift 2/30 + 1 s
  c.lane_count = 1;
  c.length_m = 500;
  c.duration_s = 3600;
  c.warmup_s = 0;
  World w(c);
  const auto end = to_ticks(c.duration_s, "d");
  while (w.ticks() < end) w.advance();
  const double n = static_cast<double>(w.counters().spawned);
  // Renewal count: mean 900, sd about 30 * (1 - shift/mean).
  EXPECT_NEAR(n, 900.0, 4.0 * 30.0);
  EXPECT_LT(w.counters().max_queued, 5u);
}

TEST(Spawn, JammedEntryQueuesInsteadOfTeleporting) {
  ScenarioConfig c = quiet(1);
  c.demand_vph = 3600;
  c.length_m = 1000;
  World w(c);
  auto blocker = w.place(car(VehicleClass::HV, 0, 3.0, 0.0));
  w.script_accel(blocker, 0.0);
  for (int i = 0; i < 600; ++i) w.advance();
  EXPECT_EQ(w.counters().entered, 1u);
  EXPECT_GT(w.counters().queued, 30u);
  EXPECT_EQ(w.counters().spawned, w.vehicles().size() + w.counters().exited + w.counters().queued);
  EXPECT_EQ(w.vehicles().size(), 1u);
}

TEST(Exits, DownstreamBoundaryRemovesVehicle) {
  ScenarioConfig c = quiet();
  c.length_m = 100;
  World w(c);
  auto id = w.place(car(VehicleClass::HV, 0, 95.0, 30.0));
  w.step();
  w.step();
  EXPECT_FALSE(w.has_vehicle(id));
  auto ev = w.drain_events();
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].kind, EventKind::Exit);
  EXPECT_EQ(w.counters().exited, 1u);
}

TEST(Exits, LoneFollowerRevertsWhenLeaderLeaves) {
  ScenarioConfig c = quiet(1, Strategy::AdHoc, 1.0);
  c.length_m = 200;
  World w(c);
  auto a = w.place(car(VehicleClass::CAV, 0, 199.0, 25.0));
  auto b = w.place(car(VehicleClass::CAV, 0, 180.0, 25.0));
  w.form_platoon({a, b});
  EXPECT_EQ(w.vehicle(b).role, Role::Follower);
  w.step();
  EXPECT_FALSE(w.has_vehicle(a));
  EXPECT_EQ(w.vehicle(b).role, Role::FreeAgent);
  EXPECT_FALSE(w.vehicle(b).platoon_id);
  EXPECT_EQ(w.platoons().size(), 0u);
}

TEST(Invariants, OverlapHaltsWithDiagnostics) {
  World w(quiet());
  auto a = w.place(car(VehicleClass::HV, 0, 100.0, 0.0));
  auto b = w.place(car(VehicleClass::HV, 0, 94.5, 30.0));  // 1 m behind, closing at 30 m/s
  w.script_accel(a, 0.0);
  w.script_accel(b, 0.0);
  try {
    w.step();
    FAIL() << "expected an invariant fault";
  } catch (const InvariantFault& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("step 1"), std::string::npos) << msg;
    EXPECT_NE(msg.find("vehicles 0 and 1"), std::string::npos) << msg;
  }
}

TEST(Platoons, AdHocCouplesInLaneAndDecouplesWhenStretched) {
  ScenarioConfig c = quiet(1, Strategy::AdHoc, 1.0);
  World w(c);
  auto a = w.place(car(VehicleClass::CAV, 0, 1000.0, 25.0));
  auto b = w.place(car(VehicleClass::CAV, 0, 960.0, 25.0));
  w.step();
  ASSERT_TRUE(w.vehicle(a).platoon_id);
  EXPECT_EQ(w.vehicle(a).role, Role::Leader);
  EXPECT_EQ(w.vehicle(b).role, Role::Follower);
  EXPECT_EQ(w.counters().join_plans_created, 0u);

  // The leader pulls away until the gap exceeds the decouple range.
  w.script_accel(a, 1.0);
  w.script_accel(b, -0.5);
  run_for(w, 12.0);
  EXPECT_GT(bumper_gap(w.vehicle(b), w.vehicle(a)), c.engine.decouple_range_m);
  EXPECT_FALSE(w.vehicle(a).platoon_id);
  EXPECT_EQ(w.vehicle(b).role, Role::FreeAgent);
}

TEST(Platoons, FollowerUsesShortTimeGap) {
  ScenarioConfig c = quiet(1, Strategy::AdHoc, 1.0);
  World w(c);
  auto a = w.place(car(VehicleClass::CAV, 0, 1000.0, 25.0));
  auto b = w.place(car(VehicleClass::CAV, 0, 960.0, 25.0));
  w.script_accel(a, 0.0);
  run_for(w, 200.0);
  DriverParams p = c.cav;
  p.T = c.cacc.t_follower;
  const double expect = equilibrium_gap(25.0, p);
  EXPECT_NEAR(bumper_gap(w.vehicle(b), w.vehicle(a)), expect, 0.05);
}

TEST(Platoons, SizeCapRespectedOnCoupling) {
  ScenarioConfig c = quiet(1, Strategy::AdHoc, 1.0);
  c.cacc.max_platoon_size = 3;
  World w(c);
  for (int i = 0; i < 7; ++i) w.place(car(VehicleClass::CAV, 0, 1000.0 - 25.0 * i, 25.0));
  run_for(w, 30.0);
  EXPECT_LE(w.counters().max_platoon_size, 3u);
  for (const auto& [pid, p] : w.platoons().all()) EXPECT_LE(p.size(), 3u);
  EXPECT_GE(w.platoons().size(), 2u);
}

TEST(LocalJoin, FreeAgentJoinsPlatoonInAdjacentLane) {
  ScenarioConfig c = quiet(2, Strategy::Local, 1.0);
  World w(c);
  auto h = w.place(car(VehicleClass::CAV, 0, 1100.0, 25.0));
  auto t = w.place(car(VehicleClass::CAV, 0, 1080.0, 25.0));
  auto me = w.place(car(VehicleClass::CAV, 1, 1000.0, 25.0));
  w.form_platoon({h, t});
  w.script_accel(h, 0.0);
  w.script_accel(t, 0.0);
  run_for(w, 30.0);
  EXPECT_EQ(w.counters().join_plans_completed, 1u);
  ASSERT_TRUE(w.vehicle(me).platoon_id);
  EXPECT_EQ(w.platoons().find(*w.vehicle(me).platoon_id)->tail(), me);
  EXPECT_EQ(w.vehicle(me).lane, 0);
  EXPECT_EQ(w.counters().lane_changes_join, 1u);
}

TEST(LocalJoin, PlatoonDriftsToPreferentialLane) {
  ScenarioConfig c = quiet(3, Strategy::Local, 1.0);
  World w(c);
  auto a = w.place(car(VehicleClass::CAV, 2, 1000.0, 25.0));
  auto b = w.place(car(VehicleClass::CAV, 2, 975.0, 25.0));
  auto d = w.place(car(VehicleClass::CAV, 2, 950.0, 25.0));
  w.form_platoon({a, b, d});
  run_for(w, 40.0);
  for (auto id : {a, b, d}) EXPECT_EQ(w.vehicle(id).lane, 0);
  EXPECT_EQ(w.platoons().size(), 1u);
  EXPECT_EQ(w.counters().lane_changes_drift, 6u);
}

TEST(LaneChanges, ForcedDiscretionaryChangeIsCountedOnce) {
  ScenarioConfig c = quiet(2);
  World w(c);
  auto slow = w.place(car(VehicleClass::HV, 0, 1060.0, 10.0));
  auto me = w.place(car(VehicleClass::HV, 0, 1000.0, 25.0));
  w.place(car(VehicleClass::HV, 1, 700.0, 25.0));
  w.script_accel(slow, 0.0);
  std::vector<Event> events;
  std::vector<TrajectorySample> samples;
  for (int i = 0; i < 200; ++i) {
    w.step();
    for (auto& e : w.drain_events()) events.push_back(e);
    for (auto& s : w.drain_samples()) samples.push_back(s);
  }
  EXPECT_EQ(w.vehicle(me).lane, 1);
  auto stats = lane_change_stats(events, samples);
  EXPECT_EQ(stats.total, 1u);
  EXPECT_DOUBLE_EQ(stats.avg_per_hv, 1.0 / 3.0);
}

TEST(LaneChanges, SafetyAndCooldownInMixedTraffic) {
  ScenarioConfig c;
  c.strategy = Strategy::Local;
  c.mpr = 0.3;
  c.demand_vph = 6500;
  c.length_m = 3000;
  c.duration_s = 400;
  c.warmup_s = 0;
  c.seed = 4;
  World w(c);
  std::map<VehicleId, double> last;
  std::uint64_t changes = 0;
  const auto end = to_ticks(c.duration_s, "d");
  while (w.ticks() < end) {
    w.advance();
    for (const auto& e : w.drain_events()) {
      if (e.kind != EventKind::LaneChange) continue;
      ++changes;
      auto it = last.find(e.vehicle_id);
      if (it != last.end()) {
        ASSERT_GE(e.time - it->second, c.engine.lane_change_cooldown_s - 1e-9);
      }
      last[e.vehicle_id] = e.time;
    }
    w.drain_samples();
  }
  EXPECT_GT(changes, 50u);
  EXPECT_GE(w.counters().min_lane_change_follower_accel, -c.hv.b_safe);
  EXPECT_GT(w.counters().min_gap, 0.0);
  EXPECT_GT(w.counters().invariant_checks, 3900u);
}

TEST(RunScenario, WarmupFilteredAndLogGrid) {
  ScenarioConfig c;
  c.strategy = Strategy::AdHoc;
  c.mpr = 0.2;
  c.demand_vph = 5000;
  c.length_m = 2000;
  c.duration_s = 200;
  c.warmup_s = 50;
  auto r = run_scenario(c);
  ASSERT_FALSE(r.trajectories.empty());
  std::map<VehicleId, std::vector<double>> times;
  for (const auto& s : r.trajectories) {
    ASSERT_GE(s.time, 50.0);
    times[s.vehicle_id].push_back(s.time);
  }
  for (const auto& e : r.events) ASSERT_GE(e.time, 50.0);
  for (const auto& [id, t] : times) {
    ASSERT_LE(t.size(), 300u);
    for (std::size_t k = 1; k < t.size(); ++k) ASSERT_NEAR(t[k] - t[k - 1], 0.5, 1e-9);
  }
  const double first = r.trajectories.front().time;
  EXPECT_NEAR(std::fmod(first, 0.5), 0.0, 1e-9);
}

TEST(RunScenario, Deterministic) {
  ScenarioConfig c;
  c.strategy = Strategy::Local;
  c.mpr = 0.3;
  c.demand_vph = 6000;
  c.length_m = 2000;
  c.duration_s = 200;
  c.warmup_s = 0;
  c.seed = 99;
  auto a = run_scenario(c);
  auto b = run_scenario(c);
  ASSERT_EQ(a.trajectories.size(), b.trajectories.size());
  for (std::size_t i = 0; i < a.trajectories.size(); ++i) {
    ASSERT_EQ(a.trajectories[i].position, b.trajectories[i].position);
    ASSERT_EQ(a.trajectories[i].accel, b.trajectories[i].accel);
    ASSERT_EQ(a.trajectories[i].role, b.trajectories[i].role);
  }
  ASSERT_EQ(a.events.size(), b.events.size());
  c.seed = 100;
  auto d = run_scenario(c);
  EXPECT_NE(a.trajectories, d.trajectories);
}

TEST(RunScenario, ConservationHoldsEveryStep) {
  ScenarioConfig c;
  c.strategy = Strategy::AdHoc;
  c.mpr = 0.2;
  c.length_m = 1500;
  c.duration_s = 300;
  c.warmup_s = 0;
  c.ramps.enabled = true;
  c.ramps.onramp_position_m = 300;
  c.ramps.offramp_position_m = 1200;
  c.ramps.mandatory_zone_m = 800;
  c.ramps.offramp_fraction = 0.2;
  World w(c);
  const auto end = to_ticks(c.duration_s, "d");
  while (w.ticks() < end) {
    w.advance();
    const auto& k = w.counters();
    ASSERT_EQ(k.spawned, w.vehicles().size() + k.exited + k.queued);
  }
  EXPECT_GT(w.counters().offramp_exits, 0u);
  EXPECT_GT(w.counters().lane_changes_mandatory, 0u);
}

TEST(RunScenario, AdHocEmitsNoPlansOrDrifts) {
  ScenarioConfig c;
  c.strategy = Strategy::AdHoc;
  c.mpr = 0.4;
  c.length_m = 3000;
  c.duration_s = 300;
  c.warmup_s = 0;
  auto r = run_scenario(c);
  EXPECT_EQ(r.summary.counters.join_plans_created, 0u);
  EXPECT_EQ(r.summary.counters.drift_commands, 0u);
  EXPECT_EQ(r.summary.counters.clustering_phases, 0u);
  for (const auto& e : r.events)
    if (e.kind == EventKind::LaneChange) {
      EXPECT_NE(e.change_kind, LaneChangeKind::Join);
    }
}
