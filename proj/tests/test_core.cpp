#include <gtest/gtest.h>

#include "caccsim/core.hpp"

using namespace caccsim;

TEST(IdAllocator, StartsAtZeroAndIncrements) {
  IdAllocator<VehicleId> ids;
  EXPECT_EQ(ids.next().value, 0u);
  EXPECT_EQ(ids.next().value, 1u);
  for (int i = 2; i < 100; ++i) ids.next();
  EXPECT_EQ(ids.next().value, 100u);
  EXPECT_EQ(ids.issued(), 101u);
}

TEST(IdAllocator, VehicleAndPlatoonCountersAreIndependent) {
  IdAllocator<VehicleId> v;
  IdAllocator<PlatoonId> p;
  v.next();
  v.next();
  EXPECT_EQ(p.next().value, 0u);
}

TEST(VehicleState, GapUsesFrontBumperAndLength) {
  VehicleState v;
  v.position = 100.0;
  EXPECT_DOUBLE_EQ(v.rear(), 95.5);
  EXPECT_DOUBLE_EQ(v.length, 4.5);
}

TEST(VehicleState, InvariantChecks) {
  VehicleState hv;
  EXPECT_EQ(check_vehicle(hv, 4), "");

  VehicleState v = hv;
  v.speed = -0.1;
  EXPECT_NE(check_vehicle(v, 4), "");

  v = hv;
  v.lane = 4;
  EXPECT_NE(check_vehicle(v, 4), "");
  v.lane = -1;
  EXPECT_NE(check_vehicle(v, 4), "");

  v = hv;
  v.role = Role::FreeAgent;  // HV must be NotApplicable
  EXPECT_NE(check_vehicle(v, 4), "");

  VehicleState cav;
  cav.cls = VehicleClass::CAV;
  cav.role = Role::FreeAgent;
  EXPECT_EQ(check_vehicle(cav, 4), "");
  cav.role = Role::NotApplicable;
  EXPECT_NE(check_vehicle(cav, 4), "");

  cav.role = Role::Follower;
  EXPECT_NE(check_vehicle(cav, 4), "") << "follower without platoon id";
  cav.platoon_id = PlatoonId{3};
  EXPECT_EQ(check_vehicle(cav, 4), "");
  cav.role = Role::FreeAgent;
  EXPECT_NE(check_vehicle(cav, 4), "") << "free agent with platoon id";
}

TEST(Enums, StringRoundTrip) {
  for (auto s : {Strategy::Base, Strategy::AdHoc, Strategy::Local}) EXPECT_EQ(parse_strategy(to_string(s)), s);
  for (auto r : {Role::FreeAgent, Role::Leader, Role::Follower, Role::NotApplicable})
    EXPECT_EQ(parse_role(to_string(r)), r);
  for (auto c : {VehicleClass::HV, VehicleClass::CAV}) EXPECT_EQ(parse_vehicle_class(to_string(c)), c);
  for (auto j : {JoinType::Front, JoinType::Mid, JoinType::Rear}) EXPECT_EQ(parse_join_type(to_string(j)), j);
  for (auto k : {EventKind::Spawn, EventKind::Exit, EventKind::OffRampExit, EventKind::LaneChange})
    EXPECT_EQ(parse_event_kind(to_string(k)), k);
  for (auto k : {LaneChangeKind::None, LaneChangeKind::Free, LaneChangeKind::Join, LaneChangeKind::Drift,
                 LaneChangeKind::Mandatory})
    EXPECT_EQ(parse_lane_change_kind(to_string(k)), k);
  EXPECT_THROW(parse_strategy("Global"), ConfigError);
  EXPECT_THROW(parse_vehicle_class("Truck"), ConfigError);
}

TEST(Units, Conversions) {
  EXPECT_NEAR(units::meters_to_miles(8000.0), 4.970969537898672, 1e-12);
  EXPECT_DOUBLE_EQ(units::seconds_to_hours(400.0), 400.0 / 3600.0);
  EXPECT_NEAR(units::kmh_to_mps(108.0), 30.0, 1e-12);
  EXPECT_NEAR(units::mph_to_mps(60.0), 26.8224, 1e-9);
}

TEST(Ticks, ExactMicroseconds) {
  EXPECT_EQ(to_ticks(0.1, "dt"), 100000);
  EXPECT_EQ(to_ticks(0.5, "dt"), 500000);
  EXPECT_EQ(to_ticks(3900.0, "dt"), 3900000000);
  EXPECT_THROW(to_ticks(1e-7, "dt"), ConfigError);
}

TEST(DriverParams, Defaults) {
  DriverParams hv = default_hv_params();
  EXPECT_DOUBLE_EQ(hv.a, 1.4);
  EXPECT_DOUBLE_EQ(hv.b, 2.0);
  EXPECT_DOUBLE_EQ(hv.delta, 4.0);
  EXPECT_DOUBLE_EQ(hv.s0, 2.0);
  EXPECT_DOUBLE_EQ(hv.T, 1.5);
  EXPECT_DOUBLE_EQ(hv.coolness, 0.0);
  EXPECT_DOUBLE_EQ(hv.politeness, 0.3);
  EXPECT_DOUBLE_EQ(hv.a_thr, 0.1);
  EXPECT_DOUBLE_EQ(hv.b_safe, 4.0);
  DriverParams cav = default_cav_params();
  EXPECT_DOUBLE_EQ(cav.coolness, 0.99);
  DriverParams same = cav;
  same.coolness = hv.coolness;
  EXPECT_EQ(same, hv);
}

TEST(DriverParams, Validation) {
  auto bad = [](auto mutate) {
    DriverParams p;
    mutate(p);
    EXPECT_THROW(validate(p, "hv"), ConfigError);
  };
  EXPECT_NO_THROW(validate(DriverParams{}, "hv"));
  bad([](DriverParams& p) { p.a = 0.0; });
  bad([](DriverParams& p) { p.b = -1.0; });
  bad([](DriverParams& p) { p.s0 = 0.0; });
  bad([](DriverParams& p) { p.T = 0.0; });
  bad([](DriverParams& p) { p.coolness = 1.01; });
  bad([](DriverParams& p) { p.coolness = -0.01; });
  bad([](DriverParams& p) { p.b_safe = 0.0; });
}

TEST(CaccParams, Validation) {
  EXPECT_NO_THROW(validate(CaccParams{}, 4));
  CaccParams c;
  c.t_follower = 1.2;  // above t_leader
  EXPECT_THROW(validate(c, 4), ConfigError);
  c = {};
  c.max_platoon_size = 1;
  EXPECT_THROW(validate(c, 4), ConfigError);
  c = {};
  c.comm_range = 0.0;
  EXPECT_THROW(validate(c, 4), ConfigError);
  c = {};
  c.preferential_lane = 4;
  EXPECT_THROW(validate(c, 4), ConfigError);
  c = {};
  EXPECT_EQ(c.join_types_enabled, (std::set<JoinType>{JoinType::Front, JoinType::Rear}));
}

TEST(ScenarioConfig, DefaultsValidate) {
  ScenarioConfig c;
  EXPECT_NO_THROW(validate(c));
  EXPECT_EQ(c.lane_count, 4);
  EXPECT_DOUBLE_EQ(c.length_m, 8000.0);
  EXPECT_DOUBLE_EQ(c.duration_s, 3900.0);
  EXPECT_DOUBLE_EQ(c.warmup_s, 300.0);
  EXPECT_DOUBLE_EQ(c.dt_s, 0.1);
  EXPECT_DOUBLE_EQ(c.log_dt_s, 0.5);
}

TEST(ScenarioConfig, BaseRequiresZeroMpr) {
  ScenarioConfig c;
  c.mpr = 0.2;
  EXPECT_THROW(validate(c), ConfigError);
  c.strategy = Strategy::AdHoc;
  EXPECT_NO_THROW(validate(c));
}

TEST(ScenarioConfig, TimingRules) {
  ScenarioConfig c;
  c.warmup_s = c.duration_s;
  EXPECT_THROW(validate(c), ConfigError);
  c = {};
  c.dt_s = 0.3;  // does not divide 0.5
  EXPECT_THROW(validate(c), ConfigError);
  c = {};
  c.dt_s = 0.05;
  EXPECT_NO_THROW(validate(c));
  c = {};
  c.mpr = 1.5;
  c.strategy = Strategy::Local;
  EXPECT_THROW(validate(c), ConfigError);
  c = {};
  c.lane_count = 0;
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(ScenarioConfig, RampsValidatedOnlyWhenEnabled) {
  ScenarioConfig c;
  c.ramps.offramp_position_m = 1e9;
  EXPECT_NO_THROW(validate(c));
  c.ramps.enabled = true;
  EXPECT_THROW(validate(c), ConfigError);
}

TEST(Platoon, IndexOfAndTail) {
  Platoon p;
  p.member_ids = {VehicleId{5}, VehicleId{2}, VehicleId{9}};
  p.leader_id = VehicleId{5};
  EXPECT_EQ(p.index_of(VehicleId{2}), 1u);
  EXPECT_FALSE(p.index_of(VehicleId{3}));
  EXPECT_EQ(p.tail(), VehicleId{9});
  EXPECT_EQ(p.size(), 3u);
}
