#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "caccsim/metrics.hpp"

using namespace caccsim;

namespace {

TrajectorySample sample(std::uint64_t id, double t, double x, double accel = 0.0,
                        VehicleClass cls = VehicleClass::HV, std::optional<VehicleClass> leader = std::nullopt) {
  TrajectorySample s;
  s.vehicle_id = VehicleId{id};
  s.time = t;
  s.position = x;
  s.accel = accel;
  s.cls = cls;
  s.role = cls == VehicleClass::HV ? Role::NotApplicable : Role::FreeAgent;
  s.leader_class = leader;
  if (leader) s.leader_id = VehicleId{id + 1000};
  return s;
}

Event exit_event(std::uint64_t id, double t) {
  Event e;
  e.kind = EventKind::Exit;
  e.vehicle_id = VehicleId{id};
  e.time = t;
  return e;
}

Event lane_change(std::uint64_t id, VehicleClass cls, LaneChangeKind k) {
  Event e;
  e.kind = EventKind::LaneChange;
  e.vehicle_id = VehicleId{id};
  e.cls = cls;
  e.from_lane = 0;
  e.to_lane = 1;
  e.change_kind = k;
  return e;
}

// Counts samples <= x; the definition of the ECDF, nothing more.
double brute_cdf(const std::vector<double>& v, double x) {
  double n = 0;
  for (double s : v) n += s <= x;
  return n / static_cast<double>(v.size());
}

double brute_ks(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (const auto* set : {&a, &b})
    for (double x : *set) d = std::max(d, std::abs(brute_cdf(a, x) - brute_cdf(b, x)));
  return d;
}

double series_q(double lambda) {
  double s = 0.0;
  for (int k = 1; k <= 100; ++k) s += (k % 2 ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lambda * lambda);
  return 2.0 * s;
}

}  // namespace

TEST(Q, HundredVehicles) {
  std::vector<TrajectorySample> log;
  const double mile = units::kMetersPerMile;
  for (std::uint64_t i = 0; i < 100; ++i) {
    log.push_back(sample(i, 0.0, 0.0));
    log.push_back(sample(i, 180.0, 2.0 * mile));
    log.push_back(sample(i, 360.0, 5.0 * mile));
  }
  auto r = compute_q(log);
  EXPECT_NEAR(r.vmt, 500.0, 1e-9);
  EXPECT_NEAR(r.vht, 10.0, 1e-12);
  EXPECT_NEAR(r.q, 50.0, 1e-10);
}

TEST(Q, SingleVehicleEightKilometres) {
  std::vector<TrajectorySample> log{sample(0, 300.0, 0.0), sample(0, 700.0, 8000.0)};
  auto r = compute_q(log);
  const double expect = (8000.0 / 1609.344) / (400.0 / 3600.0);
  EXPECT_NEAR(r.q, expect, 1e-9);
  EXPECT_NEAR(r.q, 44.74, 0.005);
}

TEST(Q, EmptyLogIsDegenerate) {
  EXPECT_THROW(compute_q(std::vector<TrajectorySample>{}), DegenerateInput);
}

TEST(Q, SampleOrderDoesNotMatter) {
  std::vector<TrajectorySample> log{sample(1, 5.0, 150.0), sample(0, 1.0, 10.0), sample(1, 1.0, 30.0),
                                    sample(0, 3.0, 70.0)};
  auto fwd = compute_q(log);
  std::reverse(log.begin(), log.end());
  auto rev = compute_q(log);
  EXPECT_DOUBLE_EQ(fwd.vmt, rev.vmt);
  EXPECT_DOUBLE_EQ(fwd.vht, rev.vht);
}

TEST(Q, EqualsTimeWeightedMeanSpeed) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> speed(2.0, 35.0), start(0.0, 500.0), dur(1.0, 600.0);
  std::vector<TrajectorySample> log;
  double weighted = 0.0, total_t = 0.0;
  for (std::uint64_t i = 0; i < 200; ++i) {
    const double v = speed(rng), t0 = start(rng), d = dur(rng), x0 = 10.0 * static_cast<double>(i);
    log.push_back(sample(i, t0, x0));
    log.push_back(sample(i, t0 + d, x0 + v * d));
    weighted += v * d;
    total_t += d;
  }
  const double mph = (weighted / total_t) / units::kMetersPerMile * 3600.0;
  EXPECT_NEAR(compute_q(log).q, mph, 1e-9 * mph);
}

TEST(Throughput, Scaling) {
  std::vector<Event> ev;
  for (int i = 0; i < 9000; ++i) ev.push_back(exit_event(static_cast<std::uint64_t>(i), 1.0));
  EXPECT_DOUBLE_EQ(compute_throughput(ev, 3600.0), 9000.0);
  ev.resize(4700);
  EXPECT_DOUBLE_EQ(compute_throughput(ev, 1800.0), 9400.0);
  EXPECT_DOUBLE_EQ(compute_throughput({}, 3600.0), 0.0);
  EXPECT_THROW(compute_throughput(ev, 0.0), DegenerateInput);
}

TEST(Throughput, OnlyDownstreamExitsCount) {
  std::vector<Event> ev{exit_event(0, 1.0), exit_event(1, 2.0)};
  ev[1].kind = EventKind::OffRampExit;
  ev.push_back(lane_change(2, VehicleClass::HV, LaneChangeKind::Free));
  EXPECT_DOUBLE_EQ(compute_throughput(ev, 3600.0), 1.0);
}

TEST(HardBraking, PerSampleCrossings) {
  std::vector<TrajectorySample> log;
  const double series[] = {-2.0, -3.1, -3.5, -1.0};
  for (int k = 0; k < 4; ++k) log.push_back(sample(0, 0.5 * k, 10.0 * k, series[k]));
  auto obs = detect_hard_braking(log, -3.0);
  ASSERT_EQ(obs.size(), 2u);
  EXPECT_DOUBLE_EQ(obs[0].accel, -3.1);
  EXPECT_DOUBLE_EQ(obs[1].time, 1.0);
}

TEST(HardBraking, StrictThreshold) {
  std::vector<TrajectorySample> log{sample(0, 0.0, 0.0, -3.0), sample(1, 0.0, 50.0, std::nextafter(-3.0, -4.0))};
  auto obs = detect_hard_braking(log, -3.0);
  ASSERT_EQ(obs.size(), 1u);
  EXPECT_EQ(obs[0].vehicle_id, VehicleId{1});
}

TEST(HardBraking, PartnerClassification) {
  std::vector<TrajectorySample> log{sample(0, 0.0, 0.0, -4.0, VehicleClass::HV, VehicleClass::CAV),
                                    sample(1, 0.0, 0.0, -4.0, VehicleClass::HV, VehicleClass::HV),
                                    sample(2, 0.0, 0.0, -4.0, VehicleClass::HV, std::nullopt),
                                    sample(3, 0.0, 0.0, -5.0, VehicleClass::CAV, VehicleClass::HV)};
  auto obs = detect_hard_braking(log);
  ASSERT_EQ(obs.size(), 3u) << "CAV samples are not observations";
  EXPECT_EQ(obs[0].partner_class, VehicleClass::CAV);
  auto c = count_hard_brakes(obs);
  EXPECT_EQ(c.total, 3u);
  EXPECT_EQ(c.cav_partner, 1u);
  EXPECT_EQ(c.hv_partner, 1u);
  EXPECT_EQ(c.no_partner, 1u);
}

TEST(HardBraking, ThresholdMustBeNegative) {
  EXPECT_THROW(detect_hard_braking({}, 0.0), ConfigError);
  EXPECT_THROW(detect_hard_braking({}, 1.0), ConfigError);
}

TEST(HardBraking, PartitionAndThresholdMonotonicity) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> acc(-9.0, 1.5);
  std::uniform_int_distribution<int> who(0, 3);
  std::vector<TrajectorySample> log;
  for (std::uint64_t i = 0; i < 20000; ++i) {
    const int w = who(rng);
    std::optional<VehicleClass> partner;
    if (w == 1) partner = VehicleClass::HV;
    if (w == 2) partner = VehicleClass::CAV;
    const VehicleClass cls = w == 3 ? VehicleClass::CAV : VehicleClass::HV;
    log.push_back(sample(i % 97, 0.5 * static_cast<double>(i / 97), 0.0, acc(rng), cls, partner));
  }
  std::size_t prev = log.size() + 1;
  for (double th = -0.5; th >= -9.5; th -= 0.5) {
    auto obs = detect_hard_braking(log, th);
    auto c = count_hard_brakes(obs);
    ASSERT_EQ(c.total, c.hv_partner + c.cav_partner + c.no_partner);
    ASSERT_LE(obs.size(), prev);
    prev = obs.size();
  }
  EXPECT_EQ(prev, 0u);
}

TEST(HardBraking, EpisodeMergeCoalescesConsecutiveSamples) {
  std::vector<TrajectorySample> log;
  const double series[] = {-3.5, -4.0, -3.2, -1.0, -3.8, -3.9};
  for (int k = 0; k < 6; ++k) log.push_back(sample(0, 0.5 * k, 0.0, series[k]));
  log.push_back(sample(1, 0.5, 0.0, -6.0));
  auto obs = detect_hard_braking(log);
  ASSERT_EQ(obs.size(), 6u);
  auto merged = merge_episodes(obs, 0.5);
  ASSERT_EQ(merged.size(), 3u);
  EXPECT_DOUBLE_EQ(merged[0].accel, -4.0);
  EXPECT_EQ(merged[1].vehicle_id, VehicleId{1});
  EXPECT_DOUBLE_EQ(merged[2].accel, -3.9);
}

TEST(Ecdf, Examples) {
  auto one = empirical_cdf({-4.0});
  EXPECT_DOUBLE_EQ(one(-5.0), 0.0);
  EXPECT_DOUBLE_EQ(one(-4.0), 1.0);
  EXPECT_DOUBLE_EQ(empirical_cdf({-6.0, -4.0})(-5.0), 0.5);
  auto ties = empirical_cdf({-3.5, -3.5, -7.0});
  EXPECT_DOUBLE_EQ(ties(-3.5), 1.0);
  EXPECT_DOUBLE_EQ(ties(-4.0), 1.0 / 3.0);
  auto pts = ties.points();
  ASSERT_EQ(pts.size(), 2u);
  EXPECT_EQ(pts[0], std::make_pair(-7.0, 1.0 / 3.0));
  EXPECT_EQ(pts[1], std::make_pair(-3.5, 1.0));
}

TEST(Ecdf, EmptyAndNanRejected) {
  EXPECT_THROW(empirical_cdf({}), DegenerateInput);
  EXPECT_THROW(empirical_cdf({1.0, std::nan("")}), DegenerateInput);
}

TEST(Ecdf, BoundsAndMonotone) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(-4.0, 1.0);
  std::vector<double> v(300);
  for (auto& x : v) x = g(rng);
  auto f = empirical_cdf(v);
  EXPECT_DOUBLE_EQ(f(-1e300), 0.0);
  EXPECT_DOUBLE_EQ(f(*std::max_element(v.begin(), v.end())), 1.0);
  double prev = 0.0;
  for (double x = -10.0; x <= 2.0; x += 0.01) {
    ASSERT_GE(f(x), prev);
    ASSERT_DOUBLE_EQ(f(x), brute_cdf(v, x));
    prev = f(x);
  }
}

TEST(Ks, Examples) {
  std::vector<double> a{1, 2, 3};
  auto same = ks_two_sample(a, a, 0.05);
  EXPECT_DOUBLE_EQ(same.d, 0.0);
  EXPECT_DOUBLE_EQ(same.p_value, 1.0);
  EXPECT_FALSE(same.reject);
  std::vector<double> x{1, 2}, y{3, 4};
  EXPECT_DOUBLE_EQ(ks_statistic(x, y), 1.0);
  EXPECT_DOUBLE_EQ(brute_ks(x, y), 1.0);
  EXPECT_THROW(ks_two_sample({}, a), DegenerateInput);
  EXPECT_THROW(ks_two_sample(a, a, 1.5), ConfigError);
}

TEST(Ks, MatchesBruteForceExactly) {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> size(1, 12), val(-6, 6);
  for (int r = 0; r < 500; ++r) {
    std::vector<double> a(static_cast<std::size_t>(size(rng))), b(static_cast<std::size_t>(size(rng)));
    for (auto& x : a) x = 0.5 * val(rng);  // coarse grid: plenty of ties
    for (auto& x : b) x = 0.5 * val(rng);
    const double d = ks_statistic(a, b);
    ASSERT_EQ(d, brute_ks(a, b));
    ASSERT_EQ(d, ks_statistic(b, a));
    ASSERT_GE(d, 0.0);
    ASSERT_LE(d, 1.0);
  }
}

TEST(Ks, KolmogorovTailAgreesWithAlternatingSeries) {
  for (double l = 0.3; l < 3.0; l += 0.01) ASSERT_NEAR(kolmogorov_q(l), series_q(l), 1e-9) << l;
  EXPECT_DOUBLE_EQ(kolmogorov_q(0.0), 1.0);
  EXPECT_NEAR(kolmogorov_q(1.358), 0.05, 1e-3);
}

TEST(Ks, NullRejectionRateIsCalibrated) {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> a(1000), b(1000);
  int rejects = 0;
  for (int r = 0; r < 1000; ++r) {
    for (auto& x : a) x = g(rng);
    for (auto& x : b) x = g(rng);
    rejects += ks_two_sample(a, b, 0.05).reject;
  }
  EXPECT_NEAR(rejects / 1000.0, 0.05, 0.02);
}

TEST(Ks, DetectsShift) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> a(500), b(500);
  for (auto& x : a) x = g(rng);
  for (auto& x : b) x = g(rng) + 0.5;
  EXPECT_TRUE(ks_two_sample(a, b).reject);
}

TEST(LaneChanges, Accounting) {
  std::vector<TrajectorySample> traj;
  for (std::uint64_t i = 0; i < 100; ++i) traj.push_back(sample(i, 0.0, 0.0));
  EXPECT_EQ(lane_change_stats({}, traj).total, 0u);
  EXPECT_DOUBLE_EQ(lane_change_stats({}, traj).avg_per_hv, 0.0);

  std::vector<Event> ev;
  for (int i = 0; i < 542; ++i) ev.push_back(lane_change(static_cast<std::uint64_t>(i % 100), VehicleClass::HV, LaneChangeKind::Free));
  auto s = lane_change_stats(ev, traj);
  EXPECT_EQ(s.total, 542u);
  EXPECT_DOUBLE_EQ(s.avg_per_hv, 5.42);

  ev.push_back(lane_change(500, VehicleClass::CAV, LaneChangeKind::Join));
  ev.push_back(lane_change(501, VehicleClass::CAV, LaneChangeKind::Free));
  ev.push_back(lane_change(7, VehicleClass::HV, LaneChangeKind::Mandatory));
  traj.push_back(sample(500, 0.0, 0.0, 0.0, VehicleClass::CAV));
  EXPECT_EQ(lane_change_stats(ev, traj).total, 542u);
  EXPECT_DOUBLE_EQ(lane_change_stats(ev, traj).avg_per_hv, 5.42);
}

TEST(PlatoonRatio, SharesOfCavSamples) {
  std::vector<TrajectorySample> t{sample(0, 0, 0, 0, VehicleClass::CAV), sample(1, 0, 0, 0, VehicleClass::CAV),
                                  sample(2, 0, 0, 0, VehicleClass::CAV), sample(3, 0, 0, 0, VehicleClass::CAV),
                                  sample(4, 0, 0)};
  t[0].role = Role::Leader;
  t[1].role = Role::Follower;
  EXPECT_DOUBLE_EQ(platoon_ratio(t), 0.5);
  EXPECT_DOUBLE_EQ(platoon_ratio(std::span(t).subspan(4)), 0.0);
}

TEST(Report, AccumulatorMatchesBatchFunctions) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> acc(-6.0, 1.0);
  std::vector<TrajectorySample> traj;
  std::vector<Event> ev;
  for (std::uint64_t i = 0; i < 40; ++i) {
    const auto cls = i % 4 == 0 ? VehicleClass::CAV : VehicleClass::HV;
    for (int k = 0; k < 30; ++k) {
      auto s = sample(i, 300.0 + 0.5 * k, 15.0 * k, acc(rng), cls,
                      k % 3 == 0 ? std::nullopt : std::optional(k % 3 == 1 ? VehicleClass::HV : VehicleClass::CAV));
      if (cls == VehicleClass::CAV && k > 10) s.role = Role::Follower;
      traj.push_back(s);
    }
    if (i % 2) ev.push_back(exit_event(i, 320.0));
    if (i % 5 == 1) ev.push_back(lane_change(i, cls, LaneChangeKind::Free));
  }
  auto r = build_report(traj, ev, 600.0);
  auto q = compute_q(traj);
  EXPECT_DOUBLE_EQ(r.q, q.q);
  EXPECT_DOUBLE_EQ(r.throughput_vph, compute_throughput(ev, 600.0));
  EXPECT_EQ(r.exits, 20u);
  auto c = count_hard_brakes(detect_hard_braking(traj));
  EXPECT_EQ(r.hard_brakes.total, c.total);
  EXPECT_EQ(r.hard_brake_hv_partner.size(), c.hv_partner);
  EXPECT_EQ(r.hard_brake_cav_partner.size(), c.cav_partner);
  EXPECT_TRUE(std::is_sorted(r.hard_brake_hv_partner.begin(), r.hard_brake_hv_partner.end()));
  auto lc = lane_change_stats(ev, traj);
  EXPECT_EQ(r.lane_change_total, lc.total);
  EXPECT_DOUBLE_EQ(r.avg_lane_change_per_hv, lc.avg_per_hv);
  EXPECT_EQ(r.hv_count, 30u);
  EXPECT_EQ(r.cav_count, 10u);
  EXPECT_DOUBLE_EQ(r.platoon_ratio, platoon_ratio(traj));
}
