#pragma once

// Measures computed from trajectory and event logs: VMT/VHT productivity,
// throughput, hard-braking observations, ECDFs and the two-sample
// Kolmogorov-Smirnov test, lane-change frequency and platoon ratio.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "caccsim/core.hpp"

namespace caccsim {

// ---------------------------------------------------------------------------
// Productivity
// ---------------------------------------------------------------------------

struct QResult {
  double vmt{0.0};  ///< vehicle-miles
  double vht{0.0};  ///< vehicle-hours
  double q{0.0};    ///< mi/h, 0 when vht is 0
};

/// Streaming VMT/VHT: each vehicle contributes the distance and time between
/// its first and last logged sample.
class QAccumulator {
 public:
  void add(const TrajectorySample& s) {
    ++samples_;
    auto [it, fresh] = spans_.try_emplace(s.vehicle_id, Span{s.time, s.position, s.time, s.position});
    if (fresh) return;
    Span& sp = it->second;
    if (s.time < sp.t0) {
      sp.t0 = s.time;
      sp.x0 = s.position;
    }
    if (s.time >= sp.t1) {
      sp.t1 = s.time;
      sp.x1 = s.position;
    }
  }

  std::size_t vehicles() const noexcept { return spans_.size(); }

  /// Per-vehicle (miles, hours), in no particular order.
  std::vector<std::pair<double, double>> per_vehicle() const {
    std::vector<std::pair<double, double>> out;
    out.reserve(spans_.size());
    for (const auto& [id, sp] : spans_)
      out.emplace_back(units::meters_to_miles(sp.x1 - sp.x0), units::seconds_to_hours(sp.t1 - sp.t0));
    return out;
  }

  QResult result() const {
    if (samples_ == 0) throw DegenerateInput("compute_q: empty trajectory log");
    // Sum in id order so the result does not depend on hash layout.
    std::vector<std::pair<VehicleId, Span>> sorted(spans_.begin(), spans_.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    QResult r;
    for (const auto& [id, sp] : sorted) {
      r.vmt += units::meters_to_miles(sp.x1 - sp.x0);
      r.vht += units::seconds_to_hours(sp.t1 - sp.t0);
    }
    r.q = r.vht > 0.0 ? r.vmt / r.vht : 0.0;
    return r;
  }

 private:
  struct Span {
    double t0, x0, t1, x1;
  };
  std::unordered_map<VehicleId, Span> spans_;
  std::size_t samples_{0};
};

inline QResult compute_q(std::span<const TrajectorySample> trajectories) {
  QAccumulator acc;
  for (const auto& s : trajectories) acc.add(s);
  return acc.result();
}

// ---------------------------------------------------------------------------
// Throughput
// ---------------------------------------------------------------------------

inline double vehicles_per_hour(std::uint64_t count, double window_s) {
  if (!(window_s > 0.0)) throw DegenerateInput("throughput: window must be positive");
  return static_cast<double>(count) * 3600.0 / window_s;
}

/// Downstream-boundary exits per hour over a post-warmup window of `window_s`.
inline double compute_throughput(std::span<const Event> events, double window_s) {
  std::uint64_t n = 0;
  for (const auto& e : events)
    if (e.kind == EventKind::Exit) ++n;
  return vehicles_per_hour(n, window_s);
}

// ---------------------------------------------------------------------------
// Hard braking
// ---------------------------------------------------------------------------

inline constexpr double kHardBrakeThreshold = -3.0;

struct HardBrakeObservation {
  double time{0.0};
  VehicleId vehicle_id{};
  VehicleClass cls{VehicleClass::HV};
  double accel{0.0};
  std::optional<VehicleClass> partner_class;
  int lane{0};
};

struct HardBrakeCounts {
  std::uint64_t total{0};
  std::uint64_t hv_partner{0};
  std::uint64_t cav_partner{0};
  std::uint64_t no_partner{0};
};

struct HardBrakeOptions {
  double threshold{kHardBrakeThreshold};
  bool hv_only{true};
};

inline void check_threshold(double threshold) {
  if (!(threshold < 0.0)) throw ConfigError("hard-brake threshold must be negative");
}

/// Observation for one sample, if it is one.
inline std::optional<HardBrakeObservation> hard_brake_of(const TrajectorySample& s, const HardBrakeOptions& opt) {
  if (opt.hv_only && s.cls != VehicleClass::HV) return std::nullopt;
  if (!(s.accel < opt.threshold)) return std::nullopt;
  return HardBrakeObservation{s.time, s.vehicle_id, s.cls, s.accel, s.leader_class, s.lane};
}

inline std::vector<HardBrakeObservation> detect_hard_braking(std::span<const TrajectorySample> trajectories,
                                                             const HardBrakeOptions& opt = {}) {
  check_threshold(opt.threshold);
  std::vector<HardBrakeObservation> out;
  for (const auto& s : trajectories)
    if (auto o = hard_brake_of(s, opt)) out.push_back(*o);
  return out;
}

inline std::vector<HardBrakeObservation> detect_hard_braking(std::span<const TrajectorySample> trajectories,
                                                             double threshold) {
  return detect_hard_braking(trajectories, HardBrakeOptions{threshold, true});
}

inline HardBrakeCounts count_hard_brakes(std::span<const HardBrakeObservation> obs) {
  HardBrakeCounts c;
  for (const auto& o : obs) {
    ++c.total;
    if (!o.partner_class) ++c.no_partner;
    else if (*o.partner_class == VehicleClass::HV) ++c.hv_partner;
    else ++c.cav_partner;
  }
  return c;
}

/// Coalesces runs of observations of the same vehicle on consecutive log
/// instants into one episode. The episode keeps its first sample's time,
/// partner and lane and the minimum acceleration.
inline std::vector<HardBrakeObservation> merge_episodes(std::span<const HardBrakeObservation> obs, double log_dt) {
  std::vector<HardBrakeObservation> sorted(obs.begin(), obs.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.vehicle_id != b.vehicle_id) return a.vehicle_id < b.vehicle_id;
    return a.time < b.time;
  });
  std::vector<HardBrakeObservation> out;
  double last_time = 0.0;
  for (const auto& o : sorted) {
    if (!out.empty() && out.back().vehicle_id == o.vehicle_id &&
        std::abs(o.time - last_time - log_dt) < 1e-6 * std::max(1.0, log_dt)) {
      out.back().accel = std::min(out.back().accel, o.accel);
    } else {
      out.push_back(o);
    }
    last_time = o.time;
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.time != b.time) return a.time < b.time;
    return a.vehicle_id < b.vehicle_id;
  });
  return out;
}

// ---------------------------------------------------------------------------
// ECDF and K-S
// ---------------------------------------------------------------------------

/// Right-continuous empirical CDF.
class EmpiricalCdf {
 public:
  explicit EmpiricalCdf(std::vector<double> samples) : sorted_(std::move(samples)) {
    if (sorted_.empty()) throw DegenerateInput("empirical_cdf: no samples");
    for (double x : sorted_)
      if (std::isnan(x)) throw DegenerateInput("empirical_cdf: NaN sample");
    std::sort(sorted_.begin(), sorted_.end());
  }

  std::size_t size() const noexcept { return sorted_.size(); }
  std::span<const double> sorted() const noexcept { return sorted_; }

  double operator()(double x) const {
    auto it = std::upper_bound(sorted_.begin(), sorted_.end(), x);
    return static_cast<double>(it - sorted_.begin()) / static_cast<double>(sorted_.size());
  }

  /// Distinct sample values with F at each, ascending.
  std::vector<std::pair<double, double>> points() const {
    std::vector<std::pair<double, double>> out;
    const double n = static_cast<double>(sorted_.size());
    for (std::size_t i = 0; i < sorted_.size(); ++i) {
      if (i + 1 < sorted_.size() && sorted_[i + 1] == sorted_[i]) continue;
      out.emplace_back(sorted_[i], static_cast<double>(i + 1) / n);
    }
    return out;
  }

 private:
  std::vector<double> sorted_;
};

inline EmpiricalCdf empirical_cdf(std::vector<double> samples) { return EmpiricalCdf(std::move(samples)); }

/// Kolmogorov survival function Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2).
/// Small arguments use the equivalent theta-function series, which
/// converges where the alternating one does not.
inline double kolmogorov_q(double lambda) {
  if (!(lambda > 0.0)) return 1.0;
  if (lambda < 1.18) {
    const double pi = std::numbers::pi;
    const double w = std::sqrt(2.0 * pi) / lambda;
    const double f = -pi * pi / (8.0 * lambda * lambda);
    double sum = 0.0;
    for (int k = 1; k <= 200; k += 2) {
      const double term = std::exp(f * k * k);
      sum += term;
      if (term < 1e-18 * sum) break;
    }
    return std::clamp(1.0 - w * sum, 0.0, 1.0);
  }
  double sum = 0.0;
  double sign = 1.0;
  for (int k = 1; k <= 200; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    sum += sign * term;
    if (term < 1e-18) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct KsResult {
  double d{0.0};
  double p_value{1.0};
  bool reject{false};
};

/// sup |Fa - Fb| evaluated on the merged sample points.
inline double ks_statistic(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DegenerateInput("ks_two_sample: empty sample");
  std::vector<double> x(a.begin(), a.end());
  std::vector<double> y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double na = static_cast<double>(x.size());
  const double nb = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() || j < y.size()) {
    double v;
    if (j >= y.size() || (i < x.size() && x[i] <= y[j])) v = x[i];
    else v = y[j];
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

inline KsResult ks_two_sample(std::span<const double> a, std::span<const double> b, double alpha = 0.05) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("ks_two_sample: alpha must be in (0, 1)");
  KsResult r;
  r.d = ks_statistic(a, b);
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double ne = na * nb / (na + nb);
  const double root = std::sqrt(ne);
  const double lambda = (root + 0.12 + 0.11 / root) * r.d;
  r.p_value = kolmogorov_q(lambda);
  r.reject = r.p_value < alpha;
  return r;
}

// ---------------------------------------------------------------------------
// Lane changes and platooning
// ---------------------------------------------------------------------------

struct LaneChangeStats {
  std::uint64_t total{0};
  double avg_per_hv{0.0};
};

inline bool counts_as_hv_lane_change(const Event& e) {
  return e.kind == EventKind::LaneChange && e.cls == VehicleClass::HV && e.change_kind == LaneChangeKind::Free;
}

inline LaneChangeStats lane_change_stats(std::span<const Event> events, std::span<const TrajectorySample> trajectories) {
  LaneChangeStats s;
  for (const auto& e : events)
    if (counts_as_hv_lane_change(e)) ++s.total;
  std::unordered_set<VehicleId> hvs;
  for (const auto& t : trajectories)
    if (t.cls == VehicleClass::HV) hvs.insert(t.vehicle_id);
  s.avg_per_hv = hvs.empty() ? 0.0 : static_cast<double>(s.total) / static_cast<double>(hvs.size());
  return s;
}

/// Share of CAV samples logged as platoon members (Leader or Follower).
inline double platoon_ratio(std::span<const TrajectorySample> trajectories) {
  std::uint64_t cav = 0, grouped = 0;
  for (const auto& t : trajectories) {
    if (t.cls != VehicleClass::CAV) continue;
    ++cav;
    if (t.role == Role::Leader || t.role == Role::Follower) ++grouped;
  }
  return cav == 0 ? 0.0 : static_cast<double>(grouped) / static_cast<double>(cav);
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct ScenarioReport {
  double vmt{0.0};
  double vht{0.0};
  double q{0.0};
  double throughput_vph{0.0};
  std::uint64_t exits{0};
  HardBrakeCounts hard_brakes;
  std::vector<double> hard_brake_hv_partner;   ///< accelerations, ascending
  std::vector<double> hard_brake_cav_partner;  ///< accelerations, ascending
  std::uint64_t lane_change_total{0};
  double avg_lane_change_per_hv{0.0};
  std::uint64_t hv_count{0};
  std::uint64_t cav_count{0};
  double platoon_ratio{0.0};
};

/// Builds a ScenarioReport from records fed one at a time, so whole logs
/// never need to be held in memory.
class ReportAccumulator {
 public:
  explicit ReportAccumulator(HardBrakeOptions hb = {}, bool merge_hard_brake_episodes = false, double log_dt = 0.5)
      : hb_(hb), merge_(merge_hard_brake_episodes), log_dt_(log_dt) {
    check_threshold(hb_.threshold);
  }

  void add(const TrajectorySample& s) {
    q_.add(s);
    if (s.cls == VehicleClass::HV) {
      hvs_.insert(s.vehicle_id);
    } else {
      cavs_.insert(s.vehicle_id);
      ++cav_samples_;
      if (s.role == Role::Leader || s.role == Role::Follower) ++grouped_samples_;
    }
    if (auto o = hard_brake_of(s, hb_)) brakes_.push_back(*o);
  }

  void add(const Event& e) {
    if (e.kind == EventKind::Exit) ++exits_;
    if (counts_as_hv_lane_change(e)) ++lane_changes_;
  }

  ScenarioReport finish(double window_s) const {
    ScenarioReport r;
    const QResult q = q_.result();
    r.vmt = q.vmt;
    r.vht = q.vht;
    r.q = q.q;
    r.exits = exits_;
    r.throughput_vph = vehicles_per_hour(exits_, window_s);
    std::vector<HardBrakeObservation> obs = merge_ ? merge_episodes(brakes_, log_dt_) : brakes_;
    r.hard_brakes = count_hard_brakes(obs);
    for (const auto& o : obs) {
      if (!o.partner_class) continue;
      (*o.partner_class == VehicleClass::HV ? r.hard_brake_hv_partner : r.hard_brake_cav_partner).push_back(o.accel);
    }
    std::sort(r.hard_brake_hv_partner.begin(), r.hard_brake_hv_partner.end());
    std::sort(r.hard_brake_cav_partner.begin(), r.hard_brake_cav_partner.end());
    r.lane_change_total = lane_changes_;
    r.hv_count = hvs_.size();
    r.cav_count = cavs_.size();
    r.avg_lane_change_per_hv = hvs_.empty() ? 0.0 : static_cast<double>(lane_changes_) / static_cast<double>(hvs_.size());
    r.platoon_ratio =
        cav_samples_ == 0 ? 0.0 : static_cast<double>(grouped_samples_) / static_cast<double>(cav_samples_);
    return r;
  }

 private:
  HardBrakeOptions hb_;
  bool merge_;
  double log_dt_;
  QAccumulator q_;
  std::unordered_set<VehicleId> hvs_;
  std::unordered_set<VehicleId> cavs_;
  std::uint64_t cav_samples_{0};
  std::uint64_t grouped_samples_{0};
  std::uint64_t exits_{0};
  std::uint64_t lane_changes_{0};
  std::vector<HardBrakeObservation> brakes_;
};

inline ScenarioReport build_report(std::span<const TrajectorySample> trajectories, std::span<const Event> events,
                                   double window_s, HardBrakeOptions hb = {}) {
  ReportAccumulator acc(hb);
  for (const auto& s : trajectories) acc.add(s);
  for (const auto& e : events) acc.add(e);
  return acc.finish(window_s);
}

}  // namespace caccsim
