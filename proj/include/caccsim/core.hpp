#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace caccsim {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

/// Invalid scenario or sweep configuration.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A control law was evaluated at a state where it is undefined
/// (e.g. a non-positive bumper-to-bumper gap).
struct DegenerateInput : std::domain_error {
  using std::domain_error::domain_error;
};

/// A simulation invariant broke; the message carries the step and the
/// vehicles involved.
struct InvariantFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Identifiers
// ---------------------------------------------------------------------------

template <typename Tag>
struct StrongId {
  std::uint64_t value{0};

  constexpr auto operator<=>(const StrongId&) const = default;
};

struct VehicleTag {};
struct PlatoonTag {};

using VehicleId = StrongId<VehicleTag>;
using PlatoonId = StrongId<PlatoonTag>;

/// Hands out identifiers that are never reused within one simulation run.
template <typename Id>
class IdAllocator {
 public:
  Id next() noexcept { return Id{counter_++}; }
  std::uint64_t issued() const noexcept { return counter_; }

 private:
  std::uint64_t counter_{0};
};

// ---------------------------------------------------------------------------
// Enumerations
// ---------------------------------------------------------------------------

enum class VehicleClass : std::uint8_t { HV, CAV };
enum class Role : std::uint8_t { FreeAgent, Leader, Follower, NotApplicable };
enum class Strategy : std::uint8_t { Base, AdHoc, Local };
enum class JoinType : std::uint8_t { Front, Mid, Rear };

inline std::string_view to_string(VehicleClass c) {
  return c == VehicleClass::HV ? "HV" : "CAV";
}

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::FreeAgent: return "FreeAgent";
    case Role::Leader: return "Leader";
    case Role::Follower: return "Follower";
    case Role::NotApplicable: return "NA";
  }
  return "NA";
}

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::Base: return "Base";
    case Strategy::AdHoc: return "AdHoc";
    case Strategy::Local: return "Local";
  }
  return "Base";
}

inline std::string_view to_string(JoinType j) {
  switch (j) {
    case JoinType::Front: return "Front";
    case JoinType::Mid: return "Mid";
    case JoinType::Rear: return "Rear";
  }
  return "Rear";
}

inline VehicleClass parse_vehicle_class(std::string_view s) {
  if (s == "HV") return VehicleClass::HV;
  if (s == "CAV") return VehicleClass::CAV;
  throw ConfigError("unknown vehicle class '" + std::string(s) + "'");
}

inline Role parse_role(std::string_view s) {
  if (s == "FreeAgent") return Role::FreeAgent;
  if (s == "Leader") return Role::Leader;
  if (s == "Follower") return Role::Follower;
  if (s == "NA") return Role::NotApplicable;
  throw ConfigError("unknown role '" + std::string(s) + "'");
}

inline Strategy parse_strategy(std::string_view s) {
  if (s == "Base") return Strategy::Base;
  if (s == "AdHoc") return Strategy::AdHoc;
  if (s == "Local") return Strategy::Local;
  throw ConfigError("unknown strategy '" + std::string(s) + "'");
}

inline JoinType parse_join_type(std::string_view s) {
  if (s == "Front") return JoinType::Front;
  if (s == "Mid") return JoinType::Mid;
  if (s == "Rear") return JoinType::Rear;
  throw ConfigError("unknown join type '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Units (SI inside; these only appear at the config/report boundary)
// ---------------------------------------------------------------------------

namespace units {
inline constexpr double kMetersPerMile = 1609.344;
inline constexpr double kSecondsPerHour = 3600.0;

constexpr double meters_to_miles(double m) { return m / kMetersPerMile; }
constexpr double seconds_to_hours(double s) { return s / kSecondsPerHour; }
constexpr double kmh_to_mps(double kmh) { return kmh / 3.6; }
constexpr double mph_to_mps(double mph) { return mph * kMetersPerMile / kSecondsPerHour; }
}  // namespace units

inline constexpr double kDefaultVehicleLength = 4.5;

// ---------------------------------------------------------------------------
// Vehicle state and parameters
// ---------------------------------------------------------------------------

struct VehicleState {
  VehicleId id{};
  VehicleClass cls{VehicleClass::HV};
  int lane{0};                ///< 0 = leftmost
  double position{0.0};       ///< front bumper, meters from network entry
  double speed{0.0};          ///< m/s, never negative
  double accel{0.0};          ///< m/s^2, last commanded
  double length{kDefaultVehicleLength};
  std::optional<PlatoonId> platoon_id;
  Role role{Role::NotApplicable};
  double lane_change_cooldown{0.0};  ///< seconds remaining

  double rear() const noexcept { return position - length; }
};

/// Checks the per-vehicle invariants; returns an empty string when valid.
inline std::string check_vehicle(const VehicleState& v, int lane_count) {
  if (v.speed < 0.0) return "negative speed";
  if (v.lane < 0 || v.lane >= lane_count) return "lane out of range";
  if ((v.role == Role::NotApplicable) != (v.cls == VehicleClass::HV))
    return "role/class mismatch";
  bool in_platoon = v.role == Role::Leader || v.role == Role::Follower;
  if (in_platoon != v.platoon_id.has_value()) return "platoon id/role mismatch";
  return {};
}

/// Car-following (IDM family) and MOBIL constants for one driver type.
struct DriverParams {
  double a{1.4};        ///< maximum acceleration
  double b{2.0};        ///< desired (comfortable) deceleration, > 0
  double delta{4.0};    ///< free-acceleration exponent
  double v_des{30.0};   ///< desired speed
  double s0{2.0};       ///< minimum standstill gap
  double T{1.5};        ///< desired time gap
  double coolness{0.0}; ///< 0 = plain IDM
  double politeness{0.3};
  double b_safe{4.0};
  double a_thr{0.1};

  bool operator==(const DriverParams&) const = default;
};

inline void validate(const DriverParams& p, std::string_view what) {
  auto fail = [&](const char* msg) {
    throw ConfigError(std::string(what) + ": " + msg);
  };
  if (!(p.a > 0.0)) fail("a must be > 0");
  if (!(p.b > 0.0)) fail("b must be > 0");
  if (!(p.s0 > 0.0)) fail("s0 must be > 0");
  if (!(p.T > 0.0)) fail("T must be > 0");
  if (!(p.v_des > 0.0)) fail("v_des must be > 0");
  if (!(p.delta > 0.0)) fail("delta must be > 0");
  if (!(p.coolness >= 0.0 && p.coolness <= 1.0)) fail("coolness must lie in [0,1]");
  if (!(p.b_safe > 0.0)) fail("b_safe must be > 0");
  if (!(p.politeness >= 0.0)) fail("politeness must be >= 0");
}

inline DriverParams default_hv_params() { return DriverParams{}; }

inline DriverParams default_cav_params() {
  DriverParams p;
  p.coolness = 0.99;
  return p;
}

struct CaccParams {
  double t_follower{0.6};
  double t_leader{1.1};
  int max_platoon_size{10};
  double comm_range{300.0};
  int preferential_lane{0};
  std::set<JoinType> join_types_enabled{JoinType::Front, JoinType::Rear};

  bool operator==(const CaccParams&) const = default;
};

inline void validate(const CaccParams& c, int lane_count) {
  if (!(c.t_follower > 0.0 && c.t_follower <= c.t_leader))
    throw ConfigError("cacc: require 0 < t_follower <= t_leader");
  if (c.max_platoon_size < 2) throw ConfigError("cacc: max_platoon_size must be >= 2");
  if (!(c.comm_range > 0.0)) throw ConfigError("cacc: comm_range must be > 0");
  if (c.preferential_lane < 0 || c.preferential_lane >= lane_count)
    throw ConfigError("cacc: preferential_lane out of range");
}

// ---------------------------------------------------------------------------
// Platoons
// ---------------------------------------------------------------------------

struct Platoon {
  PlatoonId id{};
  VehicleId leader_id{};
  std::vector<VehicleId> member_ids;  ///< front to back, [0] is the leader
  int lane{0};
  bool dissolving{false};

  std::size_t size() const noexcept { return member_ids.size(); }
  VehicleId tail() const { return member_ids.back(); }

  std::optional<std::size_t> index_of(VehicleId v) const {
    for (std::size_t i = 0; i < member_ids.size(); ++i)
      if (member_ids[i] == v) return i;
    return std::nullopt;
  }

  bool operator==(const Platoon&) const = default;
};

// ---------------------------------------------------------------------------
// Logging records
// ---------------------------------------------------------------------------

struct TrajectorySample {
  double time{0.0};
  VehicleId vehicle_id{};
  VehicleClass cls{VehicleClass::HV};
  int lane{0};
  double position{0.0};
  double speed{0.0};
  double accel{0.0};
  std::optional<PlatoonId> platoon_id;
  Role role{Role::NotApplicable};
  std::optional<VehicleId> leader_id;
  std::optional<VehicleClass> leader_class;

  bool operator==(const TrajectorySample&) const = default;
};

enum class EventKind : std::uint8_t { Spawn, Exit, OffRampExit, LaneChange };

/// Why a lane change happened. Only `Free` changes are discretionary.
enum class LaneChangeKind : std::uint8_t { None, Free, Join, Drift, Mandatory };

struct Event {
  double time{0.0};
  EventKind kind{EventKind::Spawn};
  VehicleId vehicle_id{};
  VehicleClass cls{VehicleClass::HV};
  int from_lane{0};
  int to_lane{0};
  LaneChangeKind change_kind{LaneChangeKind::None};

  bool operator==(const Event&) const = default;
};

inline std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::Spawn: return "Spawn";
    case EventKind::Exit: return "Exit";
    case EventKind::OffRampExit: return "OffRampExit";
    case EventKind::LaneChange: return "LaneChange";
  }
  return "Spawn";
}

inline std::string_view to_string(LaneChangeKind k) {
  switch (k) {
    case LaneChangeKind::None: return "";
    case LaneChangeKind::Free: return "Free";
    case LaneChangeKind::Join: return "Join";
    case LaneChangeKind::Drift: return "Drift";
    case LaneChangeKind::Mandatory: return "Mandatory";
  }
  return "";
}

inline EventKind parse_event_kind(std::string_view s) {
  if (s == "Spawn") return EventKind::Spawn;
  if (s == "Exit") return EventKind::Exit;
  if (s == "OffRampExit") return EventKind::OffRampExit;
  if (s == "LaneChange") return EventKind::LaneChange;
  throw ConfigError("unknown event kind '" + std::string(s) + "'");
}

inline LaneChangeKind parse_lane_change_kind(std::string_view s) {
  if (s.empty()) return LaneChangeKind::None;
  if (s == "Free") return LaneChangeKind::Free;
  if (s == "Join") return LaneChangeKind::Join;
  if (s == "Drift") return LaneChangeKind::Drift;
  if (s == "Mandatory") return LaneChangeKind::Mandatory;
  throw ConfigError("unknown lane change kind '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

struct RampConfig {
  bool enabled{false};
  double onramp_position_m{2000.0};
  double onramp_demand_vph{600.0};
  double offramp_position_m{6000.0};
  double offramp_fraction{0.1};       ///< share of mainline arrivals bound for the off-ramp
  double mandatory_zone_m{1500.0};    ///< distance upstream of the off-ramp where exiting vehicles move right

  bool operator==(const RampConfig&) const = default;
};

/// Tunables of the simulation that are not part of any driver model.
struct EngineParams {
  double vehicle_length_m{kDefaultVehicleLength};
  double entry_speed_mps{30.0};
  double min_entry_speed_fraction{0.6};  ///< slowest admissible insertion speed, as a share of entry speed
  double lane_change_cooldown_s{4.0};
  double join_deadline_s{30.0};
  double approach_speed_advantage_mps{3.0};
  double couple_range_m{60.0};     ///< in-lane gap at which a CAV couples to a CAV ahead
  double decouple_range_m{120.0};  ///< gap beyond which a follower drops out of its platoon
  double scan_interval_s{1.0};
  double plan_retry_s{10.0};
  double dissolve_zone_m{500.0};   ///< platoons whose head is this close to the exit stop admitting
  double drift_stall_s{5.0};          ///< a platoon lane move with no progress for this long is dropped
  double maneuver_b_safe_mps2{2.0};  ///< deceleration a join or drift may impose on the new follower
  bool check_invariants{true};

  bool operator==(const EngineParams&) const = default;
};

struct ScenarioConfig {
  Strategy strategy{Strategy::Base};
  double mpr{0.0};
  double demand_vph{7600.0};
  int lane_count{4};
  double length_m{8000.0};
  double duration_s{3900.0};
  double warmup_s{300.0};
  double dt_s{0.1};
  double log_dt_s{0.5};
  std::uint64_t seed{1};
  DriverParams hv{default_hv_params()};
  DriverParams cav{default_cav_params()};
  CaccParams cacc{};
  EngineParams engine{};
  RampConfig ramps{};

  bool operator==(const ScenarioConfig&) const = default;
};

inline constexpr std::int64_t kTicksPerSecond = 1'000'000;

/// Converts seconds to integer microsecond ticks; throws when not representable.
inline std::int64_t to_ticks(double seconds, std::string_view what) {
  double t = seconds * static_cast<double>(kTicksPerSecond);
  auto ticks = static_cast<std::int64_t>(t < 0 ? t - 0.5 : t + 0.5);
  if (std::abs(t - static_cast<double>(ticks)) > 1e-3)
    throw ConfigError(std::string(what) + " must be a whole number of microseconds");
  return ticks;
}

inline void validate(const ScenarioConfig& c) {
  if (!(c.mpr >= 0.0 && c.mpr <= 1.0)) throw ConfigError("mpr must lie in [0,1]");
  if (c.strategy == Strategy::Base && c.mpr != 0.0)
    throw ConfigError("strategy Base requires mpr = 0");
  if (!(c.demand_vph >= 0.0)) throw ConfigError("demand_vph must be >= 0");
  if (c.lane_count < 1) throw ConfigError("lane_count must be >= 1");
  if (!(c.length_m > 0.0)) throw ConfigError("length_m must be > 0");
  if (!(c.dt_s > 0.0)) throw ConfigError("dt_s must be > 0");
  if (!(c.log_dt_s > 0.0)) throw ConfigError("log_dt_s must be > 0");
  if (!(c.warmup_s >= 0.0 && c.warmup_s < c.duration_s))
    throw ConfigError("require 0 <= warmup_s < duration_s");
  auto dt = to_ticks(c.dt_s, "dt_s");
  auto log_dt = to_ticks(c.log_dt_s, "log_dt_s");
  if (dt <= 0 || log_dt % dt != 0) throw ConfigError("dt_s must divide log_dt_s");
  if (to_ticks(c.duration_s, "duration_s") % dt != 0)
    throw ConfigError("dt_s must divide duration_s");
  to_ticks(c.warmup_s, "warmup_s");
  validate(c.hv, "hv");
  validate(c.cav, "cav");
  validate(c.cacc, c.lane_count);
  const auto& e = c.engine;
  if (!(e.vehicle_length_m > 0.0)) throw ConfigError("engine: vehicle_length_m must be > 0");
  if (!(e.entry_speed_mps > 0.0)) throw ConfigError("engine: entry_speed_mps must be > 0");
  if (!(e.min_entry_speed_fraction > 0.0 && e.min_entry_speed_fraction <= 1.0))
    throw ConfigError("engine: min_entry_speed_fraction must lie in (0,1]");
  if (!(e.lane_change_cooldown_s >= 0.0)) throw ConfigError("engine: lane_change_cooldown_s must be >= 0");
  if (!(e.join_deadline_s > 0.0)) throw ConfigError("engine: join_deadline_s must be > 0");
  if (!(e.couple_range_m > 0.0 && e.decouple_range_m >= e.couple_range_m))
    throw ConfigError("engine: require 0 < couple_range_m <= decouple_range_m");
  if (!(e.scan_interval_s > 0.0)) throw ConfigError("engine: scan_interval_s must be > 0");
  if (!(e.plan_retry_s >= 0.0)) throw ConfigError("engine: plan_retry_s must be >= 0");
  if (!(e.dissolve_zone_m >= 0.0)) throw ConfigError("engine: dissolve_zone_m must be >= 0");
  if (!(e.drift_stall_s > 0.0)) throw ConfigError("engine: drift_stall_s must be > 0");
  if (!(e.maneuver_b_safe_mps2 > 0.0)) throw ConfigError("engine: maneuver_b_safe_mps2 must be > 0");
  if (!(e.approach_speed_advantage_mps >= 0.0))
    throw ConfigError("engine: approach_speed_advantage_mps must be >= 0");
  const auto& r = c.ramps;
  if (r.enabled) {
    if (!(r.onramp_position_m > 0.0 && r.onramp_position_m < c.length_m))
      throw ConfigError("ramps: onramp_position_m must lie inside the network");
    if (!(r.offramp_position_m > 0.0 && r.offramp_position_m < c.length_m))
      throw ConfigError("ramps: offramp_position_m must lie inside the network");
    if (!(r.offramp_fraction >= 0.0 && r.offramp_fraction <= 1.0))
      throw ConfigError("ramps: offramp_fraction must lie in [0,1]");
    if (!(r.onramp_demand_vph >= 0.0)) throw ConfigError("ramps: onramp_demand_vph must be >= 0");
  }
}

}  // namespace caccsim

template <typename Tag>
struct std::hash<caccsim::StrongId<Tag>> {
  std::size_t operator()(const caccsim::StrongId<Tag>& id) const noexcept {
    return std::hash<std::uint64_t>{}(id.value);
  }
};
