#pragma once

// File formats: JSON scenario configs with a canonical digest, the
// trajectory and event CSV logs, and atomic file output.

#include <openssl/evp.h>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include "caccsim/core.hpp"

namespace caccsim {

using json = nlohmann::json;

inline constexpr std::string_view kArtifactVersion = "1.0.0";

/// Reading or writing a file failed.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// JSON config
// ---------------------------------------------------------------------------

namespace detail {

/// Reads fields of one JSON object, rejecting wrong types and unknown keys.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "expected an object");
  }

  void read(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + "expected a number");
      out = v->get<double>();
    }
  }
  void read(const char* key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) throw ConfigError(where(key) + "expected an integer");
      out = v->get<int>();
    }
  }
  void read(const char* key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_unsigned()) throw ConfigError(where(key) + "expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void read(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + "expected true or false");
      out = v->get<bool>();
    }
  }
  void read(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + "expected a string");
      out = v->get<std::string>();
    }
  }
  const json* take(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(where() + "unknown key '" + k + "'");
  }

 private:
  std::string where(const char* key = nullptr) const {
    std::string p = key ? child(key) : path_;
    return p.empty() ? std::string("config: ") : "config " + p + ": ";
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline json to_json(const DriverParams& p) {
  return json{{"a_mps2", p.a},         {"b_mps2", p.b},           {"delta", p.delta},
              {"v_des_mps", p.v_des},  {"s0_m", p.s0},            {"T_s", p.T},
              {"coolness", p.coolness}, {"politeness", p.politeness}, {"b_safe_mps2", p.b_safe},
              {"a_thr_mps2", p.a_thr}};
}

inline void read_into(const json& j, const std::string& path, DriverParams& p) {
  detail::ObjectReader r(j, path);
  r.read("a_mps2", p.a);
  r.read("b_mps2", p.b);
  r.read("delta", p.delta);
  r.read("v_des_mps", p.v_des);
  r.read("s0_m", p.s0);
  r.read("T_s", p.T);
  r.read("coolness", p.coolness);
  r.read("politeness", p.politeness);
  r.read("b_safe_mps2", p.b_safe);
  r.read("a_thr_mps2", p.a_thr);
  r.finish();
}

inline json to_json(const CaccParams& c) {
  json types = json::array();
  for (JoinType t : c.join_types_enabled) types.push_back(std::string(to_string(t)));
  return json{{"t_follower_s", c.t_follower},     {"t_leader_s", c.t_leader},
              {"max_platoon_size", c.max_platoon_size}, {"comm_range_m", c.comm_range},
              {"preferential_lane", c.preferential_lane}, {"join_types", types}};
}

inline void read_into(const json& j, const std::string& path, CaccParams& c) {
  detail::ObjectReader r(j, path);
  r.read("t_follower_s", c.t_follower);
  r.read("t_leader_s", c.t_leader);
  r.read("max_platoon_size", c.max_platoon_size);
  r.read("comm_range_m", c.comm_range);
  r.read("preferential_lane", c.preferential_lane);
  if (const json* t = r.take("join_types")) {
    if (!t->is_array()) throw ConfigError("config " + r.child("join_types") + ": expected an array");
    c.join_types_enabled.clear();
    for (const auto& x : *t) {
      if (!x.is_string()) throw ConfigError("config " + r.child("join_types") + ": expected strings");
      c.join_types_enabled.insert(parse_join_type(x.get<std::string>()));
    }
  }
  r.finish();
}

inline json to_json(const EngineParams& e) {
  return json{{"vehicle_length_m", e.vehicle_length_m},
              {"entry_speed_mps", e.entry_speed_mps},
              {"min_entry_speed_fraction", e.min_entry_speed_fraction},
              {"lane_change_cooldown_s", e.lane_change_cooldown_s},
              {"join_deadline_s", e.join_deadline_s},
              {"approach_speed_advantage_mps", e.approach_speed_advantage_mps},
              {"couple_range_m", e.couple_range_m},
              {"decouple_range_m", e.decouple_range_m},
              {"scan_interval_s", e.scan_interval_s},
              {"plan_retry_s", e.plan_retry_s},
              {"dissolve_zone_m", e.dissolve_zone_m},
              {"drift_stall_s", e.drift_stall_s},
              {"maneuver_b_safe_mps2", e.maneuver_b_safe_mps2},
              {"check_invariants", e.check_invariants}};
}

inline void read_into(const json& j, const std::string& path, EngineParams& e) {
  detail::ObjectReader r(j, path);
  r.read("vehicle_length_m", e.vehicle_length_m);
  r.read("entry_speed_mps", e.entry_speed_mps);
  r.read("min_entry_speed_fraction", e.min_entry_speed_fraction);
  r.read("lane_change_cooldown_s", e.lane_change_cooldown_s);
  r.read("join_deadline_s", e.join_deadline_s);
  r.read("approach_speed_advantage_mps", e.approach_speed_advantage_mps);
  r.read("couple_range_m", e.couple_range_m);
  r.read("decouple_range_m", e.decouple_range_m);
  r.read("scan_interval_s", e.scan_interval_s);
  r.read("plan_retry_s", e.plan_retry_s);
  r.read("dissolve_zone_m", e.dissolve_zone_m);
  r.read("drift_stall_s", e.drift_stall_s);
  r.read("maneuver_b_safe_mps2", e.maneuver_b_safe_mps2);
  r.read("check_invariants", e.check_invariants);
  r.finish();
}

inline json to_json(const RampConfig& c) {
  return json{{"enabled", c.enabled},
              {"onramp_position_m", c.onramp_position_m},
              {"onramp_demand_vph", c.onramp_demand_vph},
              {"offramp_position_m", c.offramp_position_m},
              {"offramp_fraction", c.offramp_fraction},
              {"mandatory_zone_m", c.mandatory_zone_m}};
}

inline void read_into(const json& j, const std::string& path, RampConfig& c) {
  detail::ObjectReader r(j, path);
  r.read("enabled", c.enabled);
  r.read("onramp_position_m", c.onramp_position_m);
  r.read("onramp_demand_vph", c.onramp_demand_vph);
  r.read("offramp_position_m", c.offramp_position_m);
  r.read("offramp_fraction", c.offramp_fraction);
  r.read("mandatory_zone_m", c.mandatory_zone_m);
  r.finish();
}

inline json to_json(const ScenarioConfig& c) {
  return json{{"strategy", std::string(to_string(c.strategy))},
              {"mpr", c.mpr},
              {"demand_vph", c.demand_vph},
              {"lane_count", c.lane_count},
              {"length_m", c.length_m},
              {"duration_s", c.duration_s},
              {"warmup_s", c.warmup_s},
              {"dt_s", c.dt_s},
              {"log_dt_s", c.log_dt_s},
              {"seed", c.seed},
              {"hv", to_json(c.hv)},
              {"cav", to_json(c.cav)},
              {"cacc", to_json(c.cacc)},
              {"engine", to_json(c.engine)},
              {"ramps", to_json(c.ramps)}};
}

/// Overlays `j` onto `c`; absent keys keep their current values.
inline void read_into(const json& j, ScenarioConfig& c) {
  detail::ObjectReader r(j, "");
  std::string strategy(to_string(c.strategy));
  r.read("strategy", strategy);
  c.strategy = parse_strategy(strategy);
  r.read("mpr", c.mpr);
  r.read("demand_vph", c.demand_vph);
  r.read("lane_count", c.lane_count);
  r.read("length_m", c.length_m);
  r.read("duration_s", c.duration_s);
  r.read("warmup_s", c.warmup_s);
  r.read("dt_s", c.dt_s);
  r.read("log_dt_s", c.log_dt_s);
  r.read("seed", c.seed);
  if (const json* v = r.take("hv")) read_into(*v, "hv", c.hv);
  if (const json* v = r.take("cav")) read_into(*v, "cav", c.cav);
  if (const json* v = r.take("cacc")) read_into(*v, "cacc", c.cacc);
  if (const json* v = r.take("engine")) read_into(*v, "engine", c.engine);
  if (const json* v = r.take("ramps")) read_into(*v, "ramps", c.ramps);
  r.finish();
}

/// Parses and validates a scenario config; absent keys take defaults.
inline ScenarioConfig config_from_json(const json& j) {
  ScenarioConfig c;
  read_into(j, c);
  validate(c);
  return c;
}

inline json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + ": invalid JSON: " + e.what());
  }
}

/// Canonical text of a config: every field explicit, keys sorted, no whitespace.
inline std::string canonical_json(const ScenarioConfig& c) { return to_json(c).dump(); }

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xf]);
  }
  return out;
}

inline std::string config_digest(const ScenarioConfig& c) { return sha256_hex(canonical_json(c)); }

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("cannot read " + path.string());
  return ss.str();
}

inline json read_json_file(const std::filesystem::path& path) {
  return parse_json_text(read_file(path), path.string());
}

/// Output file that only appears under its final name once complete.
/// Data goes to a sibling temporary that is renamed on commit() and
/// removed if the writer is destroyed first.
class AtomicFile {
 public:
  explicit AtomicFile(std::filesystem::path target)
      : target_(std::move(target)), temp_(target_) {
    temp_ += ".partial";
    out_.open(temp_, std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError("cannot write " + target_.string());
    out_.rdbuf()->pubsetbuf(buffer_.data(), static_cast<std::streamsize>(buffer_.size()));
  }
  AtomicFile(const AtomicFile&) = delete;
  AtomicFile& operator=(const AtomicFile&) = delete;
  ~AtomicFile() {
    if (!committed_) {
      out_.close();
      std::error_code ec;
      std::filesystem::remove(temp_, ec);
    }
  }

  std::ostream& stream() { return out_; }
  const std::filesystem::path& path() const noexcept { return target_; }

  void commit() {
    out_.flush();
    out_.close();
    if (!out_) throw IoError("failed writing " + target_.string());
    std::error_code ec;
    std::filesystem::rename(temp_, target_, ec);
    if (ec) throw IoError("cannot move " + temp_.string() + " into place: " + ec.message());
    committed_ = true;
  }

 private:
  std::filesystem::path target_;
  std::filesystem::path temp_;
  std::vector<char> buffer_ = std::vector<char>(1 << 16);
  std::ofstream out_;
  bool committed_{false};
};

inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  AtomicFile f(path);
  f.stream().write(content.data(), static_cast<std::streamsize>(content.size()));
  f.commit();
}

inline void write_json_atomic(const std::filesystem::path& path, const json& j) {
  write_file_atomic(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline constexpr std::string_view kTrajectoryHeader =
    "time_s,vehicle_id,class,lane,position_m,speed_mps,accel_mps2,platoon_id,role,leader_id,leader_class";
inline constexpr std::string_view kEventHeader = "time_s,kind,vehicle_id,class,from_lane,to_lane,change_kind";

namespace detail {

/// Shortest text that reads back to the same double.
inline void append_double(std::string& out, double x) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, x);
  out.append(buf, r.ptr);
}

template <typename Int>
void append_int(std::string& out, Int x) {
  char buf[24];
  auto r = std::to_chars(buf, buf + sizeof buf, x);
  out.append(buf, r.ptr);
}

inline std::vector<std::string_view> split_row(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      cells.push_back(line.substr(start));
      return cells;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

struct CellParser {
  std::string file;
  std::size_t line{0};

  [[noreturn]] void fail(std::string_view column, std::string_view cell) const {
    throw IoError(file + ":" + std::to_string(line) + ": bad " + std::string(column) + " '" + std::string(cell) + "'");
  }
  double real(std::string_view cell, std::string_view column) const {
    double x = 0.0;
    auto r = std::from_chars(cell.data(), cell.data() + cell.size(), x);
    if (r.ec != std::errc{} || r.ptr != cell.data() + cell.size()) fail(column, cell);
    return x;
  }
  template <typename Int>
  Int integer(std::string_view cell, std::string_view column) const {
    Int x{};
    auto r = std::from_chars(cell.data(), cell.data() + cell.size(), x);
    if (r.ec != std::errc{} || r.ptr != cell.data() + cell.size()) fail(column, cell);
    return x;
  }
  template <typename F>
  auto parsed(F&& f, std::string_view cell, std::string_view column) const {
    try {
      return f(cell);
    } catch (const ConfigError&) {
      fail(column, cell);
    }
  }
};

inline std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

}  // namespace detail

inline void append_csv_row(std::string& out, const TrajectorySample& s) {
  detail::append_double(out, s.time);
  out.push_back(',');
  detail::append_int(out, s.vehicle_id.value);
  out.push_back(',');
  out.append(to_string(s.cls));
  out.push_back(',');
  detail::append_int(out, s.lane);
  out.push_back(',');
  detail::append_double(out, s.position);
  out.push_back(',');
  detail::append_double(out, s.speed);
  out.push_back(',');
  detail::append_double(out, s.accel);
  out.push_back(',');
  if (s.platoon_id) detail::append_int(out, s.platoon_id->value);
  out.push_back(',');
  out.append(to_string(s.role));
  out.push_back(',');
  if (s.leader_id) detail::append_int(out, s.leader_id->value);
  out.push_back(',');
  if (s.leader_class) out.append(to_string(*s.leader_class));
  out.push_back('\n');
}

inline void append_csv_row(std::string& out, const Event& e) {
  detail::append_double(out, e.time);
  out.push_back(',');
  out.append(to_string(e.kind));
  out.push_back(',');
  detail::append_int(out, e.vehicle_id.value);
  out.push_back(',');
  out.append(to_string(e.cls));
  out.push_back(',');
  detail::append_int(out, e.from_lane);
  out.push_back(',');
  detail::append_int(out, e.to_lane);
  out.push_back(',');
  out.append(to_string(e.change_kind));
  out.push_back('\n');
}

/// Buffered CSV writer over an output stream.
template <typename Record>
class CsvWriter {
 public:
  CsvWriter(std::ostream& out, std::string_view header) : out_(out) {
    buf_.append(header);
    buf_.push_back('\n');
  }
  ~CsvWriter() { flush(); }

  void write(const Record& r) {
    append_csv_row(buf_, r);
    ++rows_;
    if (buf_.size() >= (1u << 20)) flush();
  }
  void flush() {
    out_.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    buf_.clear();
  }
  std::uint64_t rows() const noexcept { return rows_; }

 private:
  std::ostream& out_;
  std::string buf_;
  std::uint64_t rows_{0};
};

inline TrajectorySample parse_trajectory_row(std::string_view line, const detail::CellParser& p) {
  auto c = detail::split_row(line);
  if (c.size() != 11)
    throw IoError(p.file + ":" + std::to_string(p.line) + ": expected 11 columns, found " + std::to_string(c.size()));
  TrajectorySample s;
  s.time = p.real(c[0], "time_s");
  s.vehicle_id = VehicleId{p.integer<std::uint64_t>(c[1], "vehicle_id")};
  s.cls = p.parsed([](std::string_view x) { return parse_vehicle_class(x); }, c[2], "class");
  s.lane = p.integer<int>(c[3], "lane");
  s.position = p.real(c[4], "position_m");
  s.speed = p.real(c[5], "speed_mps");
  s.accel = p.real(c[6], "accel_mps2");
  if (!c[7].empty()) s.platoon_id = PlatoonId{p.integer<std::uint64_t>(c[7], "platoon_id")};
  s.role = p.parsed([](std::string_view x) { return parse_role(x); }, c[8], "role");
  if (!c[9].empty()) s.leader_id = VehicleId{p.integer<std::uint64_t>(c[9], "leader_id")};
  if (!c[10].empty())
    s.leader_class = p.parsed([](std::string_view x) { return parse_vehicle_class(x); }, c[10], "leader_class");
  return s;
}

inline Event parse_event_row(std::string_view line, const detail::CellParser& p) {
  auto c = detail::split_row(line);
  if (c.size() != 7)
    throw IoError(p.file + ":" + std::to_string(p.line) + ": expected 7 columns, found " + std::to_string(c.size()));
  Event e;
  e.time = p.real(c[0], "time_s");
  e.kind = p.parsed([](std::string_view x) { return parse_event_kind(x); }, c[1], "kind");
  e.vehicle_id = VehicleId{p.integer<std::uint64_t>(c[2], "vehicle_id")};
  e.cls = p.parsed([](std::string_view x) { return parse_vehicle_class(x); }, c[3], "class");
  e.from_lane = p.integer<int>(c[4], "from_lane");
  e.to_lane = p.integer<int>(c[5], "to_lane");
  e.change_kind = p.parsed([](std::string_view x) { return parse_lane_change_kind(x); }, c[6], "change_kind");
  return e;
}

/// Streams the rows of a CSV file with the given header to `fn`.
template <typename Parse, typename Fn>
void read_csv(const std::filesystem::path& path, std::string_view header, Parse&& parse, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  detail::CellParser p{path.string(), 0};
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": empty file");
  p.line = 1;
  if (detail::strip_cr(line) != header)
    throw IoError(path.string() + ": unexpected header '" + std::string(detail::strip_cr(line)) + "'");
  while (std::getline(in, line)) {
    ++p.line;
    std::string_view row = detail::strip_cr(line);
    if (row.empty()) continue;
    fn(parse(row, p));
  }
  if (in.bad()) throw IoError("cannot read " + path.string());
}

template <typename Fn>
void read_trajectories(const std::filesystem::path& path, Fn&& fn) {
  read_csv(path, kTrajectoryHeader, parse_trajectory_row, std::forward<Fn>(fn));
}

template <typename Fn>
void read_events(const std::filesystem::path& path, Fn&& fn) {
  read_csv(path, kEventHeader, parse_event_row, std::forward<Fn>(fn));
}

inline std::vector<TrajectorySample> load_trajectories(const std::filesystem::path& path) {
  std::vector<TrajectorySample> out;
  read_trajectories(path, [&](const TrajectorySample& s) { out.push_back(s); });
  return out;
}

inline std::vector<Event> load_events(const std::filesystem::path& path) {
  std::vector<Event> out;
  read_events(path, [&](const Event& e) { out.push_back(e); });
  return out;
}

}  // namespace caccsim
