#pragma once

// Command implementations behind the caccsim executable. Each cmd_* returns
// a process exit status; the run_* functions underneath throw instead.

#include <spdlog/spdlog.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <thread>

#include "caccsim/engine.hpp"
#include "caccsim/io.hpp"
#include "caccsim/metrics.hpp"

namespace caccsim {

namespace fs = std::filesystem;

inline constexpr const char* kTrajectoriesFile = "trajectories.csv";
inline constexpr const char* kEventsFile = "events.csv";
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kSummaryFile = "summary.json";
inline constexpr const char* kReportFile = "report.json";
inline constexpr const char* kCdfHvFile = "cdf_hard_brake_hv.csv";
inline constexpr const char* kCdfCavFile = "cdf_hard_brake_cav.csv";
inline constexpr const char* kCompareFile = "compare.json";

/// Sets the log level from CACCSIM_LOG (trace, debug, info, warn, error, off).
inline void init_logging() {
  spdlog::set_level(spdlog::level::warn);
  if (const char* v = std::getenv("CACCSIM_LOG")) {
    auto level = spdlog::level::from_str(v);
    if (level == spdlog::level::off && std::string_view(v) != "off")
      spdlog::warn("CACCSIM_LOG='{}' not recognised, keeping 'warn'", v);
    else
      spdlog::set_level(level);
  }
}

// ---------------------------------------------------------------------------
// JSON views of results
// ---------------------------------------------------------------------------

inline json to_json(const RunCounters& k) {
  return json{{"spawned", k.spawned},
              {"entered", k.entered},
              {"exited", k.exited},
              {"offramp_exits", k.offramp_exits},
              {"queued", k.queued},
              {"max_queued", k.max_queued},
              {"lane_changes_free", k.lane_changes_free},
              {"lane_changes_join", k.lane_changes_join},
              {"lane_changes_drift", k.lane_changes_drift},
              {"lane_changes_mandatory", k.lane_changes_mandatory},
              {"lane_changes_rejected", k.lane_changes_rejected},
              {"join_plans_created", k.join_plans_created},
              {"join_plans_completed", k.join_plans_completed},
              {"join_plans_aborted", k.join_plans_aborted},
              {"join_plans_superseded", k.join_plans_superseded},
              {"drift_commands", k.drift_commands},
              {"couplings", k.couplings},
              {"clustering_phases", k.clustering_phases},
              {"invariant_checks", k.invariant_checks},
              {"max_platoon_size", k.max_platoon_size},
              {"min_gap_m", std::isfinite(k.min_gap) ? json(k.min_gap) : json(nullptr)}};
}

inline json to_json(const RunSummary& s, const std::string& digest) {
  return json{{"config_digest", digest},
              {"steps", s.steps},
              {"warmup_s", s.warmup_s},
              {"duration_s", s.duration_s},
              {"samples_logged", s.samples_logged},
              {"events_logged", s.events_logged},
              {"present_at_end", s.present_at_end},
              {"counters", to_json(s.counters)}};
}

inline json to_json(const ScenarioReport& r) {
  return json{{"vmt_mi", r.vmt},
              {"vht_h", r.vht},
              {"q_mph", r.q},
              {"throughput_vph", r.throughput_vph},
              {"exits", r.exits},
              {"hard_brakes",
               {{"total", r.hard_brakes.total},
                {"hv_partner", r.hard_brakes.hv_partner},
                {"cav_partner", r.hard_brakes.cav_partner},
                {"no_partner", r.hard_brakes.no_partner},
                {"hv_partner_samples_mps2", r.hard_brake_hv_partner},
                {"cav_partner_samples_mps2", r.hard_brake_cav_partner}}},
              {"lane_change_total", r.lane_change_total},
              {"avg_lane_change_per_hv", r.avg_lane_change_per_hv},
              {"hv_count", r.hv_count},
              {"cav_count", r.cav_count},
              {"platoon_ratio", r.platoon_ratio}};
}

inline ScenarioReport report_from_json(const json& j) {
  ScenarioReport r;
  try {
    r.vmt = j.at("vmt_mi").get<double>();
    r.vht = j.at("vht_h").get<double>();
    r.q = j.at("q_mph").get<double>();
    r.throughput_vph = j.at("throughput_vph").get<double>();
    r.exits = j.at("exits").get<std::uint64_t>();
    const json& hb = j.at("hard_brakes");
    r.hard_brakes.total = hb.at("total").get<std::uint64_t>();
    r.hard_brakes.hv_partner = hb.at("hv_partner").get<std::uint64_t>();
    r.hard_brakes.cav_partner = hb.at("cav_partner").get<std::uint64_t>();
    r.hard_brakes.no_partner = hb.at("no_partner").get<std::uint64_t>();
    r.hard_brake_hv_partner = hb.at("hv_partner_samples_mps2").get<std::vector<double>>();
    r.hard_brake_cav_partner = hb.at("cav_partner_samples_mps2").get<std::vector<double>>();
    r.lane_change_total = j.at("lane_change_total").get<std::uint64_t>();
    r.avg_lane_change_per_hv = j.at("avg_lane_change_per_hv").get<double>();
    r.hv_count = j.at("hv_count").get<std::uint64_t>();
    r.cav_count = j.at("cav_count").get<std::uint64_t>();
    r.platoon_ratio = j.at("platoon_ratio").get<double>();
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed report: ") + e.what());
  }
  return r;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct RunOutputs {
  bool trajectories{true};  ///< write trajectories.csv
  bool report{false};       ///< also write report.json and the CDF files
  bool merge_hard_brake_episodes{false};
};

struct RunRecord {
  std::string digest;
  RunSummary summary;
  std::optional<ScenarioReport> report;
  double wall_s{0.0};
};

inline ScenarioConfig load_config(const fs::path& path) {
  return config_from_json(parse_json_text(read_file(path), path.string()));
}

namespace detail {

inline void write_cdf(const fs::path& path, const std::vector<double>& samples) {
  std::string text = "accel_mps2,cdf\n";
  if (!samples.empty()) {
    for (auto [x, f] : empirical_cdf(samples).points()) {
      append_double(text, x);
      text.push_back(',');
      append_double(text, f);
      text.push_back('\n');
    }
  }
  write_file_atomic(path, text);
}

inline void write_report_files(const fs::path& dir, const ScenarioReport& r, const std::string& digest,
                               double window_s, const HardBrakeOptions& hb, bool merged) {
  json j = to_json(r);
  j["config_digest"] = digest;
  j["window_s"] = window_s;
  j["hard_brakes"]["threshold_mps2"] = hb.threshold;
  j["hard_brakes"]["merged_episodes"] = merged;
  detail::write_cdf(dir / kCdfHvFile, r.hard_brake_hv_partner);
  detail::write_cdf(dir / kCdfCavFile, r.hard_brake_cav_partner);
  write_json_atomic(dir / kReportFile, j);
}

}  // namespace detail

/// Runs one scenario into `out`. Files appear only when the run succeeded.
inline RunRecord run_simulation(const ScenarioConfig& config, const fs::path& out, const RunOutputs& what = {}) {
  validate(config);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());

  RunRecord rec;
  rec.digest = config_digest(config);
  const auto t0 = std::chrono::steady_clock::now();

  std::optional<AtomicFile> traj_file;
  std::optional<CsvWriter<TrajectorySample>> traj;
  if (what.trajectories) {
    traj_file.emplace(out / kTrajectoriesFile);
    traj.emplace(traj_file->stream(), kTrajectoryHeader);
  }
  AtomicFile events_file(out / kEventsFile);
  CsvWriter<Event> events(events_file.stream(), kEventHeader);
  const HardBrakeOptions hb{};
  std::optional<ReportAccumulator> acc;
  if (what.report) acc.emplace(hb, what.merge_hard_brake_episodes, config.log_dt_s);

  spdlog::info("simulate {} mpr={} seed={} -> {}", to_string(config.strategy), config.mpr, config.seed, out.string());
  rec.summary = run_scenario(
      config,
      [&](const TrajectorySample& s) {
        if (traj) traj->write(s);
        if (acc) acc->add(s);
      },
      [&](const Event& e) {
        events.write(e);
        if (acc) acc->add(e);
      });
  if (traj) {
    traj->flush();
    traj_file->commit();
  }
  events.flush();
  events_file.commit();
  rec.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  json outputs = json::array();
  if (what.trajectories) outputs.push_back(kTrajectoriesFile);
  outputs.push_back(kEventsFile);
  outputs.push_back(kSummaryFile);
  json manifest{{"artifact_version", std::string(kArtifactVersion)},
                {"config_digest", rec.digest},
                {"seed", config.seed},
                {"strategy", std::string(to_string(config.strategy))},
                {"mpr", config.mpr},
                {"outputs", outputs},
                {"wall_clock_s", rec.wall_s},
                {"config", to_json(config)}};
  write_json_atomic(out / kSummaryFile, to_json(rec.summary, rec.digest));
  if (acc) {
    rec.report = acc->finish(config.duration_s - config.warmup_s);
    detail::write_report_files(out, *rec.report, rec.digest, config.duration_s - config.warmup_s, hb,
                               what.merge_hard_brake_episodes);
  }
  write_json_atomic(out / kManifestFile, manifest);
  spdlog::info("simulate done in {:.1f} s: {} samples, {} events", rec.wall_s, rec.summary.samples_logged,
               rec.summary.events_logged);
  return rec;
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

struct AnalyzeOptions {
  bool merge_hard_brake_episodes{false};
  double threshold{kHardBrakeThreshold};
};

/// Config recorded in a run directory, after checking it against the digests.
inline std::pair<ScenarioConfig, std::string> verified_run_config(const fs::path& run) {
  const json manifest = read_json_file(run / kManifestFile);
  if (!manifest.contains("config") || !manifest.contains("config_digest"))
    throw IoError((run / kManifestFile).string() + ": missing config or config_digest");
  const ScenarioConfig config = config_from_json(manifest.at("config"));
  const std::string digest = config_digest(config);
  if (manifest.at("config_digest") != digest)
    throw IoError("config digest mismatch in " + run.string() + ": manifest records " +
                  manifest.at("config_digest").dump() + ", config hashes to \"" + digest + "\"");
  const json summary = read_json_file(run / kSummaryFile);
  if (summary.value("config_digest", std::string()) != digest)
    throw IoError("config digest mismatch between manifest and summary in " + run.string());
  return {config, digest};
}

inline ScenarioReport run_analysis(const fs::path& run, const AnalyzeOptions& opt = {}) {
  auto [config, digest] = verified_run_config(run);
  const HardBrakeOptions hb{opt.threshold, true};
  ReportAccumulator acc(hb, opt.merge_hard_brake_episodes, config.log_dt_s);
  read_trajectories(run / kTrajectoriesFile, [&](const TrajectorySample& s) { acc.add(s); });
  read_events(run / kEventsFile, [&](const Event& e) { acc.add(e); });
  const double window = config.duration_s - config.warmup_s;
  ScenarioReport r = acc.finish(window);
  detail::write_report_files(run, r, digest, window, hb, opt.merge_hard_brake_episodes);
  return r;
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

inline json compare_samples(const std::vector<double>& a, const std::vector<double>& b, double alpha) {
  json j{{"n_a", a.size()}, {"n_b", b.size()}};
  if (a.empty() || b.empty()) {
    j["status"] = "insufficient data";
    return j;
  }
  KsResult r = ks_two_sample(a, b, alpha);
  j["status"] = "ok";
  j["D"] = r.d;
  j["p_value"] = r.p_value;
  j["reject"] = r.reject;
  return j;
}

inline json run_comparison(const fs::path& a, const fs::path& b, double alpha, const fs::path& out_file) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  auto load = [](const fs::path& dir) {
    const fs::path p = dir / kReportFile;
    if (!fs::exists(p)) throw IoError("missing " + p.string() + " (run analyze first)");
    return report_from_json(read_json_file(p));
  };
  const ScenarioReport ra = load(a);
  const ScenarioReport rb = load(b);
  json j{{"a", a.string()},
         {"b", b.string()},
         {"alpha", alpha},
         {"hv_partner", compare_samples(ra.hard_brake_hv_partner, rb.hard_brake_hv_partner, alpha)},
         {"cav_partner", compare_samples(ra.hard_brake_cav_partner, rb.hard_brake_cav_partner, alpha)}};
  write_json_atomic(out_file, j);
  return j;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepSpec {
  ScenarioConfig scenario;  ///< strategy, mpr and seed are overridden per run
  std::vector<Strategy> strategies{Strategy::AdHoc, Strategy::Local};
  std::vector<double> mprs{0.0, 0.1, 0.2, 0.3, 0.4};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  bool write_trajectories{false};
};

inline SweepSpec sweep_from_json(const json& j) {
  SweepSpec s;
  detail::ObjectReader r(j, "");
  if (const json* sc = r.take("scenario")) read_into(*sc, s.scenario);
  if (const json* st = r.take("strategies")) {
    if (!st->is_array() || st->empty()) throw ConfigError("sweep: strategies must be a non-empty array");
    s.strategies.clear();
    for (const auto& x : *st) s.strategies.push_back(parse_strategy(x.get<std::string>()));
  }
  if (const json* m = r.take("mprs")) {
    if (!m->is_array() || m->empty()) throw ConfigError("sweep: mprs must be a non-empty array");
    s.mprs = m->get<std::vector<double>>();
  }
  if (const json* sd = r.take("seeds")) {
    if (!sd->is_array() || sd->empty()) throw ConfigError("sweep: seeds must be a non-empty array");
    s.seeds = sd->get<std::vector<std::uint64_t>>();
  }
  r.read("write_trajectories", s.write_trajectories);
  r.finish();
  for (double m : s.mprs)
    if (!(m >= 0.0 && m <= 1.0)) throw ConfigError("sweep: mpr values must lie in [0,1]");
  return s;
}

struct SweepRun {
  Strategy strategy{Strategy::Base};
  double mpr{0.0};
  std::uint64_t seed{0};
  std::string name;
  ScenarioConfig config;
};

inline std::string run_name(Strategy s, double mpr, std::uint64_t seed) {
  const long pct = std::lround(mpr * 1000.0);
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s_mpr%04ld_seed%llu", std::string(to_string(s)).c_str(), pct,
                static_cast<unsigned long long>(seed));
  return buf;
}

/// Expands the grid. MPR 0 collapses into a single Base run per seed,
/// whichever strategies are listed.
inline std::vector<SweepRun> expand_sweep(const SweepSpec& spec) {
  std::vector<SweepRun> runs;
  auto add = [&](Strategy st, double mpr, std::uint64_t seed) {
    SweepRun r{st, mpr, seed, run_name(st, mpr, seed), spec.scenario};
    r.config.strategy = st;
    r.config.mpr = mpr;
    r.config.seed = seed;
    validate(r.config);
    runs.push_back(std::move(r));
  };
  const bool base = std::find(spec.mprs.begin(), spec.mprs.end(), 0.0) != spec.mprs.end() ||
                    std::find(spec.strategies.begin(), spec.strategies.end(), Strategy::Base) != spec.strategies.end();
  if (base)
    for (auto seed : spec.seeds) add(Strategy::Base, 0.0, seed);
  for (Strategy st : spec.strategies) {
    if (st == Strategy::Base) continue;
    for (double m : spec.mprs) {
      if (m == 0.0) continue;
      for (auto seed : spec.seeds) add(st, m, seed);
    }
  }
  return runs;
}

struct SweepRow {
  SweepRun run;
  bool ok{false};
  std::string error;
  RunSummary summary;
  ScenarioReport report;
};

using SweepRunner = std::function<RunRecord(const SweepRun&, const fs::path&)>;

inline RunRecord default_sweep_runner(const SweepRun& run, const fs::path& dir, bool trajectories) {
  return run_simulation(run.config, dir, RunOutputs{trajectories, true, false});
}

namespace detail {

inline std::string csv_quote(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c == '\n' ? ' ' : c);
  }
  out.push_back('"');
  return out;
}

}  // namespace detail

struct CellMeans {
  Strategy strategy{Strategy::Base};
  double mpr{0.0};
  std::size_t runs{0};
  double q{0.0};
  double throughput_vph{0.0};
  double avg_lane_change_per_hv{0.0};
  double platoon_ratio{0.0};
  double hard_brakes{0.0};
};

/// Means over successful runs per (strategy, mpr) cell, in row order.
inline std::vector<CellMeans> sweep_means(const std::vector<SweepRow>& rows) {
  std::vector<CellMeans> cells;
  for (const auto& r : rows) {
    if (!r.ok) continue;
    auto it = std::find_if(cells.begin(), cells.end(),
                           [&](const CellMeans& c) { return c.strategy == r.run.strategy && c.mpr == r.run.mpr; });
    if (it == cells.end()) {
      cells.push_back(CellMeans{r.run.strategy, r.run.mpr});
      it = std::prev(cells.end());
    }
    ++it->runs;
    it->q += r.report.q;
    it->throughput_vph += r.report.throughput_vph;
    it->avg_lane_change_per_hv += r.report.avg_lane_change_per_hv;
    it->platoon_ratio += r.report.platoon_ratio;
    it->hard_brakes += static_cast<double>(r.report.hard_brakes.total);
  }
  for (auto& c : cells) {
    const double n = static_cast<double>(c.runs);
    c.q /= n;
    c.throughput_vph /= n;
    c.avg_lane_change_per_hv /= n;
    c.platoon_ratio /= n;
    c.hard_brakes /= n;
  }
  return cells;
}

inline void write_sweep_tables(const fs::path& out, const std::vector<SweepRow>& rows) {
  std::string text =
      "run,strategy,mpr,seed,status,error,q_mph,vmt_mi,vht_h,throughput_vph,exits,lane_change_total,"
      "avg_lane_change_per_hv,hard_brake_total,hard_brake_hv_partner,hard_brake_cav_partner,"
      "hard_brake_no_partner,hv_count,cav_count,platoon_ratio,queued_at_end,max_platoon_size,join_plans_created\n";
  for (const auto& r : rows) {
    text += r.run.name + "," + std::string(to_string(r.run.strategy)) + ",";
    detail::append_double(text, r.run.mpr);
    text += "," + std::to_string(r.run.seed) + "," + (r.ok ? "ok" : "failed") + "," + detail::csv_quote(r.error);
    if (r.ok) {
      const auto& p = r.report;
      const auto& k = r.summary.counters;
      for (double x : {p.q, p.vmt, p.vht, p.throughput_vph}) {
        text.push_back(',');
        detail::append_double(text, x);
      }
      for (std::uint64_t x : {p.exits, p.lane_change_total}) text += "," + std::to_string(x);
      text.push_back(',');
      detail::append_double(text, p.avg_lane_change_per_hv);
      for (std::uint64_t x : {p.hard_brakes.total, p.hard_brakes.hv_partner, p.hard_brakes.cav_partner,
                              p.hard_brakes.no_partner, p.hv_count, p.cav_count})
        text += "," + std::to_string(x);
      text.push_back(',');
      detail::append_double(text, p.platoon_ratio);
      for (std::uint64_t x : {k.queued, k.max_platoon_size, k.join_plans_created}) text += "," + std::to_string(x);
    } else {
      text += std::string(17, ',');
    }
    text.push_back('\n');
  }
  write_file_atomic(out / "sweep_summary.csv", text);

  std::string means = "strategy,mpr,runs,mean_q_mph,mean_throughput_vph,mean_avg_lane_change_per_hv,"
                      "mean_platoon_ratio,mean_hard_brake_total\n";
  for (const auto& c : sweep_means(rows)) {
    means += std::string(to_string(c.strategy)) + ",";
    detail::append_double(means, c.mpr);
    means += "," + std::to_string(c.runs);
    for (double x : {c.q, c.throughput_vph, c.avg_lane_change_per_hv, c.platoon_ratio, c.hard_brakes}) {
      means.push_back(',');
      detail::append_double(means, x);
    }
    means.push_back('\n');
  }
  write_file_atomic(out / "sweep_means.csv", means);
}

/// Executes every run of the grid on up to `parallel` threads. A failing
/// run is recorded in its row and does not stop the others.
inline std::vector<SweepRow> run_sweep(const SweepSpec& spec, const fs::path& out, unsigned parallel,
                                       SweepRunner runner = {}) {
  if (!runner)
    runner = [&](const SweepRun& r, const fs::path& d) { return default_sweep_runner(r, d, spec.write_trajectories); };
  const std::vector<SweepRun> runs = expand_sweep(spec);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());

  std::vector<SweepRow> rows(runs.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      SweepRow& row = rows[i];
      row.run = runs[i];
      try {
        RunRecord rec = runner(runs[i], out / runs[i].name);
        row.summary = rec.summary;
        if (!rec.report) throw std::runtime_error("run produced no report");
        row.report = *rec.report;
        row.ok = true;
      } catch (const std::exception& e) {
        row.error = e.what();
      }
      std::lock_guard lock(log_mu);
      if (row.ok) spdlog::info("[{}/{}] {} ok", i + 1, runs.size(), row.run.name);
      else spdlog::error("[{}/{}] {} failed: {}", i + 1, runs.size(), row.run.name, row.error);
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(parallel, static_cast<unsigned>(runs.size())));
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
  }
  write_sweep_tables(out, rows);
  return rows;
}

// ---------------------------------------------------------------------------
// Exit-status wrappers
// ---------------------------------------------------------------------------

template <typename Fn>
int guarded(const char* what, Fn&& fn) {
  try {
    fn();
    return 0;
  } catch (const ConfigError& e) {
    spdlog::error("{}: invalid configuration: {}", what, e.what());
  } catch (const InvariantFault& e) {
    spdlog::error("{}: simulation fault: {}", what, e.what());
  } catch (const std::exception& e) {
    spdlog::error("{}: {}", what, e.what());
  }
  return 1;
}

inline int cmd_simulate(const fs::path& config, const fs::path& out) {
  return guarded("simulate", [&] { run_simulation(load_config(config), out); });
}

inline int cmd_analyze(const fs::path& run, const AnalyzeOptions& opt = {}) {
  return guarded("analyze", [&] { run_analysis(run, opt); });
}

inline int cmd_compare(const fs::path& a, const fs::path& b, double alpha, const fs::path& out_file) {
  return guarded("compare", [&] { run_comparison(a, b, alpha, out_file); });
}

inline int cmd_sweep(const fs::path& config, const fs::path& out, unsigned parallel) {
  int status = 1;
  guarded("sweep", [&] {
    const SweepSpec spec = sweep_from_json(parse_json_text(read_file(config), config.string()));
    auto rows = run_sweep(spec, out, parallel);
    const auto failed = std::count_if(rows.begin(), rows.end(), [](const SweepRow& r) { return !r.ok; });
    if (failed > 0) spdlog::error("sweep: {} of {} runs failed", failed, rows.size());
    status = failed > 0 ? 1 : 0;
  });
  return status;
}

}  // namespace caccsim
