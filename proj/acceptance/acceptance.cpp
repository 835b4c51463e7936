// Acceptance harness: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <random>
#include <thread>

#include <CLI11.hpp>

#include "caccsim/caccsim.hpp"

using namespace caccsim;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass{false};
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt_double(double x, int prec = 4) {
  char b[64];
  std::snprintf(b, sizeof b, "%.*f", prec, x);
  return b;
}

// -- 1: E-IDM properties ------------------------------------------------------

Outcome eidm_properties() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240601);
  std::uniform_real_distribution<double> speed(0.0, 36.0), gap(0.3, 150.0), acc(-8.0, 1.4), cool(0.0, 1.0);
  DriverParams p;
  std::size_t relax_checked = 0, relax_failed = 0, collapse_failed = 0, cah_cont_failed = 0, switch_failed = 0;
  double worst_jump = 0.0;
  for (int i = 0; i < 10000; ++i) {
    p.coolness = cool(rng);
    const double v = speed(rng), s = gap(rng);
    const LeaderView l = LeaderView::of(s, speed(rng), acc(rng));

    // Blend relaxation: where CAH is more permissive than IDM, E-IDM never brakes harder.
    const double idm_raw = p.a * (1.0 - std::pow(v / p.v_des, p.delta)) -
                           p.a * std::pow(desired_gap(v, l.speed, p) / s, 2.0);
    const double cah = cah_accel(v, std::min(idm_raw, p.a), l);
    if (idm_raw < cah) {
      ++relax_checked;
      if (eidm_accel(v, l, p) < idm_accel(v, l, p)) ++relax_failed;
    }

    // Zero coolness is plain IDM, bit for bit.
    DriverParams p0 = p;
    p0.coolness = 0.0;
    if (eidm_accel(v, l, p0) != idm_accel(v, l, p0)) ++collapse_failed;

    // CAH branch boundary: the gap where v_l (v - v_l) = -2 s a_eff, for a braking leader
    // slower than the subject; both sides of the boundary are probed in v.
    {
      const double vstar = 1.0 + 35.0 * cool(rng);
      const double vl = 0.5 + (vstar - 0.5) * cool(rng);
      const double a_eff = -0.1 - 7.9 * cool(rng);
      const double sb = vl * (vstar - vl) / (-2.0 * a_eff);
      const LeaderView lb = LeaderView::of(std::max(sb, 1e-3), vl, a_eff);
      const double lo = cah_accel(vstar * (1.0 - 1e-10), 10.0, lb);
      const double hi = cah_accel(vstar * (1.0 + 1e-10), 10.0, lb);
      worst_jump = std::max(worst_jump, std::abs(hi - lo));
      if (std::abs(hi - lo) > 1e-6) ++cah_cont_failed;
    }

    // IDM/blend switch: bisect the gap where IDM and CAH cross, compare both sides.
    {
      auto diff = [&](double g) {
        const LeaderView lg = LeaderView::of(g, l.speed, l.accel);
        const double raw = p.a * (1.0 - std::pow(v / p.v_des, p.delta)) -
                           p.a * std::pow(desired_gap(v, l.speed, p) / g, 2.0);
        return raw - cah_accel(v, std::min(raw, p.a), lg);
      };
      double a = 0.3, b = 300.0;
      if ((diff(a) < 0.0) != (diff(b) < 0.0)) {
        for (int it = 0; it < 200 && b - a > 1e-12 * b; ++it) {
          const double m = 0.5 * (a + b);
          ((diff(m) < 0.0) == (diff(a) < 0.0) ? a : b) = m;
        }
        const double ea = eidm_accel(v, LeaderView::of(a, l.speed, l.accel), p);
        const double eb = eidm_accel(v, LeaderView::of(b, l.speed, l.accel), p);
        worst_jump = std::max(worst_jump, std::abs(ea - eb));
        if (std::abs(ea - eb) > 1e-6) ++switch_failed;
      }
    }
  }
  const double secs = seconds_since(t0);
  Outcome o;
  o.pass = relax_failed == 0 && collapse_failed == 0 && cah_cont_failed == 0 && switch_failed == 0 &&
           relax_checked > 100 && secs < 1.0;
  o.detail = "10000 draws, relaxation checked " + std::to_string(relax_checked) + " (fail " +
             std::to_string(relax_failed) + "), c=0 mismatches " + std::to_string(collapse_failed) +
             ", branch jumps > 1e-6: " + std::to_string(cah_cont_failed + switch_failed) + " (worst " +
             fmt_double(worst_jump, 12) + "), " + fmt_double(secs, 3) + " s";
  return o;
}

// -- 2: equilibrium column ----------------------------------------------------

Outcome equilibrium_column() {
  const auto t0 = Clock::now();
  ScenarioConfig c;
  c.demand_vph = 0.0;
  c.lane_count = 1;
  c.length_m = 1e6;
  c.duration_s = 400.0;
  c.warmup_s = 0.0;
  World w(c);
  const DriverParams& p = c.hv;
  const double v = 20.0;
  const double s_eq = (p.s0 + v * p.T) / std::sqrt(1.0 - std::pow(v / p.v_des, p.delta));
  std::vector<VehicleId> ids;
  double x = 10000.0;
  VehicleState s;
  s.speed = v;
  s.position = x;
  ids.push_back(w.place(s));
  w.script_accel(ids[0], 0.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> jitter(-3.0, 3.0);
  for (int i = 1; i < 20; ++i) {
    x -= s.length + s_eq + jitter(rng);
    s.position = x;
    ids.push_back(w.place(s));
  }
  for (int k = 0; k < 3000; ++k) w.step();
  double worst = 0.0;
  for (int i = 1; i < 20; ++i)
    worst = std::max(worst, std::abs(bumper_gap(w.vehicle(ids[i]), w.vehicle(ids[i - 1])) - s_eq));
  const double secs = seconds_since(t0);
  return {worst <= 1e-3 && secs < 5.0, "analytic gap " + fmt_double(s_eq, 6) + " m, worst deviation " +
                                           fmt_double(worst, 9) + " m at 300 s, " + fmt_double(secs, 3) + " s"};
}

// -- sweep shared by 3, 6, 9 ----------------------------------------------------

struct SweepData {
  std::vector<SweepRow> rows;
};

SweepData full_sweep(const fs::path& work, unsigned parallel) {
  SweepSpec spec;  // default scenario; {AdHoc, Local} x {0..0.4} x seeds 1..5
  SweepData d;
  std::printf("running 45-run sweep (this takes a while)...\n");
  std::fflush(stdout);
  d.rows = run_sweep(spec, work / "sweep", parallel);
  return d;
}

const SweepRow* find_row(const SweepData& d, Strategy s, double mpr, std::uint64_t seed) {
  for (const auto& r : d.rows)
    if (r.run.strategy == s && r.run.mpr == mpr && r.run.seed == seed) return &r;
  return nullptr;
}

Outcome no_collision_conservation(const SweepData& d, const fs::path& work) {
  // Base cannot carry CAVs, so it runs at 0%; the CAV strategies at 20%.
  std::size_t runs = 0, bad = 0;
  double worst_wall = 0.0, min_gap = std::numeric_limits<double>::infinity();
  std::string why;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (auto [st, m] : {std::pair{Strategy::Base, 0.0}, {Strategy::AdHoc, 0.2}, {Strategy::Local, 0.2}}) {
      const SweepRow* r = find_row(d, st, m, seed);
      ++runs;
      if (!r || !r->ok) {
        ++bad;
        why = r ? r->error : "missing run";
        continue;
      }
      const auto& k = r->summary.counters;
      const bool conserved = k.spawned == r->summary.present_at_end + k.exited + k.queued;
      const bool checked = k.invariant_checks == r->summary.steps;
      if (!conserved || !checked || !(k.min_gap > 0.0)) {
        ++bad;
        why = r->run.name;
      }
      min_gap = std::min(min_gap, k.min_gap);
      const json m2 = read_json_file(work / "sweep" / r->run.name / kManifestFile);
      worst_wall = std::max(worst_wall, m2.at("wall_clock_s").get<double>());
    }
  }
  Outcome o;
  o.pass = bad == 0 && worst_wall < 120.0;
  o.detail = std::to_string(runs) + " full-scale runs, every step checked; smallest gap " + fmt_double(min_gap, 3) +
             " m, slowest run " + fmt_double(worst_wall, 1) + " s" + (bad ? ", failing: " + why : "");
  return o;
}

Outcome directional_trend(const SweepData& d) {
  const auto cells = sweep_means(d.rows);
  auto mean_of = [&](Strategy s, double m) -> const CellMeans* {
    if (m == 0.0) s = Strategy::Base;
    for (const auto& c : cells)
      if (c.strategy == s && c.mpr == m) return &c;
    return nullptr;
  };
  const double mprs[] = {0.0, 0.1, 0.2, 0.3, 0.4};
  // Collect every violation with its relative size; one of at most 1% is tolerated.
  struct Violation {
    std::string what;
    double rel;
  };
  std::vector<Violation> v;
  bool missing = false;
  for (Strategy s : {Strategy::AdHoc, Strategy::Local}) {
    for (int k = 1; k < 5; ++k) {
      const CellMeans* a = mean_of(s, mprs[k - 1]);
      const CellMeans* b = mean_of(s, mprs[k]);
      if (!a || !b || a->runs != 5 || b->runs != 5) {
        missing = true;
        continue;
      }
      const std::string tag = std::string(to_string(s)) + " " + fmt_double(mprs[k - 1], 1) + "->" + fmt_double(mprs[k], 1);
      if (b->throughput_vph < a->throughput_vph)
        v.push_back({tag + " throughput", (a->throughput_vph - b->throughput_vph) / a->throughput_vph});
      if (b->q < a->q) v.push_back({tag + " Q", (a->q - b->q) / a->q});
    }
  }
  for (double m : {0.2, 0.3, 0.4}) {
    const CellMeans* a = mean_of(Strategy::AdHoc, m);
    const CellMeans* l = mean_of(Strategy::Local, m);
    if (!a || !l) {
      missing = true;
      continue;
    }
    if (l->throughput_vph < a->throughput_vph)
      v.push_back({"Local<AdHoc throughput at " + fmt_double(m, 1),
                   (a->throughput_vph - l->throughput_vph) / a->throughput_vph});
    if (l->q < a->q) v.push_back({"Local<AdHoc Q at " + fmt_double(m, 1), (a->q - l->q) / a->q});
  }
  std::string table;
  for (Strategy s : {Strategy::AdHoc, Strategy::Local}) {
    table += std::string(to_string(s)) + " Q/thr:";
    for (double m : mprs)
      if (const CellMeans* c = mean_of(s, m)) table += " " + fmt_double(c->q, 2) + "/" + fmt_double(c->throughput_vph, 0);
    table += "; ";
  }
  // Tolerance: at most one inversion, of at most 1% of the metric.
  const bool tolerated = v.empty() || (v.size() == 1 && v[0].rel <= 0.01);
  Outcome o;
  o.pass = !missing && tolerated;
  std::string list;
  for (const auto& x : v) list += " [" + x.what + " -" + fmt_double(100.0 * x.rel, 2) + "%]";
  o.detail = table + std::to_string(v.size()) + " inversion(s)" + list;
  return o;
}

Outcome clustering_invariants(const SweepData& d, const ScenarioConfig& defaults) {
  std::size_t checked = 0, bad = 0;
  std::string why;
  for (const auto& r : d.rows) {
    if (!r.ok) {
      ++bad;
      why = r.run.name + ": " + r.error;
      continue;
    }
    ++checked;
    const auto& k = r.summary.counters;
    if (k.max_platoon_size > static_cast<std::uint64_t>(defaults.cacc.max_platoon_size)) {
      ++bad;
      why = r.run.name + " exceeded the size cap";
    }
    if (k.invariant_checks != r.summary.steps) {
      ++bad;
      why = r.run.name + " skipped membership checks";
    }
    if (r.run.strategy != Strategy::Local && (k.join_plans_created != 0 || k.drift_commands != 0)) {
      ++bad;
      why = r.run.name + " created join plans";
    }
  }
  std::size_t ratio_ok = 0, ratio_pairs = 0;
  for (double m : {0.1, 0.2, 0.3, 0.4})
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const SweepRow* a = find_row(d, Strategy::AdHoc, m, seed);
      const SweepRow* l = find_row(d, Strategy::Local, m, seed);
      if (!a || !l || !a->ok || !l->ok) continue;
      ++ratio_pairs;
      if (l->report.platoon_ratio >= a->report.platoon_ratio) ++ratio_ok;
      else why = "platoon ratio Local < AdHoc for " + l->run.name;
    }
  Outcome o;
  o.pass = bad == 0 && ratio_pairs == 20 && ratio_ok == ratio_pairs;
  o.detail = std::to_string(checked) + " runs with per-step membership checks, cap " +
             std::to_string(defaults.cacc.max_platoon_size) + " held, ad hoc plans 0; platoon ratio Local >= AdHoc in " +
             std::to_string(ratio_ok) + "/" + std::to_string(ratio_pairs) + " seed pairs" + (why.empty() ? "" : "; " + why);
  return o;
}

// -- 4: determinism -------------------------------------------------------------

Outcome determinism(const fs::path& work) {
  ScenarioConfig c;
  c.strategy = Strategy::Local;
  c.mpr = 0.3;
  c.duration_s = 900.0;
  c.seed = 11;
  run_simulation(c, work / "det_a");
  run_simulation(c, work / "det_b");
  auto slurp = [](const fs::path& p) { return read_file(p); };
  const std::string a = slurp(work / "det_a" / kTrajectoriesFile);
  const std::string b = slurp(work / "det_b" / kTrajectoriesFile);
  const bool same = a == b && slurp(work / "det_a" / kEventsFile) == slurp(work / "det_b" / kEventsFile);
  return {same && a.size() > 1000, "two runs of Local 30% seed 11, trajectories " + std::to_string(a.size()) +
                                       " bytes, " + (same ? "byte-identical" : "DIFFERENT")};
}

// -- 5: capacity ------------------------------------------------------------------

Outcome capacity() {
  auto run = [](Strategy st, double mpr) {
    ScenarioConfig c;
    c.strategy = st;
    c.mpr = mpr;
    c.lane_count = 1;
    c.length_m = 3000.0;
    c.demand_vph = 4500.0;
    c.duration_s = 3900.0;
    c.warmup_s = 900.0;  // long enough for the first vehicles to clear the road
    ReportAccumulator acc;
    run_scenario(c, [&](const TrajectorySample& s) { acc.add(s); }, [&](const Event& e) { acc.add(e); });
    return acc.finish(c.duration_s - c.warmup_s).throughput_vph;
  };
  const double cav = run(Strategy::AdHoc, 1.0);
  const double hv = run(Strategy::Base, 0.0);
  return {cav >= 3000.0 && hv >= 1800.0 && hv <= 2400.0,
          "single lane: 100% CAV " + fmt_double(cav, 0) + " vph (need >= 3000), 0% CAV " + fmt_double(hv, 0) +
              " vph (need 1800..2400)"};
}

// -- 7: hard-brake pipeline ---------------------------------------------------------

Outcome hard_brake_pipeline() {
  std::vector<std::string> failures;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  };
  auto sample = [](std::uint64_t id, double t, double a, VehicleClass cls, std::optional<VehicleClass> lead) {
    TrajectorySample s;
    s.vehicle_id = VehicleId{id};
    s.time = t;
    s.accel = a;
    s.cls = cls;
    s.role = cls == VehicleClass::HV ? Role::NotApplicable : Role::FreeAgent;
    s.leader_class = lead;
    if (lead) s.leader_id = VehicleId{id + 100};
    return s;
  };
  std::vector<TrajectorySample> series;
  const double xs[] = {-2.0, -3.1, -3.5, -1.0};
  for (int k = 0; k < 4; ++k) series.push_back(sample(0, 0.5 * k, xs[k], VehicleClass::HV, VehicleClass::HV));
  expect(detect_hard_braking(series, -3.0).size() == 2, "series gives 2 observations");

  std::vector<TrajectorySample> edge{sample(1, 0, -3.0, VehicleClass::HV, VehicleClass::HV),
                                     sample(2, 0, std::nextafter(-3.0, -4.0), VehicleClass::HV, VehicleClass::HV)};
  auto e = detect_hard_braking(edge, -3.0);
  expect(e.size() == 1 && e[0].vehicle_id == VehicleId{2}, "-3.0 exactly is not hard braking");

  std::vector<TrajectorySample> partners{sample(3, 0, -4.0, VehicleClass::HV, VehicleClass::CAV),
                                         sample(4, 0, -4.0, VehicleClass::HV, VehicleClass::HV),
                                         sample(5, 0, -4.0, VehicleClass::HV, std::nullopt),
                                         sample(6, 0, -6.0, VehicleClass::CAV, VehicleClass::HV)};
  auto p = detect_hard_braking(partners);
  auto c = count_hard_brakes(p);
  expect(p.size() == 3, "CAV samples excluded");
  expect(!p.empty() && p[0].partner_class == VehicleClass::CAV, "HV behind a CAV tail has a CAV partner");
  expect(c.cav_partner == 1 && c.hv_partner == 1 && c.no_partner == 1, "partner split");

  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> acc(-9.0, 1.5);
  std::uniform_int_distribution<int> who(0, 3);
  std::vector<TrajectorySample> big;
  for (std::uint64_t i = 0; i < 50000; ++i) {
    const int w = who(rng);
    std::optional<VehicleClass> lead;
    if (w == 1) lead = VehicleClass::HV;
    if (w == 2) lead = VehicleClass::CAV;
    big.push_back(sample(i % 211, 0.5 * static_cast<double>(i / 211), acc(rng),
                         w == 3 ? VehicleClass::CAV : VehicleClass::HV, lead));
  }
  std::size_t exact = 0;
  for (const auto& s : big) exact += s.cls == VehicleClass::HV && s.accel < -3.0;
  auto bc = count_hard_brakes(detect_hard_braking(big));
  expect(bc.total == exact, "count matches brute force");
  expect(bc.total == bc.hv_partner + bc.cav_partner + bc.no_partner, "partition invariant");
  auto rep = build_report(big, {}, 3600.0);
  expect(rep.hard_brakes.total == bc.total && rep.hard_brake_hv_partner.size() == bc.hv_partner &&
             rep.hard_brake_cav_partner.size() == bc.cav_partner,
         "report agrees");
  std::string detail = "threshold, partner and partition fixtures: " +
                       std::to_string(7 - failures.size()) + "/7 hold (" + std::to_string(bc.total) +
                       " observations in the random fixture)";
  for (const auto& f : failures) detail += "; failed: " + f;
  return {failures.empty(), detail};
}

// -- 8: K-S calibration ----------------------------------------------------------------

Outcome ks_calibration() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(8088);
  std::uniform_int_distribution<int> size(1, 15), val(-8, 8);
  auto brute = [](const std::vector<double>& a, const std::vector<double>& b) {
    auto F = [](const std::vector<double>& v, double x) {
      double n = 0;
      for (double s : v) n += s <= x;
      return n / static_cast<double>(v.size());
    };
    double d = 0.0;
    for (const auto* set : {&a, &b})
      for (double x : *set) d = std::max(d, std::abs(F(a, x) - F(b, x)));
    return d;
  };
  int exact = 0;
  for (int r = 0; r < 100; ++r) {
    std::vector<double> a(static_cast<std::size_t>(size(rng))), b(static_cast<std::size_t>(size(rng)));
    for (auto& x : a) x = 0.25 * val(rng);
    for (auto& x : b) x = 0.25 * val(rng);
    exact += ks_two_sample(a, b).d == brute(a, b);
  }
  std::normal_distribution<double> g(-4.0, 1.0);
  std::vector<double> a(1000), b(1000);
  int rejects = 0;
  for (int r = 0; r < 1000; ++r) {
    for (auto& x : a) x = g(rng);
    for (auto& x : b) x = g(rng);
    rejects += ks_two_sample(a, b, 0.05).reject;
  }
  const double rate = rejects / 1000.0;
  const double secs = seconds_since(t0);
  return {exact == 100 && std::abs(rate - 0.05) <= 0.02 && secs < 30.0,
          "D exact on " + std::to_string(exact) + "/100 small samples; null rejection rate " + fmt_double(rate, 3) +
              " at alpha 0.05 over 1000 repetitions; " + fmt_double(secs, 2) + " s"};
}

// -- 10: lane-change accounting -----------------------------------------------------------

Outcome lane_change_accounting() {
  ScenarioConfig c;
  c.demand_vph = 0.0;
  c.lane_count = 2;
  c.length_m = 1e6;
  c.warmup_s = 0.0;
  World w(c);
  VehicleState s;
  s.lane = 0;
  s.position = 1060.0;
  s.speed = 10.0;
  const VehicleId slow = w.place(s);
  w.script_accel(slow, 0.0);
  s.position = 1000.0;
  s.speed = 25.0;
  const VehicleId me = w.place(s);
  s.lane = 1;
  s.position = 700.0;
  w.place(s);
  std::vector<Event> ev;
  std::vector<TrajectorySample> tr;
  for (int k = 0; k < 300; ++k) {
    w.step();
    for (auto& e : w.drain_events()) ev.push_back(e);
    for (auto& t : w.drain_samples()) tr.push_back(t);
  }
  const auto st = lane_change_stats(ev, tr);
  const bool scenario_ok = st.total == 1 && st.avg_per_hv == 1.0 / 3.0 && w.vehicle(me).lane == 1;

  // Cooldown: no vehicle changes lanes twice within 4 s in busy mixed traffic.
  ScenarioConfig busy;
  busy.strategy = Strategy::Local;
  busy.mpr = 0.3;
  busy.demand_vph = 7000;
  busy.length_m = 4000;
  busy.duration_s = 900;
  busy.warmup_s = 0;
  std::map<VehicleId, double> last;
  std::size_t changes = 0, doubles = 0;
  run_scenario(busy, [](const TrajectorySample&) {}, [&](const Event& e) {
    if (e.kind != EventKind::LaneChange) return;
    ++changes;
    auto it = last.find(e.vehicle_id);
    if (it != last.end() && e.time - it->second < busy.engine.lane_change_cooldown_s - 1e-9) ++doubles;
    last[e.vehicle_id] = e.time;
  });
  return {scenario_ok && doubles == 0 && changes > 100,
          "3-vehicle scenario gives (" + std::to_string(st.total) + ", " + fmt_double(st.avg_per_hv, 6) +
              "); " + std::to_string(changes) + " lane changes in mixed traffic, " + std::to_string(doubles) +
              " within the 4 s cooldown"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"caccsim acceptance checks"};
  fs::path work = fs::temp_directory_path() / "caccsim_acceptance";
  unsigned parallel = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--work", work, "scratch directory for run outputs");
  app.add_option("--parallel", parallel, "sweep worker threads");
  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::warn);
  fs::remove_all(work);
  fs::create_directories(work);

  int failed = 0;
  auto report = [&](int n, const char* title, const Outcome& o) {
    std::printf("criterion %2d %-34s %s  %s\n", n, title, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  };
  auto guarded = [&](auto fn) -> Outcome {
    try {
      return fn();
    } catch (const std::exception& e) {
      return {false, std::string("error: ") + e.what()};
    }
  };

  report(1, "E-IDM correctness", guarded(eidm_properties));
  report(2, "equilibrium oracle", guarded(equilibrium_column));
  const auto t_sweep = Clock::now();
  SweepData sweep;
  std::string sweep_error;
  try {
    sweep = full_sweep(work, parallel);
  } catch (const std::exception& e) {
    sweep_error = e.what();
  }
  const double sweep_s = seconds_since(t_sweep);
  auto with_sweep = [&](auto fn) -> Outcome {
    if (!sweep_error.empty()) return {false, "sweep failed: " + sweep_error};
    return guarded(fn);
  };
  report(3, "no collision and conservation", with_sweep([&] { return no_collision_conservation(sweep, work); }));
  report(4, "determinism", guarded([&] { return determinism(work); }));
  report(5, "capacity sanity", guarded(capacity));
  report(6, "directional trend", with_sweep([&] { return directional_trend(sweep); }));
  report(7, "hard-brake pipeline", guarded(hard_brake_pipeline));
  report(8, "K-S calibration", guarded(ks_calibration));
  report(9, "clustering invariants", with_sweep([&] { return clustering_invariants(sweep, ScenarioConfig{}); }));
  report(10, "lane-change accounting", guarded(lane_change_accounting));
  std::printf("sweep wall time %.0f s; %d criterion(s) failed\n", sweep_s, failed);
  return failed == 0 ? 0 : 1;
}
