#pragma once

#include <chrono>
#include <cstdio>
#include <functional>
#include <regex>

#include "qtraj/analysis.hpp"
#include "qtraj/config.hpp"
#include "qtraj/feedback.hpp"
#include "qtraj/parallel.hpp"

namespace qtraj::cli {

inline constexpr std::string_view kCodeVersion = "1.0.0";

/// Numerical failure inside a run, tagged with the trajectory index.
class RunFailure : public Error {
 public:
  RunFailure(ErrorCode code, std::size_t trajectory, const std::string& what)
      : Error(code, "trajectory " + std::to_string(trajectory) + ": " + what), trajectory_(trajectory) {}

  [[nodiscard]] std::size_t trajectory() const noexcept { return trajectory_; }

 private:
  std::size_t trajectory_;
};

using Summary = std::vector<std::pair<std::string, std::string>>;

struct RunOutput {
  fs::path dir;
  RunConfig config;
  Summary summary;
  double wall_clock_s = 0.0;
};

namespace detail {

template <class F>
auto guarded(std::size_t i, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const RunFailure&) {
    throw;
  } catch (const Error& e) {
    throw RunFailure(e.code(), i, e.what());
  }
}

struct Sink {
  fs::path dir;
  Summary summary;
  SpaceShape state_shape;

  void put(std::string key, double v) { summary.emplace_back(std::move(key), format_double(v)); }
  void put(std::string key, std::string v) { summary.emplace_back(std::move(key), std::move(v)); }
  void table(const std::string& name, const std::vector<std::string>& header,
             const std::vector<std::vector<double>>& cols) const {
    write_csv(dir / name, header, cols);
  }
  void states(const std::string& name, std::span<const double> t, std::span<const DensityMatrix> s) {
    if (!s.empty()) state_shape = s.front().shape();
    write_states(dir / name, t, s);
  }
};

using Runner = std::function<void(Sink&, unsigned)>;

inline std::string numbered(std::string_view kind, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*s_%05zu.csv", static_cast<int>(kind.size()), kind.data(), i);
  return buf;
}

/// t_us, then V and dW per channel, then one u column per controller output.
inline void write_record(const fs::path& path, const TrajectoryRecord& r) {
  std::vector<std::string> h{"t_us"};
  std::vector<std::vector<double>> cols{r.times};
  const auto label = [](const char* base, std::size_t i, std::size_t n) {
    return n == 1 ? std::string(base) : base + std::to_string(i);
  };
  for (std::size_t i = 0; i < r.records.size(); ++i) h.push_back(label("V", i, r.records.size())), cols.push_back(r.records[i]);
  for (std::size_t i = 0; i < r.increments.size(); ++i)
    h.push_back(label("dW", i, r.increments.size())), cols.push_back(r.increments[i]);
  if (!r.controller_log.empty() && r.controller_log.size() == r.times.size()) {
    const std::size_t nu = r.controller_log.front().size();
    bool uniform = true;
    for (const auto& u : r.controller_log) uniform = uniform && u.size() == nu;
    for (std::size_t j = 0; uniform && j < nu; ++j) {
      std::vector<double> c;
      c.reserve(r.controller_log.size());
      for (const auto& u : r.controller_log) c.push_back(u[j]);
      h.push_back(label("u", j, nu));
      cols.push_back(std::move(c));
    }
  }
  write_csv(path, h, cols);
}

inline void write_trajectory_files(Sink& out, std::size_t i, const TrajectoryRecord& r) {
  write_record(out.dir / "records" / numbered("traj", i), r);
  write_states(out.dir / "records" / numbered("states", i), r.state_times, r.states);
}

inline DensityMatrix qubit_initial(const std::string& name) {
  const double s = std::sqrt(0.5);
  Vector v(2);
  if (name == "e") v << 1.0, 0.0;
  else if (name == "g") v << 0.0, 1.0;
  else if (name == "+x") v << s, s;
  else if (name == "-x") v << s, -s;
  else if (name == "+y") v << s, Complex(0.0, s);
  else v << s, Complex(0.0, -s);
  return DensityMatrix(PureState::normalized(SpaceShape::qubit(), v));
}

//---------------------------------------------------------------------------//
// Protocols
//---------------------------------------------------------------------------//

inline Runner prepare_qubit(const RunConfig& c, bool ensemble) {
  const LindbladModel m = measured_model((0.5 * c.real("omega_r")) * sigma_x(),
                                         qubit_z_channel(c.real("gamma_d"), c.real("eta"), c.real("phi")));
  const DensityMatrix rho0 = qubit_initial(c.text("initial"));
  const double T = c.duration(), dt = c.dt();
  qtraj::detail::step_count(T, dt);
  check_step(m, dt);
  TrajectoryOptions opt;
  opt.thinning = c.thinning();
  opt.integrator = c.text("integrator") == "ito" ? Integrator::ito : Integrator::kraus;
  return [=](Sink& out, unsigned jobs) {
    const std::size_t n = c.n_trajectories(), w = c.write_records();
    std::vector<TrajectoryRecord> recs(n);
    parallel_for(n, jobs, [&](std::size_t i) {
      TrajectoryOptions o = opt;
      o.keep_records = i < w;
      recs[i] = guarded(i, [&] { return simulate_trajectory(m, rho0, T, dt, WienerStream(c.master_seed(), i), nullptr, o); });
    });
    for (std::size_t i = 0; i < w; ++i) write_trajectory_files(out, i, recs[i]);
    const auto mean = ensemble_average(recs);
    out.states("states.csv", recs.front().state_times, mean);
    if (!ensemble) {
      const auto b = bloch_vector(recs.front().states.back());
      out.put("final_x", b.x);
      out.put("final_y", b.y);
      out.put("final_z", b.z);
      return;
    }
    const auto ref = integrate_lindblad(m, rho0, T, dt, opt.thinning);
    out.states("lindblad.csv", ref.times, ref.states);
    double gx = 0.0, gy = 0.0, gz = 0.0;
    for (std::size_t k = 0; k < mean.size(); ++k) {
      const auto a = bloch_vector(mean[k]), b = bloch_vector(ref.states[k]);
      gx = std::max(gx, std::abs(a.x - b.x));
      gy = std::max(gy, std::abs(a.y - b.y));
      gz = std::max(gz, std::abs(a.z - b.z));
    }
    // Pinned: |z| >= 0.95 at the end.
    std::size_t pinned = 0, up = 0;
    for (const auto& r : recs) {
      const double z = bloch_vector(r.states.back()).z;
      pinned += std::abs(z) >= 0.95;
      up += z > 0.0;
    }
    out.put("max_gap_x", gx);
    out.put("max_gap_y", gy);
    out.put("max_gap_z", gz);
    out.put("fraction_z_pinned", static_cast<double>(pinned) / static_cast<double>(n));
    out.put("fraction_z_positive", static_cast<double>(up) / static_cast<double>(n));
    out.put("born_p_up", 0.5 * (1.0 + bloch_vector(rho0).z));
  };
}

inline Runner prepare_rabi(const RunConfig& c) {
  RabiConfig rc;
  rc.omega_r = c.real("omega_r");
  rc.gamma_d = c.real("gamma_d");
  rc.eta = c.real("eta");
  rc.gain = c.real("gain");
  rc.feedback = c.flag("feedback");
  rc.duration = c.duration();
  rc.dt = c.dt();
  rc.window = c.count("window");
  qtraj::detail::step_count(rc.duration, rc.dt);
  RabiController(rc.omega_r, rc.gain, rc.dt, rc.window);
  require(rc.eta > 0.0 || !rc.feedback, ErrorCode::record_undefined, "feedback needs eta > 0");
  check_step(rate_bound(rabi_model(rc)) + 0.5 * rc.gain * rc.omega_r, rc.dt);
  return [=](Sink& out, unsigned jobs) {
    const std::size_t n = c.n_trajectories(), w = c.write_records();
    std::vector<TrajectoryRecord> recs(n);
    parallel_for(n, jobs, [&](std::size_t i) {
      TrajectoryOptions o;
      o.thinning = c.thinning();
      o.keep_records = i < w;
      recs[i] = guarded(i, [&] { return rabi_stabilization(rc, WienerStream(c.master_seed(), i), o); });
    });
    for (std::size_t i = 0; i < w; ++i) write_trajectory_files(out, i, recs[i]);
    const auto mean = ensemble_average(recs);
    const auto& t = recs.front().state_times;
    out.states("states.csv", t, mean);
    std::vector<double> z;
    for (const auto& r : mean) z.push_back(bloch_vector(r).z);
    const double period = 2.0 * std::numbers::pi / rc.omega_r;
    const double from = std::max(0.0, rc.duration - 5.0 * period);
    out.put("amplitude_window_start_us", from);
    out.put("oscillation_amplitude", oscillation_amplitude(t, z, rc.omega_r, from, rc.duration));
  };
}

inline Runner prepare_halfparity(const RunConfig& c) {
  const HalfParityConfig hc{c.real("gamma"), c.real("eta"), c.duration(), c.dt()};
  qtraj::detail::step_count(hc.duration, hc.dt);
  return [=](Sink& out, unsigned jobs) {
    const std::size_t n = c.n_trajectories(), w = c.write_records();
    std::vector<TrajectoryRecord> recs(n);
    parallel_for(n, jobs, [&](std::size_t i) {
      TrajectoryOptions o;
      o.thinning = c.thinning();
      o.keep_records = i < w;
      recs[i] = guarded(i, [&] { return half_parity_feedback(hc, WienerStream(c.master_seed(), i), o); });
    });
    for (std::size_t i = 0; i < w; ++i) write_trajectory_files(out, i, recs[i]);
    const auto& first = recs.front();
    out.states("states.csv", first.state_times, first.states);
    std::vector<double> gt, f, fa;
    for (std::size_t k = 0; k < first.states.size(); ++k) {
      const double t = first.state_times[k];
      gt.push_back(hc.gamma * t);
      f.push_back(fidelity(first.states[k], bell_psi_plus()));
      fa.push_back(std::norm(analytic_half_parity_state(hc.gamma, t).overlap(bell_psi_plus())));
    }
    out.table("fidelity.csv", {"t_us", "gamma_t", "fidelity", "analytic"}, {first.state_times, gt, f, fa});
    std::size_t k2 = 0;
    for (std::size_t k = 0; k < gt.size(); ++k)
      if (std::abs(gt[k] - 2.0 * std::log(2.0)) < std::abs(gt[k2] - 2.0 * std::log(2.0))) k2 = k;
    double td = 0.0;
    for (std::size_t i = 1; i < n; ++i)
      for (std::size_t k = 0; k < first.states.size(); ++k)
        td = std::max(td, trace_distance(first.states[k], recs[i].states[k]));
    out.put("gamma_t_near_2ln2", gt[k2]);
    out.put("fidelity_near_2ln2", f[k2]);
    out.put("fidelity_final", f.back());
    out.put("analytic_final", fa.back());
    out.put("concurrence_final", concurrence(first.states.back()));
    out.put("max_trace_distance_to_first", td);
  };
}

inline PhaseConfig phase_config(const RunConfig& c) {
  PhaseConfig pc;
  pc.eta = c.real("eta");
  pc.T = c.duration();
  pc.dt = c.dt();
  pc.delay_steps = c.count("delay_steps");
  pc.tail_steps = c.count("tail_steps");
  pc.fixed_phi = c.real("fixed_phi");
  const auto& s = c.text("strategy");
  pc.strategy = s == "adaptive" ? PhaseStrategy::adaptive : s == "heterodyne" ? PhaseStrategy::heterodyne : PhaseStrategy::fixed;
  return pc;
}

inline Runner prepare_phase(const RunConfig& c) {
  const PhaseConfig pc = phase_config(c);
  require(qtraj::detail::step_count(pc.T, pc.dt) > pc.tail_steps, ErrorCode::invalid_argument,
          "tail_steps must be shorter than the mode");
  return [=](Sink& out, unsigned jobs) {
    const std::size_t n = c.n_trajectories(), w = c.write_records();
    std::vector<PhaseRun> runs(n);
    parallel_for(n, jobs, [&](std::size_t i) {
      const WienerStream s(c.master_seed(), i);
      const double theta = 2.0 * std::numbers::pi * s.uniform(0, 0) - std::numbers::pi;
      runs[i] = guarded(i, [&] { return adaptive_phase_run(pc, theta, s, i < w); });
    });
    for (std::size_t i = 0; i < w; ++i) {
      const auto& r = runs[i];
      std::vector<double> t;
      for (std::size_t k = 0; k < r.records.size(); ++k) t.push_back(static_cast<double>(k + 1) * pc.dt);
      write_csv(out.dir / "records" / numbered("traj", i), {"t_us", "V", "phi", "amplitude"},
                {t, r.records, r.phi_log, r.amplitude});
    }
    std::vector<double> idx, truth, est, err, coh;
    for (std::size_t i = 0; i < n; ++i) {
      idx.push_back(static_cast<double>(i));
      truth.push_back(runs[i].theta_true);
      est.push_back(runs[i].estimate);
      err.push_back(wrap_phase(runs[i].estimate - runs[i].theta_true));
      coh.push_back(runs[i].posterior_coherence);
    }
    out.table("phase_runs.csv", {"index", "theta_true", "estimate", "error", "coherence"}, {idx, truth, est, err, coh});
    double mc = 0.0;
    for (double x : coh) mc += x;
    out.put("mean_coherence", mc / static_cast<double>(n));
    if (n < 100) {
      out.put("phase_stats", std::string("skipped (fewer than 100 runs)"));
      return;
    }
    const auto st = phase_error_stats(est, truth);
    out.put("c1_re", st.c1.real());
    out.put("c1_im", st.c1.imag());
    out.put("mean_error", st.mean_error);
    out.put("circular_variance", st.circular_variance);
    out.put("harmonic_tv", harmonic_tv(st.c1));
  };
}

inline Runner prepare_zeno_drag(const RunConfig& c) {
  ZenoDragConfig zc;
  zc.nu = c.real("nu");
  zc.gamma_d = c.real("gamma_d");
  zc.eta = c.real("eta");
  zc.duration = c.duration();
  zc.dt = c.dt();
  zc.thinning = c.thinning();
  zc.frame = c.text("frame") == "lab" ? ZenoFrame::lab : ZenoFrame::rotating;
  qtraj::detail::step_count(zc.duration, zc.dt);
  check_step(measured_model((-0.5 * zc.nu) * sigma_z(), {std::sqrt(0.5 * zc.gamma_d) * sigma_x(), zc.eta, 0.0}), zc.dt);
  return [=](Sink& out, unsigned jobs) {
    const std::size_t n = c.n_trajectories(), w = c.write_records();
    std::vector<ZenoDragResult> res(n);
    parallel_for(n, jobs, [&](std::size_t i) {
      res[i] = guarded(i, [&] { return zeno_drag(zc, WienerStream(c.master_seed(), i), i < w); });
    });
    for (std::size_t i = 0; i < w; ++i) write_trajectory_files(out, i, res[i].record);
    std::vector<TrajectoryRecord> recs;
    recs.reserve(n);
    for (auto& r : res) recs.push_back(std::move(r.record));
    const auto& t = recs.front().state_times;
    out.states("states.csv", t, ensemble_average(recs));
    std::vector<double> surv(t.size(), 0.0);
    std::size_t ok = 0;
    for (std::size_t k = 0; k < t.size(); ++k) {
      std::size_t hits = 0;
      for (const auto& r : res) hits += r.overlap[k] >= 0.5;
      surv[k] = 2.0 * static_cast<double>(hits) / static_cast<double>(n) - 1.0;
    }
    for (const auto& r : res) ok += r.success;
    out.table("survival.csv", {"t_us", "survival"}, {t, surv});
    out.put("success_fraction", static_cast<double>(ok) / static_cast<double>(n));
    out.put("regime_ok", std::string(zc.regime_ok() ? "true" : "false"));
    out.put("predicted_rate", zc.nu * zc.nu / zc.gamma_d);
    try {
      const auto fit = survival_fit(t, surv);
      out.put("fitted_rate", fit.rate);
      out.put("fitted_rate_lo", fit.rate_lo);
      out.put("fitted_rate_hi", fit.rate_hi);
    } catch (const Error& e) {
      out.put("fit_status", std::string(e.what()));
    }
  };
}

inline Runner prepare_zeno_blockade(const RunConfig& c) {
  ZenoBlockadeConfig bc;
  bc.N = static_cast<int>(c.count("N"));
  bc.omega_r = c.real("omega_r");
  bc.gamma = c.real("gamma");
  bc.epsilon = c.real("epsilon");
  bc.kappa = c.real("kappa");
  bc.n_max = static_cast<int>(c.count("n_max"));
  bc.duration = c.duration();
  bc.dt = c.dt();
  bc.thinning = c.thinning();
  bc.blockade = c.flag("blockade");
  require(bc.N <= bc.n_max, ErrorCode::invalid_argument, "N must not exceed n_max");
  qtraj::detail::step_count(bc.duration, bc.dt);
  check_step(zeno_blockade_model(bc), bc.dt);
  const double ext = c.real("wigner_extent");
  const int pts = static_cast<int>(c.count("wigner_points"));
  return [=](Sink& out, unsigned) {
    const auto s = zeno_blockade(bc);
    out.states("states.csv", s.times, s.states);
    const GridSpec grid{-ext, ext, -ext, ext, pts, pts};
    std::vector<double> pb, wmin;
    for (const auto& r : s.states) {
      double p = 0.0;
      for (int k = bc.N; k <= bc.n_max; ++k) p += r(k, k).real();
      pb.push_back(p);
      wmin.push_back(wigner(r, grid).values.minCoeff());
    }
    out.table("blockade.csv", {"t_us", "p_blocked", "wigner_min"}, {s.times, pb, wmin});
    const auto kmin = static_cast<std::size_t>(std::min_element(wmin.begin(), wmin.end()) - wmin.begin());
    out.put("max_p_blocked", *std::max_element(pb.begin(), pb.end()));
    out.put("min_wigner", wmin[kmin]);
    out.put("t_min_wigner_us", s.times[kmin]);
  };
}

inline Runner prepare_kerrcat(const RunConfig& c) {
  KerrCatParams p;
  p.K = c.real("K");
  p.eps2 = c.real("eps2");
  KerrCatRun run;
  run.kappa2 = c.real("kappa2");
  run.kappa1 = c.real("kappa1");
  run.n_max = static_cast<int>(c.count("n_max"));
  run.duration = c.duration();
  run.dt = c.dt();
  qtraj::detail::step_count(run.duration, run.dt);
  kerr_cat_model(p, run);
  const Complex beta = kerr_cat_beta(p.K, p.eps2, run.kappa2);
  const std::string init = c.text("initial");
  DensityMatrix rho0(fock_state(0, run.n_max));
  if (init == "plus") rho0 = DensityMatrix(coherent_state(beta, run.n_max));
  if (init == "minus") rho0 = DensityMatrix(coherent_state(-beta, run.n_max));
  if (init == "even") rho0 = DensityMatrix(cat_state(beta, CatParity::even, run.n_max));
  if (init == "odd") rho0 = DensityMatrix(cat_state(beta, CatParity::odd, run.n_max));
  return [=](Sink& out, unsigned) {
    const auto s = kerr_cat_stabilization(p, run, rho0);
    out.states("states.csv", s.times, s.states);
    const Operator P = cat_subspace_projector(beta, run.n_max), par = parity_operator(run.n_max);
    const Operator X = cat_x_operator(beta, run.n_max);
    std::vector<double> wt, pa, xc;
    for (const auto& r : s.states) {
      wt.push_back(expectation(P, r).real());
      pa.push_back(expectation(par, r).real());
      xc.push_back(expectation(X, r).real());
    }
    out.table("kerrcat.csv", {"t_us", "weight", "parity", "x_cat"}, {s.times, wt, pa, xc});
    out.put("beta_re", beta.real());
    out.put("beta_im", beta.imag());
    out.put("final_weight", wt.back());
    out.put("final_parity", pa.back());
    out.put("final_x_cat", xc.back());
    if (run.kappa1 > 0.0) {
      out.put("predicted_parity_rate", 2.0 * run.kappa1 * std::norm(beta));
      std::vector<double> tt, pp;
      for (std::size_t k = 0; k < s.times.size(); ++k)
        if (s.times[k] >= run.duration / 3.0 - 1e-9) tt.push_back(s.times[k]), pp.push_back(std::abs(pa[k]));
      try {
        out.put("parity_rate", survival_fit(tt, pp).rate);
      } catch (const Error& e) {
        out.put("fit_status", std::string(e.what()));
      }
    }
  };
}

inline Runner prepare_wigner(const RunConfig& c) {
  const int n_max = static_cast<int>(c.count("n_max"));
  const Complex alpha(c.real("alpha_re"), c.real("alpha_im"));
  const std::string st = c.text("state");
  DensityMatrix rho(fock_state(0, n_max));
  if (st == "coherent") rho = DensityMatrix(coherent_state(alpha, n_max));
  if (st == "fock") {
    require(c.count("n") <= static_cast<std::uint64_t>(n_max), ErrorCode::invalid_argument, "n must not exceed n_max");
    rho = DensityMatrix(fock_state(static_cast<int>(c.count("n")), n_max));
  }
  if (st == "cat-even") rho = DensityMatrix(cat_state(alpha, CatParity::even, n_max));
  if (st == "cat-odd") rho = DensityMatrix(cat_state(alpha, CatParity::odd, n_max));
  const double ext = c.real("extent");
  const int pts = static_cast<int>(c.count("points"));
  return [=](Sink& out, unsigned) {
    const std::vector<double> t{0.0};
    const std::vector<DensityMatrix> s{rho};
    out.states("states.csv", t, s);
    const auto w = wigner(rho, GridSpec{-ext, ext, -ext, ext, pts, pts});
    std::vector<double> re, im, val;
    for (int j = 0; j < pts; ++j)
      for (int i = 0; i < pts; ++i) re.push_back(w.grid.re(i)), im.push_back(w.grid.im(j)), val.push_back(w.values(j, i));
    out.table("wigner.csv", {"re", "im", "w"}, {re, im, val});
    out.put("w_origin", wigner_point(rho, 0.0));
    out.put("w_min", w.values.minCoeff());
    out.put("w_max", w.values.maxCoeff());
    out.put("grid_integral", w.integral());
    out.put("truncation_warning", std::string(w.truncation_warning ? "true" : "false"));
  };
}

inline Runner prepare(const RunConfig& c) {
  const auto& p = c.protocol;
  if (p == "trajectory") return prepare_qubit(c, false);
  if (p == "ensemble") return prepare_qubit(c, true);
  if (p == "rabi") return prepare_rabi(c);
  if (p == "halfparity") return prepare_halfparity(c);
  if (p == "phase") return prepare_phase(c);
  if (p == "zeno-drag") return prepare_zeno_drag(c);
  if (p == "zeno-blockade") return prepare_zeno_blockade(c);
  if (p == "kerrcat") return prepare_kerrcat(c);
  return prepare_wigner(c);
}

inline void clear_stale_records(const fs::path& dir) {
  if (!fs::exists(dir)) return;
  static const std::regex pattern(R"((traj|states)_\d{5}\.csv)");
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && std::regex_match(e.path().filename().string(), pattern)) fs::remove(e.path());
}

}  // namespace detail

/// Default output directory: runs/<config stem>.
inline fs::path output_dir(const RunConfig& c) {
  if (!c.text("output").empty()) return c.text("output");
  return fs::path("runs") / fs::path(c.source).stem();
}

/// Executes a validated config. Errors found before any computation are
/// ConfigErrors; failures during integration are RunFailures.
inline RunOutput run(RunConfig cfg, unsigned jobs, std::optional<std::uint64_t> seed = std::nullopt,
                     std::optional<fs::path> out_dir = std::nullopt) {
  if (seed) cfg.set("master_seed", std::to_string(*seed));
  const fs::path dir = out_dir ? *out_dir : output_dir(cfg);
  cfg.set("output", dir.generic_string());
  detail::Runner runner;
  try {
    runner = detail::prepare(cfg);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(cfg.source, cfg.protocol_line, e.what());
  }
  const auto start = std::chrono::steady_clock::now();
  fs::create_directories(dir / "records");
  detail::clear_stale_records(dir / "records");
  detail::Sink sink{dir, {}, SpaceShape::qubit()};
  runner(sink, std::max(1u, jobs));

  const std::size_t n = cfg.n_trajectories();
  std::string seeds = "index,master_seed,key\n";
  for (std::size_t i = 0; i < n; ++i) {
    const WienerStream s(cfg.master_seed(), i);
    seeds += std::to_string(i) + "," + std::to_string(s.master_seed()) + "," + std::to_string(s.key()) + "\n";
  }
  write_file(dir / "seeds.csv", seeds);

  RunOutput res{dir, cfg, sink.summary, 0.0};
  res.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::string m = "# qtraj run manifest\n" + echo_config(cfg);
  m += "\n[manifest]\n";
  m += "code_version = " + std::string(kCodeVersion) + "\n";
  m += "state_shape = " + shape_text(sink.state_shape) + "\n";
  m += "seeds_file = seeds.csv\n";
  m += "records_written = " + std::to_string(cfg.write_records()) + "\n";
  m += "wall_clock_s = " + format_double(res.wall_clock_s) + "\n";
  m += "\n[summary]\n";
  for (const auto& [k, v] : sink.summary) m += k + " = " + v + "\n";
  write_file(dir / "manifest.txt", m);
  return res;
}

inline RunOutput run(const fs::path& config, unsigned jobs, std::optional<std::uint64_t> seed = std::nullopt,
                     std::optional<fs::path> out_dir = std::nullopt) {
  return run(load_run_config(config), jobs, seed, std::move(out_dir));
}

//---------------------------------------------------------------------------//
// Plot data
//---------------------------------------------------------------------------//

inline const std::vector<std::string>& emit_quantities() {
  static const std::vector<std::string> q{"bloch", "record", "fidelity", "wigner-slice", "survival", "phase-hist"};
  return q;
}

struct EmitOptions {
  std::string quantity;
  std::optional<std::size_t> trajectory;  // per-trajectory files instead of the run-level series
  std::optional<double> time;             // wigner-slice: nearest stored time, default last
  std::optional<int> bins;                // phase-hist: default from the run config
  double extent = 3.0;                    // wigner-slice: Re beta in [-extent, extent]
  int points = 61;
  std::optional<fs::path> out;            // default <run-dir>/plot_<quantity>.csv
};

struct RunDirectory {
  fs::path dir;
  RunConfig config;
  SpaceShape state_shape;
};

inline RunDirectory open_run(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.txt";
  require(fs::exists(mpath), ErrorCode::io, "no manifest.txt in " + dir.string());
  ConfigFile cf = load_config(mpath);
  const auto it = cf.extra.find("manifest");
  require(it != cf.extra.end() && it->second.count("state_shape"), ErrorCode::io, "manifest lacks [manifest] state_shape");
  const SpaceShape shape = parse_shape(it->second.at("state_shape").text);
  return {dir, resolve(std::move(cf)), shape};
}

namespace detail {

inline StateSeries load_series(const RunDirectory& rd, std::optional<std::size_t> trajectory) {
  const fs::path p = trajectory ? rd.dir / "records" / numbered("states", *trajectory) : rd.dir / "states.csv";
  require(fs::exists(p), ErrorCode::invalid_argument,
          "no state file " + p.string() + (trajectory ? " (raise write_records)" : ""));
  return read_states(p, rd.state_shape);
}

}  // namespace detail

inline fs::path emit(const fs::path& run_dir, const EmitOptions& o) {
  const auto& qs = emit_quantities();
  require(std::find(qs.begin(), qs.end(), o.quantity) != qs.end(), ErrorCode::invalid_argument,
          "unknown quantity '" + o.quantity + "'");
  const RunDirectory rd = open_run(run_dir);
  const std::string& proto = rd.config.protocol;
  const fs::path out = o.out ? *o.out : run_dir / ("plot_" + o.quantity + ".csv");
  const auto needs = [&](bool ok, const std::string& what) {
    require(ok, ErrorCode::invalid_argument, o.quantity + " needs " + what + " (run protocol is " + proto + ")");
  };

  if (o.quantity == "bloch") {
    needs(rd.state_shape == SpaceShape::qubit(), "single-qubit states");
    const auto s = detail::load_series(rd, o.trajectory);
    std::vector<double> x, y, z;
    for (const auto& r : s.states) {
      const auto b = bloch_vector(r);
      x.push_back(b.x), y.push_back(b.y), z.push_back(b.z);
    }
    write_csv(out, {"t_us", "x", "y", "z"}, {s.times, x, y, z});
  } else if (o.quantity == "record") {
    const std::size_t i = o.trajectory.value_or(0);
    const fs::path p = rd.dir / "records" / detail::numbered("traj", i);
    require(fs::exists(p), ErrorCode::invalid_argument, "no record file for trajectory " + std::to_string(i) +
                                                            " (raise write_records)");
    const Table t = read_csv(p);
    std::vector<std::string> h;
    std::vector<std::vector<double>> cols;
    for (std::size_t c = 0; c < t.header.size(); ++c) {
      const auto& name = t.header[c];
      if (name == "t_us" || name.starts_with("V") || name.starts_with("u") || name == "phi")
        h.push_back(name), cols.push_back(t.column(c));
    }
    write_csv(out, h, cols);
  } else if (o.quantity == "fidelity") {
    needs(proto == "halfparity", "a halfparity run");
    const auto s = detail::load_series(rd, o.trajectory);
    const double g = rd.config.real("gamma");
    std::vector<double> gt, f, fa;
    for (std::size_t k = 0; k < s.states.size(); ++k) {
      gt.push_back(g * s.times[k]);
      f.push_back(fidelity(s.states[k], bell_psi_plus()));
      fa.push_back(std::norm(analytic_half_parity_state(g, s.times[k]).overlap(bell_psi_plus())));
    }
    write_csv(out, {"t_us", "gamma_t", "fidelity", "analytic"}, {s.times, gt, f, fa});
  } else if (o.quantity == "wigner-slice") {
    needs(rd.state_shape.factors() == 1 && rd.state_shape != SpaceShape::qubit(), "oscillator states");
    require(o.points >= 1 && o.extent > 0.0, ErrorCode::invalid_argument, "need points >= 1 and extent > 0");
    const auto s = detail::load_series(rd, o.trajectory);
    std::size_t k = s.times.size() - 1;
    if (o.time)
      for (std::size_t j = 0; j < s.times.size(); ++j)
        if (std::abs(s.times[j] - *o.time) < std::abs(s.times[k] - *o.time)) k = j;
    const GridSpec grid{-o.extent, o.extent, 0.0, 0.0, o.points, 1};
    const auto w = wigner(s.states[k], grid);
    std::vector<double> re, im, val;
    for (int i = 0; i < o.points; ++i) re.push_back(grid.re(i)), im.push_back(0.0), val.push_back(w.values(0, i));
    write_csv(out, {"re", "im", "w"}, {re, im, val});
  } else if (o.quantity == "survival") {
    needs(proto == "zeno-drag", "a zeno-drag run");
    const Table t = read_csv(rd.dir / "survival.csv");
    write_csv(out, {"t_us", "survival"}, {t.column("t_us"), t.column("survival")});
  } else {
    needs(proto == "phase", "a phase run");
    const Table t = read_csv(rd.dir / "phase_runs.csv");
    const int bins = o.bins.value_or(static_cast<int>(rd.config.count("bins")));
    const auto h = phase_histogram(t.column("error"), bins);
    std::vector<double> centre, canon;
    const double w = 2.0 * std::numbers::pi / bins;
    for (int b = 0; b < bins; ++b) {
      const double x = -std::numbers::pi + (b + 0.5) * w;
      centre.push_back(x);
      canon.push_back((1.0 + std::cos(x)) / (2.0 * std::numbers::pi));
    }
    write_csv(out, {"error", "density", "canonical"}, {centre, h, canon});
  }
  return out;
}

}  // namespace qtraj::cli
