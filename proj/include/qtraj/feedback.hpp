#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "qtraj/error.hpp"
#include "qtraj/hilbert.hpp"
#include "qtraj/models.hpp"
#include "qtraj/parallel.hpp"
#include "qtraj/rng.hpp"
#include "qtraj/sme.hpp"

namespace qtraj {

//---------------------------------------------------------------------------//
// Feedback master equation
//---------------------------------------------------------------------------//

/// Which signal multiplies the proportional gains: the Wiener increment dW_i
/// (the feedback master equation in its innovation form) or the raw record
/// increment dr_i = sqrt(eta_i) <M_i + M_i^dag> dt + dW_i.
enum class FeedbackSignal { innovation, record };

/// Control Hamiltonians H_j applied with strength u_j = B_j dt + sum_i A_ij s_i.
struct FeedbackLaw {
  std::vector<Operator> H;
  std::vector<double> B;
  Eigen::MatrixXd A;  // channels x hamiltonians
  FeedbackSignal signal = FeedbackSignal::innovation;

  void validate(const LindbladModel& model) const {
    require(B.size() == H.size(), ErrorCode::invalid_argument, "need one deterministic gain per feedback Hamiltonian");
    require(A.cols() == static_cast<Eigen::Index>(H.size()) &&
                A.rows() == static_cast<Eigen::Index>(model.channels.size()),
            ErrorCode::shape, "gain matrix must be channels x hamiltonians");
    for (const auto& h : H) {
      model.H.check_same(h);
      require(h.is_hermitian(1e-9), ErrorCode::invalid_argument, "feedback Hamiltonian is not Hermitian");
    }
  }

  /// H~_i = sum_j A_ij H_j.
  [[nodiscard]] Operator effective(std::size_t channel, const SpaceShape& shape) const {
    Operator out = Operator::zero(shape);
    for (std::size_t j = 0; j < H.size(); ++j) out += A(static_cast<Eigen::Index>(channel), static_cast<Eigen::Index>(j)) * H[j];
    return out;
  }
};

namespace detail {

struct CompiledLaw {
  std::vector<Matrix> H;
  std::vector<double> B;
  std::vector<Matrix> Ht;
  Eigen::MatrixXd A;
  FeedbackSignal signal;
  double rate = 0.0;
};

inline CompiledLaw compile_law(const LindbladModel& model, const FeedbackLaw& law) {
  law.validate(model);
  CompiledLaw c{{}, law.B, {}, law.A, law.signal, 0.0};
  for (const auto& h : law.H) c.H.push_back(h.matrix());
  for (std::size_t j = 0; j < law.H.size(); ++j) c.rate += std::abs(law.B[j]) * max_row_sum(law.H[j].matrix());
  for (std::size_t i = 0; i < model.channels.size(); ++i) {
    const Operator ht = law.effective(i, model.shape());
    const double hn = spectral_norm(ht.matrix());
    const double cn = spectral_norm(model.channels[i].c.matrix());
    c.rate += 2.0 * hn * hn + 4.0 * std::sqrt(model.channels[i].eta) * hn * cn;
    c.Ht.push_back(ht.matrix());
  }
  return c;
}

inline Matrix fme_rhs(const DenseModel<Matrix>& m, const CompiledLaw& law, const Matrix& h, const Matrix& rho) {
  Matrix out = lindblad_rhs(m, h, rho);
  for (std::size_t j = 0; j < law.H.size(); ++j)
    if (law.B[j] != 0.0) out += (-kI * law.B[j]) * (law.H[j] * rho - rho * law.H[j]);
  for (std::size_t i = 0; i < m.channels(); ++i) {
    const Matrix& ht = law.Ht[i];
    const Matrix& ce = m.ce[i];
    const Matrix s = law.signal == FeedbackSignal::innovation ? innovation(ce, rho)
                                                              : Matrix(ce * rho + rho * ce.adjoint());
    out += (-kI * std::sqrt(m.eta[i])) * (ht * s - s * ht) + dissipator(ht, rho);
  }
  return out;
}

}  // namespace detail

/// One RK4 step of the feedback master equation
///   drho = -i[H,rho] - i sum_j B_j [H_j,rho] + sum D[c_i] + sum D[L]
///          - i sum sqrt(eta_i) [H~_i, S_i] + sum D[H~_i],
/// with S_i = H[ce_i]rho for innovation feedback, ce_i rho + rho ce_i^dag for
/// record feedback.
inline DensityMatrix fme_step(const LindbladModel& model, const FeedbackLaw& law, const DensityMatrix& rho, double dt,
                              double t = 0.0) {
  model.H.check_same(rho.op());
  const auto m = detail::compile<Matrix>(model);
  const auto c = detail::compile_law(model, law);
  check_step(m.rate + c.rate, dt);
  const Matrix h = m.hamiltonian(t);
  const Matrix& r = rho.matrix();
  const Matrix k1 = detail::fme_rhs(m, c, h, r);
  const Matrix k2 = detail::fme_rhs(m, c, m.hamiltonian(t + 0.5 * dt), r + 0.5 * dt * k1);
  const Matrix k3 = detail::fme_rhs(m, c, m.hamiltonian(t + 0.5 * dt), r + 0.5 * dt * k2);
  const Matrix k4 = detail::fme_rhs(m, c, m.hamiltonian(t + dt), r + dt * k3);
  Matrix out = r + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  detail::hermitize(out);
  out /= out.trace().real();
  return detail::to_density(rho.shape(), out);
}

/// Feedback master equation integrated with RK4, sampled every `thinning` steps.
inline StateSeries integrate_fme(const LindbladModel& model, const FeedbackLaw& law, const DensityMatrix& rho0,
                                 double duration, double dt, std::size_t thinning = 1) {
  model.H.check_same(rho0.op());
  require(thinning >= 1, ErrorCode::invalid_argument, "thinning must be >= 1");
  const std::size_t n = detail::step_count(duration, dt);
  const auto m = detail::compile<Matrix>(model);
  const auto c = detail::compile_law(model, law);
  check_step(m.rate + c.rate, dt);
  Matrix r = rho0.matrix();
  StateSeries out{{0.0}, {rho0}};
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * dt;
    const Matrix hm = m.hamiltonian(t + 0.5 * dt);
    const Matrix k1 = detail::fme_rhs(m, c, m.hamiltonian(t), r);
    const Matrix k2 = detail::fme_rhs(m, c, hm, r + 0.5 * dt * k1);
    const Matrix k3 = detail::fme_rhs(m, c, hm, r + 0.5 * dt * k2);
    const Matrix k4 = detail::fme_rhs(m, c, m.hamiltonian(t + dt), r + dt * k3);
    r += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    detail::hermitize(r);
    if ((k + 1) % thinning == 0) {
      out.times.push_back(t + dt);
      out.states.push_back(detail::to_density(rho0.shape(), r));
    }
  }
  return out;
}

/// Feedback strengths u_j = B_j dt + sum_i A_ij s_i.
inline std::vector<double> feedback_strengths(const FeedbackLaw& law, std::span<const double> signal, double dt) {
  require(static_cast<Eigen::Index>(signal.size()) == law.A.rows(), ErrorCode::shape,
          "one feedback signal per channel required");
  std::vector<double> u(law.H.size());
  for (std::size_t j = 0; j < u.size(); ++j) {
    double s = law.B[j] * dt;
    for (std::size_t i = 0; i < signal.size(); ++i)
      s += law.A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * signal[i];
    u[j] = s;
  }
  return u;
}

/// Conjugates rho by exp(-i sum_j u_j H_j). The exact exponential agrees with
/// the Ito expansion through dW^2 = dt.
inline Matrix feedback_unitary(const std::vector<Matrix>& H, std::span<const double> u) {
  const Eigen::Index n = H.empty() ? 0 : H.front().rows();
  Matrix g = Matrix::Zero(n, n);
  for (std::size_t j = 0; j < H.size(); ++j) g += u[j] * H[j];
  return unitary_exp(g);
}

inline DensityMatrix apply_feedback(const DensityMatrix& rho, const FeedbackLaw& law, std::span<const double> signal,
                                    double dt) {
  const auto u = feedback_strengths(law, signal, dt);
  if (law.H.empty()) return rho;
  for (const auto& h : law.H) rho.op().check_same(h);
  std::vector<Matrix> hs;
  for (const auto& h : law.H) hs.push_back(h.matrix());
  const Matrix U = feedback_unitary(hs, u);
  Matrix out = U * rho.matrix() * U.adjoint();
  detail::hermitize(out);
  return detail::to_density(rho.shape(), out);
}

/// Measurement step followed by the feedback conjugation of the same step.
/// The controller log holds u_j per step.
inline TrajectoryRecord simulate_feedback_trajectory(const LindbladModel& model, const FeedbackLaw& law,
                                                     const DensityMatrix& rho0, double duration, double dt,
                                                     const WienerStream& stream, const TrajectoryOptions& opt = {}) {
  model.H.check_same(rho0.op());
  const auto c = detail::compile_law(model, law);
  check_step(rate_bound(model) + c.rate, dt);
  return detail::run_trajectory(
      detail::compile<Matrix>(model), Matrix(rho0.matrix()), rho0.shape(), duration, dt, stream, opt,
      [&](detail::StepContext<Matrix>& ctx) {
        const auto u = feedback_strengths(law, c.signal == FeedbackSignal::innovation ? ctx.dW : ctx.dr, ctx.dt);
        const Matrix U = feedback_unitary(c.H, u);
        ctx.rho = U * ctx.rho * U.adjoint();
        detail::hermitize(ctx.rho);
        ctx.outputs.assign(u.begin(), u.end());
      });
}

inline std::vector<TrajectoryRecord> simulate_feedback_ensemble(const LindbladModel& model, const FeedbackLaw& law,
                                                                const DensityMatrix& rho0, double duration, double dt,
                                                                std::uint64_t master_seed, std::size_t n,
                                                                unsigned jobs = 1, const TrajectoryOptions& opt = {}) {
  std::vector<TrajectoryRecord> out(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    out[i] = simulate_feedback_trajectory(model, law, rho0, duration, dt, WienerStream(master_seed, i), opt);
  });
  return out;
}

//---------------------------------------------------------------------------//
// Half-parity entanglement by feedback
//---------------------------------------------------------------------------//

inline PureState uniform_two_qubit_state() {
  return PureState::normalized(SpaceShape{2, 2}, Vector::Ones(4));
}

/// (|01> + |10>)/sqrt2.
inline PureState bell_psi_plus() { return PureState::normalized(SpaceShape{2, 2}, Vector{{0.0, 1.0, 1.0, 0.0}}); }

/// (|00> + |11>)/sqrt2.
inline PureState bell_phi_plus() { return PureState::normalized(SpaceShape{2, 2}, Vector{{1.0, 0.0, 0.0, 1.0}}); }

/// (sy x I + I x sy)/2.
inline Operator half_parity_feedback_hamiltonian() {
  const Operator i2 = Operator::identity(SpaceShape::qubit());
  return 0.5 * (tensor({sigma_y(), i2}) + tensor({i2, sigma_y()}));
}

/// |psi(t)> = (e^{-Gt/4}|phi+> + sqrt(2 - e^{-Gt/2})|psi+>)/sqrt2.
inline PureState analytic_half_parity_state(double gamma, double t) {
  require(t >= 0.0 && gamma >= 0.0, ErrorCode::invalid_argument, "need t >= 0 and gamma >= 0");
  const double a = std::exp(-0.25 * gamma * t), b = std::sqrt(2.0 - std::exp(-0.5 * gamma * t));
  Vector v = (a * bell_phi_plus().amplitudes() + b * bell_psi_plus().amplitudes()) / std::sqrt(2.0);
  return PureState::normalized(SpaceShape{2, 2}, v);
}

struct HalfParityGain {
  double A = 0.0;
  bool singular = false;  // feedback direction vanishes; A set to 0
};

/// Gain that cancels the dW part of the joint update: with X = i[H, rho] and
/// Y = sqrt(eta) H[M]rho, A = Re Tr(X^dag Y) / Tr(X^dag X).
template <class Mat>
HalfParityGain half_parity_gain(const Mat& rho, const Mat& M, const Mat& H, double eta) {
  const Mat x = kI * (H * rho - rho * H);
  const Mat y = std::sqrt(eta) * detail::innovation(M, rho);
  const double xx = x.squaredNorm();
  if (xx < 1e-24) return {0.0, true};
  return {(x.adjoint() * y).trace().real() / xx, false};
}

inline HalfParityGain half_parity_gain(const DensityMatrix& rho, double gamma, double eta = 1.0) {
  require(rho.shape() == (SpaceShape{2, 2}), ErrorCode::shape, "half-parity feedback needs two qubits");
  return half_parity_gain<Matrix>(rho.matrix(), half_parity_operator(gamma).matrix(),
                                  half_parity_feedback_hamiltonian().matrix(), eta);
}

struct HalfParityConfig {
  double gamma = 1.0;
  double eta = 1.0;
  double duration = 10.0;
  double dt = 1e-3;
};

/// Measurement of M = sqrt(G/2)(sz1 + sz2)/2 with proportional feedback
/// A(rho) dW on H = (sy1 + sy2)/2, integrated as one joint step: RK4 for the
/// drift D[M] + D[A H] - i A [H, Y] with A re-solved at every stage, plus the
/// uncancelled residual (Y - A X) dW. Controller log: {A} per step.
inline TrajectoryRecord half_parity_feedback(const HalfParityConfig& cfg, const WienerStream& stream,
                                             const TrajectoryOptions& opt = {},
                                             std::optional<DensityMatrix> initial = std::nullopt) {
  require(cfg.eta >= 0.0 && cfg.eta <= 1.0, ErrorCode::invalid_argument, "efficiency must lie in [0, 1]");
  require(opt.thinning >= 1, ErrorCode::invalid_argument, "thinning must be >= 1");
  using M4 = Eigen::Matrix4cd;
  const std::size_t n = detail::step_count(cfg.duration, cfg.dt);
  const SpaceShape shape{2, 2};
  const M4 M = half_parity_operator(cfg.gamma).matrix();
  const M4 H = half_parity_feedback_hamiltonian().matrix();
  const double se = std::sqrt(cfg.eta), dt = cfg.dt;
  const double mnorm = spectral_norm(Matrix(M)), hnorm = spectral_norm(Matrix(H));
  const DensityMatrix rho0 = initial ? *initial : DensityMatrix(uniform_two_qubit_state());
  require(rho0.shape() == shape, ErrorCode::shape, "half-parity feedback needs two qubits");
  M4 rho = rho0.matrix();

  auto drift = [&](const M4& r, double* gain, M4* residual) -> M4 {
    const HalfParityGain g = half_parity_gain<M4>(r, M, H, cfg.eta);
    const M4 y = se * detail::innovation(M, r);
    const M4 ht = g.A * H;
    if (gain) *gain = g.A;
    if (residual) *residual = y - g.A * (kI * (H * r - r * H));
    return detail::dissipator(M, r) + detail::dissipator(ht, r) - kI * (ht * y - y * ht);
  };

  TrajectoryRecord rec;
  rec.master_seed = stream.master_seed();
  rec.trajectory_index = stream.trajectory_index();
  rec.key = stream.key();
  rec.state_times.push_back(0.0);
  rec.states.push_back(rho0);
  if (opt.keep_records) rec.records.assign(1, {}), rec.increments.assign(1, {});
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * dt;
    try {
      const double dW = stream.increment(k, 0, dt);
      const double dr = se * 2.0 * detail::trace_product(M, rho).real() * dt + dW;
      double A = 0.0;
      M4 res;
      const M4 k1 = drift(rho, &A, &res);
      check_step(2.0 * mnorm * mnorm + 2.0 * A * A * hnorm * hnorm + 4.0 * std::abs(A) * hnorm * mnorm, dt);
      const M4 k2 = drift(rho + 0.5 * dt * k1, nullptr, nullptr);
      const M4 k3 = drift(rho + 0.5 * dt * k2, nullptr, nullptr);
      const M4 k4 = drift(rho + dt * k3, nullptr, nullptr);
      rho += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4) + dW * res;
      const double tr = rho.trace().real();
      detail::check_trace(tr);
      rho /= tr;
      detail::hermitize(rho);
      if (!rho.allFinite()) fail(ErrorCode::integration_unstable, "non-finite state");
      if (opt.keep_records) {
        rec.times.push_back(t + dt);
        rec.records[0].push_back(se > 0.0 ? dr / (2.0 * se * mnorm * dt) : std::numeric_limits<double>::quiet_NaN());
        rec.increments[0].push_back(dW);
        rec.controller_log.push_back({A});
      }
    } catch (const StepError&) {
      throw;
    } catch (const Error& e) {
      throw StepError(e.code(), k, e.what());
    }
    if ((k + 1) % opt.thinning == 0) {
      rec.state_times.push_back(t + dt);
      rec.states.push_back(detail::to_density(shape, rho));
    }
  }
  return rec;
}

//---------------------------------------------------------------------------//
// Rabi stabilization
//---------------------------------------------------------------------------//

/// Sliding one-period demodulator: S = -(2/T_w) sum_k V_k sin(W t_k) dt over
/// the last `window` steps, so S ~ A sin(delta) for a record cos(W t + delta).
/// The drive correction is -F W S, with S clipped to [-1, 1].
class RabiController {
 public:
  RabiController(double omega_r, double gain, double dt, std::size_t window = 0)
      : omega_(omega_r), gain_(gain), dt_(dt) {
    require(omega_r > 0.0 && dt > 0.0, ErrorCode::invalid_argument, "need a positive Rabi frequency and step");
    if (!(gain >= 0.0 && gain <= 2.0)) fail(ErrorCode::gain_guard, "Rabi feedback gain must lie in [0, 2]");
    window_ = window ? window : static_cast<std::size_t>(std::llround(2.0 * std::numbers::pi / (omega_r * dt)));
    window_ = std::max<std::size_t>(window_, 1);
  }

  /// Record value V for the step [t_k, t_k + dt]; returns the drive correction.
  double update(std::size_t step, double V) {
    const double tm = (static_cast<double>(step) + 0.5) * dt_;
    buf_.push_back(V * std::sin(omega_ * tm));
    if (buf_.size() > window_) buf_.pop_front();
    double s = 0.0;
    for (double v : buf_) s += v;
    // Clipped to the range of sin(delta).
    const double demod = std::clamp(-2.0 * s / static_cast<double>(window_), -1.0, 1.0);
    return -gain_ * omega_ * demod;
  }

  [[nodiscard]] std::size_t window() const { return window_; }

 private:
  double omega_, gain_, dt_;
  std::size_t window_ = 1;
  std::deque<double> buf_;
};

struct RabiConfig {
  double omega_r = 2.0 * std::numbers::pi;
  double gamma_d = 1.0;
  double eta = 0.4;
  double gain = 0.0;
  bool feedback = true;
  double duration = 10.0;
  double dt = 5e-3;
  std::size_t window = 0;  // 0: one Rabi period
};

inline LindbladModel rabi_model(const RabiConfig& cfg) {
  return measured_model((0.5 * cfg.omega_r) * sigma_x(), qubit_z_channel(cfg.gamma_d, cfg.eta));
}

/// Rabi drive (W/2) sx from |e> under sigma_z monitoring; with feedback the
/// drive becomes ((W + dW_k)/2) sx from the next step on. Controller log:
/// {drive correction} per step.
inline TrajectoryRecord rabi_stabilization(const RabiConfig& cfg, const WienerStream& stream,
                                           const TrajectoryOptions& opt = {}) {
  require(cfg.eta > 0.0 || !cfg.feedback, ErrorCode::record_undefined, "feedback needs eta > 0");
  RabiController ctl(cfg.omega_r, cfg.gain, cfg.dt, cfg.window);
  const LindbladModel model = rabi_model(cfg);
  const Eigen::Matrix2cd sx = sigma_x().matrix();
  // Headroom for the corrected drive in the step guard.
  check_step(rate_bound(model) + 0.5 * cfg.gain * cfg.omega_r, cfg.dt);
  return detail::run_trajectory(
      detail::compile<Eigen::Matrix2cd>(model), Eigen::Matrix2cd(excited().projector().matrix()),
      SpaceShape::qubit(), cfg.duration, cfg.dt, stream, opt, [&](detail::StepContext<Eigen::Matrix2cd>& ctx) {
        if (!cfg.feedback) return;
        const double scale = 2.0 * std::sqrt(ctx.model.eta[0]) * ctx.model.cnorm[0] * ctx.dt;
        const double delta = ctl.update(ctx.step, ctx.dr[0] / scale);
        ctx.model.H = (0.5 * (cfg.omega_r + delta)) * sx;
        ctx.model_changed = true;
        ctx.outputs.push_back(delta);
      });
}

/// Re-runs the controller on a stored record; equals the logged corrections.
inline std::vector<double> replay_rabi_controller(const RabiConfig& cfg, const TrajectoryRecord& rec) {
  require(rec.records.size() == 1, ErrorCode::invalid_argument, "Rabi replay needs one record channel");
  RabiController ctl(cfg.omega_r, cfg.gain, cfg.dt, cfg.window);
  std::vector<double> out;
  out.reserve(rec.records[0].size());
  for (std::size_t k = 0; k < rec.records[0].size(); ++k) out.push_back(ctl.update(k, rec.records[0][k]));
  return out;
}

/// Ensemble <sz>(t) on the thinned grid.
inline StateSeries rabi_ensemble(const RabiConfig& cfg, std::uint64_t master_seed, std::size_t n, unsigned jobs = 1,
                                 std::size_t thinning = 10) {
  std::vector<TrajectoryRecord> recs(n);
  TrajectoryOptions opt;
  opt.thinning = thinning;
  opt.keep_records = false;
  parallel_for(n, jobs, [&](std::size_t i) { recs[i] = rabi_stabilization(cfg, WienerStream(master_seed, i), opt); });
  const auto avg = ensemble_average(recs);
  return {recs.front().state_times, avg};
}

/// Demodulated oscillation amplitude (2/T) int z(t) cos(W t) dt over the
/// samples with t in [t_from, t_to], trapezoidal.
inline double oscillation_amplitude(std::span<const double> t, std::span<const double> z, double omega, double t_from,
                                    double t_to) {
  require(t.size() == z.size() && t.size() >= 2, ErrorCode::invalid_argument, "need matching samples");
  double acc = 0.0, span = 0.0;
  for (std::size_t k = 1; k < t.size(); ++k) {
    if (t[k - 1] < t_from - 1e-12 || t[k] > t_to + 1e-12) continue;
    const double h = t[k] - t[k - 1];
    acc += 0.5 * h * (z[k - 1] * std::cos(omega * t[k - 1]) + z[k] * std::cos(omega * t[k]));
    span += h;
  }
  require(span > 0.0, ErrorCode::invalid_argument, "empty demodulation window");
  return 2.0 * acc / span;
}

//---------------------------------------------------------------------------//
// Adaptive phase measurement
//---------------------------------------------------------------------------//

enum class PhaseStrategy { adaptive, heterodyne, fixed };

/// A transmitter qubit (|0> + e^{i Theta}|1>)/sqrt2 (|1> = |e>) emits into a
/// flat temporal mode of length T (decay rate 1/(T - t)); the receiver
/// measures the quadrature a e^{-i phi} + a^dag e^{i phi} of the field.
struct PhaseConfig {
  double eta = 1.0;
  double T = 1.0;
  double dt = 1e-4;
  std::size_t delay_steps = 0;
  PhaseStrategy strategy = PhaseStrategy::adaptive;
  double fixed_phi = 0.0;        // fixed strategy axis, heterodyne first axis
  std::size_t tail_steps = 40;   // steps left unrun at the end; keeps 2 gamma dt <= 0.05
};

struct PhaseRun {
  double theta_true = 0.0;
  double estimate = 0.0;          // arg of the reference coherence at the end
  double posterior_coherence = 0.0;  // |rho_R(g,e)|, 1/2 for a sharp single-photon posterior
  std::vector<double> phi_log;    // receiver axis per step (adaptive/fixed)
  std::vector<double> records;    // record increments dr per step, channel 0
  std::vector<double> amplitude;  // 2 Re(e^{-i theta} <sigma^->) of the true state per step, before the update
};

inline PureState phase_source_state(double theta) {
  return PureState::normalized(SpaceShape::qubit(), Vector{{std::polar(1.0, theta), 1.0}});
}

namespace detail {

inline double flat_mode_rate(double T, double t) { return 1.0 / (T - t); }

}  // namespace detail

/// One receiver run. The receiver filter is a reference qubit R maximally
/// entangled with a copy of the transmitter, driven by the same record;
/// projecting R on (|0> + e^{-i Theta}|1>)/sqrt2 gives the posterior of Theta,
/// whose mean direction is arg rho_R(g, e).
inline PhaseRun adaptive_phase_run(const PhaseConfig& cfg, double theta_true, const WienerStream& stream,
                                   bool keep_logs = false) {
  require(cfg.eta >= 0.0 && cfg.eta <= 1.0, ErrorCode::invalid_argument, "efficiency must lie in [0, 1]");
  require(cfg.T > 0.0 && cfg.dt > 0.0, ErrorCode::invalid_argument, "need T > 0 and dt > 0");
  const std::size_t total = detail::step_count(cfg.T, cfg.dt);
  require(total > cfg.tail_steps, ErrorCode::invalid_argument, "tail longer than the mode");
  const std::size_t n = total - cfg.tail_steps;
  using M2 = Eigen::Matrix2cd;
  using M4 = Eigen::Matrix4cd;
  const bool het = cfg.strategy == PhaseStrategy::heterodyne;
  const std::size_t nc = het ? 2 : 1;
  const double dt = cfg.dt;

  const M2 sm = pauli(PauliAxis::minus).matrix();
  const M4 sm4 = tensor({Operator::identity(SpaceShape::qubit()), pauli(PauliAxis::minus)}).matrix();
  // Channel layout: adaptive/fixed one channel at efficiency eta; heterodyne
  // splits the field into two arms sqrt(1/2) c at axes phi0 and phi0 + pi/2.
  const double split = het ? std::sqrt(0.5) : 1.0;
  std::vector<double> axis(nc);
  axis[0] = cfg.strategy == PhaseStrategy::adaptive ? 0.0 : cfg.fixed_phi;
  if (het) axis[1] = cfg.fixed_phi + 0.5 * std::numbers::pi;

  detail::DenseModel<M2> sys;
  detail::DenseModel<M4> fil;
  sys.H = M2::Zero();
  fil.H = M4::Zero();
  for (std::size_t i = 0; i < nc; ++i) {
    sys.c.push_back(M2::Zero());
    fil.c.push_back(M4::Zero());
    sys.eta.push_back(cfg.eta);
    fil.eta.push_back(cfg.eta);
    sys.phi.push_back(0.0);
    fil.phi.push_back(0.0);
    sys.cnorm.push_back(0.0);
    fil.cnorm.push_back(0.0);
  }
  auto configure = [&](double t) {
    const double g = std::sqrt(detail::flat_mode_rate(cfg.T, t)) * split;
    for (std::size_t i = 0; i < nc; ++i) {
      sys.c[i] = g * sm;
      fil.c[i] = g * sm4;
      sys.cnorm[i] = fil.cnorm[i] = g;
      // ce = c e^{-i phi} measures a e^{-i phi} + h.c.
      sys.phi[i] = fil.phi[i] = -axis[i];
    }
    sys.refresh();
    fil.refresh();
  };

  M2 rho = phase_source_state(theta_true).projector().matrix();
  Vector phi_plus(4);
  phi_plus << 1.0, 0.0, 0.0, 1.0;  // (|ee> + |gg>)/sqrt2 on [R, T]
  phi_plus /= std::sqrt(2.0);
  M4 filt = phi_plus * phi_plus.adjoint();

  PhaseRun run;
  run.theta_true = theta_true;
  std::deque<double> pending;
  std::vector<double> dW(nc), dr(nc);
  const M2 h2 = M2::Zero();
  const M4 h4 = M4::Zero();
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * dt;
    try {
      configure(t);
      check_step(sys.rate, dt);
      for (std::size_t i = 0; i < nc; ++i) dW[i] = stream.increment(k, static_cast<std::uint32_t>(i), dt);
      detail::record_increments(sys, rho, dW.data(), dr.data(), dt);
      if (keep_logs) {
        const double theta_hat = std::arg(filt(2, 0) + filt(3, 1));
        run.amplitude.push_back(2.0 * (std::polar(1.0, -theta_hat) * detail::trace_product(sm, rho)).real());
        run.records.push_back(dr[0] / (2.0 * std::sqrt(cfg.eta) * sys.cnorm[0] * dt));
        run.phi_log.push_back(axis[0]);
      }
      detail::kraus_update(sys, h2, rho, dr.data(), dt);
      detail::kraus_update(fil, h4, filt, dr.data(), dt);
    } catch (const Error& e) {
      throw StepError(e.code(), k, e.what());
    }
    if (cfg.strategy == PhaseStrategy::adaptive) {
      // rho_R(g, e) = sum_T rho[(g,T),(e,T)]; R is the slow index.
      const Complex coh = filt(2, 0) + filt(3, 1);
      pending.push_back(std::arg(coh) + 0.5 * std::numbers::pi);
      if (pending.size() > cfg.delay_steps) {
        axis[0] = pending.front();
        pending.pop_front();
      }
    }
  }
  const Complex coh = filt(2, 0) + filt(3, 1);
  run.estimate = std::arg(coh);
  run.posterior_coherence = std::abs(coh);
  return run;
}

/// Runs n receivers with Theta_true drawn uniformly from the auxiliary stream
/// of each trajectory; matched seeds give matched Theta and noise across
/// strategies.
inline std::vector<PhaseRun> adaptive_phase_batch(const PhaseConfig& cfg, std::uint64_t master_seed, std::size_t n,
                                                  unsigned jobs = 1) {
  std::vector<PhaseRun> out(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    const WienerStream s(master_seed, i);
    const double theta = 2.0 * std::numbers::pi * s.uniform(0, 0) - std::numbers::pi;
    out[i] = adaptive_phase_run(cfg, theta, s);
  });
  return out;
}

//---------------------------------------------------------------------------//
// Zeno dragging
//---------------------------------------------------------------------------//

enum class ZenoFrame { rotating, lab };

/// Measurement axis sigma_delta with delta(t) = nu t in the xy plane.
struct ZenoDragConfig {
  double nu = 0.0;
  double gamma_d = 1.0;
  double eta = 1.0;
  double duration = 10.0;
  double dt = 1e-3;
  std::size_t thinning = 100;
  ZenoFrame frame = ZenoFrame::rotating;

  [[nodiscard]] bool regime_ok() const { return nu == 0.0 || gamma_d / nu >= 5.0; }
};

struct ZenoDragResult {
  TrajectoryRecord record;
  std::vector<double> overlap;  // with the pointer state at each stored time
  bool success = false;         // final overlap >= 1/2
  bool regime_ok = true;
};

/// Pointer state (|e> + e^{i delta}|g>)/sqrt2 of sigma_delta.
inline PureState zeno_pointer_state(double delta) {
  return PureState::normalized(SpaceShape::qubit(), Vector{{1.0, std::polar(1.0, delta)}});
}

/// The rotating frame follows the axis: H = -(nu/2) sz with a static
/// sqrt(G/2) sx channel, pointer state |+x>. The lab frame updates the channel
/// sqrt(G/2) sigma_{nu t} every step.
inline ZenoDragResult zeno_drag(const ZenoDragConfig& cfg, const WienerStream& stream, bool keep_records = false) {
  require(cfg.nu >= 0.0 && cfg.gamma_d > 0.0, ErrorCode::invalid_argument, "need nu >= 0 and Gamma_D > 0");
  TrajectoryOptions opt;
  opt.thinning = cfg.thinning;
  opt.keep_records = keep_records;
  const Operator c0 = std::sqrt(0.5 * cfg.gamma_d) * sigma_x();
  const DensityMatrix rho0(zeno_pointer_state(0.0));
  ZenoDragResult res;
  res.regime_ok = cfg.regime_ok();
  if (cfg.frame == ZenoFrame::rotating) {
    const LindbladModel m = measured_model((-0.5 * cfg.nu) * sigma_z(), {c0, cfg.eta, 0.0});
    res.record = detail::dispatch_trajectory(m, rho0, cfg.duration, cfg.dt, stream, opt, detail::NoHook{});
    for (const auto& s : res.record.states) res.overlap.push_back(0.5 * (1.0 + s.matrix()(0, 1).real() * 2.0));
  } else {
    const LindbladModel m = measured_model(Operator::zero(SpaceShape::qubit()), {c0, cfg.eta, 0.0});
    const double g = std::sqrt(0.5 * cfg.gamma_d);
    res.record = detail::run_trajectory(
        detail::compile<Eigen::Matrix2cd>(m), Eigen::Matrix2cd(rho0.matrix()), SpaceShape::qubit(), cfg.duration,
        cfg.dt, stream, opt, [&](detail::StepContext<Eigen::Matrix2cd>& ctx) {
          // Axis for the next step, sampled at its midpoint.
          ctx.model.c[0] = g * Eigen::Matrix2cd(sigma_delta(cfg.nu * (ctx.t + 0.5 * ctx.dt)).matrix());
          ctx.model_changed = true;
        });
    for (std::size_t k = 0; k < res.record.states.size(); ++k) {
      const PureState p = zeno_pointer_state(cfg.nu * res.record.state_times[k]);
      res.overlap.push_back(expectation(p.projector(), res.record.states[k]).real());
    }
  }
  res.success = res.overlap.back() >= 0.5;
  return res;
}

struct ZenoSurvival {
  std::vector<double> times;
  std::vector<double> survival;  // 2 f - 1, f = fraction with overlap >= 1/2
  double success_fraction = 0.0;
  bool regime_ok = true;
};

/// Survival curve over n seeded trajectories.
inline ZenoSurvival zeno_drag_batch(const ZenoDragConfig& cfg, std::uint64_t master_seed, std::size_t n,
                                    unsigned jobs = 1) {
  require(n > 0, ErrorCode::invalid_argument, "need at least one trajectory");
  std::vector<std::vector<double>> ov(n);
  std::vector<double> times;
  std::vector<char> ok(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    auto r = zeno_drag(cfg, WienerStream(master_seed, i));
    ov[i] = std::move(r.overlap);
    ok[i] = r.success;
    if (i == 0) times = r.record.state_times;
  });
  ZenoSurvival out;
  out.times = times;
  out.regime_ok = cfg.regime_ok();
  out.survival.assign(times.size(), 0.0);
  for (std::size_t k = 0; k < times.size(); ++k) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) hits += ov[i][k] >= 0.5;
    out.survival[k] = 2.0 * static_cast<double>(hits) / static_cast<double>(n) - 1.0;
  }
  std::size_t s = 0;
  for (char c : ok) s += c;
  out.success_fraction = static_cast<double>(s) / static_cast<double>(n);
  return out;
}

//---------------------------------------------------------------------------//
// Zeno blockade
//---------------------------------------------------------------------------//

/// Effective number-selective model on [qubit, cavity]:
///   H = eps (a + a^dag) + (Omega_R/2) sx x |N><N|,  collapse sqrt(gamma) s-,
/// optional cavity decay sqrt(kappa) a.
struct ZenoBlockadeConfig {
  int N = 3;
  double omega_r = 2.0 * std::numbers::pi * 6.23;
  double gamma = 2.0 * std::numbers::pi * 0.77;
  double epsilon = 0.5;
  double kappa = 0.0;
  int n_max = 10;
  double duration = 10.0;
  double dt = 1e-3;
  std::size_t thinning = 100;
  bool blockade = true;
};

inline LindbladModel zeno_blockade_model(const ZenoBlockadeConfig& cfg) {
  require(cfg.N >= 1, ErrorCode::invalid_argument, "blocked level must be >= 1");
  if (cfg.blockade) {
    if (cfg.n_max < cfg.N + 4) fail(ErrorCode::truncation_inadequate, "n_max must be at least N + 4");
  } else {
    require_truncation(cfg.epsilon * cfg.duration, cfg.n_max);
  }
  const Operator a = annihilation(cfg.n_max);
  const Operator iq = Operator::identity(SpaceShape::qubit());
  Matrix pn = Matrix::Zero(cfg.n_max + 1, cfg.n_max + 1);
  pn(cfg.N, cfg.N) = 1.0;
  LindbladModel m;
  m.H = cfg.epsilon * tensor({iq, a + a.dagger()});
  if (cfg.blockade) m.H += (0.5 * cfg.omega_r) * tensor({sigma_x(), Operator(fock_shape(cfg.n_max), pn)});
  m.unmonitored.push_back(std::sqrt(cfg.gamma) * tensor({pauli(PauliAxis::minus), Operator::identity(a.shape())}));
  if (cfg.kappa > 0.0) m.unmonitored.push_back(std::sqrt(cfg.kappa) * tensor({iq, a}));
  return m;
}

/// Cavity reduced states from |g, 0>, RK4.
inline StateSeries zeno_blockade(const ZenoBlockadeConfig& cfg) {
  const LindbladModel m = zeno_blockade_model(cfg);
  const DensityMatrix rho0(tensor(ground(), fock_state(0, cfg.n_max)));
  StateSeries joint = integrate_lindblad(m, rho0, cfg.duration, cfg.dt, cfg.thinning);
  for (auto& s : joint.states) s = partial_trace(s, {1});
  return joint;
}

//---------------------------------------------------------------------------//
// Kerr-cat stabilization
//---------------------------------------------------------------------------//

/// Coherent fixed points +-beta of H_Kerr with two-photon loss sqrt(k2) a^2:
/// beta^2 = eps2 / (K + i k2/2); beta -> alpha as k2 -> 0.
inline Complex kerr_cat_beta(double K, Complex eps2, double kappa2) {
  require(K > 0.0 && kappa2 >= 0.0, ErrorCode::invalid_argument, "need K > 0 and kappa2 >= 0");
  return std::sqrt(eps2 / Complex(K, 0.5 * kappa2));
}

/// Orthogonal projector onto span{|beta>, |-beta>}.
inline Operator cat_subspace_projector(Complex beta, int n_max) {
  const PureState e = cat_state(beta, CatParity::even, n_max), o = cat_state(beta, CatParity::odd, n_max);
  return e.projector() + o.projector();
}

/// |C+><C-| + |C-><C+|: +1 on |beta>, -1 on |-beta> (bit-flip observable).
inline Operator cat_x_operator(Complex beta, int n_max) {
  const Vector e = cat_state(beta, CatParity::even, n_max).amplitudes();
  const Vector o = cat_state(beta, CatParity::odd, n_max).amplitudes();
  return Operator(fock_shape(n_max), e * o.adjoint() + o * e.adjoint());
}

struct KerrCatRun {
  double kappa2 = 0.5;
  double kappa1 = 0.0;
  int n_max = 24;
  double duration = 30.0;
  double dt = 0.5;  // propagator sampling interval
};

inline LindbladModel kerr_cat_model(const KerrCatParams& p, const KerrCatRun& run) {
  require(run.kappa2 >= 0.0 && run.kappa1 >= 0.0, ErrorCode::invalid_argument, "loss rates must be >= 0");
  LindbladModel m;
  m.H = kerr_cat_hamiltonian(p, run.n_max);
  const Operator a = annihilation(run.n_max);
  require_truncation(kerr_cat_beta(p.K, p.eps2, run.kappa2), run.n_max);
  if (run.kappa2 > 0.0) m.unmonitored.push_back(std::sqrt(run.kappa2) * (a * a));
  if (run.kappa1 > 0.0) m.unmonitored.push_back(std::sqrt(run.kappa1) * a);
  return m;
}

/// Exact propagation from vacuum (or `initial`), sampled every run.dt.
inline StateSeries kerr_cat_stabilization(const KerrCatParams& p, const KerrCatRun& run,
                                          std::optional<DensityMatrix> initial = std::nullopt) {
  const LindbladModel m = kerr_cat_model(p, run);
  const DensityMatrix rho0 = initial ? *initial : DensityMatrix(fock_state(0, run.n_max));
  const std::size_t steps = detail::step_count(run.duration, run.dt);
  return propagate(m, rho0, run.dt, steps);
}

}  // namespace qtraj
