#pragma once

// Time evolution: Lindblad flow, diffusive stochastic master equations,
// measurement records, POVM and Bayesian updates, trajectory ensembles.
//
// A channel with collapse operator c, efficiency eta and amplification phase
// phi produces the record increment
//   dr = sqrt(eta) <c e^{i phi} + h.c.> dt + dW
// and conditions the state through
//   d rho = -i[H, rho] dt + D[c] rho dt + sqrt(eta) H[c e^{i phi}] rho dW.
// The reported record value is V = dr / (2 sqrt(eta) |c| dt), |c| the
// spectral norm, so that a qubit channel c = sqrt(Gamma_D/2) sigma_z gives
//   V dt = <sigma_z> dt + dW / sqrt(2 eta Gamma_D).

#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "qtraj/error.hpp"
#include "qtraj/hilbert.hpp"
#include "qtraj/parallel.hpp"
#include "qtraj/rng.hpp"

namespace qtraj {

//---------------------------------------------------------------------------//
// Model types
//---------------------------------------------------------------------------//

struct MeasurementChannel {
  Operator c;        // sqrt(rad/us)
  double eta = 1.0;  // detection efficiency
  double phi = 0.0;  // amplification axis (rad)
};

/// Hamiltonian term active on [t_begin, t_end).
struct HamiltonianSegment {
  double t_begin = 0.0;
  double t_end = 0.0;
  Operator H;
};

struct LindbladModel {
  Operator H;
  std::vector<HamiltonianSegment> schedule;
  std::vector<MeasurementChannel> channels;
  std::vector<Operator> unmonitored;

  [[nodiscard]] const SpaceShape& shape() const { return H.shape(); }

  void validate() const {
    require(!H.shape().empty(), ErrorCode::shape, "model has no Hamiltonian");
    require(H.is_hermitian(1e-9), ErrorCode::invalid_argument, "Hamiltonian is not Hermitian");
    for (const auto& seg : schedule) {
      H.check_same(seg.H);
      require(seg.H.is_hermitian(1e-9), ErrorCode::invalid_argument, "schedule segment is not Hermitian");
      require(seg.t_end >= seg.t_begin, ErrorCode::invalid_argument, "schedule segment ends before it begins");
    }
    for (const auto& ch : channels) {
      H.check_same(ch.c);
      require(ch.eta >= 0.0 && ch.eta <= 1.0, ErrorCode::invalid_argument, "efficiency must lie in [0, 1]");
      require(std::isfinite(ch.phi), ErrorCode::invalid_argument, "channel phase must be finite");
    }
    for (const auto& l : unmonitored) H.check_same(l);
  }

  [[nodiscard]] Operator hamiltonian_at(double t) const {
    Operator h = H;
    for (const auto& seg : schedule)
      if (t >= seg.t_begin && t < seg.t_end) h += seg.H;
    return h;
  }
};

/// Model with one monitored channel and nothing else.
inline LindbladModel measured_model(const Operator& H, MeasurementChannel ch) {
  LindbladModel m{H, {}, {std::move(ch)}, {}};
  m.validate();
  return m;
}

/// Qubit channel sqrt(Gamma_D/2) sigma_z.
inline MeasurementChannel qubit_z_channel(double gamma_d, double eta = 1.0, double phi = 0.0) {
  require(gamma_d >= 0.0, ErrorCode::invalid_argument, "measurement rate must be nonnegative");
  return {std::sqrt(gamma_d / 2.0) * sigma_z(), eta, phi};
}

//---------------------------------------------------------------------------//
// Norms and the step guard
//---------------------------------------------------------------------------//

inline constexpr double kMaxRateStep = 0.05;

inline double spectral_norm(const Matrix& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(m);
  return svd.singularValues()(0);
}

inline double max_row_sum(const Matrix& m) {
  return m.size() == 0 ? 0.0 : m.cwiseAbs().rowwise().sum().maxCoeff();
}

/// Upper bound on the fastest rate in the generator (rad/us).
inline double rate_bound(const LindbladModel& model) {
  double r = max_row_sum(model.H.matrix());
  for (const auto& seg : model.schedule) r += max_row_sum(seg.H.matrix());
  for (const auto& ch : model.channels) r += 2.0 * std::pow(spectral_norm(ch.c.matrix()), 2);
  for (const auto& l : model.unmonitored) r += 2.0 * std::pow(spectral_norm(l.matrix()), 2);
  return r;
}

inline void check_step(double rate, double dt) {
  require(dt > 0.0 && std::isfinite(dt), ErrorCode::invalid_argument, "dt must be positive");
  require(dt * rate <= kMaxRateStep + 1e-12, ErrorCode::step_too_large,
          "dt * rate = " + std::to_string(dt * rate) + " exceeds " + std::to_string(kMaxRateStep));
}

inline void check_step(const LindbladModel& model, double dt) { check_step(rate_bound(model), dt); }

//---------------------------------------------------------------------------//
// Superoperators
//---------------------------------------------------------------------------//

namespace detail {

template <class Mat>
Complex trace_product(const Mat& a, const Mat& b) {
  return a.cwiseProduct(b.transpose()).sum();
}

template <class Mat>
Mat dissipator(const Mat& x, const Mat& rho) {
  const Mat xdx = x.adjoint() * x;
  return x * rho * x.adjoint() - 0.5 * (xdx * rho + rho * xdx);
}

template <class Mat>
Mat innovation(const Mat& x, const Mat& rho) {
  const Mat a = x * rho + rho * x.adjoint();
  return a - a.trace() * rho;
}

template <class Mat>
void hermitize(Mat& m) {
  m = (0.5 * (m + m.adjoint())).eval();
}

}  // namespace detail

/// D[X] rho = X rho X^dag - (X^dag X rho + rho X^dag X) / 2.
inline Operator dissipator(const Operator& x, const DensityMatrix& rho) {
  x.check_same(rho.op());
  return {x.shape(), detail::dissipator(x.matrix(), rho.matrix())};
}

/// H[X] rho = X rho + rho X^dag - Tr(X rho + rho X^dag) rho.
inline Operator innovation(const Operator& x, const DensityMatrix& rho) {
  x.check_same(rho.op());
  return {x.shape(), detail::innovation(x.matrix(), rho.matrix())};
}

//---------------------------------------------------------------------------//
// Dense kernels shared by all integrators
//---------------------------------------------------------------------------//

enum class Integrator { kraus, ito };

namespace detail {

/// Model compiled to a concrete matrix type. Fixed-size types make qubit and
/// two-qubit trajectories allocation free.
template <class Mat>
struct DenseModel {
  Mat H;
  std::vector<double> seg_begin, seg_end;
  std::vector<Mat> seg_H;
  std::vector<Mat> c;
  std::vector<double> eta, phi, cnorm;
  std::vector<Mat> L;
  std::vector<double> lnorm;

  // Derived by refresh().
  std::vector<Mat> ce;  // e^{i phi} c
  Mat decay;            // (sum c^dag c + sum L^dag L) / 2
  Mat ito;              // -(1/2) sum eta e^{2 i phi} c^2
  double rate = 0.0;

  [[nodiscard]] Eigen::Index dim() const { return H.rows(); }
  [[nodiscard]] std::size_t channels() const { return c.size(); }

  void refresh() {
    const Eigen::Index n = H.rows();
    ce.resize(c.size());
    decay = Mat::Zero(n, n);
    ito = Mat::Zero(n, n);
    rate = max_row_sum(Matrix(H));
    for (std::size_t k = 0; k < seg_H.size(); ++k) rate += max_row_sum(Matrix(seg_H[k]));
    for (std::size_t i = 0; i < c.size(); ++i) {
      const Complex e = std::polar(1.0, phi[i]);
      ce[i] = e * c[i];
      decay.noalias() += 0.5 * c[i].adjoint() * c[i];
      ito.noalias() -= (0.5 * eta[i] * e * e) * (c[i] * c[i]);
      rate += 2.0 * cnorm[i] * cnorm[i];
    }
    for (std::size_t k = 0; k < L.size(); ++k) {
      decay.noalias() += 0.5 * L[k].adjoint() * L[k];
      rate += 2.0 * lnorm[k] * lnorm[k];
    }
  }

  /// H(t); returns the static part when no segment is active.
  [[nodiscard]] Mat hamiltonian(double t) const {
    Mat h = H;
    for (std::size_t k = 0; k < seg_H.size(); ++k)
      if (t >= seg_begin[k] && t < seg_end[k]) h += seg_H[k];
    return h;
  }

};

template <class Mat>
DenseModel<Mat> compile(const LindbladModel& model) {
  model.validate();
  DenseModel<Mat> d;
  d.H = model.H.matrix();
  for (const auto& seg : model.schedule) {
    d.seg_begin.push_back(seg.t_begin);
    d.seg_end.push_back(seg.t_end);
    d.seg_H.push_back(seg.H.matrix());
  }
  for (const auto& ch : model.channels) {
    d.c.push_back(ch.c.matrix());
    d.eta.push_back(ch.eta);
    d.phi.push_back(ch.phi);
    d.cnorm.push_back(spectral_norm(ch.c.matrix()));
  }
  for (const auto& l : model.unmonitored) {
    d.L.push_back(l.matrix());
    d.lnorm.push_back(spectral_norm(l.matrix()));
  }
  d.refresh();
  return d;
}

/// exp(X). Closed form for 2x2 through Cayley-Hamilton, Pade otherwise.
template <class Mat>
Mat expm_small(const Mat& x) {
  if constexpr (Mat::RowsAtCompileTime == 2) {
    const Complex a = 0.5 * (x(0, 0) + x(1, 1));
    const Complex d = 0.5 * (x(0, 0) - x(1, 1));
    const Complex s2 = d * d + x(0, 1) * x(1, 0);
    const Complex s = std::sqrt(s2);
    Complex ch, sh;  // e^a cosh(s), e^a sinh(s)/s
    if (std::abs(s) < 1e-4) {
      const Complex ea = std::exp(a);
      ch = ea * (1.0 + s2 / 2.0 + s2 * s2 / 24.0);
      sh = ea * (1.0 + s2 / 6.0 + s2 * s2 / 120.0);
    } else {
      const Complex ep = std::exp(a + s), em = std::exp(a - s);
      ch = 0.5 * (ep + em);
      sh = 0.5 * (ep - em) * std::conj(s) / std::norm(s);
    }
    Mat out;
    out(0, 0) = ch + sh * d;
    out(1, 1) = ch - sh * d;
    out(0, 1) = sh * x(0, 1);
    out(1, 0) = sh * x(1, 0);
    return out;
  } else {
    return x.exp();
  }
}

template <class Mat>
Mat lindblad_rhs(const DenseModel<Mat>& m, const Mat& h, const Mat& rho) {
  Mat hr = h * rho;
  Mat out = -kI * (hr - hr.adjoint());
  for (const auto& c : m.c) out += dissipator(c, rho);
  for (const auto& l : m.L) out += dissipator(l, rho);
  return out;
}

template <class Mat>
void rk4_step(const DenseModel<Mat>& m, const Mat& h, Mat& rho, double dt) {
  const Mat k1 = lindblad_rhs(m, h, rho);
  const Mat k2 = lindblad_rhs(m, h, Mat(rho + 0.5 * dt * k1));
  const Mat k3 = lindblad_rhs(m, h, Mat(rho + 0.5 * dt * k2));
  const Mat k4 = lindblad_rhs(m, h, Mat(rho + dt * k3));
  rho += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

template <class Mat>
void record_increments(const DenseModel<Mat>& m, const Mat& rho, const double* dW, double* dr, double dt) {
  for (std::size_t i = 0; i < m.channels(); ++i) {
    const double mean = 2.0 * trace_product(m.ce[i], rho).real();
    dr[i] = std::sqrt(m.eta[i]) * mean * dt + dW[i];
  }
}

inline void check_trace(double tr) {
  if (!(tr > 1e-300) || !std::isfinite(tr))
    fail(ErrorCode::integration_unstable, "state trace collapsed to " + std::to_string(tr));
}

/// Normalized Kraus step: rho -> [M rho M^dag + dt sum (1-eta) c rho c^dag
/// + dt sum L rho L^dag] / Tr, with M = exp(X) and
///   X = -(iH + decay) dt - (1/2) sum eta e^{2i phi} c^2 dt + sum sqrt(eta) ce dr.
/// Positive by construction. kraus_update takes the record increments dr
/// as given, which is how a filter consumes an external record.
template <class Mat>
void kraus_update(const DenseModel<Mat>& m, const Mat& h, Mat& rho, const double* dr, double dt) {
  Mat x = (-kI * h - m.decay + m.ito) * dt;
  for (std::size_t i = 0; i < m.channels(); ++i)
    if (m.eta[i] > 0.0) x += (std::sqrt(m.eta[i]) * dr[i]) * m.ce[i];
  const Mat k = expm_small(x);
  Mat out = k * rho * k.adjoint();
  for (std::size_t i = 0; i < m.channels(); ++i)
    if (m.eta[i] < 1.0) out += ((1.0 - m.eta[i]) * dt) * (m.c[i] * rho * m.c[i].adjoint());
  for (const auto& l : m.L) out += dt * (l * rho * l.adjoint());
  const double tr = out.trace().real();
  check_trace(tr);
  rho = out / tr;
  hermitize(rho);
}

template <class Mat>
void kraus_step(const DenseModel<Mat>& m, const Mat& h, Mat& rho, const double* dW, double* dr, double dt) {
  record_increments(m, rho, dW, dr, dt);
  kraus_update(m, h, rho, dr, dt);
}

/// Euler-Maruyama step. Returns the pre-normalization trace defect.
template <class Mat>
double ito_step(const DenseModel<Mat>& m, const Mat& h, Mat& rho, const double* dW, double* dr, double dt) {
  record_increments(m, rho, dW, dr, dt);
  Mat out = rho + dt * lindblad_rhs(m, h, rho);
  for (std::size_t i = 0; i < m.channels(); ++i)
    if (m.eta[i] > 0.0) out += (std::sqrt(m.eta[i]) * dW[i]) * innovation(m.ce[i], rho);
  const double tr = out.trace().real();
  check_trace(tr);
  const double defect = std::abs(tr - 1.0);
  if (defect > 0.01) fail(ErrorCode::integration_unstable, "trace defect " + std::to_string(defect));
  rho = out / tr;
  hermitize(rho);
  return defect;
}

template <class Mat>
DensityMatrix to_density(const SpaceShape& shape, const Mat& rho) {
  return {Operator(shape, Matrix(rho)), DensityMatrix::Unchecked{}};
}

}  // namespace detail

//---------------------------------------------------------------------------//
// Single steps
//---------------------------------------------------------------------------//

/// One RK4 step of the unconditioned master equation at time t.
inline DensityMatrix lindblad_step(const LindbladModel& model, const DensityMatrix& rho, double dt, double t = 0.0) {
  model.H.check_same(rho.op());
  auto d = detail::compile<Matrix>(model);
  check_step(d.rate, dt);
  Matrix r = rho.matrix();
  detail::rk4_step(d, d.hamiltonian(t), r, dt);
  return detail::to_density(rho.shape(), r);
}

/// One explicit Euler step of the unconditioned master equation.
inline DensityMatrix lindblad_euler_step(const LindbladModel& model, const DensityMatrix& rho, double dt, double t = 0.0) {
  model.H.check_same(rho.op());
  auto d = detail::compile<Matrix>(model);
  check_step(d.rate, dt);
  Matrix r = rho.matrix() + dt * detail::lindblad_rhs(d, d.hamiltonian(t), rho.matrix());
  return detail::to_density(rho.shape(), r);
}

struct ItoStep {
  DensityMatrix state;
  double trace_defect = 0.0;
};

inline void require_increments(const LindbladModel& model, std::span<const double> dW) {
  require(dW.size() == model.channels.size(), ErrorCode::shape,
          "expected " + std::to_string(model.channels.size()) + " increments, got " + std::to_string(dW.size()));
}

/// Euler-Maruyama step of the diffusive SME; the state is renormalized and the
/// trace defect before renormalization is reported.
inline ItoStep sme_step_ito(const LindbladModel& model, const DensityMatrix& rho, std::span<const double> dW, double dt,
                            double t = 0.0) {
  model.H.check_same(rho.op());
  require_increments(model, dW);
  auto d = detail::compile<Matrix>(model);
  check_step(d.rate, dt);
  Matrix r = rho.matrix();
  std::vector<double> dr(dW.size());
  const double defect = detail::ito_step(d, d.hamiltonian(t), r, dW.data(), dr.data(), dt);
  return {detail::to_density(rho.shape(), r), defect};
}

/// Positivity-preserving normalized Kraus step of the diffusive SME.
inline DensityMatrix sme_step_kraus(const LindbladModel& model, const DensityMatrix& rho, std::span<const double> dW,
                                    double dt, double t = 0.0) {
  model.H.check_same(rho.op());
  require_increments(model, dW);
  auto d = detail::compile<Matrix>(model);
  check_step(d.rate, dt);
  Matrix r = rho.matrix();
  std::vector<double> dr(dW.size());
  detail::kraus_step(d, d.hamiltonian(t), r, dW.data(), dr.data(), dt);
  return detail::to_density(rho.shape(), r);
}

/// Qubit SME with both the informational (cos phi) and phase back-action
/// (sin phi) terms: sqrt(eta Gamma_D/2)(cos phi H[sz] + i sin phi [sz, .]) dW
/// plus dephasing (Gamma_D/2) D[sz].
inline DensityMatrix sme_step_phase(const DensityMatrix& rho, double gamma_d, double eta, double phi, double dW,
                                    double dt) {
  require(rho.shape() == SpaceShape::qubit(), ErrorCode::shape, "sme_step_phase needs a qubit state");
  const LindbladModel model = measured_model(Operator::zero(SpaceShape::qubit()), qubit_z_channel(gamma_d, eta, phi));
  const double inc[1] = {dW};
  return sme_step_ito(model, rho, inc, dt).state;
}

//---------------------------------------------------------------------------//
// Records and discrete updates
//---------------------------------------------------------------------------//

/// Scale between a record increment and the reported value V = dr / scale.
inline double record_scale(const MeasurementChannel& ch, double dt) {
  require(ch.eta > 0.0, ErrorCode::record_undefined, "channel with eta = 0 carries no record");
  const double n = spectral_norm(ch.c.matrix());
  require(n > 0.0, ErrorCode::record_undefined, "channel with zero collapse operator carries no record");
  return 2.0 * std::sqrt(ch.eta) * n * dt;
}

/// V with V dt = sqrt(eta) <c e^{i phi} + h.c.> dt / (2 sqrt(eta)|c|) + dW / (2 sqrt(eta)|c|).
inline double generate_record(const DensityMatrix& rho, const MeasurementChannel& ch, double dW, double dt) {
  ch.c.check_same(rho.op());
  require(dt > 0.0, ErrorCode::invalid_argument, "dt must be positive");
  const double scale = record_scale(ch, dt);
  const Complex e = std::polar(1.0, ch.phi);
  const double mean = 2.0 * (e * expectation(ch.c, rho)).real();
  return (std::sqrt(ch.eta) * mean * dt + dW) / scale;
}

/// Weak-measurement Kraus update for the qubit record V:
/// Omega = exp[-(eta Gamma_D / 2)(V - sz)^2 dt]; for eta < 1 the coherences
/// additionally decay by exp(-(1 - eta) Gamma_D dt).
inline DensityMatrix povm_update(const DensityMatrix& rho, double V, double dt, double gamma_d, double eta = 1.0) {
  require(rho.shape() == SpaceShape::qubit(), ErrorCode::shape, "povm_update needs a qubit state");
  require(dt > 0.0 && gamma_d >= 0.0 && eta > 0.0 && eta <= 1.0, ErrorCode::invalid_argument,
          "povm_update needs dt > 0, Gamma_D >= 0, 0 < eta <= 1");
  const double g = eta * gamma_d;
  const double we = std::exp(-0.5 * g * (V - 1.0) * (V - 1.0) * dt);
  const double wg = std::exp(-0.5 * g * (V + 1.0) * (V + 1.0) * dt);
  Matrix out = rho.matrix();
  out(0, 0) *= we * we;
  out(1, 1) *= wg * wg;
  const double damp = std::exp(-(1.0 - eta) * gamma_d * dt);
  out(0, 1) *= we * wg * damp;
  out(1, 0) *= we * wg * damp;
  const double tr = out.trace().real();
  require(tr >= 1e-300, ErrorCode::underflow, "POVM outcome has vanishing probability");
  out /= tr;
  return {Operator(rho.shape(), out), DensityMatrix::Unchecked{}};
}

/// Bayes rule with Gaussian likelihoods of mean +1 / -1 and the given variance.
inline std::pair<double, double> bayesian_update_variance(std::pair<double, double> priors, double v_bar,
                                                          double variance) {
  require(variance > 0.0, ErrorCode::invalid_argument, "variance must be positive");
  const double le = std::exp(-(v_bar - 1.0) * (v_bar - 1.0) / (2.0 * variance));
  const double lg = std::exp(-(v_bar + 1.0) * (v_bar + 1.0) / (2.0 * variance));
  const double pe = priors.first * le, pg = priors.second * lg;
  const double z = pe + pg;
  require(z > 0.0 && std::isfinite(z), ErrorCode::underflow, "posterior normalization vanished");
  return {pe / z, pg / z};
}

/// Bayes rule for a time-averaged record with Gaussian likelihoods of mean
/// +1 (excited) / -1 (ground) and variance 1 / (2 eta Gamma_D t).
inline std::pair<double, double> bayesian_update(std::pair<double, double> priors, double v_bar, double t, double eta,
                                                 double gamma_d) {
  require(priors.first >= 0.0 && priors.second >= 0.0 && std::abs(priors.first + priors.second - 1.0) <= 1e-9,
          ErrorCode::invalid_argument, "priors must be a probability pair");
  require(t > 0.0 && eta > 0.0 && gamma_d > 0.0, ErrorCode::invalid_argument,
          "bayesian_update needs t, eta, Gamma_D > 0");
  return bayesian_update_variance(priors, v_bar, 1.0 / (2.0 * eta * gamma_d * t));
}

//---------------------------------------------------------------------------//
// Trajectories
//---------------------------------------------------------------------------//

struct TrajectoryOptions {
  std::size_t thinning = 10;  // store the state every k steps
  bool keep_records = true;   // full-rate records, increments and controller log
  Integrator integrator = Integrator::kraus;
};

struct TrajectoryRecord {
  // Full-rate sequences; entry k belongs to the step ending at times[k].
  std::vector<double> times;
  std::vector<std::vector<double>> records;     // [channel][k], V values (NaN for eta = 0)
  std::vector<std::vector<double>> increments;  // [channel][k], dW
  std::vector<std::vector<double>> controller_log;
  // Thinned state samples, starting with the initial state at t = 0.
  std::vector<double> state_times;
  std::vector<DensityMatrix> states;
  // Seed provenance.
  std::uint64_t master_seed = 0;
  std::uint64_t trajectory_index = 0;
  std::uint64_t key = 0;
};

/// View handed to a controller after the measurement update of a step.
struct ControlContext {
  std::size_t step = 0;
  double t = 0.0;  // end of the step
  double dt = 0.0;
  std::span<const double> dr;  // record increments
  std::span<const double> dW;
};

/// Feedback hook invoked after each measurement update; may modify the state
/// and append logged outputs.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual void on_measurement(const ControlContext& ctx, Matrix& rho, std::vector<double>& outputs) = 0;
};

namespace detail {

template <class Mat>
struct StepContext {
  std::size_t step;
  double t;
  double dt;
  Mat& rho;
  DenseModel<Mat>& model;
  std::span<const double> dr;
  std::span<const double> dW;
  std::vector<double>& outputs;
  bool model_changed = false;
};

struct NoHook {
  template <class Ctx>
  void operator()(Ctx&) const {}
};

inline std::size_t step_count(double duration, double dt) {
  require(dt > 0.0 && duration >= 0.0 && std::isfinite(duration), ErrorCode::invalid_argument,
          "need dt > 0 and duration >= 0");
  const double n = std::round(duration / dt);
  require(n <= 1e7, ErrorCode::invalid_argument, "more than 1e7 steps requested");
  require(std::abs(n * dt - duration) <= 1e-9 * std::max(1.0, duration), ErrorCode::misaligned_grid,
          "duration is not a multiple of dt");
  return static_cast<std::size_t>(n);
}

/// Core trajectory loop. The hook sees every step after the measurement
/// update and may change the state or the model (setting model_changed).
template <class Mat, class Hook>
TrajectoryRecord run_trajectory(DenseModel<Mat> model, Mat rho, const SpaceShape& shape, double duration, double dt,
                                const WienerStream& stream, const TrajectoryOptions& opt, Hook&& hook) {
  const std::size_t n = step_count(duration, dt);
  require(opt.thinning >= 1, ErrorCode::invalid_argument, "thinning must be >= 1");
  check_step(model.rate, dt);
  const std::size_t nc = model.channels();

  TrajectoryRecord rec;
  rec.master_seed = stream.master_seed();
  rec.trajectory_index = stream.trajectory_index();
  rec.key = stream.key();
  rec.state_times.reserve(n / opt.thinning + 1);
  rec.states.reserve(n / opt.thinning + 1);
  rec.state_times.push_back(0.0);
  rec.states.push_back(to_density(shape, rho));
  if (opt.keep_records) {
    rec.times.reserve(n);
    rec.records.assign(nc, {});
    rec.increments.assign(nc, {});
    for (std::size_t i = 0; i < nc; ++i) {
      rec.records[i].reserve(n);
      rec.increments[i].reserve(n);
    }
  }

  std::vector<double> dW(nc), dr(nc), outputs;
  const bool static_h = model.seg_H.empty();
  Mat h = model.H;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * dt;
    try {
      if (!static_h) h = model.hamiltonian(t);
      for (std::size_t i = 0; i < nc; ++i) dW[i] = stream.increment(k, static_cast<std::uint32_t>(i), dt);
      if (opt.integrator == Integrator::kraus)
        kraus_step(model, h, rho, dW.data(), dr.data(), dt);
      else
        ito_step(model, h, rho, dW.data(), dr.data(), dt);
      outputs.clear();
      StepContext<Mat> ctx{k, t + dt, dt, rho, model, dr, dW, outputs};
      hook(ctx);
      if (ctx.model_changed) {
        model.refresh();
        if (static_h) h = model.H;
        check_step(model.rate, dt);
      }
      if (!rho.allFinite()) fail(ErrorCode::integration_unstable, "non-finite state");
    } catch (const StepError&) {
      throw;
    } catch (const Error& e) {
      throw StepError(e.code(), k, e.what());
    }
    if (opt.keep_records) {
      rec.times.push_back(t + dt);
      for (std::size_t i = 0; i < nc; ++i) {
        const double scale = 2.0 * std::sqrt(model.eta[i]) * model.cnorm[i] * dt;
        rec.records[i].push_back(model.eta[i] > 0.0 && scale > 0.0 ? dr[i] / scale
                                                                   : std::numeric_limits<double>::quiet_NaN());
        rec.increments[i].push_back(dW[i]);
      }
      rec.controller_log.push_back(outputs);
    }
    if ((k + 1) % opt.thinning == 0) {
      rec.state_times.push_back(t + dt);
      rec.states.push_back(to_density(shape, rho));
    }
  }
  return rec;
}

template <class Hook>
TrajectoryRecord dispatch_trajectory(const LindbladModel& model, const DensityMatrix& rho0, double duration, double dt,
                                     const WienerStream& stream, const TrajectoryOptions& opt, Hook&& hook) {
  model.H.check_same(rho0.op());
  const auto n = rho0.dim();
  if (n == 2)
    return run_trajectory(compile<Eigen::Matrix2cd>(model), Eigen::Matrix2cd(rho0.matrix()), rho0.shape(), duration,
                          dt, stream, opt, hook);
  if (n == 4)
    return run_trajectory(compile<Eigen::Matrix4cd>(model), Eigen::Matrix4cd(rho0.matrix()), rho0.shape(), duration,
                          dt, stream, opt, hook);
  return run_trajectory(compile<Matrix>(model), Matrix(rho0.matrix()), rho0.shape(), duration, dt, stream, opt, hook);
}

}  // namespace detail

/// Integrates one conditioned trajectory. Deterministic in (model, rho0,
/// stream, controller).
inline TrajectoryRecord simulate_trajectory(const LindbladModel& model, const DensityMatrix& rho0, double duration,
                                            double dt, const WienerStream& stream, Controller* controller = nullptr,
                                            const TrajectoryOptions& opt = {}) {
  if (!controller) return detail::dispatch_trajectory(model, rho0, duration, dt, stream, opt, detail::NoHook{});
  model.H.check_same(rho0.op());
  return detail::run_trajectory(detail::compile<Matrix>(model), Matrix(rho0.matrix()), rho0.shape(), duration, dt,
                                stream, opt, [controller](detail::StepContext<Matrix>& ctx) {
                                  const ControlContext c{ctx.step, ctx.t, ctx.dt, ctx.dr, ctx.dW};
                                  controller->on_measurement(c, ctx.rho, ctx.outputs);
                                });
}

/// Runs n trajectories with trajectory indices 0..n-1 on `jobs` threads.
inline std::vector<TrajectoryRecord> simulate_ensemble(const LindbladModel& model, const DensityMatrix& rho0,
                                                       double duration, double dt, std::uint64_t master_seed,
                                                       std::size_t n, unsigned jobs = 1,
                                                       const TrajectoryOptions& opt = {}) {
  std::vector<TrajectoryRecord> out(n);
  parallel_for(n, jobs, [&](std::size_t i) {
    out[i] = simulate_trajectory(model, rho0, duration, dt, WienerStream(master_seed, i), nullptr, opt);
  });
  return out;
}

/// Pointwise mean of the stored states, summed in index order.
inline std::vector<DensityMatrix> ensemble_average(std::span<const TrajectoryRecord> records) {
  require(!records.empty(), ErrorCode::invalid_argument, "ensemble_average needs at least one record");
  const auto& grid = records.front().state_times;
  for (const auto& r : records) {
    require(r.state_times == grid, ErrorCode::misaligned_grid, "records have different time grids");
    require(r.states.size() == grid.size(), ErrorCode::misaligned_grid, "record state count mismatch");
  }
  std::vector<DensityMatrix> out;
  out.reserve(grid.size());
  const double w = 1.0 / static_cast<double>(records.size());
  for (std::size_t k = 0; k < grid.size(); ++k) {
    Matrix sum = Matrix::Zero(records.front().states[k].dim(), records.front().states[k].dim());
    for (const auto& r : records) sum += r.states[k].matrix();
    sum *= w;
    out.emplace_back(Operator(records.front().states[k].shape(), sum));
  }
  return out;
}

//---------------------------------------------------------------------------//
// Deterministic evolution
//---------------------------------------------------------------------------//

struct StateSeries {
  std::vector<double> times;
  std::vector<DensityMatrix> states;
};

/// RK4 integration of the master equation, sampled every `thinning` steps.
inline StateSeries integrate_lindblad(const LindbladModel& model, const DensityMatrix& rho0, double duration,
                                      double dt, std::size_t thinning = 1) {
  model.H.check_same(rho0.op());
  require(thinning >= 1, ErrorCode::invalid_argument, "thinning must be >= 1");
  const std::size_t n = detail::step_count(duration, dt);
  auto d = detail::compile<Matrix>(model);
  check_step(d.rate, dt);
  Matrix r = rho0.matrix();
  StateSeries out;
  out.times.push_back(0.0);
  out.states.push_back(rho0);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * dt;
    detail::rk4_step(d, d.hamiltonian(t), r, dt);
    detail::hermitize(r);
    if ((k + 1) % thinning == 0) {
      out.times.push_back(t + dt);
      out.states.push_back(detail::to_density(rho0.shape(), r));
    }
  }
  return out;
}

/// Liouvillian of a time-independent model acting on column-major vec(rho):
/// vec(A rho B) = (B^T kron A) vec(rho).
inline Matrix liouvillian(const LindbladModel& model) {
  model.validate();
  require(model.schedule.empty(), ErrorCode::invalid_argument, "liouvillian needs a time-independent model");
  const auto n = model.H.dim();
  const Matrix id = Matrix::Identity(n, n);
  Matrix l = -kI * (kron(id, model.H.matrix()) - kron(model.H.matrix().transpose(), id));
  auto add = [&](const Matrix& c) {
    const Matrix cdc = c.adjoint() * c;
    l += kron(c.conjugate(), c) - 0.5 * kron(id, cdc) - 0.5 * kron(cdc.transpose(), id);
  };
  for (const auto& ch : model.channels) add(ch.c.matrix());
  for (const auto& op : model.unmonitored) add(op.matrix());
  return l;
}

/// Exact propagator exp(L dt) for a time-independent model.
class LindbladPropagator {
 public:
  LindbladPropagator(const LindbladModel& model, double dt) : shape_(model.shape()) {
    require(dt > 0.0, ErrorCode::invalid_argument, "dt must be positive");
    require(model.H.dim() <= 64, ErrorCode::shape, "propagator limited to dimension 64");
    prop_ = (liouvillian(model) * dt).exp();
  }

  [[nodiscard]] DensityMatrix apply(const DensityMatrix& rho) const {
    require(rho.shape() == shape_, ErrorCode::shape, "propagator shape mismatch");
    const auto n = rho.dim();
    Vector v = Eigen::Map<const Vector>(rho.matrix().data(), n * n);
    Vector w = prop_ * v;
    Matrix out = Eigen::Map<const Matrix>(w.data(), n, n);
    detail::hermitize(out);
    out /= out.trace().real();
    return {Operator(shape_, out), DensityMatrix::Unchecked{}};
  }

  [[nodiscard]] const Matrix& matrix() const { return prop_; }

 private:
  SpaceShape shape_;
  Matrix prop_;
};

/// Samples exp(L t) rho0 at t = k dt for k = 0..steps.
inline StateSeries propagate(const LindbladModel& model, const DensityMatrix& rho0, double dt, std::size_t steps) {
  const LindbladPropagator p(model, dt);
  StateSeries out;
  out.times.push_back(0.0);
  out.states.push_back(rho0);
  for (std::size_t k = 1; k <= steps; ++k) {
    out.times.push_back(static_cast<double>(k) * dt);
    out.states.push_back(p.apply(out.states.back()));
  }
  return out;
}

}  // namespace qtraj
