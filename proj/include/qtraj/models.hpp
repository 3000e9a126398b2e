#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "qtraj/error.hpp"
#include "qtraj/hilbert.hpp"
#include "qtraj/sme.hpp"

// Circuit-QED model library. Frequencies and rates are angular (rad/us),
// composite spaces put the qubit before the cavity.
namespace qtraj {

//---------------------------------------------------------------------------//
// Transmon
//---------------------------------------------------------------------------//

namespace detail {
inline Operator hermitian_part(const Operator& h) { return 0.5 * (h + h.dagger()); }
}  // namespace detail

inline constexpr double kTwoLevel = std::numeric_limits<double>::infinity();

struct TransmonParams {
  double E_J = 0.0;
  double E_C = 0.0;
  double g = 0.0;
  double Delta = 0.0;
  double U = kTwoLevel;

  /// False below E_J/E_C = 20, where the transmon approximations degrade.
  [[nodiscard]] bool transmon_regime() const { return E_C > 0.0 && E_J / E_C >= 20.0; }
};

inline double transmon_frequency(double E_J, double E_C) {
  require(E_J > 0.0 && E_C > 0.0, ErrorCode::invalid_argument, "E_J and E_C must be positive");
  return std::sqrt(8.0 * E_J * E_C);
}

/// chi = g^2/Delta * U/(U + Delta). U = kTwoLevel gives the two-level limit
/// g^2/Delta. U is signed; transmons have U < 0.
inline double dispersive_chi(double g, double Delta, double U = kTwoLevel) {
  require(Delta != 0.0, ErrorCode::invalid_argument, "dispersive shift needs a nonzero detuning");
  require(std::isfinite(g), ErrorCode::invalid_argument, "coupling must be finite");
  if (std::isinf(U)) return g * g / Delta;
  require(!std::isnan(U), ErrorCode::invalid_argument, "anharmonicity is NaN");
  if (U + Delta == 0.0)
    fail(ErrorCode::straddling_resonance, "U + Delta = 0: qubit straddles the second transition");
  return g * g / Delta * (U / (U + Delta));
}

inline double dispersive_chi(const TransmonParams& p) { return dispersive_chi(p.g, p.Delta, p.U); }

//---------------------------------------------------------------------------//
// Qubit-cavity Hamiltonians
//---------------------------------------------------------------------------//

inline SpaceShape qubit_cavity_shape(int n_max) { return SpaceShape{2, fock_shape(n_max).dim(0)}; }

/// Jaynes-Cummings: omega_cav a^dag a + omega_q/2 sz + g(a s+ + a^dag s-).
inline Operator jc_hamiltonian(double g, double omega_cav, double omega_q, int n_max) {
  const Operator a = annihilation(n_max), n = number_operator(n_max);
  const Operator i2 = Operator::identity(SpaceShape::qubit());
  const Operator ic = Operator::identity(fock_shape(n_max));
  return detail::hermitian_part(omega_cav * tensor({i2, n}) + (0.5 * omega_q) * tensor({sigma_z(), ic}) +
                                g * (tensor({pauli(PauliAxis::plus), a}) + tensor({pauli(PauliAxis::minus), a.dagger()})));
}

struct DispersiveParams {
  double omega_cav = 0.0;
  double omega_q = 0.0;
  double chi = 0.0;
  double kappa = 1.0;
  double epsilon = 0.0;
};

/// omega_cav a^dag a + omega_q/2 sz + chi a^dag a sz.
inline Operator dispersive_hamiltonian(const DispersiveParams& p, int n_max) {
  const Operator n = number_operator(n_max);
  const Operator i2 = Operator::identity(SpaceShape::qubit());
  const Operator ic = Operator::identity(fock_shape(n_max));
  return p.omega_cav * tensor({i2, n}) + (0.5 * p.omega_q) * tensor({sigma_z(), ic}) + p.chi * tensor({sigma_z(), n});
}

/// alpha* a + alpha a^dag on a single cavity.
inline Operator drive_hamiltonian(Complex alpha, int n_max) {
  const Operator a = annihilation(n_max);
  return std::conj(alpha) * a + alpha * a.dagger();
}

/// Drive on factor `index` of a composite space whose factor is a cavity.
inline Operator drive_hamiltonian(Complex alpha, const SpaceShape& shape, std::size_t index) {
  require(index < shape.factors(), ErrorCode::shape, "drive target index out of range");
  return embed(drive_hamiltonian(alpha, shape.dim(index) - 1), shape, index);
}

/// Piecewise-constant schedule for a time-dependent drive alpha(t), sampled at
/// segment midpoints on [0, t_end).
inline std::vector<HamiltonianSegment> drive_schedule(const std::function<Complex(double)>& alpha,
                                                      const SpaceShape& shape, std::size_t index, double t_end,
                                                      double segment) {
  require(segment > 0.0 && t_end >= 0.0, ErrorCode::invalid_argument, "bad drive schedule grid");
  std::vector<HamiltonianSegment> out;
  const auto n = static_cast<std::size_t>(std::ceil(t_end / segment - 1e-9));
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double t0 = static_cast<double>(k) * segment;
    const double t1 = std::min(t_end, t0 + segment);
    out.push_back({t0, t1, drive_hamiltonian(alpha(0.5 * (t0 + t1)), shape, index)});
  }
  return out;
}

//---------------------------------------------------------------------------//
// Readout
//---------------------------------------------------------------------------//

struct PointerStates {
  Complex alpha_g;
  Complex alpha_e;
  Complex b_out_g;
  Complex b_out_e;
};

/// Steady-state intracavity and reflected amplitudes for a resonant input
/// epsilon: alpha = sqrt(kappa) eps / (+-i chi - kappa/2), + for g.
inline PointerStates pointer_states(const DispersiveParams& p) {
  require(p.kappa > 0.0, ErrorCode::invalid_argument, "kappa must be positive");
  const Complex dg{-0.5 * p.kappa, p.chi}, de{-0.5 * p.kappa, -p.chi};
  const double sk = std::sqrt(p.kappa);
  return {sk * p.epsilon / dg, sk * p.epsilon / de, p.epsilon * (1.0 + p.kappa / dg),
          p.epsilon * (1.0 + p.kappa / de)};
}

/// Gamma_D = 2 chi Im(alpha_g alpha_e*).
inline double dephasing_rate(Complex alpha_g, Complex alpha_e, double chi) {
  return 2.0 * chi * (alpha_g * std::conj(alpha_e)).imag();
}

//---------------------------------------------------------------------------//
// Amplification
//---------------------------------------------------------------------------//

struct QuadratureGains {
  double squeezed;   // I_phi
  double amplified;  // Q_phi
};

inline QuadratureGains jpa_quadrature_map(double r, double phi) {
  require(std::isfinite(r) && r >= 0.0, ErrorCode::invalid_argument, "squeezing magnitude must be >= 0");
  require(std::isfinite(phi), ErrorCode::invalid_argument, "squeezing angle must be finite");
  return {std::exp(-r), std::exp(r)};
}

/// S(z) = exp[(z* a^2 - z a^dag^2)/2], truncated.
inline Operator squeezing_operator(Complex z, int n_max) {
  const Matrix a = annihilation(n_max).matrix();
  const Matrix a2 = a * a;
  return Operator(fock_shape(n_max), expm(0.5 * (std::conj(z) * a2 - z * a2.adjoint())));
}

/// I_phi = a e^{-i phi/2} + a^dag e^{i phi/2}.
inline Operator quadrature_i(double phi, int n_max) {
  const Operator a = annihilation(n_max);
  return std::polar(1.0, -0.5 * phi) * a + std::polar(1.0, 0.5 * phi) * a.dagger();
}

/// Q_phi = (a e^{-i phi/2} - a^dag e^{i phi/2}) / i.
inline Operator quadrature_q(double phi, int n_max) {
  const Operator a = annihilation(n_max);
  return (-kI) * (std::polar(1.0, -0.5 * phi) * a - std::polar(1.0, 0.5 * phi) * a.dagger());
}

struct JPAParams {
  double lambda = 0.0;
  double kappa = 1.0;
  double phi = 0.0;
  double eta = 1.0;
  double Delta = 0.0;
};

struct JPAGains {
  Complex G_S;
  Complex G_I;
};

inline JPAGains jpa_gain(const JPAParams& p) {
  require(p.kappa > 0.0, ErrorCode::invalid_argument, "kappa must be positive");
  require(p.eta >= 0.0 && p.eta <= 1.0, ErrorCode::invalid_argument, "efficiency must lie in [0, 1]");
  if (std::abs(p.lambda) >= 0.5 * p.kappa) fail(ErrorCode::above_threshold, "|lambda| >= kappa/2: amplifier above threshold");
  const double l2 = p.lambda * p.lambda;
  const Complex den = std::pow(Complex{0.5 * p.kappa, -p.Delta}, 2) - l2;
  const Complex gs = (0.25 * p.kappa * p.kappa + p.Delta * p.Delta + l2) / den;
  const double excess = std::max(0.0, std::norm(gs) - 1.0);
  return {gs, kI * std::polar(1.0, std::arg(gs)) * std::sqrt(excess)};
}

//---------------------------------------------------------------------------//
// Measurement operators
//---------------------------------------------------------------------------//

/// sqrt(Gamma/2) (sz x I + I x sz) / 2.
inline Operator half_parity_operator(double gamma) {
  require(gamma > 0.0, ErrorCode::invalid_argument, "measurement rate must be positive");
  const Operator i2 = Operator::identity(SpaceShape::qubit());
  return (0.5 * std::sqrt(0.5 * gamma)) * (tensor({sigma_z(), i2}) + tensor({i2, sigma_z()}));
}

/// sx cos(delta) + sy sin(delta).
inline Operator sigma_delta(double delta) {
  return std::cos(delta) * sigma_x() + std::sin(delta) * sigma_y();
}

/// Dressed states (|e> +- i|g>)/sqrt2 of a strongly Rabi-driven qubit.
inline PureState dressed_plus() { return PureState::normalized(SpaceShape::qubit(), Vector{{1.0, kI}}); }
inline PureState dressed_minus() { return PureState::normalized(SpaceShape::qubit(), Vector{{1.0, -kI}}); }

/// |+><-|; annihilates the dark state |+>.
inline Operator dressed_lowering() {
  return Operator(SpaceShape::qubit(), dressed_plus().amplitudes() * dressed_minus().amplitudes().adjoint());
}

enum class SidebandMode { cooling, double_sided };

struct SidebandConfig {
  double abar0 = 0.0;
  double delta = 0.0;
  double chi = 0.0;
  double kappa = 1.0;
  SidebandMode mode = SidebandMode::double_sided;
};

/// Cooling: (chi abar0/2)(a s^dag e^{i delta} + h.c.) with s the dressed
/// lowering operator. Double: (chi abar0/2)(a + a^dag) sigma_delta.
inline Operator sideband_hamiltonian(const SidebandConfig& cfg, int n_max) {
  require(cfg.abar0 >= 0.0, ErrorCode::invalid_argument, "sideband amplitude must be >= 0");
  const Operator a = annihilation(n_max);
  const double k = 0.5 * cfg.chi * cfg.abar0;
  switch (cfg.mode) {
    case SidebandMode::cooling: {
      const Operator s = dressed_lowering();
      const Operator h = std::polar(1.0, cfg.delta) * tensor({s.dagger(), a});
      return k * (h + h.dagger());
    }
    case SidebandMode::double_sided:
      return k * tensor({sigma_delta(cfg.delta), a + a.dagger()});
  }
  fail(ErrorCode::invalid_argument, "unknown sideband mode");
}

/// Gamma_D eta = 2 chi^2 abar0^2 eta / kappa.
inline double engineered_measurement_rate(const SidebandConfig& cfg, double eta) {
  require(cfg.kappa > 0.0, ErrorCode::invalid_argument, "kappa must be positive");
  require(eta >= 0.0 && eta <= 1.0, ErrorCode::invalid_argument, "efficiency must lie in [0, 1]");
  return 2.0 * cfg.chi * cfg.chi * cfg.abar0 * cfg.abar0 * eta / cfg.kappa;
}

//---------------------------------------------------------------------------//
// Cat states
//---------------------------------------------------------------------------//

struct KerrCatParams {
  double K = 1.0;
  Complex eps2 = 0.0;
  Complex g2 = 0.0;
  Complex eps_d = 0.0;
  double chi_ms = 0.0;
  double chi_mm = 0.0;
  double chi_rr = 0.0;
  double kappa_r = 0.0;

  [[nodiscard]] Complex alpha() const {
    require(K > 0.0, ErrorCode::invalid_argument, "Kerr coefficient must be positive");
    return std::sqrt(eps2 / K);
  }
};

/// -K a^dag^2 a^2 + eps a^dag^2 + eps* a^2; ground states |+-alpha>.
inline Operator kerr_cat_hamiltonian(double K, Complex eps2, int n_max) {
  require(K > 0.0, ErrorCode::invalid_argument, "Kerr coefficient must be positive");
  require_truncation(std::sqrt(eps2 / K), n_max);
  const Operator a = annihilation(n_max);
  const Operator a2 = a * a, ad2 = a2.dagger();
  return detail::hermitian_part((-K) * (ad2 * a2) + eps2 * ad2 + std::conj(eps2) * a2);
}

inline Operator kerr_cat_hamiltonian(const KerrCatParams& p, int n_max) {
  return kerr_cat_hamiltonian(p.K, p.eps2, n_max);
}

/// Two-mode pumped Hamiltonian on [memory, fast mode]; higher-order rotation
/// terms are omitted.
inline Operator two_mode_pump_hamiltonian(const KerrCatParams& p, int n_max_m, int n_max_r) {
  const SpaceShape shape{fock_shape(n_max_m).dim(0), fock_shape(n_max_r).dim(0)};
  const Operator am = embed(annihilation(n_max_m), shape, 0);
  const Operator ar = embed(annihilation(n_max_r), shape, 1);
  const Operator amd = am.dagger(), ard = ar.dagger();
  return detail::hermitian_part(std::conj(p.g2) * (am * am * ard) + p.g2 * (amd * amd * ar) +
                                std::conj(p.eps_d) * ar + p.eps_d * ard - p.chi_ms * (amd * am * ard * ar) -
                                p.chi_mm * (amd * amd * am * am) - p.chi_rr * (ard * ard * ar * ar));
}

/// Full two-mode model with fast-mode decay sqrt(kappa_r) a_r.
inline LindbladModel two_mode_pump_model(const KerrCatParams& p, int n_max_m, int n_max_r) {
  require(p.kappa_r > 0.0, ErrorCode::invalid_argument, "kappa_r must be positive");
  LindbladModel m;
  m.H = two_mode_pump_hamiltonian(p, n_max_m, n_max_r);
  m.unmonitored.push_back(std::sqrt(p.kappa_r) * embed(annihilation(n_max_r), m.H.shape(), 1));
  return m;
}

struct EliminationResult {
  double kappa2 = 0.0;   // two-photon dissipation rate
  Complex alpha_sq = 0;  // -eps_d / g2*; fixed points +-alpha
  bool regime_ok = true;  // kappa_r >= 10 |g2|
};

/// Eliminating the fast mode gives the collapse operator sqrt(kappa2)(a^2 - alpha^2)
/// with kappa2 = 4|g2|^2/kappa_r.
inline EliminationResult adiabatic_elimination(const KerrCatParams& p) {
  require(p.kappa_r > 0.0, ErrorCode::invalid_argument, "kappa_r must be positive");
  EliminationResult r;
  r.kappa2 = 4.0 * std::norm(p.g2) / p.kappa_r;
  r.alpha_sq = std::abs(p.g2) > 0.0 ? -p.eps_d / std::conj(p.g2) : Complex{0.0};
  r.regime_ok = p.kappa_r >= 10.0 * std::abs(p.g2);
  return r;
}

/// Memory-mode model after elimination: H = -chi_mm a^dag^2 a^2 and the
/// two-photon collapse operator.
inline LindbladModel reduced_memory_model(const KerrCatParams& p, int n_max) {
  const EliminationResult e = adiabatic_elimination(p);
  const Operator a = annihilation(n_max);
  const Operator a2 = a * a;
  LindbladModel m;
  m.H = detail::hermitian_part((-p.chi_mm) * (a2.dagger() * a2));
  m.unmonitored.push_back(std::sqrt(e.kappa2) * (a2 - e.alpha_sq * Operator::identity(a.shape())));
  return m;
}

//---------------------------------------------------------------------------//
// Phase
//---------------------------------------------------------------------------//

/// p(phi) = <phi|rho|phi>, |phi> = (2 pi)^{-1/2} sum_n e^{i phi n}|n>.
inline std::vector<double> canonical_phase_distribution(const DensityMatrix& rho, std::span<const double> grid) {
  require(!grid.empty(), ErrorCode::invalid_argument, "phase grid is empty");
  require(rho.shape().factors() == 1, ErrorCode::shape, "canonical phase needs a single Fock-space state");
  const Eigen::Index n = rho.dim();
  const Matrix& r = rho.matrix();
  std::vector<double> out;
  out.reserve(grid.size());
  Vector v(n);
  for (double phi : grid) {
    for (Eigen::Index k = 0; k < n; ++k) v(k) = std::polar(1.0, phi * static_cast<double>(k));
    out.push_back(v.dot(r * v).real() / (2.0 * std::numbers::pi));
  }
  return out;
}

inline std::vector<double> canonical_phase_distribution(const PureState& psi, std::span<const double> grid) {
  return canonical_phase_distribution(DensityMatrix(psi), grid);
}

/// n equally spaced angles on [-pi, pi).
inline std::vector<double> phase_grid(std::size_t n) {
  require(n > 0, ErrorCode::invalid_argument, "phase grid is empty");
  std::vector<double> g(n);
  for (std::size_t k = 0; k < n; ++k)
    g[k] = -std::numbers::pi + 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
  return g;
}

}  // namespace qtraj
