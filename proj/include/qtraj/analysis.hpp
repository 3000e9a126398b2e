#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include <Eigen/Eigenvalues>

#include "qtraj/error.hpp"
#include "qtraj/hilbert.hpp"

namespace qtraj {

//---------------------------------------------------------------------------//
// State metrics
//---------------------------------------------------------------------------//

struct BlochVector {
  double x = 0.0, y = 0.0, z = 0.0;

  [[nodiscard]] double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

inline BlochVector bloch_vector(const DensityMatrix& rho) {
  require(rho.shape() == SpaceShape::qubit(), ErrorCode::shape, "Bloch vector needs a single qubit");
  const Matrix& r = rho.matrix();
  // sx = |e><g| + |g><e|, index 0 = e.
  return {2.0 * r(1, 0).real(), 2.0 * r(1, 0).imag(), (r(0, 0) - r(1, 1)).real()};
}

inline BlochVector bloch_vector(const PureState& psi) { return bloch_vector(DensityMatrix(psi)); }

inline double purity(const DensityMatrix& rho) { return rho.matrix().squaredNorm(); }

namespace detail {

inline Matrix psd_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (m + m.adjoint()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().adjoint();
}

}  // namespace detail

/// Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2.
inline double fidelity(const DensityMatrix& rho, const DensityMatrix& sigma) {
  rho.op().check_same(sigma.op());
  const Matrix s = detail::psd_sqrt(rho.matrix());
  const Matrix inner = s * sigma.matrix() * s;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (inner + inner.adjoint()), Eigen::EigenvaluesOnly);
  const double f = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return std::clamp(f * f, 0.0, 1.0);
}

inline double fidelity(const DensityMatrix& rho, const PureState& psi) {
  require(rho.shape() == psi.shape(), ErrorCode::shape, "shape mismatch");
  return std::clamp((psi.amplitudes().adjoint() * rho.matrix() * psi.amplitudes())(0).real(), 0.0, 1.0);
}

inline double fidelity(const PureState& a, const PureState& b) { return std::norm(a.overlap(b)); }

inline double trace_distance(const DensityMatrix& a, const DensityMatrix& b) {
  a.op().check_same(b.op());
  Eigen::SelfAdjointEigenSolver<Matrix> es(a.matrix() - b.matrix(), Eigen::EigenvaluesOnly);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

/// Wootters concurrence of a two-qubit state.
inline double concurrence(const DensityMatrix& rho) {
  require(rho.shape() == (SpaceShape{2, 2}), ErrorCode::shape, "concurrence needs two qubits");
  Matrix yy = Matrix::Zero(4, 4);
  yy(0, 3) = yy(3, 0) = -1.0;
  yy(1, 2) = yy(2, 1) = 1.0;
  const Matrix& r = rho.matrix();
  const Matrix rt = yy * r.conjugate() * yy;
  const Matrix s = detail::psd_sqrt(r);
  const Matrix inner = s * rt * s;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (inner + inner.adjoint()), Eigen::EigenvaluesOnly);
  Eigen::VectorXd l = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  std::sort(l.data(), l.data() + 4, std::greater<>());
  return std::max(0.0, l(0) - l(1) - l(2) - l(3));
}

//---------------------------------------------------------------------------//
// Wigner function
//---------------------------------------------------------------------------//

struct GridSpec {
  double re_min = -3.0, re_max = 3.0;
  double im_min = -3.0, im_max = 3.0;
  int n_re = 61, n_im = 61;

  [[nodiscard]] double re(int i) const { return n_re == 1 ? re_min : re_min + (re_max - re_min) * i / (n_re - 1); }
  [[nodiscard]] double im(int j) const { return n_im == 1 ? im_min : im_min + (im_max - im_min) * j / (n_im - 1); }
};

struct WignerGrid {
  GridSpec grid;
  Eigen::MatrixXd values;  // values(j, i) at beta = re(i) + i im(j)
  bool truncation_warning = false;

  /// Riemann sum over the grid cells.
  [[nodiscard]] double integral() const {
    const double dre = grid.n_re > 1 ? (grid.re_max - grid.re_min) / (grid.n_re - 1) : 0.0;
    const double dim = grid.n_im > 1 ? (grid.im_max - grid.im_min) / (grid.n_im - 1) : 0.0;
    return values.sum() * dre * dim;
  }
};

/// W(beta) = (2/pi) Tr[rho D(beta) P D(beta)^dag], using the closed-form
/// displaced-parity elements
///   <m|D P D^dag|n> = (-1)^n sqrt(n!/m!) (2 beta)^{m-n} e^{-2|beta|^2} L_n^{(m-n)}(4|beta|^2), m >= n.
inline double wigner_point(const DensityMatrix& rho, Complex beta) {
  require(rho.shape().factors() == 1, ErrorCode::shape, "Wigner function needs a single oscillator");
  const Matrix& r = rho.matrix();
  const int dim = static_cast<int>(r.rows());
  const double b2 = std::norm(beta), x = 4.0 * b2, g = std::exp(-2.0 * b2);
  const double lb = std::log(2.0 * std::abs(beta)), ph = std::arg(beta);
  double w = 0.0;
  for (int n = 0; n < dim; ++n) {
    for (int m = n; m < dim; ++m) {
      const int k = m - n;
      Complex e;
      if (k == 0) {
        e = (n % 2 ? -1.0 : 1.0) * g * std::assoc_laguerre(n, 0, x);
      } else {
        if (b2 == 0.0) continue;
        const double mag = std::exp(0.5 * (std::lgamma(n + 1.0) - std::lgamma(m + 1.0)) + k * lb);
        e = (n % 2 ? -1.0 : 1.0) * mag * g * std::assoc_laguerre(n, k, x) * std::polar(1.0, k * ph);
      }
      // Tr(rho X) = sum rho_nm X_mn; X_nm = conj(X_mn).
      w += k == 0 ? (r(n, n) * e).real() : 2.0 * (r(n, m) * e).real();
    }
  }
  return 2.0 / std::numbers::pi * w;
}

inline WignerGrid wigner(const DensityMatrix& rho, const GridSpec& grid) {
  require(grid.n_re >= 1 && grid.n_im >= 1, ErrorCode::invalid_argument, "empty Wigner grid");
  WignerGrid out{grid, Eigen::MatrixXd(grid.n_im, grid.n_re), false};
  for (int j = 0; j < grid.n_im; ++j)
    for (int i = 0; i < grid.n_re; ++i) out.values(j, i) = wigner_point(rho, Complex(grid.re(i), grid.im(j)));
  const double extent = std::max({std::abs(grid.re_min), std::abs(grid.re_max), std::abs(grid.im_min),
                                  std::abs(grid.im_max)});
  // Beyond sqrt(n_max + 1) + 2 the truncated basis carries no weight.
  out.truncation_warning = extent > std::sqrt(static_cast<double>(rho.dim())) + 2.0;
  return out;
}

//---------------------------------------------------------------------------//
// Ensemble statistics
//---------------------------------------------------------------------------//

struct SurvivalFit {
  double rate = 0.0;
  double rate_lo = 0.0, rate_hi = 0.0;  // 95% interval
  double intercept = 0.0;               // log S at t = 0
};

/// Least-squares fit of log S = c - r t. Survival must be positive and
/// non-increasing.
inline SurvivalFit survival_fit(std::span<const double> t, std::span<const double> s) {
  require(t.size() == s.size(), ErrorCode::invalid_argument, "times and survival differ in length");
  if (t.size() < 5) fail(ErrorCode::fit_failed, "need at least 5 survival points");
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (!(s[k] > 0.0)) fail(ErrorCode::fit_failed, "survival not positive at point " + std::to_string(k));
    if (k > 0 && s[k] > s[k - 1]) fail(ErrorCode::fit_failed, "survival not monotone at point " + std::to_string(k));
  }
  const double n = static_cast<double>(t.size());
  double mt = 0.0, my = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) mt += t[k], my += std::log(s[k]);
  mt /= n, my /= n;
  double stt = 0.0, sty = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    stt += (t[k] - mt) * (t[k] - mt);
    sty += (t[k] - mt) * (std::log(s[k]) - my);
  }
  if (!(stt > 0.0)) fail(ErrorCode::fit_failed, "degenerate time points");
  const double slope = sty / stt, c = my - slope * mt;
  double sse = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double e = std::log(s[k]) - (c + slope * t[k]);
    sse += e * e;
  }
  const double se = std::sqrt(sse / (n - 2.0) / stt);
  return {-slope, -slope - 1.96 * se, -slope + 1.96 * se, c};
}

struct PhaseErrorStats {
  Complex c1;                      // mean of e^{i(estimate - truth)}
  double mean_error = 0.0;         // arg c1
  double circular_variance = 1.0;  // 1 - |c1|
};

inline double wrap_phase(double x) { return std::remainder(x, 2.0 * std::numbers::pi); }

inline PhaseErrorStats phase_error_stats(std::span<const double> estimates, std::span<const double> truth) {
  require(estimates.size() == truth.size(), ErrorCode::invalid_argument, "estimates and truths differ in length");
  require(estimates.size() >= 100, ErrorCode::invalid_argument, "need at least 100 phase samples");
  Complex c = 0.0;
  for (std::size_t k = 0; k < estimates.size(); ++k) c += std::polar(1.0, estimates[k] - truth[k]);
  c /= static_cast<double>(estimates.size());
  return {c, std::arg(c), 1.0 - std::abs(c)};
}

/// Total variation between the first-harmonic density (1 + 2 Re(c1 e^{-ix}))/2pi
/// and (1 + cos x)/2pi; exact for error distributions of covariant phase
/// measurements on states with at most one photon.
inline double harmonic_tv(Complex c1) { return 2.0 * std::abs(c1 - 0.5) / std::numbers::pi; }

/// Normalized histogram of wrapped errors on [-pi, pi); density per radian.
inline std::vector<double> phase_histogram(std::span<const double> errors, int bins) {
  require(bins >= 1, ErrorCode::invalid_argument, "need at least one bin");
  std::vector<double> h(static_cast<std::size_t>(bins), 0.0);
  if (errors.empty()) return h;
  const double w = 2.0 * std::numbers::pi / bins;
  for (double e : errors) {
    int b = static_cast<int>(std::floor((wrap_phase(e) + std::numbers::pi) / w));
    h[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))] += 1.0;
  }
  for (auto& v : h) v /= static_cast<double>(errors.size()) * w;
  return h;
}

}  // namespace qtraj
