#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "qtraj/analysis.hpp"
#include "test_util.hpp"

using namespace qtraj;
using qtraj::testing::expect_error;
using qtraj::testing::qubit_state;
using qtraj::testing::random_density;

namespace {

constexpr double kPi = std::numbers::pi;

PureState plus_x() { return PureState::normalized(SpaceShape::qubit(), Vector{{1.0, 1.0}}); }

DensityMatrix mixture(std::initializer_list<std::pair<double, PureState>> parts) {
  const auto& shape = parts.begin()->second.shape();
  Matrix m = Matrix::Zero(shape.total(), shape.total());
  for (const auto& [w, psi] : parts) m += w * psi.projector().matrix();
  return DensityMatrix(Operator(shape, m));
}

Matrix random_unitary(std::mt19937& rng) {
  std::normal_distribution<double> n;
  Matrix h(2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) h(i, j) = Complex(n(rng), n(rng));
  return unitary_exp(0.5 * (h + h.adjoint()));
}

}  // namespace

TEST(StateMetrics, BlochVector) {
  const auto b0 = bloch_vector(DensityMatrix::maximally_mixed(SpaceShape::qubit()));
  EXPECT_EQ(b0.norm(), 0.0);
  const auto b = bloch_vector(qubit_state(0.3, -0.4, 0.5));
  EXPECT_NEAR(b.x, 0.3, 1e-15);
  EXPECT_NEAR(b.y, -0.4, 1e-15);
  EXPECT_NEAR(b.z, 0.5, 1e-15);
  EXPECT_NEAR(bloch_vector(excited()).z, 1.0, 1e-15);
  EXPECT_NEAR(bloch_vector(plus_x()).x, 1.0, 1e-15);
  // Agrees with the Pauli expectations.
  const auto r = random_density(SpaceShape::qubit(), 3);
  const auto v = bloch_vector(r);
  EXPECT_NEAR(v.x, expectation(sigma_x(), r).real(), 1e-14);
  EXPECT_NEAR(v.y, expectation(sigma_y(), r).real(), 1e-14);
  EXPECT_NEAR(v.z, expectation(sigma_z(), r).real(), 1e-14);
  EXPECT_LE(v.norm(), 1.0 + 1e-9);
  expect_error(ErrorCode::shape, [] { bloch_vector(DensityMatrix::maximally_mixed(SpaceShape{2, 2})); });
}

TEST(StateMetrics, Purity) {
  EXPECT_NEAR(purity(DensityMatrix(excited())), 1.0, 1e-15);
  EXPECT_NEAR(purity(DensityMatrix::maximally_mixed(SpaceShape::qubit())), 0.5, 1e-15);
}

TEST(StateMetrics, FidelityExamples) {
  const DensityMatrix e(excited()), g(ground()), p(plus_x());
  EXPECT_NEAR(fidelity(e, e), 1.0, 1e-12);
  EXPECT_NEAR(fidelity(e, g), 0.0, 1e-12);
  EXPECT_NEAR(fidelity(g, p), 0.5, 1e-12);
  EXPECT_NEAR(fidelity(g, plus_x()), 0.5, 1e-15);
  EXPECT_NEAR(fidelity(ground(), plus_x()), 0.5, 1e-15);
  const auto r1 = mixture({{0.7, excited()}, {0.3, plus_x()}});
  Matrix m = 0.5 * Matrix::Identity(2, 2) + 0.2 * sigma_y().matrix() + 0.1 * sigma_z().matrix();
  const DensityMatrix r2(Operator(SpaceShape::qubit(), m));
  EXPECT_NEAR(fidelity(r1, r2), 0.859827534923790, 1e-10);
  expect_error(ErrorCode::shape, [&] { fidelity(e, DensityMatrix::maximally_mixed(SpaceShape{2, 2})); });
}

TEST(StateMetrics, FidelityProperties) {
  for (unsigned s = 0; s < 20; ++s) {
    const auto a = random_density(SpaceShape{3}, 100 + s), b = random_density(SpaceShape{3}, 200 + s);
    const double f = fidelity(a, b);
    EXPECT_NEAR(f, fidelity(b, a), 1e-9);
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, 1.0);
  }
  std::mt19937 rng(5);
  std::normal_distribution<double> n;
  for (int k = 0; k < 20; ++k) {
    const PureState a = PureState::normalized(SpaceShape{3}, Vector{{Complex(n(rng), n(rng)), n(rng), n(rng)}});
    const PureState b = PureState::normalized(SpaceShape{3}, Vector{{n(rng), Complex(n(rng), n(rng)), n(rng)}});
    EXPECT_NEAR(fidelity(DensityMatrix(a), DensityMatrix(b)), std::norm(a.overlap(b)), 1e-7);
  }
}

TEST(StateMetrics, TraceDistance) {
  EXPECT_NEAR(trace_distance(DensityMatrix(excited()), DensityMatrix(ground())), 1.0, 1e-15);
  EXPECT_NEAR(trace_distance(qubit_state(0, 0, 0.4), qubit_state(0, 0, -0.2)), 0.3, 1e-15);
}

TEST(Concurrence, Examples) {
  const SpaceShape two{2, 2};
  const PureState psi_plus = PureState::normalized(two, Vector{{0.0, 1.0, 1.0, 0.0}});
  EXPECT_NEAR(concurrence(DensityMatrix(psi_plus)), 1.0, 1e-12);
  EXPECT_NEAR(concurrence(DensityMatrix(PureState::basis(two, 0))), 0.0, 1e-12);
  // Unheralded mixture of the half-parity outcomes.
  const auto bar = mixture({{0.25, PureState::basis(two, 0)}, {0.25, PureState::basis(two, 3)}, {0.5, psi_plus}});
  EXPECT_NEAR(concurrence(bar), 0.0, 1e-12);
  Matrix w = 0.8 * psi_plus.projector().matrix() + 0.05 * Matrix::Identity(4, 4);
  EXPECT_NEAR(concurrence(DensityMatrix(Operator(two, w))), 0.7, 1e-12);
  Vector v{{0.6, Complex(0.0, 0.3), -0.2, Complex(0.5, 0.1)}};
  const auto mix = mixture({{0.75, PureState::normalized(two, v)}, {0.25, PureState::basis(two, 2)}});
  // Rank 2: the two zero eigenvalues enter through square roots.
  EXPECT_NEAR(concurrence(mix), 0.64621977685614048, 1e-7);
  expect_error(ErrorCode::shape, [] { concurrence(DensityMatrix(excited())); });
}

TEST(Concurrence, LocalUnitaryInvariance) {
  std::mt19937 rng(17);
  for (int k = 0; k < 100; ++k) {
    const auto r = random_density(SpaceShape{2, 2}, 1000 + static_cast<unsigned>(k));
    const Matrix u = kron(random_unitary(rng), random_unitary(rng));
    const DensityMatrix rr(Operator(SpaceShape{2, 2}, u * r.matrix() * u.adjoint()), DensityMatrix::Unchecked{});
    EXPECT_NEAR(concurrence(rr), concurrence(r), 1e-8);
  }
}

TEST(Wigner, PointValues) {
  const int n = 24;
  EXPECT_NEAR(wigner_point(DensityMatrix(fock_state(0, n)), 0.0), 2.0 / kPi, 1e-15);
  const DensityMatrix odd(cat_state(2.0, CatParity::odd, n));
  EXPECT_NEAR(wigner_point(odd, 0.0), -0.636619772368, 1e-3);
  EXPECT_NEAR(wigner_point(odd, Complex(0.3, 0.4)), 0.386320371098, 1e-9);
  EXPECT_NEAR(wigner_point(odd, Complex(1.7, -0.2)), 0.245568350345, 1e-9);
  EXPECT_NEAR(wigner_point(DensityMatrix(coherent_state(1.0, n)), Complex(0.5, 0.2)), 0.356442370672, 1e-9);
  EXPECT_NEAR(wigner_point(DensityMatrix(fock_state(3, n)), 0.8), -0.062694359993, 1e-11);
  expect_error(ErrorCode::shape, [] { wigner_point(DensityMatrix::maximally_mixed(SpaceShape{3, 3}), 0.0); });
}

TEST(Wigner, CoherentPeak) {
  const GridSpec grid{-1.0, 3.0, -2.0, 2.0, 41, 41};
  const auto w = wigner(DensityMatrix(coherent_state(1.0, 12)), grid);
  EXPECT_FALSE(w.truncation_warning);
  Eigen::Index r = 0, c = 0;
  w.values.maxCoeff(&r, &c);
  const double spacing = 0.1;
  EXPECT_NEAR(grid.re(static_cast<int>(c)), 1.0, spacing + 1e-12);
  EXPECT_NEAR(grid.im(static_cast<int>(r)), 0.0, spacing + 1e-12);
  EXPECT_LE(w.values.maxCoeff(), 2.0 / kPi + 1e-12);
}

TEST(Wigner, NormalizationAndMarginals) {
  const GridSpec grid{-5.0, 5.0, -5.0, 5.0, 81, 81};
  const int n = 24;
  for (const auto& rho : {DensityMatrix(cat_state(2.0, CatParity::even, n)), DensityMatrix(fock_state(3, n)),
                          DensityMatrix(coherent_state(Complex(1.0, -1.0), n))}) {
    const auto w = wigner(rho, grid);
    EXPECT_NEAR(w.integral(), 1.0, 0.02);
    const double d = 10.0 / 80.0;
    for (int i = 0; i < grid.n_re; ++i) EXPECT_GE(w.values.col(i).sum() * d, -1e-6);
    for (int j = 0; j < grid.n_im; ++j) EXPECT_GE(w.values.row(j).sum() * d, -1e-6);
  }
}

TEST(Wigner, TruncationWarning) {
  const GridSpec wide{-6.0, 6.0, -6.0, 6.0, 3, 3};
  EXPECT_TRUE(wigner(DensityMatrix(fock_state(0, 10)), wide).truncation_warning);
  EXPECT_FALSE(wigner(DensityMatrix(fock_state(0, 70)), wide).truncation_warning);
}

TEST(SurvivalFit, ExactExponential) {
  std::vector<double> t, s;
  for (int k = 0; k < 10; ++k) {
    t.push_back(0.5 * k);
    s.push_back(std::exp(-0.3 * t.back()));
  }
  const auto f = survival_fit(t, s);
  EXPECT_NEAR(f.rate, 0.3, 1e-6);
  EXPECT_NEAR(f.intercept, 0.0, 1e-12);
  EXPECT_NEAR(f.rate_hi - f.rate_lo, 0.0, 1e-6);
}

TEST(SurvivalFit, NoisyIntervalCoversRate) {
  std::mt19937 rng(2);
  std::normal_distribution<double> n(0.0, 0.002);
  std::vector<double> t, s;
  for (int k = 0; k < 20; ++k) {
    t.push_back(0.1 * k);
    s.push_back(std::exp(-0.2 * t.back() + n(rng)));
  }
  std::sort(s.rbegin(), s.rend());
  const auto f = survival_fit(t, s);
  EXPECT_LT(f.rate_lo, f.rate_hi);
  EXPECT_NEAR(f.rate, 0.2, 0.02);
}

TEST(SurvivalFit, Failures) {
  const std::vector<double> t{0, 1, 2, 3, 4}, up{1.0, 0.9, 0.95, 0.8, 0.7}, zero{1.0, 0.5, 0.2, 0.0, 0.0};
  expect_error(ErrorCode::fit_failed, [&] { survival_fit(t, up); });
  expect_error(ErrorCode::fit_failed, [&] { survival_fit(t, zero); });
  const std::vector<double> t4{0, 1, 2, 3}, s4{1.0, 0.9, 0.8, 0.7};
  expect_error(ErrorCode::fit_failed, [&] { survival_fit(t4, s4); });
}

TEST(PhaseStats, Examples) {
  std::vector<double> truth(500), est(500);
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> u(-kPi, kPi);
  for (auto& x : truth) x = u(rng);
  const auto exact = phase_error_stats(truth, truth);
  EXPECT_NEAR(exact.circular_variance, 0.0, 1e-12);
  const std::size_t n = 20000;
  std::vector<double> a(n), b(n, 0.0);
  for (auto& x : a) x = u(rng);
  const auto unif = phase_error_stats(a, b);
  EXPECT_NEAR(unif.circular_variance, 1.0, 3.0 / std::sqrt(static_cast<double>(n)));
  for (std::size_t k = 0; k < est.size(); ++k) est[k] = truth[k] + 0.1;
  EXPECT_NEAR(phase_error_stats(est, truth).mean_error, 0.1, 1e-12);
  expect_error(ErrorCode::invalid_argument, [] {
    const std::vector<double> few(50, 0.0);
    phase_error_stats(few, few);
  });
}

TEST(PhaseStats, HarmonicTotalVariation) {
  EXPECT_NEAR(harmonic_tv(0.5), 0.0, 1e-15);
  // Numerical TV between the two first-harmonic densities.
  const Complex c1(0.47, 0.02);
  const int m = 200000;
  double tv = 0.0;
  for (int k = 0; k < m; ++k) {
    const double x = -kPi + 2.0 * kPi * (k + 0.5) / m;
    const double p = (1.0 + 2.0 * (c1 * std::polar(1.0, -x)).real()) / (2.0 * kPi);
    tv += std::abs(p - (1.0 + std::cos(x)) / (2.0 * kPi)) * (2.0 * kPi / m);
  }
  EXPECT_NEAR(harmonic_tv(c1), 0.5 * tv, 1e-9);
}

TEST(PhaseStats, Histogram) {
  const std::vector<double> e{0.0, 0.1, -0.1, 3.0, 2.0 * kPi + 0.05};
  const auto h = phase_histogram(e, 4);
  double total = 0.0;
  for (double v : h) total += v * (2.0 * kPi / 4);
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_NEAR(h[2] * (2.0 * kPi / 4), 3.0 / 5.0, 1e-12);
}
