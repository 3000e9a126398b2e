#include <gtest/gtest.h>

#include "qtraj/hilbert.hpp"
#include "test_util.hpp"

using namespace qtraj;
using qtraj::testing::distance;
using qtraj::testing::max_abs;

namespace {

Vector apply(const Operator& op, const PureState& psi) { return op.matrix() * psi.amplitudes(); }

}  // namespace

TEST(SpaceShape, RejectsSmallDimensions) {
  EXPECT_THROW(SpaceShape({2, 1}), Error);
  EXPECT_THROW(SpaceShape(std::span<const int>{}), Error);
}

TEST(SpaceShape, EnforcesCap) {
  EXPECT_NO_THROW(SpaceShape({64, 64}));
  try {
    SpaceShape({64, 65});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::shape);
  }
  EXPECT_NO_THROW(SpaceShape({100, 100}, 10000));
}

TEST(SpaceShape, TotalAndConcat) {
  const SpaceShape s{2, 3, 4};
  EXPECT_EQ(s.total(), 24);
  EXPECT_EQ(s.factors(), 3u);
  EXPECT_EQ(SpaceShape{2}.concat(SpaceShape{5}), (SpaceShape{2, 5}));
}

TEST(Pauli, ZActsOnExcitedWithPlusSign) {
  const Vector v = apply(pauli(PauliAxis::z), excited());
  EXPECT_LT((v - excited().amplitudes()).norm(), 1e-15);
  const Vector g = apply(pauli(PauliAxis::z), ground());
  EXPECT_LT((g + ground().amplitudes()).norm(), 1e-15);
}

TEST(Pauli, CommutatorXY) {
  const Operator c = commutator(sigma_x(), sigma_y());
  EXPECT_EQ(distance(c, Complex(0, 2) * sigma_z()), 0.0);
}

TEST(Pauli, RaisingOperator) {
  const Operator sp = pauli(PauliAxis::plus);
  EXPECT_EQ(distance(sp, 0.5 * (sigma_x() + kI * sigma_y())), 0.0);
  EXPECT_LT((apply(sp, ground()) - excited().amplitudes()).norm(), 1e-15);
  EXPECT_LT(apply(sp, excited()).norm(), 1e-15);
  EXPECT_LT((apply(pauli(PauliAxis::minus), excited()) - ground().amplitudes()).norm(), 1e-15);
}

TEST(Pauli, HermitianAndUnitary) {
  for (auto ax : {PauliAxis::x, PauliAxis::y, PauliAxis::z}) {
    EXPECT_TRUE(pauli(ax).is_hermitian());
    EXPECT_TRUE(pauli(ax).is_unitary());
  }
  EXPECT_FALSE(pauli(PauliAxis::plus).is_hermitian());
}

TEST(Annihilation, LadderAction) {
  const Operator a = annihilation(6);
  EXPECT_LT((apply(a, fock_state(1, 6)) - fock_state(0, 6).amplitudes()).norm(), 1e-15);
  EXPECT_LT((apply(a, fock_state(4, 6)) - 2.0 * fock_state(3, 6).amplitudes()).norm(), 1e-15);
  EXPECT_LT(apply(a, fock_state(0, 6)).norm(), 1e-15);
}

TEST(Annihilation, NumberOperatorDiagonal) {
  const int n_max = 9;
  const Operator a = annihilation(n_max);
  const Operator n = a.dagger() * a;
  for (int k = 0; k <= n_max; ++k) EXPECT_NEAR(n(k, k).real(), k, 1e-12);
  EXPECT_LT(distance(n, number_operator(n_max)), 1e-12);
}

TEST(Annihilation, RejectsBadTruncation) {
  try {
    annihilation(0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::invalid_truncation);
  }
}

TEST(Annihilation, CanonicalCommutatorInterior) {
  const int n_max = 7;
  const Operator c = commutator(annihilation(n_max), creation(n_max));
  const Matrix interior = c.matrix().topLeftCorner(n_max, n_max);
  EXPECT_LT(max_abs(interior - Matrix::Identity(n_max, n_max)), 1e-12);
  EXPECT_NEAR(c(n_max, n_max).real(), -n_max, 1e-12);
}

TEST(Tensor, IdentityProduct) {
  const Operator i6 = tensor({Operator::identity(SpaceShape{2}), Operator::identity(SpaceShape{3})});
  EXPECT_EQ(i6.shape(), (SpaceShape{2, 3}));
  EXPECT_EQ(max_abs(i6.matrix() - Matrix::Identity(6, 6)), 0.0);
}

TEST(Tensor, LeftOperandIsSlowest) {
  // (sz x I2) is diag(1,1,-1,-1).
  const Operator z1 = tensor({sigma_z(), Operator::identity(SpaceShape{2})});
  EXPECT_EQ(z1(1, 1).real(), 1.0);
  EXPECT_EQ(z1(2, 2).real(), -1.0);
}

TEST(Tensor, DisjointSupportsCommute) {
  const int n_max = 4;
  const Operator a = tensor({sigma_z(), Operator::identity(fock_shape(n_max))});
  const Operator b = tensor({Operator::identity(SpaceShape::qubit()), number_operator(n_max)});
  EXPECT_EQ(max_abs(commutator(a, b).matrix()), 0.0);
}

TEST(Tensor, TraceFactorizesAgainstNaiveLoop) {
  for (unsigned seed = 1; seed <= 20; ++seed) {
    const Operator a(qtraj::testing::random_matrix(2, seed));
    const Operator b(qtraj::testing::random_matrix(2, seed + 100));
    const Operator ab = tensor({a, b});
    Complex naive = 0.0;
    for (int i = 0; i < 2; ++i)
      for (int k = 0; k < 2; ++k) naive += a(i, i) * b(k, k);
    EXPECT_LT(std::abs(ab.trace() - naive), 1e-14);
    EXPECT_LT(std::abs(ab.trace() - a.trace() * b.trace()), 1e-14);
  }
}

TEST(Tensor, IsAssociativeExactly) {
  // Integer entries keep every product exactly representable, so equality is bitwise.
  auto integer_matrix = [](Eigen::Index n, unsigned seed) {
    Matrix m = qtraj::testing::random_matrix(n, seed) * 8.0;
    return Matrix(m.unaryExpr([](Complex z) { return Complex(std::round(z.real()), std::round(z.imag())); }));
  };
  const Operator a(integer_matrix(2, 3));
  const Operator b(integer_matrix(3, 4));
  const Operator c(integer_matrix(2, 5));
  const Operator left = tensor({tensor({a, b}), c});
  const Operator right = tensor({a, tensor({b, c})});
  EXPECT_EQ(left.shape(), right.shape());
  EXPECT_EQ(left.matrix(), right.matrix());
  EXPECT_EQ(tensor({a, b, c}).matrix(), left.matrix());
  // Floating-point entries agree to rounding.
  const Operator x(qtraj::testing::random_matrix(2, 6)), y(qtraj::testing::random_matrix(2, 7));
  EXPECT_LT(max_abs(tensor({tensor({x, y}), a}).matrix() - tensor({x, tensor({y, a})}).matrix()), 1e-14);
}

TEST(Tensor, EmbedMatchesTensorWithIdentities) {
  const SpaceShape s{2, 3, 2};
  const Operator e = embed(sigma_x(), s, 2);
  const Operator t =
      tensor({Operator::identity(SpaceShape{2}), Operator::identity(SpaceShape{3}), sigma_x()});
  EXPECT_EQ(max_abs(e.matrix() - t.matrix()), 0.0);
}

TEST(PartialTrace, RecoversFactors) {
  const DensityMatrix rho = qtraj::testing::random_density(SpaceShape{2}, 7);
  const DensityMatrix sigma = qtraj::testing::random_density(SpaceShape{3}, 8);
  const DensityMatrix joint(tensor({rho.op(), sigma.op()}));
  const DensityMatrix a = partial_trace(joint, {0});
  const DensityMatrix b = partial_trace(joint, {1});
  EXPECT_LT(max_abs(a.matrix() - rho.matrix()), 1e-14);
  EXPECT_LT(max_abs(b.matrix() - sigma.matrix()), 1e-14);
  EXPECT_EQ(a.shape(), SpaceShape{2});
  EXPECT_EQ(b.shape(), SpaceShape{3});
}

TEST(PartialTrace, BellMarginalIsMaximallyMixed) {
  Vector v = Vector::Zero(4);
  v(1) = v(2) = 1.0 / std::sqrt(2.0);
  const DensityMatrix psi_plus(PureState(SpaceShape{2, 2}, v));
  for (std::size_t k : {0u, 1u}) {
    const DensityMatrix m = partial_trace(psi_plus, {k});
    EXPECT_LT(max_abs(m.matrix() - 0.5 * Matrix::Identity(2, 2)), 1e-15);
  }
}

TEST(PartialTrace, PreservesTraceForAnyKeepSet) {
  const DensityMatrix rho = qtraj::testing::random_density(SpaceShape{2, 3, 2}, 11);
  for (const std::vector<std::size_t>& keep :
       std::vector<std::vector<std::size_t>>{{0}, {1}, {2}, {0, 1}, {0, 2}, {1, 2}, {0, 1, 2}}) {
    const DensityMatrix r = partial_trace(rho, keep);
    EXPECT_NEAR(r.op().trace().real(), 1.0, 1e-12);
    EXPECT_FALSE(density_violation(r.op()).has_value());
  }
  const DensityMatrix all = partial_trace(rho, {0, 1, 2});
  EXPECT_LT(max_abs(all.matrix() - rho.matrix()), 1e-15);
}

TEST(PartialTrace, MiddleSubsystemAgainstExplicitSum) {
  const DensityMatrix rho = qtraj::testing::random_density(SpaceShape{2, 3, 2}, 12);
  const DensityMatrix r = partial_trace(rho, {1});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      Complex s = 0.0;
      for (int a = 0; a < 2; ++a)
        for (int c = 0; c < 2; ++c) s += rho(a * 6 + i * 2 + c, a * 6 + j * 2 + c);
      EXPECT_LT(std::abs(r(i, j) - s), 1e-15);
    }
}

TEST(PartialTrace, RejectsBadIndices) {
  const DensityMatrix rho = DensityMatrix::maximally_mixed(SpaceShape{2, 2});
  try {
    partial_trace(rho, {2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::shape);
  }
  EXPECT_THROW(partial_trace(rho, {}), Error);
}

TEST(Coherent, VacuumAtZero) {
  const PureState s = coherent_state(0.0, 4);
  EXPECT_LT((s.amplitudes() - fock_state(0, 4).amplitudes()).norm(), 1e-15);
}

TEST(Coherent, EigenvalueOfAnnihilation) {
  const PureState s = coherent_state(1.0, 16);
  EXPECT_LT(std::abs(expectation(annihilation(16), s) - 1.0), 1e-6);
}

TEST(Coherent, MeanPhotonNumber) {
  const int n_max = 18;
  const PureState s = coherent_state(2.0, n_max);
  double direct = 0.0;
  for (int n = 0; n <= n_max; ++n) direct += n * std::norm(s(n));
  const double e = expectation(number_operator(n_max), s).real();
  EXPECT_NEAR(e, direct, 1e-12);
  EXPECT_NEAR(e, 4.0, 1e-6);
}

TEST(Coherent, TruncationRule) {
  EXPECT_TRUE(truncation_adequate(2.0, 18));
  EXPECT_FALSE(truncation_adequate(2.0, 17));
  try {
    coherent_state(2.0, 17);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::truncation_inadequate);
  }
  EXPECT_THROW(cat_state(3.0, CatParity::even, 20), Error);
}

TEST(Cat, AnnihilationFlipsParity) {
  const int n_max = 18;
  const PureState even = cat_state(2.0, CatParity::even, n_max);
  const PureState odd = cat_state(2.0, CatParity::odd, n_max);
  const PureState flipped = even.apply(annihilation(n_max));
  EXPECT_GE(std::abs(flipped.overlap(odd)), 1.0 - 1e-6);
}

TEST(Cat, ParityExpectation) {
  for (double alpha : {0.5, 1.0, 2.0, 3.0}) {
    const int n_max = static_cast<int>(std::ceil(alpha * alpha + 5 * alpha + 4));
    const Operator p = parity_operator(n_max);
    EXPECT_NEAR(expectation(p, cat_state(alpha, CatParity::even, n_max)).real(), 1.0, 1e-6);
    EXPECT_NEAR(expectation(p, cat_state(alpha, CatParity::odd, n_max)).real(), -1.0, 1e-6);
  }
}

TEST(Cat, NormalizationMatchesClosedForm) {
  const int n_max = 18;
  for (auto parity : {CatParity::even, CatParity::odd}) {
    const PureState plus = coherent_state(2.0, n_max);
    const PureState minus = coherent_state(-2.0, n_max);
    const double s = parity == CatParity::even ? 1.0 : -1.0;
    const Vector raw = plus.amplitudes() + s * minus.amplitudes();
    EXPECT_NEAR(1.0 / raw.norm(), cat_normalization(2.0, parity), 1e-6);
  }
}

TEST(Expectation, TracelessOnMixedState) {
  EXPECT_EQ(expectation(sigma_z(), DensityMatrix::maximally_mixed(SpaceShape::qubit())), Complex(0.0));
}

TEST(Expectation, ShapeMismatchThrows) {
  EXPECT_THROW(expectation(sigma_z(), DensityMatrix::maximally_mixed(SpaceShape{3})), Error);
  EXPECT_THROW(commutator(sigma_z(), annihilation(2)), Error);
}

TEST(Expectation, DaggerIsConjugateTranspose) {
  const Operator a(qtraj::testing::random_matrix(3, 21));
  const Operator d = dagger(a);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_EQ(d(i, j), std::conj(a(j, i)));
}

TEST(DensityMatrix, ValidatesInvariants) {
  Matrix m(2, 2);
  m << 0.6, 0, 0, 0.6;
  EXPECT_THROW(DensityMatrix(Operator(SpaceShape::qubit(), m)), Error);
  m << 1.1, 0, 0, -0.1;
  EXPECT_THROW(DensityMatrix(Operator(SpaceShape::qubit(), m)), Error);
  m << 0.5, 0.3, 0.1, 0.5;
  EXPECT_THROW(DensityMatrix(Operator(SpaceShape::qubit(), m)), Error);
  m << 0.5, 0.5, 0.5, 0.5;
  EXPECT_NO_THROW(DensityMatrix(Operator(SpaceShape::qubit(), m)));
}

TEST(PureState, RequiresUnitNorm) {
  EXPECT_THROW(PureState(SpaceShape::qubit(), Vector::Ones(2)), Error);
  EXPECT_NO_THROW(PureState::normalized(SpaceShape::qubit(), Vector::Ones(2)));
}

TEST(Operator, ConstructorsPreserveNorm) {
  // Unitary exponentials of Hermitian generators keep states normalized.
  const Matrix u = unitary_exp(0.7 * (annihilation(10) + creation(10)).matrix());
  const PureState s = coherent_state(Complex(0.3, -0.4), 10);
  EXPECT_NEAR((u * s.amplitudes()).norm(), 1.0, 1e-12);
  EXPECT_TRUE(Operator(fock_shape(10), u).is_unitary(1e-12));
  EXPECT_TRUE(number_operator(10).is_hermitian());
  EXPECT_TRUE(parity_operator(10).is_unitary());
}
