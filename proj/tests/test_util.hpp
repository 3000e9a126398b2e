#pragma once

#include <gtest/gtest.h>

#include "qtraj/error.hpp"
#include "qtraj/hilbert.hpp"

namespace qtraj::testing {

inline double max_abs(const Matrix& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

inline double distance(const Operator& a, const Operator& b) { return max_abs(a.matrix() - b.matrix()); }

inline DensityMatrix qubit_state(double x, double y, double z) {
  Matrix m(2, 2);
  m << 1.0 + z, Complex(x, -y), Complex(x, y), 1.0 - z;
  return DensityMatrix(Operator(SpaceShape::qubit(), 0.5 * m));
}

inline Matrix random_matrix(Eigen::Index n, unsigned seed) {
  std::srand(seed);
  return Matrix::Random(n, n);
}

/// Random density matrix A A^dag / Tr.
inline DensityMatrix random_density(const SpaceShape& shape, unsigned seed) {
  const Matrix a = random_matrix(shape.total(), seed);
  Matrix r = a * a.adjoint();
  r /= r.trace().real();
  return DensityMatrix(Operator(shape, 0.5 * (r + r.adjoint())));
}

template <class F>
void expect_error(ErrorCode code, F&& f) {
  try {
    f();
    ADD_FAILURE() << "expected " << to_string(code);
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), code) << e.what();
  }
}

}  // namespace qtraj::testing
