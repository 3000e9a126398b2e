#pragma once

// Dense linear algebra on small composite Hilbert spaces.
//
// Conventions used throughout the library:
//   * hbar = 1, angular frequencies in rad/us, time in us.
//   * Qubit basis order is (|e>, |g>) with sigma_z |e> = +|e>.
//   * Fock space index n is the photon number, truncated at n_max.
//   * Composite spaces are row-major: the left factor is the slowest index.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <initializer_list>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "qtraj/error.hpp"

namespace qtraj {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;

inline constexpr Complex kI{0.0, 1.0};
inline constexpr std::size_t kDefaultDimensionCap = 4096;

//---------------------------------------------------------------------------//
// SpaceShape
//---------------------------------------------------------------------------//

/// Ordered subsystem dimensions of a composite space, e.g. [2] for a qubit or
/// [2, N] for qubit (x) truncated cavity. Stored inline; at most kMaxFactors.
class SpaceShape {
 public:
  static constexpr std::size_t kMaxFactors = 8;

  SpaceShape() = default;

  SpaceShape(std::initializer_list<int> dims, std::size_t cap = kDefaultDimensionCap)
      : SpaceShape(std::span<const int>(dims.begin(), dims.size()), cap) {}

  explicit SpaceShape(std::span<const int> dims, std::size_t cap = kDefaultDimensionCap) {
    require(!dims.empty(), ErrorCode::shape, "space shape needs at least one subsystem");
    require(dims.size() <= kMaxFactors, ErrorCode::shape, "too many subsystems");
    std::size_t total = 1;
    for (int d : dims) {
      require(d >= 2, ErrorCode::shape, "every subsystem dimension must be >= 2, got " + std::to_string(d));
      total *= static_cast<std::size_t>(d);
      require(total <= cap, ErrorCode::shape,
              "total dimension exceeds cap of " + std::to_string(cap));
    }
    std::copy(dims.begin(), dims.end(), dims_.begin());
    count_ = dims.size();
  }

  static SpaceShape qubit() { return SpaceShape{2}; }

  [[nodiscard]] std::span<const int> dims() const { return {dims_.data(), count_}; }
  [[nodiscard]] std::size_t factors() const { return count_; }
  [[nodiscard]] int dim(std::size_t i) const { return dims_.at(i); }
  [[nodiscard]] bool empty() const { return count_ == 0; }

  [[nodiscard]] Eigen::Index total() const {
    Eigen::Index t = 1;
    for (std::size_t i = 0; i < count_; ++i) t *= dims_[i];
    return count_ == 0 ? 0 : t;
  }

  /// Shape of (this) (x) (other).
  [[nodiscard]] SpaceShape concat(const SpaceShape& other) const {
    std::vector<int> d(dims().begin(), dims().end());
    d.insert(d.end(), other.dims().begin(), other.dims().end());
    return SpaceShape(std::span<const int>(d));
  }

  [[nodiscard]] std::string str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < count_; ++i) {
      if (i) s += ", ";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

  friend bool operator==(const SpaceShape& a, const SpaceShape& b) {
    return a.count_ == b.count_ && std::equal(a.dims_.begin(), a.dims_.begin() + a.count_, b.dims_.begin());
  }

 private:
  std::array<int, kMaxFactors> dims_{};
  std::size_t count_ = 0;
};

//---------------------------------------------------------------------------//
// Operator
//---------------------------------------------------------------------------//

/// Dense complex matrix tagged with the space it acts on. Hermiticity is a
/// predicate, not an invariant.
class Operator {
 public:
  Operator() = default;

  Operator(SpaceShape shape, Matrix data) : shape_(shape), data_(std::move(data)) {
    require(data_.rows() == data_.cols(), ErrorCode::shape, "operator matrix must be square");
    require(data_.rows() == shape_.total(), ErrorCode::shape,
            "matrix side " + std::to_string(data_.rows()) + " does not match shape " + shape_.str());
  }

  /// Single-factor operator; shape inferred from the matrix side.
  explicit Operator(const Matrix& data) : Operator(SpaceShape{static_cast<int>(data.rows())}, data) {}

  static Operator identity(const SpaceShape& shape) {
    return {shape, Matrix::Identity(shape.total(), shape.total())};
  }
  static Operator zero(const SpaceShape& shape) {
    return {shape, Matrix::Zero(shape.total(), shape.total())};
  }

  [[nodiscard]] const SpaceShape& shape() const { return shape_; }
  [[nodiscard]] const Matrix& matrix() const { return data_; }
  [[nodiscard]] Matrix& matrix() { return data_; }
  [[nodiscard]] Eigen::Index dim() const { return data_.rows(); }
  [[nodiscard]] Complex operator()(Eigen::Index r, Eigen::Index c) const { return data_(r, c); }

  [[nodiscard]] Complex trace() const { return data_.trace(); }
  [[nodiscard]] Operator dagger() const { return {shape_, data_.adjoint()}; }

  [[nodiscard]] bool is_hermitian(double tol = 1e-12) const {
    return (data_ - data_.adjoint()).cwiseAbs().maxCoeff() <= tol;
  }
  [[nodiscard]] bool is_unitary(double tol = 1e-12) const {
    return (data_ * data_.adjoint() - Matrix::Identity(dim(), dim())).cwiseAbs().maxCoeff() <= tol;
  }

  Operator& operator+=(const Operator& o) {
    check_same(o);
    data_ += o.data_;
    return *this;
  }
  Operator& operator-=(const Operator& o) {
    check_same(o);
    data_ -= o.data_;
    return *this;
  }
  Operator& operator*=(Complex s) {
    data_ *= s;
    return *this;
  }

  friend Operator operator+(Operator a, const Operator& b) { return a += b; }
  friend Operator operator-(Operator a, const Operator& b) { return a -= b; }
  friend Operator operator-(Operator a) {
    a.data_ = -a.data_;
    return a;
  }
  friend Operator operator*(const Operator& a, const Operator& b) {
    a.check_same(b);
    return {a.shape_, a.data_ * b.data_};
  }
  friend Operator operator*(Complex s, Operator a) { return a *= s; }
  friend Operator operator*(Operator a, Complex s) { return a *= s; }
  friend Operator operator*(double s, Operator a) { return a *= Complex(s, 0.0); }
  friend Operator operator*(Operator a, double s) { return a *= Complex(s, 0.0); }

  void check_same(const Operator& o) const {
    require(shape_ == o.shape_, ErrorCode::shape,
            "shape mismatch: " + shape_.str() + " vs " + o.shape_.str());
  }

 private:
  SpaceShape shape_;
  Matrix data_;
};

inline Operator dagger(const Operator& a) { return a.dagger(); }
inline Operator commutator(const Operator& a, const Operator& b) { return a * b - b * a; }
inline Operator anticommutator(const Operator& a, const Operator& b) { return a * b + b * a; }

//---------------------------------------------------------------------------//
// States
//---------------------------------------------------------------------------//

inline constexpr double kStateTolerance = 1e-9;

/// Normalized state vector.
class PureState {
 public:
  PureState() = default;

  PureState(SpaceShape shape, Vector amplitudes) : shape_(shape), amps_(std::move(amplitudes)) {
    require(amps_.size() == shape_.total(), ErrorCode::shape, "amplitude count does not match shape");
    require(std::abs(amps_.norm() - 1.0) <= kStateTolerance, ErrorCode::invalid_argument,
            "pure state must have unit norm");
  }

  static PureState normalized(SpaceShape shape, Vector amplitudes) {
    const double n = amplitudes.norm();
    require(n > 0.0, ErrorCode::invalid_argument, "cannot normalize a zero vector");
    return {shape, amplitudes / n};
  }

  static PureState basis(const SpaceShape& shape, Eigen::Index index) {
    require(index >= 0 && index < shape.total(), ErrorCode::shape, "basis index out of range");
    Vector v = Vector::Zero(shape.total());
    v(index) = 1.0;
    return {shape, v};
  }

  [[nodiscard]] const SpaceShape& shape() const { return shape_; }
  [[nodiscard]] const Vector& amplitudes() const { return amps_; }
  [[nodiscard]] Complex operator()(Eigen::Index i) const { return amps_(i); }
  [[nodiscard]] Eigen::Index dim() const { return amps_.size(); }

  [[nodiscard]] Complex overlap(const PureState& other) const {
    require(shape_ == other.shape_, ErrorCode::shape, "shape mismatch in overlap");
    return amps_.dot(other.amps_);
  }

  [[nodiscard]] Operator projector() const { return {shape_, amps_ * amps_.adjoint()}; }

  [[nodiscard]] PureState apply(const Operator& op) const {
    require(op.shape() == shape_, ErrorCode::shape, "shape mismatch in operator application");
    return normalized(shape_, op.matrix() * amps_);
  }

 private:
  SpaceShape shape_;
  Vector amps_;
};

/// Returns a description of the first violated density-matrix invariant, if any.
inline std::optional<std::string> density_violation(const Operator& op, double tol = kStateTolerance) {
  const Complex tr = op.trace();
  if (std::abs(tr - 1.0) > tol) return "trace " + std::to_string(tr.real()) + " != 1";
  if (!op.is_hermitian(tol)) return "matrix is not Hermitian";
  const Matrix h = 0.5 * (op.matrix() + op.matrix().adjoint());
  Eigen::SelfAdjointEigenSolver<Matrix> es(h, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() < -tol) return "negative eigenvalue " + std::to_string(es.eigenvalues().minCoeff());
  return std::nullopt;
}

/// Positive, unit-trace, Hermitian operator.
class DensityMatrix {
 public:
  struct Unchecked {};

  DensityMatrix() = default;

  explicit DensityMatrix(Operator op) : op_(std::move(op)) {
    if (auto why = density_violation(op_)) fail(ErrorCode::invalid_argument, "not a density matrix: " + *why);
  }

  /// Skips the eigenvalue check; used by integrators that maintain the
  /// invariants by construction.
  DensityMatrix(Operator op, Unchecked) : op_(std::move(op)) {}

  explicit DensityMatrix(const PureState& psi) : op_(psi.projector()) {}

  static DensityMatrix maximally_mixed(const SpaceShape& shape) {
    const auto n = shape.total();
    return {Operator(shape, Matrix::Identity(n, n) / static_cast<double>(n)), Unchecked{}};
  }

  [[nodiscard]] const Operator& op() const { return op_; }
  [[nodiscard]] const Matrix& matrix() const { return op_.matrix(); }
  [[nodiscard]] const SpaceShape& shape() const { return op_.shape(); }
  [[nodiscard]] Eigen::Index dim() const { return op_.dim(); }
  [[nodiscard]] Complex operator()(Eigen::Index r, Eigen::Index c) const { return op_(r, c); }

 private:
  Operator op_;
};

//---------------------------------------------------------------------------//
// Standard operators
//---------------------------------------------------------------------------//

enum class PauliAxis { x, y, z, plus, minus };

/// Pauli matrices in the (|e>, |g>) basis.
inline Operator pauli(PauliAxis axis) {
  Matrix m = Matrix::Zero(2, 2);
  switch (axis) {
    case PauliAxis::x: m << 0, 1, 1, 0; break;
    case PauliAxis::y: m << 0, -kI, kI, 0; break;
    case PauliAxis::z: m << 1, 0, 0, -1; break;
    case PauliAxis::plus: m << 0, 1, 0, 0; break;   // |e><g|
    case PauliAxis::minus: m << 0, 0, 1, 0; break;  // |g><e|
  }
  return Operator(SpaceShape::qubit(), m);
}

inline Operator sigma_x() { return pauli(PauliAxis::x); }
inline Operator sigma_y() { return pauli(PauliAxis::y); }
inline Operator sigma_z() { return pauli(PauliAxis::z); }

inline PureState excited() { return PureState::basis(SpaceShape::qubit(), 0); }
inline PureState ground() { return PureState::basis(SpaceShape::qubit(), 1); }

inline SpaceShape fock_shape(int n_max) {
  require(n_max >= 1, ErrorCode::invalid_truncation, "n_max must be >= 1, got " + std::to_string(n_max));
  return SpaceShape{n_max + 1};
}

/// Truncated ladder operator: a|n> = sqrt(n)|n-1>.
inline Operator annihilation(int n_max) {
  const SpaceShape shape = fock_shape(n_max);
  Matrix m = Matrix::Zero(n_max + 1, n_max + 1);
  for (int n = 1; n <= n_max; ++n) m(n - 1, n) = std::sqrt(static_cast<double>(n));
  return {shape, m};
}

inline Operator creation(int n_max) { return annihilation(n_max).dagger(); }

inline Operator number_operator(int n_max) {
  const SpaceShape shape = fock_shape(n_max);
  Matrix m = Matrix::Zero(n_max + 1, n_max + 1);
  for (int n = 0; n <= n_max; ++n) m(n, n) = n;
  return {shape, m};
}

/// exp(i pi a^dagger a).
inline Operator parity_operator(int n_max) {
  const SpaceShape shape = fock_shape(n_max);
  Matrix m = Matrix::Zero(n_max + 1, n_max + 1);
  for (int n = 0; n <= n_max; ++n) m(n, n) = (n % 2 == 0) ? 1.0 : -1.0;
  return {shape, m};
}

inline PureState fock_state(int n, int n_max) {
  const SpaceShape shape = fock_shape(n_max);
  require(n >= 0 && n <= n_max, ErrorCode::shape, "Fock index out of range");
  return PureState::basis(shape, n);
}

//---------------------------------------------------------------------------//
// Composite spaces
//---------------------------------------------------------------------------//

inline Matrix kron(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// Kronecker product; the leftmost operand is the slowest-varying index.
inline Operator tensor(std::span<const Operator> ops) {
  require(!ops.empty(), ErrorCode::shape, "tensor needs at least one operand");
  Operator out = ops.front();
  for (std::size_t k = 1; k < ops.size(); ++k)
    out = Operator(out.shape().concat(ops[k].shape()), kron(out.matrix(), ops[k].matrix()));
  return out;
}

inline Operator tensor(std::initializer_list<Operator> ops) {
  return tensor(std::span<const Operator>(ops.begin(), ops.size()));
}

inline PureState tensor(const PureState& a, const PureState& b) {
  Vector v(a.dim() * b.dim());
  for (Eigen::Index i = 0; i < a.dim(); ++i) v.segment(i * b.dim(), b.dim()) = a(i) * b.amplitudes();
  return {a.shape().concat(b.shape()), v};
}

/// Places a single-factor operator on subsystem `index` of `shape`.
inline Operator embed(const Operator& local, const SpaceShape& shape, std::size_t index) {
  require(index < shape.factors(), ErrorCode::shape, "subsystem index out of range");
  require(local.dim() == shape.dim(index), ErrorCode::shape, "local operator dimension mismatch");
  std::vector<Operator> parts;
  for (std::size_t k = 0; k < shape.factors(); ++k)
    parts.push_back(k == index ? Operator(SpaceShape{shape.dim(k)}, local.matrix())
                               : Operator::identity(SpaceShape{shape.dim(k)}));
  return tensor(std::span<const Operator>(parts));
}

namespace detail {

inline std::vector<Eigen::Index> strides(const SpaceShape& shape) {
  std::vector<Eigen::Index> s(shape.factors(), 1);
  for (std::size_t k = shape.factors(); k-- > 1;) s[k - 1] = s[k] * shape.dim(k);
  return s;
}

// Enumerates flat offsets of all multi-indices over the given subsystems.
inline std::vector<Eigen::Index> offsets(const SpaceShape& shape, const std::vector<std::size_t>& subsystems) {
  const auto st = strides(shape);
  std::vector<Eigen::Index> out{0};
  for (std::size_t k : subsystems) {
    std::vector<Eigen::Index> next;
    next.reserve(out.size() * static_cast<std::size_t>(shape.dim(k)));
    for (Eigen::Index base : out)
      for (int i = 0; i < shape.dim(k); ++i) next.push_back(base + i * st[k]);
    out = std::move(next);
  }
  return out;
}

}  // namespace detail

/// Reduced state on the subsystems listed in `keep` (kept in ascending order).
inline DensityMatrix partial_trace(const DensityMatrix& rho, std::vector<std::size_t> keep) {
  const SpaceShape& shape = rho.shape();
  require(!keep.empty(), ErrorCode::shape, "partial trace needs a nonempty keep set");
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  for (std::size_t k : keep)
    require(k < shape.factors(), ErrorCode::shape, "subsystem index " + std::to_string(k) + " out of range");

  std::vector<std::size_t> traced;
  std::vector<int> kept_dims;
  for (std::size_t k = 0; k < shape.factors(); ++k) {
    if (std::binary_search(keep.begin(), keep.end(), k))
      kept_dims.push_back(shape.dim(k));
    else
      traced.push_back(k);
  }
  const auto kept_off = detail::offsets(shape, keep);
  const auto traced_off = detail::offsets(shape, traced);
  const auto n = static_cast<Eigen::Index>(kept_off.size());
  Matrix out = Matrix::Zero(n, n);
  const Matrix& m = rho.matrix();
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) {
      Complex s = 0.0;
      for (Eigen::Index t : traced_off) s += m(kept_off[i] + t, kept_off[j] + t);
      out(i, j) = s;
    }
  return {Operator(SpaceShape(std::span<const int>(kept_dims)), out), DensityMatrix::Unchecked{}};
}

//---------------------------------------------------------------------------//
// Oscillator states
//---------------------------------------------------------------------------//

/// Truncation adequacy rule n_max >= |alpha|^2 + 5|alpha| + 4.
inline bool truncation_adequate(Complex alpha, int n_max) {
  const double a = std::abs(alpha);
  return static_cast<double>(n_max) >= a * a + 5.0 * a + 4.0;
}

inline void require_truncation(Complex alpha, int n_max) {
  require(truncation_adequate(alpha, n_max), ErrorCode::truncation_inadequate,
          "n_max=" + std::to_string(n_max) + " too small for |alpha|=" + std::to_string(std::abs(alpha)));
}

inline PureState coherent_state(Complex alpha, int n_max) {
  const SpaceShape shape = fock_shape(n_max);
  require_truncation(alpha, n_max);
  Vector v(n_max + 1);
  v(0) = std::exp(-0.5 * std::norm(alpha));
  for (int n = 1; n <= n_max; ++n) v(n) = v(n - 1) * alpha / std::sqrt(static_cast<double>(n));
  return PureState::normalized(shape, v);
}

enum class CatParity { even, odd };

/// N (|alpha> +/- |-alpha>), normalized on the truncated space.
inline PureState cat_state(Complex alpha, CatParity parity, int n_max) {
  const PureState plus = coherent_state(alpha, n_max);
  const PureState minus = coherent_state(-alpha, n_max);
  const double sign = parity == CatParity::even ? 1.0 : -1.0;
  return PureState::normalized(plus.shape(), plus.amplitudes() + sign * minus.amplitudes());
}

/// Analytic cat normalization 1/sqrt(2(1 +/- exp(-2|alpha|^2))).
inline double cat_normalization(Complex alpha, CatParity parity) {
  const double s = parity == CatParity::even ? 1.0 : -1.0;
  return 1.0 / std::sqrt(2.0 * (1.0 + s * std::exp(-2.0 * std::norm(alpha))));
}

//---------------------------------------------------------------------------//
// Expectations and matrix functions
//---------------------------------------------------------------------------//

inline Complex expectation(const Operator& x, const DensityMatrix& rho) {
  x.check_same(rho.op());
  // Tr(X rho) without forming the product.
  return (x.matrix().transpose().cwiseProduct(rho.matrix())).sum();
}

inline Complex expectation(const Operator& x, const PureState& psi) {
  require(x.shape() == psi.shape(), ErrorCode::shape, "shape mismatch in expectation");
  return psi.amplitudes().dot(x.matrix() * psi.amplitudes());
}

/// Matrix exponential (Pade with scaling and squaring).
inline Matrix expm(const Matrix& a) { return a.exp(); }

/// exp(-i h) for Hermitian h via eigendecomposition; exactly unitary up to rounding.
inline Matrix unitary_exp(const Matrix& h) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (h + h.adjoint()));
  const Vector phases = (-kI * es.eigenvalues().cast<Complex>()).array().exp();
  return es.eigenvectors() * phases.asDiagonal() * es.eigenvectors().adjoint();
}

}  // namespace qtraj
