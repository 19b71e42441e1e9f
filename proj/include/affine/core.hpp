#pragma once

// State-space geometry for affine processes on D = R>=0^m x R^n and the
// exponential functional x -> exp(<u, x>) shared by every other module.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

namespace affine {

using cplx = std::complex<double>;
using CVec = Eigen::VectorXcd;
using RVec = Eigen::VectorXd;
using CMat = Eigen::MatrixXcd;
using RMat = Eigen::MatrixXd;

/// Point u in C^d where the exponential functional is evaluated.
using ComplexPoint = CVec;
/// Point x in the state space D.
using StatePoint = RVec;

inline constexpr cplx I_unit{0.0, 1.0};

// Errors --------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error {
  using Error::Error;
};

/// Argument outside the admissible domain (u not in U, x not in D, ...).
struct DomainError : Error {
  using Error::Error;
};

struct NumericalFailure : Error {
  using Error::Error;
};

/// Adaptive integrator could not keep the local error under control.
struct StiffnessFailure : NumericalFailure {
  StiffnessFailure(const std::string& what, double at)
      : NumericalFailure(what), s(at) {}
  double s;
};

struct ConfigError : Error {
  using Error::Error;
};

// Dims ----------------------------------------------------------------------

/// Shape (m, n) of the state space. Components [0, m) form I, [m, d) form J.
struct Dims {
  int m = 0;
  int n = 0;

  constexpr Dims() = default;
  Dims(int m_, int n_) : m(m_), n(n_) {
    if (m < 0 || n < 0) throw DimensionError("Dims: m and n must be nonnegative");
    if (m + n < 1) throw DimensionError("Dims: d = m + n must be at least 1");
  }

  [[nodiscard]] constexpr int d() const { return m + n; }
  [[nodiscard]] constexpr bool in_I(int k) const { return k >= 0 && k < m; }
  [[nodiscard]] constexpr bool in_J(int k) const { return k >= m && k < m + n; }

  friend bool operator==(const Dims&, const Dims&) = default;
};

inline void require_length(Eigen::Index len, const Dims& dims, const char* what) {
  if (len != dims.d()) {
    throw DimensionError(std::string(what) + ": expected length " + std::to_string(dims.d()) +
                         ", got " + std::to_string(len));
  }
}

// Tolerances ----------------------------------------------------------------

struct Tolerances {
  double region_eps = 1e-12;
  double ode_rel = 1e-10;
  double ode_abs = 1e-12;
  double q_zero_eps = 1e-300;

  void validate() const {
    if (!(region_eps > 0) || !(ode_rel > 0) || !(ode_abs > 0) || !(q_zero_eps > 0)) {
      throw ConfigError("Tolerances: all entries must be strictly positive");
    }
  }
};

// Regions -------------------------------------------------------------------

enum class Region { InteriorU, BoundaryU, PureImaginary, Outside };

inline const char* to_string(Region r) {
  switch (r) {
    case Region::InteriorU: return "InteriorU";
    case Region::BoundaryU: return "BoundaryU";
    case Region::PureImaginary: return "PureImaginary";
    case Region::Outside: return "Outside";
  }
  return "?";
}

/// Classification depends on Re u only. PureImaginary takes precedence over
/// BoundaryU (and over the vacuous InteriorU when m = 0).
inline Region classify_region(const ComplexPoint& u, const Dims& dims, const Tolerances& tol = {}) {
  require_length(u.size(), dims, "classify_region");
  const double eps = tol.region_eps;

  for (int k = dims.m; k < dims.d(); ++k) {
    if (std::abs(u[k].real()) > eps) return Region::Outside;
  }
  bool all_zero = true;
  bool all_strict = true;
  for (int k = 0; k < dims.m; ++k) {
    const double re = u[k].real();
    if (re > eps) return Region::Outside;
    if (std::abs(re) > eps) all_zero = false;
    if (!(re < -eps)) all_strict = false;
  }
  if (all_zero) return Region::PureImaginary;
  if (all_strict) return Region::InteriorU;
  return Region::BoundaryU;
}

[[nodiscard]] inline bool in_U(const ComplexPoint& u, const Dims& dims, const Tolerances& tol = {}) {
  return classify_region(u, dims, tol) != Region::Outside;
}

/// u in U°. With I empty, U° = U = iR^n.
[[nodiscard]] inline bool in_U_interior(const ComplexPoint& u, const Dims& dims,
                                        const Tolerances& tol = {}) {
  const Region r = classify_region(u, dims, tol);
  return r == Region::InteriorU || (dims.m == 0 && r == Region::PureImaginary);
}

[[nodiscard]] inline bool in_D(const StatePoint& x, const Dims& dims) {
  if (x.size() != dims.d()) return false;
  for (int k = 0; k < dims.m; ++k) {
    if (!(x[k] >= 0.0)) return false;
  }
  return x.allFinite();
}

inline void require_in_D(const StatePoint& x, const Dims& dims, const char* what) {
  require_length(x.size(), dims, what);
  if (!in_D(x, dims)) throw DomainError(std::string(what) + ": state point not in D");
}

// Exponential functional ----------------------------------------------------

/// f_u(x) = exp(<u, x>) with the bilinear (non-conjugating) pairing.
inline cplx exp_functional(const ComplexPoint& u, const StatePoint& x) {
  if (u.size() != x.size()) throw DimensionError("exp_functional: length mismatch");
  cplx s{0.0, 0.0};
  for (Eigen::Index k = 0; k < u.size(); ++k) s += u[k] * x[k];
  return std::exp(s);
}

inline cplx pairing(const CVec& u, const RVec& x) {
  cplx s{0.0, 0.0};
  for (Eigen::Index k = 0; k < u.size(); ++k) s += u[k] * x[k];
  return s;
}

inline CVec real_part_vec(const CVec& u) { return u.real().cast<cplx>(); }

}  // namespace affine
