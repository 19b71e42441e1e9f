#pragma once

// Matrix exponential by scaling and squaring with a degree-13 Pade
// approximant (Higham, "The scaling and squaring method for the matrix
// exponential revisited", 2005).

#include "affine/core.hpp"

#include <array>
#include <cmath>

namespace affine {

namespace detail {

template <typename Mat>
Mat pade_exp(const Mat& A, int degree) {
  using Scalar = typename Mat::Scalar;
  static constexpr std::array<double, 4> c3{120., 60., 12., 1.};
  static constexpr std::array<double, 6> c5{30240., 15120., 3360., 420., 30., 1.};
  static constexpr std::array<double, 8> c7{17297280., 8648640., 1995840., 277200.,
                                            25200.,    1512.,    56.,     1.};
  static constexpr std::array<double, 10> c9{17643225600., 8821612800., 2075673600., 302702400.,
                                             30270240.,    2162160.,    110880.,     3960.,
                                             90.,          1.};
  static constexpr std::array<double, 14> c13{
      64764752532480000., 32382376266240000., 7771770303897600., 1187353796428800.,
      129060195264000.,   10559470521600.,    670442572800.,     33522128640.,
      1323241920.,        40840800.,          960960.,           16380.,
      182.,               1.};

  const Eigen::Index n = A.rows();
  const Mat Id = Mat::Identity(n, n);
  const Mat A2 = A * A;
  Mat U, V;

  auto low_degree = [&](const auto& c) {
    const int last = static_cast<int>(c.size()) - 1;
    Mat Apow = Id;
    Mat Uacc = Mat::Zero(n, n);
    Mat Vacc = Mat::Zero(n, n);
    for (int k = 0; k <= last; k += 2) {
      Vacc += Scalar(c[k]) * Apow;
      Uacc += Scalar(c[k + 1]) * Apow;
      Apow = Apow * A2;
    }
    U = A * Uacc;
    V = Vacc;
  };

  switch (degree) {
    case 3: low_degree(c3); break;
    case 5: low_degree(c5); break;
    case 7: low_degree(c7); break;
    case 9: low_degree(c9); break;
    default: {
      const Mat A4 = A2 * A2;
      const Mat A6 = A4 * A2;
      const auto& b = c13;
      U = A * (A6 * (Scalar(b[13]) * A6 + Scalar(b[11]) * A4 + Scalar(b[9]) * A2) +
               Scalar(b[7]) * A6 + Scalar(b[5]) * A4 + Scalar(b[3]) * A2 + Scalar(b[1]) * Id);
      V = A6 * (Scalar(b[12]) * A6 + Scalar(b[10]) * A4 + Scalar(b[8]) * A2) +
          Scalar(b[6]) * A6 + Scalar(b[4]) * A4 + Scalar(b[2]) * A2 + Scalar(b[0]) * Id;
    }
  }
  return (V - U).partialPivLu().solve(V + U);
}

}  // namespace detail

/// exp(t A) for a real or complex square matrix.
template <typename Derived>
auto matrix_exp(const Eigen::MatrixBase<Derived>& A_in, double t = 1.0) {
  using Mat = Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  if (A_in.rows() != A_in.cols()) throw DimensionError("matrix_exp: matrix must be square");
  Mat A = A_in.eval() * typename Derived::Scalar(t);
  if (!A.allFinite()) throw NumericalFailure("matrix_exp: non-finite entries");
  const Eigen::Index n = A.rows();
  if (n == 0) return Mat(0, 0);

  // theta_m thresholds on the 1-norm from Higham (2005), Table 2.3.
  static constexpr std::array<std::pair<int, double>, 4> thresholds{
      {{3, 1.495585217958292e-2}, {5, 2.539398330063230e-1}, {7, 9.504178996162932e-1},
       {9, 2.097847961257068e0}}};
  constexpr double theta13 = 5.371920351148152e0;

  const double norm1 = A.cwiseAbs().colwise().sum().maxCoeff();
  for (const auto& [deg, theta] : thresholds) {
    if (norm1 <= theta) return detail::pade_exp(A, deg);
  }
  int squarings = 0;
  if (norm1 > theta13) squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / theta13))));
  A /= typename Derived::Scalar(std::ldexp(1.0, squarings));
  Mat E = detail::pade_exp(A, 13);
  for (int k = 0; k < squarings; ++k) E = E * E;
  return E;
}

}  // namespace affine
