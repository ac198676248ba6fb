#pragma once

// Dense real linear algebra used throughout the library: products, the matrix
// exponential (scaling and squaring with a degree-13 Pade approximant) and its
// Frechet derivative via the block-triangular embedding
//
//   exp([[A, E], [0, A]]) = [[exp(A), L(A, E)], [0, exp(A)]].

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <sstream>
#include <string>
#include <utility>

#include "lieop/errors.hpp"

namespace lieop {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

namespace detail {

inline std::string shape_str(Eigen::Index rows, Eigen::Index cols) {
  std::ostringstream os;
  os << rows << "x" << cols;
  return os.str();
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& a) {
  return a.allFinite();
}

}  // namespace detail

template <typename DA, typename DB>
[[noreturn]] void throw_shape_mismatch(const char* op, const Eigen::MatrixBase<DA>& a,
                                       const Eigen::MatrixBase<DB>& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " +
                       detail::shape_str(a.rows(), a.cols()) + " and " +
                       detail::shape_str(b.rows(), b.cols()));
}

/// Matrix product with a shape check that reports both operands.
template <typename DA, typename DB>
MatrixX<typename DA::Scalar> mat_mul(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  if (a.cols() != b.rows()) throw_shape_mismatch("mat_mul", a, b);
  MatrixX<typename DA::Scalar> out(a.rows(), b.cols());
  out.noalias() = a * b;
  return out;
}

template <typename Derived>
void require_square(const char* op, const Eigen::MatrixBase<Derived>& a) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw DimensionError(std::string(op) + ": expected a non-empty square matrix, got " +
                         detail::shape_str(a.rows(), a.cols()));
  }
}

/// Largest 1-norm for which the unscaled degree-13 approximant is accurate
/// to double precision (Higham 2005).
inline constexpr double kPade13Theta = 5.371920351148152;

/// exp(a) by scaling and squaring around a degree-13 Pade approximant.
template <typename Derived>
MatrixX<typename Derived::Scalar> mat_exp(const Eigen::MatrixBase<Derived>& a_in) {
  using Scalar = typename Derived::Scalar;
  using Mat = MatrixX<Scalar>;
  require_square("mat_exp", a_in);

  static constexpr std::array<double, 14> b = {
      64764752532480000.0, 32382376266240000.0, 7771770303897600.0, 1187353796428800.0,
      129060195264000.0,   10559470521600.0,    670442572800.0,     33522128640.0,
      1323241920.0,        40840800.0,          960960.0,           16380.0,
      182.0,               1.0};

  const Eigen::Index n = a_in.rows();
  Mat a = a_in;
  const Scalar norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm1 > Scalar(kPade13Theta)) {
    squarings = static_cast<int>(std::ceil(std::log2(norm1 / Scalar(kPade13Theta))));
    a /= std::ldexp(Scalar(1), squarings);
  }

  const Mat ident = Mat::Identity(n, n);
  const Mat a2 = a * a;
  const Mat a4 = a2 * a2;
  const Mat a6 = a4 * a2;

  Mat inner = Scalar(b[13]) * a6 + Scalar(b[11]) * a4 + Scalar(b[9]) * a2;
  Mat u_tmp = a6 * inner;
  u_tmp += Scalar(b[7]) * a6 + Scalar(b[5]) * a4 + Scalar(b[3]) * a2 + Scalar(b[1]) * ident;
  const Mat u = a * u_tmp;

  inner = Scalar(b[12]) * a6 + Scalar(b[10]) * a4 + Scalar(b[8]) * a2;
  Mat v = a6 * inner;
  v += Scalar(b[6]) * a6 + Scalar(b[4]) * a4 + Scalar(b[2]) * a2 + Scalar(b[0]) * ident;

  const Mat numer = v + u;
  const Mat denom = v - u;
  Mat result = denom.partialPivLu().solve(numer);
  for (int i = 0; i < squarings; ++i) result = result * result;

  if (a_in.allFinite() && !result.allFinite()) {
    throw NumericalError("mat_exp: result overflowed (input 1-norm " + std::to_string(double(norm1)) +
                         ")");
  }
  return result;
}

/// exp(a) together with the Frechet derivative L(a, e) = d/ds exp(a + s e) at s = 0.
template <typename Scalar>
struct ExpFrechet {
  MatrixX<Scalar> exp;
  MatrixX<Scalar> frechet;
};

template <typename DA, typename DE>
ExpFrechet<typename DA::Scalar> mat_exp_frechet(const Eigen::MatrixBase<DA>& a,
                                                const Eigen::MatrixBase<DE>& e) {
  using Scalar = typename DA::Scalar;
  require_square("mat_exp_frechet", a);
  if (a.rows() != e.rows() || a.cols() != e.cols()) throw_shape_mismatch("mat_exp_frechet", a, e);

  const Eigen::Index n = a.rows();
  MatrixX<Scalar> block = MatrixX<Scalar>::Zero(2 * n, 2 * n);
  block.topLeftCorner(n, n) = a;
  block.topRightCorner(n, n) = e;
  block.bottomRightCorner(n, n) = a;
  const MatrixX<Scalar> big = mat_exp(block);
  return {big.topLeftCorner(n, n), big.topRightCorner(n, n)};
}

/// Adjoint of the Frechet derivative: the matrix G such that
/// <G, E> = <cotangent, L(a, E)> for all E. Equals L(a^T, cotangent).
template <typename DA, typename DC>
MatrixX<typename DA::Scalar> mat_exp_frechet_adjoint(const Eigen::MatrixBase<DA>& a,
                                                     const Eigen::MatrixBase<DC>& cotangent) {
  return mat_exp_frechet(a.transpose(), cotangent).frechet;
}

}  // namespace lieop
