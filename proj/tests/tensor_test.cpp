#include <doctest.h>

#include <cmath>
#include <numbers>

#include "lieop/tensor.hpp"
#include "oracles.hpp"

using lieop::Matrix;

TEST_CASE("mat_mul: identity and permutation") {
  lieop::Rng rng(1);
  const Matrix a = rng.normal_matrix(3, 3);
  CHECK(lieop::mat_mul(Matrix::Identity(3, 3), a) == a);

  Matrix p(2, 2), q(2, 2), want(2, 2);
  p << 1, 2, 3, 4;
  q << 0, 1, 1, 0;
  want << 2, 1, 4, 3;
  CHECK(lieop::mat_mul(p, q) == want);
}

TEST_CASE("mat_mul: agrees with the triple loop on a 5x7 by 7x3 product") {
  lieop::Rng rng(2);
  const Matrix a = rng.normal_matrix(5, 7);
  const Matrix b = rng.normal_matrix(7, 3);
  const Matrix got = lieop::mat_mul(a, b);
  REQUIRE(got.rows() == 5);
  REQUIRE(got.cols() == 3);
  CHECK((got - oracle::naive_matmul(a, b)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mat_mul: shape mismatch names both shapes") {
  const Matrix a = Matrix::Zero(2, 3), b = Matrix::Zero(2, 3);
  try {
    (void)lieop::mat_mul(a, b);
    FAIL("expected DimensionError");
  } catch (const lieop::DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("2x3", msg.find("2x3") + 1) != std::string::npos);
  }
}

TEST_CASE("mat_exp: closed forms") {
  CHECK((lieop::mat_exp(Matrix::Zero(4, 4)) - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-15);

  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 1.0;
  d(1, 1) = 2.0;
  const Matrix ed = lieop::mat_exp(d);
  CHECK(std::abs(ed(0, 0) - std::exp(1.0)) < 1e-14);
  CHECK(std::abs(ed(1, 1) - std::exp(2.0)) < 1e-13);
  CHECK(std::abs(ed(0, 1)) == 0.0);

  Matrix j(2, 2);
  j << 0, -1, 1, 0;
  const Matrix quarter = lieop::mat_exp((std::numbers::pi / 2) * j);
  CHECK((quarter - j).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((oracle::taylor_exp((std::numbers::pi / 2) * j) - j).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("mat_exp: non-square input is rejected") {
  CHECK_THROWS_AS(lieop::mat_exp(Matrix::Zero(2, 3)), lieop::DimensionError);
}

TEST_CASE("mat_exp: large norms go through scaling and squaring") {
  lieop::Rng rng(3);
  // Symmetric: compare against the spectral formula Q exp(D) Q^T.
  const Matrix sym = oracle::random_with_norm(rng, 6, 6, 1.0);
  const Matrix a = 20.0 * (sym + sym.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(a);
  const Matrix spectral =
      eig.eigenvectors() * eig.eigenvalues().array().exp().matrix().asDiagonal() * eig.eigenvectors().transpose();
  CHECK(oracle::frobenius_relative_error(lieop::mat_exp(a), spectral) < 1e-11);

  // Skew-symmetric with norm 40 stays orthogonal after the squarings.
  const Matrix skew = oracle::random_with_norm(rng, 6, 6, 40.0);
  const Matrix q = lieop::mat_exp(skew - skew.transpose());
  CHECK((q.transpose() * q - Matrix::Identity(6, 6)).norm() < 1e-11);
}

TEST_CASE("mat_exp: overflow is reported") {
  const Matrix big = 1e4 * Matrix::Identity(2, 2);
  CHECK_THROWS_AS(lieop::mat_exp(big), lieop::NumericalError);
}

TEST_CASE("mat_exp properties on random inputs") {
  lieop::Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.index(7));
    const Matrix a = oracle::random_with_norm(rng, n, n, rng.uniform(0.05, 2.0));
    const Matrix ident = Matrix::Identity(n, n);

    // Inverse.
    CHECK((lieop::mat_exp(a) * lieop::mat_exp(-a) - ident).norm() < 1e-9);

    // One-parameter subgroup.
    const double t1 = rng.uniform(-1, 1), t2 = rng.uniform(-1, 1);
    CHECK((lieop::mat_exp(t1 * a) * lieop::mat_exp(t2 * a) - lieop::mat_exp((t1 + t2) * a)).norm() < 1e-9);

    // Skew-symmetric generators give orthogonal matrices.
    const Matrix skew = 0.5 * (a - a.transpose());
    const Matrix q = lieop::mat_exp(skew);
    CHECK((q.transpose() * q - ident).norm() < 1e-9);
    const lieop::Vector v = rng.normal_matrix(n, 1).col(0);
    CHECK(std::abs((q * v).norm() - v.norm()) < 1e-9);
  }
}

TEST_CASE("mat_exp matches the 30-term Taylor oracle for norm <= 1") {
  lieop::Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.index(8));
    const Matrix a = oracle::random_with_norm(rng, n, n, rng.uniform(0.0, 1.0));
    CHECK(oracle::frobenius_relative_error(lieop::mat_exp(a), oracle::taylor_exp(a)) < 1e-10);
  }
}

TEST_CASE("mat_exp_frechet: closed forms") {
  lieop::Rng rng(6);
  const Matrix e = rng.normal_matrix(3, 3);

  const auto at_zero = lieop::mat_exp_frechet(Matrix::Zero(3, 3), e);
  CHECK((at_zero.exp - Matrix::Identity(3, 3)).norm() < 1e-15);
  CHECK((at_zero.frechet - e).norm() < 1e-14);

  const double alpha = 0.7;
  const auto scalar = lieop::mat_exp_frechet(alpha * Matrix::Identity(3, 3), e);
  CHECK((scalar.frechet - std::exp(alpha) * e).norm() < 1e-13);
}

TEST_CASE("mat_exp_frechet: central finite differences on random 4x4 pairs") {
  lieop::Rng rng(7);
  const auto f = [](const Matrix& x) { return lieop::mat_exp(x); };
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = rng.normal_matrix(4, 4);
    const Matrix e = rng.normal_matrix(4, 4);
    const auto got = lieop::mat_exp_frechet(a, e);
    CHECK(oracle::frobenius_relative_error(got.exp, lieop::mat_exp(a)) < 1e-14);
    CHECK(oracle::frobenius_relative_error(got.frechet, oracle::central_difference(f, a, e)) < 1e-6);
  }
}

TEST_CASE("mat_exp_frechet: shape checks") {
  CHECK_THROWS_AS(lieop::mat_exp_frechet(Matrix::Zero(3, 3), Matrix::Zero(2, 2)), lieop::DimensionError);
  CHECK_THROWS_AS(lieop::mat_exp_frechet(Matrix::Zero(3, 2), Matrix::Zero(3, 2)), lieop::DimensionError);
}

TEST_CASE("Frechet adjoint satisfies <G, E> = <C, L(A, E)>") {
  lieop::Rng rng(8);
  const Matrix a = rng.normal_matrix(5, 5);
  const Matrix c = rng.normal_matrix(5, 5);
  const Matrix e = rng.normal_matrix(5, 5);
  const Matrix g = lieop::mat_exp_frechet_adjoint(a, c);
  const double lhs = g.cwiseProduct(e).sum();
  const double rhs = c.cwiseProduct(lieop::mat_exp_frechet(a, e).frechet).sum();
  CHECK(std::abs(lhs - rhs) < 1e-11 * std::max(1.0, std::abs(rhs)));
}

TEST_CASE("mat_exp is generic over the scalar type") {
  Eigen::MatrixXf a = Eigen::MatrixXf::Zero(2, 2);
  a(0, 1) = -1.0f;
  a(1, 0) = 1.0f;
  const Eigen::MatrixXf r = lieop::mat_exp(a);
  CHECK(std::abs(r(0, 0) - std::cos(1.0f)) < 1e-6f);
}
