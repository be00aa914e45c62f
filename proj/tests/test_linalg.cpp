#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "prefixlab/linalg.hpp"
#include "prefixlab/random.hpp"

using namespace prefixlab;

namespace {

Eigen::MatrixXd to_eigen(const Matrix& a) {
  Eigen::MatrixXd e(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) e(i, j) = a(i, j);
  return e;
}

Matrix reconstruct(const SVDResult& f) {
  Matrix us = f.U;
  for (std::size_t i = 0; i < us.rows(); ++i)
    for (std::size_t j = 0; j < us.cols(); ++j) us(i, j) *= f.S[j];
  return matmul(us, f.Vt);
}

}  // namespace

TEST(Matrix, RejectsWrongLengthAndNonFinite) {
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
  EXPECT_THROW(Matrix(1, 1, std::vector<double>{NAN}), std::invalid_argument);
  EXPECT_THROW((Matrix{{1, 2}, {3}}), ShapeError);
}

TEST(Matrix, MatmulShapeMismatchNamesShapes) {
  try {
    matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos);
  }
}

TEST(Matrix, MatmulAgainstHandProduct) {
  const Matrix a{{1, 2}, {3, 4}};
  const Matrix b{{5, 6}, {7, 8}};
  EXPECT_EQ(matmul(a, b), (Matrix{{19, 22}, {43, 50}}));
  EXPECT_EQ(transpose(a), (Matrix{{1, 3}, {2, 4}}));
}

TEST(Svd, SingularValuesMatchEigenOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t r = 1 + rng.integer(0, 11);
    const std::size_t c = 1 + rng.integer(0, 11);
    const Matrix a = rng.normal_matrix(r, c);
    const SVDResult f = svd(a);
    const Eigen::VectorXd ref = Eigen::JacobiSVD<Eigen::MatrixXd>(to_eigen(a)).singularValues();
    ASSERT_EQ(f.S.size(), static_cast<std::size_t>(ref.size()));
    for (std::size_t i = 0; i < f.S.size(); ++i) EXPECT_NEAR(f.S[i], ref(i), 1e-10) << "trial " << trial;
    EXPECT_LE(max_abs_diff(reconstruct(f), a), 1e-10);
    EXPECT_LE(max_abs_diff(matmul(transpose(f.U), f.U), Matrix::identity(f.S.size())), 1e-10);
    EXPECT_LE(max_abs_diff(matmul(f.Vt, transpose(f.Vt)), Matrix::identity(f.S.size())), 1e-10);
    EXPECT_TRUE(std::is_sorted(f.S.rbegin(), f.S.rend()));
  }
}

TEST(Svd, RankDeficientSquareConverges) {
  Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const Matrix a = matmul(rng.normal_matrix(8, 2), rng.normal_matrix(2, 8));
    const SVDResult f = svd(a);
    EXPECT_LE(max_abs_diff(reconstruct(f), a), 1e-10);
    EXPECT_EQ(numerical_rank(a), 2u);
  }
}

TEST(Svd, ZeroMatrixHasZeroSpectrum) {
  const SVDResult f = svd(Matrix(3, 4));
  for (double s : f.S) EXPECT_EQ(s, 0.0);
  EXPECT_EQ(numerical_rank(Matrix(3, 4)), 0u);
}

TEST(Svd, RejectsNonFinite) {
  Matrix a(2, 2);
  a(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(svd(a), std::invalid_argument);
}

TEST(Rank, ReferenceScaleIgnoresCancellationNoise) {
  // Rank-1 product whose entries cancel to ~1e-6 relative to its factors.
  Matrix x(3, 2);
  x(0, 0) = 1.0;
  x(1, 0) = -2.0;
  x(2, 0) = 0.5;
  Matrix w(2, 4);
  w(0, 0) = 1e-6;
  w(0, 1) = 3e-6;
  w(1, 2) = 5.0;
  Matrix p = matmul(x, w);
  p(1, 3) += 1e-17;
  EXPECT_EQ(numerical_rank(p, frobenius_norm(x) * frobenius_norm(w)), 1u);
}

TEST(Subspace, SpanOfRowsHasNumericalRankDimension) {
  Rng rng(2);
  const Matrix a = matmul(rng.normal_matrix(6, 3), rng.normal_matrix(3, 7));
  const Subspace s = span_of_rows(a);
  EXPECT_EQ(s.dim(), 3u);
  EXPECT_LE(max_abs_diff(matmul(transpose(s.basis()), s.basis()), Matrix::identity(3)), 1e-12);
  // Every row of a lies in the span.
  EXPECT_LE(frobenius_norm(matmul(a, complement_projector(s))), 1e-10 * frobenius_norm(a));
}

TEST(Subspace, DependentSpanningColumnsThrow) {
  EXPECT_THROW(Subspace(2, Matrix{{1, 2}, {1, 2}}), NumericalError);
}

TEST(Subspace, ComplementProjectorIsIdempotentAndSymmetric) {
  Rng rng(3);
  const Subspace s = random_subspace(rng, 6, 2);
  const Matrix p = complement_projector(s);
  EXPECT_LE(max_abs_diff(matmul(p, p), p), 1e-12);
  EXPECT_LE(max_abs_diff(transpose(p), p), 1e-15);
  EXPECT_NEAR(trace(p), 4.0, 1e-12);
  EXPECT_EQ(orthogonal_complement(s).dim(), 4u);
}

TEST(PrincipalAngles, IdenticalSubspacesAreAtZero) {
  Rng rng(4);
  const Subspace s = random_subspace(rng, 9, 4);
  const Subspace same(9, matmul(s.basis(), rng.normal_matrix(4, 4)));
  EXPECT_LE(principal_angle_distance(s, same), 1e-12);
}

TEST(PrincipalAngles, OrthogonalAndUnmatchedDimensions) {
  const Subspace e1(3, Matrix{{1}, {0}, {0}});
  const Subspace e2(3, Matrix{{0}, {1}, {0}});
  const Subspace e12(3, Matrix{{1, 0}, {0, 1}, {0, 0}});
  EXPECT_NEAR(principal_angle_distance(e1, e2), std::numbers::pi / 2, 1e-15);
  EXPECT_NEAR(principal_angle_distance(e1, e12), std::numbers::pi / 2, 1e-15);
  EXPECT_NEAR(principal_angle_distance(e12, e12), 0.0, 1e-15);
  EXPECT_THROW(principal_angle_distance(e1, Subspace(4)), ShapeError);
}

TEST(PrincipalAngles, KnownAngle) {
  const double t = 0.3;
  const Subspace a(2, Matrix{{1}, {0}});
  const Subspace b(2, Matrix{{std::cos(t)}, {std::sin(t)}});
  EXPECT_NEAR(principal_angle_distance(a, b), t, 1e-14);
}

TEST(RandomSubspace, WithinHostStaysInHost) {
  Rng rng(6);
  const Subspace host = random_subspace(rng, 8, 5);
  const Subspace u = random_subspace_within(rng, host, 3);
  EXPECT_LE(frobenius_norm(matmul(complement_projector(host), u.basis())), 1e-12);
  EXPECT_THROW(random_subspace_within(rng, host, 6), ShapeError);
}
