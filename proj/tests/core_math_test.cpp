// SPDX-License-Identifier: Apache-2.0
#include <cmath>

#include <gtest/gtest.h>

#include "strnn/core_math.hpp"

namespace strnn {
namespace {

TEST(CoreMath, MatvecExamples) {
  EXPECT_EQ(matvec(Matrix::identity(3), Vector{1, 2, 3}), (Vector{1, 2, 3}));
  EXPECT_EQ(matvec(Matrix::zeros(2, 2), Vector{5, 7}), (Vector{0, 0}));
  EXPECT_EQ(matvec(Matrix{{1, 2}, {3, 4}}, Vector{1, 1}), (Vector{3, 7}));
}

TEST(CoreMath, MatvecRejectsMismatch) {
  EXPECT_THROW(matvec(Matrix(2, 3), Vector(2)), DimensionError);
  Vector out(2);
  EXPECT_THROW(matvec_acc(Matrix(2, 3), Vector(2).span(), out.span()), DimensionError);
}

TEST(CoreMath, IdentityIsExactOnRandomVectors) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(16);
    const Vector v = rng.uniform_vector(n, -1e3, 1e3);
    EXPECT_EQ(matvec(Matrix::identity(n), v), v);
    Vector acc(n);
    matvec_acc(Matrix::identity(n), v.span(), acc.span());
    EXPECT_EQ(acc, v);
  }
}

TEST(CoreMath, AccumulatingKernelsAgree) {
  Rng rng(11);
  const Matrix m = rng.uniform_matrix(5, 7, -1, 1);
  const Vector v = rng.uniform_vector(7, -1, 1);
  Vector a(5), b(5);
  matvec_acc(m, v.span(), a.span());
  matvec_acc_pretransposed(m.transposed(), v.span(), b.span());
  EXPECT_EQ(a, b);
  EXPECT_LT(max_abs_diff(a.span(), matvec(m, v).span()), 1e-14);

  const Vector u = rng.uniform_vector(5, -1, 1);
  Vector t(7);
  matvec_transposed_acc(m, u.span(), t.span());
  EXPECT_LT(max_abs_diff(t.span(), matvec(m.transposed(), u).span()), 1e-14);
}

TEST(CoreMath, OuterProductSparseAndDensePathsAgree) {
  const Vector a{1, 2};
  Matrix dense(2, 3), sparse(2, 8);
  outer_acc(a.span(), Vector{1, 2, 3}.span(), dense);
  EXPECT_EQ(dense, (Matrix{{1, 2, 3}, {2, 4, 6}}));
  outer_acc(a.span(), Vector::basis(8, 5).span(), sparse);
  EXPECT_EQ(sparse(0, 5), 1.0);
  EXPECT_EQ(sparse(1, 5), 2.0);
  EXPECT_EQ(sparse(1, 4), 0.0);
}

TEST(CoreMath, CoordwiseExamples) {
  EXPECT_EQ(coordwise(Unary::sigmoid(), Vector{0, 0}), (Vector{0.5, 0.5}));
  EXPECT_EQ(coordwise(Unary::relu(), Vector{-1, 2}), (Vector{0, 2}));
  EXPECT_EQ(coordwise(Unary::tanh(), Vector{0})[0], 0.0);
  EXPECT_NEAR(coordwise(Unary::tanh(), Vector{20})[0], 1.0, 1e-12);
  EXPECT_EQ(coordwise(Unary::scale(3), Vector{1, -2}), (Vector{3, -6}));
  EXPECT_EQ(coordwise(Unary::complement(), Vector{0.25}), (Vector{0.75}));
}

TEST(CoreMath, SquashingRangesAreOpen) {
  Rng rng(3);
  for (double x : {-1e6, -800.0, -40.0, -1.0, 0.0, 1e-9, 40.0, 800.0, 1e6}) {
    EXPECT_GT(sigmoid(x), 0.0) << x;
    EXPECT_LT(sigmoid(x), 1.0) << x;
    EXPECT_GT(tanh_open(x), -1.0) << x;
    EXPECT_LT(tanh_open(x), 1.0) << x;
  }
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(-100, 100);
    EXPECT_GT(sigmoid(x), 0.0);
    EXPECT_LT(sigmoid(x), 1.0);
    EXPECT_GT(tanh_open(x), -1.0);
    EXPECT_LT(tanh_open(x), 1.0);
  }
}

TEST(CoreMath, BinaryExamples) {
  EXPECT_EQ(hadamard(Vector{1, 2}, Vector{0, 5}), (Vector{0, 10}));
  EXPECT_EQ(coordwise_bin(BinaryOp::max, Vector{1, -1}, Vector{0, 0}), (Vector{1, 0}));
  EXPECT_EQ(coordwise_bin(BinaryOp::min, Vector{1, -1}, Vector{0, 0}), (Vector{0, -1}));
  EXPECT_EQ(Vector({1, 2}) + Vector({3, 4}), (Vector{4, 6}));
  EXPECT_EQ(Vector({1, 2}) - Vector({3, 4}), (Vector{-2, -2}));
  EXPECT_THROW(coordwise_bin(BinaryOp::add, Vector(2), Vector(3)), DimensionError);
}

TEST(CoreMath, SoftmaxExamples) {
  EXPECT_EQ(softmax(Vector{0, 0}), (Vector{0.5, 0.5}));
  for (double c : {-3.0, 0.0, 17.5}) {
    const Vector p = softmax(Vector{c, c, c, c});
    for (double x : p) EXPECT_DOUBLE_EQ(x, 0.25);
  }
  const Vector big = softmax(Vector{1000, 0});
  EXPECT_TRUE(all_finite(big.span()));
  EXPECT_NEAR(big[0], 1.0, 1e-300 + 1e-15);
  EXPECT_LT(big[1], 1e-300);
}

TEST(CoreMath, SoftmaxSumsToOneAndIsShiftInvariant) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    Vector v = rng.uniform_vector(n, -30, 30);
    const Vector p = softmax(v);
    double s = 0.0;
    for (double x : p) {
      EXPECT_GT(x, 0.0);
      s += x;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    const double shift = rng.uniform(-100, 100);
    for (double& x : v) x += shift;
    EXPECT_LT(max_abs_diff(p.span(), softmax(v).span()), 1e-12);
  }
}

TEST(CoreMath, RngIsDeterministic) {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  Rng c(1);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform(-0.08, 0.08);
    EXPECT_GE(u, -0.08);
    EXPECT_LT(u, 0.08);
  }
}

}  // namespace
}  // namespace strnn
