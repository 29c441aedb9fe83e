#include <Eigen/Dense>
#include <cmath>

#include "doctest.h"
#include "ncal/numerics.hpp"
#include "ncal/rng.hpp"

using ncal::cdouble;
using ncal::CMatrix;

namespace {

CMatrix random_matrix(ncal::Rng& rng, std::size_t rows, std::size_t cols) {
  CMatrix out(rows, cols);
  for (cdouble& z : out.entries()) z = rng.complex_gaussian(1.0);
  return out;
}

CMatrix naive_matmul(const CMatrix& a, const CMatrix& b) {
  CMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      cdouble acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

// U diag(s) W^H with Haar-like unitaries and singular values spread
// log-uniformly from 1 down to 1/cond.
CMatrix with_condition(ncal::Rng& rng, std::size_t n, double cond) {
  auto unitary = [&] {
    Eigen::MatrixXcd g(n, n);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.complex_gaussian(1.0);
    return Eigen::MatrixXcd(Eigen::HouseholderQR<Eigen::MatrixXcd>(g).householderQ());
  };
  const Eigen::MatrixXcd u = unitary();
  const Eigen::MatrixXcd w = unitary();
  Eigen::VectorXd s(n);
  for (std::size_t i = 0; i < n; ++i) {
    s(static_cast<Eigen::Index>(i)) = std::pow(cond, -static_cast<double>(i) / static_cast<double>(n - 1));
  }
  const Eigen::MatrixXcd a = u * s.asDiagonal() * w.adjoint();
  CMatrix out(n, n);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) out(r, c) = a(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  }
  return out;
}

double rel_frob(const CMatrix& a, const CMatrix& b) { return ncal::frob_norm(a - b) / ncal::frob_norm(b); }

}  // namespace

TEST_CASE("matmul basics") {
  const CMatrix a{{1.0, 2.0}, {3.0, 4.0}};
  CHECK(ncal::matmul(CMatrix::identity(2), a) == a);
  const CMatrix j{{cdouble(0, 1)}};
  CHECK(ncal::matmul(j, j) == CMatrix{{-1.0}});
}

TEST_CASE("matmul matches triple loop") {
  ncal::Rng rng(11);
  const CMatrix a = random_matrix(rng, 3, 4);
  const CMatrix b = random_matrix(rng, 4, 2);
  CHECK(ncal::max_abs_diff(ncal::matmul(a, b), naive_matmul(a, b)) <= 1e-14);
}

TEST_CASE("matmul dimension mismatch names both shapes") {
  const CMatrix a(2, 3);
  const CMatrix b(2, 3);
  try {
    (void)ncal::matmul(a, b);
    FAIL("expected DimensionMismatch");
  } catch (const ncal::DimensionMismatch& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
}

TEST_CASE("hermitian") {
  const CMatrix a{{cdouble(1, 1)}};
  CHECK(ncal::hermitian(a) == CMatrix{{cdouble(1, -1)}});
  const CMatrix sym{{1.0, 2.0}, {2.0, 5.0}};
  CHECK(ncal::hermitian(sym) == sym);
  const CMatrix r{{cdouble(1, 2), 3.0, cdouble(0, -1)}, {4.0, cdouble(5, 5), 6.0}};
  const CMatrix h = ncal::hermitian(r);
  REQUIRE(h.rows() == 3);
  REQUIRE(h.cols() == 2);
  CHECK(h(0, 0) == cdouble(1, -2));
  CHECK(h(2, 0) == cdouble(0, 1));
  CHECK(h(1, 1) == cdouble(5, -5));
  CHECK(ncal::hermitian(h) == r);
}

TEST_CASE("inverse examples") {
  const CMatrix d{{1.0, 0.0}, {0.0, 2.0}};
  CHECK(ncal::max_abs_diff(ncal::inverse(d), CMatrix{{1.0, 0.0}, {0.0, 0.5}}) == 0.0);
  CHECK(ncal::inverse(CMatrix::identity(4)) == CMatrix::identity(4));
  ncal::Rng rng(12);
  const CMatrix a = random_matrix(rng, 5, 5);
  CHECK(ncal::frob_norm(ncal::matmul(ncal::inverse(a), a) - CMatrix::identity(5)) <= 1e-10);
}

TEST_CASE("inverse reports the singular pivot") {
  const CMatrix s{{1.0, 2.0}, {2.0, 4.0}};
  try {
    (void)ncal::inverse(s);
    FAIL("expected SingularMatrix");
  } catch (const ncal::SingularMatrix& e) {
    CHECK(e.pivot_index() == 1);
  }
  CHECK_THROWS_AS((void)ncal::inverse(CMatrix(3, 3)), ncal::SingularMatrix);
  CHECK_THROWS_AS((void)ncal::inverse(CMatrix(2, 3)), ncal::DimensionMismatch);
}

TEST_CASE("inverse round trip on conditioned matrices") {
  ncal::Rng rng(13);
  for (double cond : {1e2, 1e4, 1e6}) {
    for (int rep = 0; rep < 10; ++rep) {
      const CMatrix a = with_condition(rng, 6, cond);
      const double resid = ncal::frob_norm(ncal::matmul(a, ncal::inverse(a)) - CMatrix::identity(6));
      CAPTURE(cond);
      CHECK(resid <= 1e-10 * ncal::frob_norm(a));
    }
  }
  // At condition 1e8 a unit-norm matrix cannot reach 1e-10: rounding the
  // exact inverse to double already leaves a residual near u * cond. Check
  // the backward-stability bound instead.
  for (int rep = 0; rep < 10; ++rep) {
    const CMatrix a = with_condition(rng, 6, 1e8);
    const CMatrix inv = ncal::inverse(a);
    const double resid = ncal::frob_norm(ncal::matmul(a, inv) - CMatrix::identity(6));
    CHECK(resid <= 1e-14 * ncal::frob_norm(a) * ncal::frob_norm(inv));
  }
}

TEST_CASE("right pseudo-inverse") {
  const CMatrix unit_row{{1.0, 0.0}};
  CHECK(ncal::right_pinv(unit_row) == CMatrix{{1.0}, {0.0}});
  CMatrix two_i = CMatrix::identity(3);
  two_i *= 2.0;
  CMatrix half_i = CMatrix::identity(3);
  half_i *= 0.5;
  CHECK(ncal::max_abs_diff(ncal::right_pinv(two_i), half_i) <= 1e-15);
  ncal::Rng rng(14);
  const CMatrix x = random_matrix(rng, 4, 8);
  CHECK(ncal::frob_norm(ncal::matmul(x, ncal::right_pinv(x)) - CMatrix::identity(4)) <= 1e-10);
  const CMatrix dup{{1.0, 2.0, 3.0}, {1.0, 2.0, 3.0}};
  CHECK_THROWS_AS((void)ncal::right_pinv(dup), ncal::SingularMatrix);
}

TEST_CASE("frobenius norm") {
  CHECK(ncal::frob_norm_sq(CMatrix::identity(3)) == 3.0);
  CHECK(ncal::frob_norm_sq(CMatrix{{cdouble(3, 4)}}) == 25.0);
  ncal::Rng rng(15);
  const CMatrix a = random_matrix(rng, 4, 6);
  const double tr = ncal::trace(ncal::matmul(a, ncal::hermitian(a))).real();
  CHECK(std::abs(ncal::frob_norm_sq(a) - tr) <= 1e-12 * tr);
}

TEST_CASE("algebraic properties on random operands") {
  ncal::Rng rng(16);
  for (int rep = 0; rep < 20; ++rep) {
    const CMatrix a = random_matrix(rng, 3, 5);
    const CMatrix b = random_matrix(rng, 5, 4);
    const CMatrix c = random_matrix(rng, 4, 2);
    const CMatrix left = ncal::matmul(ncal::matmul(a, b), c);
    const CMatrix right = ncal::matmul(a, ncal::matmul(b, c));
    CHECK(rel_frob(left, right) <= 1e-12);
    const CMatrix h1 = ncal::hermitian(ncal::matmul(a, b));
    const CMatrix h2 = ncal::matmul(ncal::hermitian(b), ncal::hermitian(a));
    CHECK(ncal::max_abs_diff(h1, h2) <= 1e-13);
  }
}

TEST_CASE("constructor checks entry count") {
  CHECK_THROWS_AS(CMatrix(2, 2, std::vector<cdouble>(3)), ncal::DimensionMismatch);
  CHECK(CMatrix(2, 3).size() == 6);
}
