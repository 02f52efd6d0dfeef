// SPDX-License-Identifier: Apache-2.0
#include <stdexcept>
#include <Eigen/Dense>
#include <cmath>

#include "doctest.h"
#include "invariants.hpp"
#include "pcdp/linalg.hpp"
#include "pcdp/rng.hpp"

using namespace pcdp;
using linalg::DenseMatrix;
using linalg::OrthoBasis;

namespace {

OrthoBasis span_of(std::vector<std::vector<double>> vs, std::size_t dim) {
  return linalg::orthonormalize(std::move(vs), dim);
}

// Top-k eigenvectors of A^T A from Eigen's dense symmetric solver.
OrthoBasis dense_oracle(const DenseMatrix& a, std::size_t k) {
  Eigen::MatrixXd m(a.rows, a.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) m(i, j) = a(i, j);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.transpose() * m);
  OrthoBasis b;
  b.dim = a.cols;
  b.k = k;
  for (std::size_t j = 0; j < k; ++j) {
    const Eigen::Index col = static_cast<Eigen::Index>(a.cols - 1 - j);
    for (std::size_t i = 0; i < a.cols; ++i) b.vectors.push_back(es.eigenvectors()(static_cast<Eigen::Index>(i), col));
    b.eigvals.push_back(es.eigenvalues()(col));
  }
  return b;
}

// Exact ||P1 - P2||_2 from the dense projector difference.
double dense_projector_distance(const OrthoBasis& b1, const OrthoBasis& b2) {
  const auto dim = static_cast<Eigen::Index>(b1.dim);
  auto proj = [dim](const OrthoBasis& b) {
    Eigen::MatrixXd v(dim, static_cast<Eigen::Index>(b.k));
    for (std::size_t j = 0; j < b.k; ++j)
      for (Eigen::Index i = 0; i < dim; ++i) v(i, static_cast<Eigen::Index>(j)) = b.column(j)[static_cast<std::size_t>(i)];
    return Eigen::MatrixXd(v * v.transpose());
  };
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(proj(b1) - proj(b2));
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

DenseMatrix random_matrix(std::size_t r, std::size_t c, SeededRng& rng) {
  DenseMatrix a(r, c);
  for (auto& x : a.data) x = rng.normal();
  return a;
}

}  // namespace

TEST_SUITE("linalg") {
  TEST_CASE("rng streams are reproducible and forks are independent") {
    SeededRng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    CHECK(SeededRng(42).next_u64() != c.next_u64());
    CHECK(SeededRng(7).fork("noise").next_u64() == SeededRng(7).fork("noise").next_u64());
    CHECK(SeededRng(7).fork("noise").next_u64() != SeededRng(7).fork("mask").next_u64());
    CHECK(SeededRng(7).fork("client", 1).next_u64() != SeededRng(7).fork("client", 2).next_u64());
    SeededRng u(3);
    for (int i = 0; i < 1000; ++i) {
      const double x = u.uniform();
      CHECK((x >= 0.0 && x < 1.0));
      CHECK(u.uniform_index(7) < 7);
    }
  }

  TEST_CASE("two identical rows give one direction with eigenvalue 2") {
    DenseMatrix a(2, 3);
    a(0, 0) = a(1, 0) = 1.0;
    const auto b = linalg::topk_right_singular(a, 1);
    REQUIRE(b.k == 1);
    CHECK(std::abs(std::abs(b.column(0)[0]) - 1.0) < 1e-12);
    CHECK(b.eigvals[0] == doctest::Approx(2.0).epsilon(1e-12));
  }

  TEST_CASE("orthogonal rows span diag(1,1,0) with unit eigenvalues") {
    DenseMatrix a(2, 3);
    a(0, 0) = a(1, 1) = 1.0;
    const auto b = linalg::topk_right_singular(a, 2);
    REQUIRE(b.k == 2);
    for (std::size_t i = 0; i < 3; ++i) {
      std::vector<double> e(3, 0.0);
      e[i] = 1.0;
      const auto p = linalg::project(b, e);
      for (std::size_t j = 0; j < 3; ++j) CHECK(std::abs(p[j] - (i == j && i < 2 ? 1.0 : 0.0)) < 1e-12);
    }
    CHECK(b.eigvals[0] == doctest::Approx(1.0));
    CHECK(b.eigvals[1] == doctest::Approx(1.0));
  }

  TEST_CASE("rank truncation is flagged and k <= 0 is rejected") {
    DenseMatrix a(3, 5);
    a(0, 0) = 1.0;
    a(1, 0) = 2.0;
    a(2, 1) = 1.0;
    const auto b = linalg::topk_right_singular(a, 4);
    CHECK(b.k == 2);
    CHECK(b.truncated);
    CHECK(b.requested_k == 4);
    CHECK_THROWS_AS(linalg::topk_right_singular(a, 0), std::invalid_argument);
    CHECK_THROWS_AS(linalg::topk_right_singular(DenseMatrix(2, 3), 1), std::invalid_argument);
  }

  TEST_CASE("Gram-trick projector matches the dense eigen oracle on a 5x8 matrix") {
    SeededRng rng(11);
    const auto a = random_matrix(5, 8, rng);
    const auto gram = linalg::topk_right_singular(a, 3);
    const auto oracle = dense_oracle(a, 3);
    CHECK(dense_projector_distance(gram, oracle) < 1e-8);
    for (std::size_t j = 0; j < 3; ++j) CHECK(gram.eigvals[j] == doctest::Approx(oracle.eigvals[j]).epsilon(1e-10));
  }

  TEST_CASE("Gram-trick and dense paths agree for all small shapes") {
    SeededRng rng(12);
    for (std::size_t b = 1; b <= 10; ++b)
      for (std::size_t d = 1; d <= 10; ++d) {
        const auto a = random_matrix(b, d, rng);
        const std::size_t rank = std::min(b, d);
        for (std::size_t k = 1; k <= rank; ++k) {
          const auto ours = linalg::topk_right_singular(a, static_cast<int>(k));
          const auto oracle = dense_oracle(a, k);
          // Random Gaussian matrices have a simple spectrum with probability one.
          CHECK_MESSAGE(dense_projector_distance(ours, oracle) < 1e-8, "B=" << b << " d=" << d << " k=" << k);
          CHECK(linalg::orthonormality_error(ours) <= 1e-10);
        }
      }
  }

  TEST_CASE("Jacobi eigendecomposition matches Eigen on symmetric input") {
    SeededRng rng(5);
    const std::size_t n = 9;
    DenseMatrix s(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j) s(i, j) = s(j, i) = rng.normal();
    const auto ours = linalg::jacobi_eigen(s);
    CHECK(ours.converged);
    Eigen::MatrixXd m(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = s(i, j);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    for (std::size_t j = 0; j < n; ++j)
      CHECK(ours.values[j] == doctest::Approx(es.eigenvalues()(static_cast<Eigen::Index>(n - 1 - j))).epsilon(1e-10));
  }

  TEST_CASE("project is idempotent on the span and kills the complement") {
    const auto b = span_of({{1, 0, 0, 0}, {0, 1, 1, 0}}, 4);
    const std::vector<double> in{2.0, 3.0, 3.0, 0.0};
    const auto p = linalg::project(b, in);
    for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(p[j] - in[j]) < 1e-12);
    const auto z = linalg::project(b, std::vector<double>{0.0, 1.0, -1.0, 5.0});
    for (double x : z) CHECK(std::abs(x) < 1e-12);
    CHECK_THROWS_AS(linalg::project(b, std::vector<double>{1.0, 2.0}), std::invalid_argument);
  }

  TEST_CASE("coefficient helpers agree with the per-vector path") {
    SeededRng rng(9);
    const auto b = span_of({linalg::gaussian_vec(12, 1.0, rng), linalg::gaussian_vec(12, 1.0, rng),
                            linalg::gaussian_vec(12, 1.0, rng)},
                           12);
    const auto rows = linalg::gaussian_vec(4 * 12, 1.0, rng);
    std::vector<double> out(4 * b.k);
    linalg::coefficients_rows(b, rows.data(), 4, 12, out.data());
    for (std::size_t i = 0; i < 4; ++i) {
      const auto c = linalg::coefficients(b, std::span<const double>(rows.data() + i * 12, 12));
      for (std::size_t j = 0; j < b.k; ++j) CHECK(out[i * b.k + j] == doctest::Approx(c[j]).epsilon(1e-12));
    }
    std::vector<double> acc(12, 1.0);
    const std::vector<double> coeffs{0.5, -1.0, 2.0};
    linalg::expand_add(b, coeffs, acc);
    const auto e = linalg::expand(b, coeffs);
    for (std::size_t j = 0; j < 12; ++j) CHECK(acc[j] == doctest::Approx(1.0 + e[j]).epsilon(1e-12));
  }

  TEST_CASE("reorthonormalize repairs a perturbed basis without leaving its span") {
    SeededRng rng(21);
    auto b = span_of({linalg::gaussian_vec(30, 1.0, rng), linalg::gaussian_vec(30, 1.0, rng)}, 30);
    const auto before = b;
    for (auto& x : b.vectors) x += 1e-6 * rng.normal();
    CHECK(linalg::orthonormality_error(b) > 1e-8);
    linalg::reorthonormalize(b);
    CHECK(linalg::orthonormality_error(b) < 1e-13);
    CHECK(dense_projector_distance(b, before) < 1e-5);
  }

  TEST_CASE("spectral_norm_diff on hand-built bases") {
    const auto e1 = span_of({{1, 0}}, 2);
    const auto e2 = span_of({{0, 1}}, 2);
    const auto diag = span_of({{1, 1}}, 2);
    CHECK(linalg::spectral_norm_diff(e1, e1).value == doctest::Approx(0.0));
    CHECK(linalg::spectral_norm_diff(e1, e2).value == doctest::Approx(1.0).epsilon(1e-9));
    // sin 45 degrees, from the dense eigenvalues of the 2x2 projector difference.
    const double oracle = dense_projector_distance(e1, diag);
    CHECK(std::abs(oracle - std::sqrt(0.5)) < 1e-12);
    CHECK(std::abs(linalg::spectral_norm_diff(e1, diag).value - oracle) < 1e-5);
  }

  TEST_CASE("spectral_norm_diff is symmetric and matches the dense oracle") {
    SeededRng rng(31);
    for (int t = 0; t < 20; ++t) {
      const std::size_t d = 6 + static_cast<std::size_t>(t % 5);
      std::vector<std::vector<double>> v1, v2;
      for (int j = 0; j < 2; ++j) {
        v1.push_back(linalg::gaussian_vec(d, 1.0, rng));
        v2.push_back(linalg::gaussian_vec(d, 1.0, rng));
      }
      const auto b1 = span_of(v1, d);
      const auto b2 = span_of(v2, d);
      const auto ab = linalg::spectral_norm_diff(b1, b2);
      const auto ba = linalg::spectral_norm_diff(b2, b1);
      CHECK(ab.converged);
      CHECK(std::abs(ab.value - ba.value) < 1e-6);
      CHECK(std::abs(ab.value - dense_projector_distance(b1, b2)) < 1e-6);
      CHECK(ab.value <= 1.0 + 1e-9);
    }
  }

  TEST_CASE("gaussian_vec edge cases and Monte Carlo variance") {
    SeededRng rng(1);
    CHECK(linalg::gaussian_vec(0, 1.0, rng).empty());
    for (double x : linalg::gaussian_vec(50, 0.0, rng)) CHECK(x == 0.0);
    SeededRng r1(77), r2(77);
    CHECK(linalg::gaussian_vec(100, 1.5, r1) == linalg::gaussian_vec(100, 1.5, r2));
    SeededRng mc(2024);
    const auto v = linalg::gaussian_vec(100000, 2.0, mc);
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size() - 1);
    CHECK(var >= 3.9);
    CHECK(var <= 4.1);
    CHECK_THROWS_AS(linalg::gaussian_vec(3, -1.0, rng), std::invalid_argument);
  }

  TEST_CASE("randomized projection properties") {
    const auto r = testing::check_projection_properties(200, 1);
    CHECK_MESSAGE(r.ok(), r.first_failure);
  }
}
