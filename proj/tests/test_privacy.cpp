// SPDX-License-Identifier: Apache-2.0
#include <stdexcept>
#include <cmath>
#include <limits>

#include "doctest.h"
#include "invariants.hpp"
#include "pcdp/linalg.hpp"
#include "pcdp/privacy.hpp"
#include "pcdp/rng.hpp"

using namespace pcdp;
using privacy::ClipMethod;
using privacy::ClipSpec;

namespace {

// Unsubsampled Gaussian: eps = min over integer orders of alpha/(2 sigma^2) + log(1/delta)/(alpha-1).
double gaussian_closed_form(double sigma, double delta) {
  double best = std::numeric_limits<double>::infinity();
  for (int a = 2; a <= 256; ++a) best = std::min(best, a / (2.0 * sigma * sigma) + std::log(1.0 / delta) / (a - 1));
  return best;
}

// Direct (non log-space) binomial sum in long double; valid while terms stay finite.
double rdp_direct(double q, double sigma, int alpha) {
  long double sum = 0.0L;
  long double binom = 1.0L;
  for (int j = 0; j <= alpha; ++j) {
    sum += binom * std::pow(1.0L - q, alpha - j) * std::pow(static_cast<long double>(q), j) *
           std::exp(static_cast<long double>(j) * (j - 1) / (2.0L * sigma * sigma));
    binom = binom * (alpha - j) / (j + 1);
  }
  return static_cast<double>(std::log(sum) / (alpha - 1));
}

}  // namespace

TEST_SUITE("privacy") {
  TEST_CASE("clip examples") {
    const double c = 0.01;
    const ClipSpec abadi{ClipMethod::kAbadi, c, 0.0};
    const auto out = privacy::clip(std::vector<double>{2 * c, 0.0, 0.0}, abadi);
    CHECK(out[0] == doctest::Approx(c));
    CHECK(out[1] == 0.0);
    const std::vector<double> small{c / 2, 0.0};
    CHECK(privacy::clip(small, abadi) == small);

    const auto autos = privacy::clip(std::vector<double>{1.0, 0.0}, ClipSpec{ClipMethod::kAutoS, 1.0, 1.0});
    CHECK(autos[0] == doctest::Approx(0.5));
    CHECK(autos[1] == 0.0);

    const auto nsgd = privacy::clip(std::vector<double>{3.0, 4.0}, ClipSpec{ClipMethod::kNsgd, 1.0, 0.1});
    CHECK(nsgd[0] == doctest::Approx(0.6));
    CHECK(nsgd[1] == doctest::Approx(0.8));
    const auto nsgd_small = privacy::clip(std::vector<double>{0.03, 0.04}, ClipSpec{ClipMethod::kNsgd, 1.0, 0.1});
    CHECK(nsgd_small[0] == doctest::Approx(0.3));

    const std::vector<double> any{7.0, -2.0};
    CHECK(privacy::clip(any, ClipSpec{ClipMethod::kNone, 1.0, 0.0}) == any);
  }

  TEST_CASE("zero vectors stay zero for every method") {
    const std::vector<double> zero(4, 0.0);
    for (auto m : {ClipMethod::kAbadi, ClipMethod::kAutoS, ClipMethod::kNsgd, ClipMethod::kNone}) {
      const auto out = privacy::clip(zero, ClipSpec{m, 1.0, 0.0});
      for (double x : out) CHECK(x == 0.0);
    }
  }

  TEST_CASE("clip spec validation and names") {
    CHECK_THROWS_AS((ClipSpec{ClipMethod::kAbadi, 0.0, 0.0}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((ClipSpec{ClipMethod::kAutoS, 1.0, -1.0}.validate()), std::invalid_argument);
    for (auto m : {ClipMethod::kAbadi, ClipMethod::kAutoS, ClipMethod::kNsgd, ClipMethod::kNone})
      CHECK(privacy::parse_clip_method(privacy::to_string(m)) == m);
    CHECK_THROWS_AS(privacy::parse_clip_method("psac"), std::invalid_argument);
  }

  TEST_CASE("subspace noise: zero sigma, span confinement, per-coordinate variance") {
    SeededRng rng(1);
    const auto basis = linalg::orthonormalize(
        {linalg::gaussian_vec(20, 1.0, rng), linalg::gaussian_vec(20, 1.0, rng), linalg::gaussian_vec(20, 1.0, rng)}, 20);
    const auto zero = privacy::subspace_noise(basis, 0.01, 0.0, rng);
    for (double x : zero.ambient) CHECK(x == 0.0);

    const double c = 0.01, sigma = 10.0;
    std::vector<double> sumsq(basis.k, 0.0);
    const int draws = 100000;
    for (int t = 0; t < draws; ++t) {
      const auto d = privacy::subspace_noise(basis, c, sigma, rng);
      const auto coeff = linalg::coefficients(basis, d.ambient);
      for (std::size_t j = 0; j < basis.k; ++j) sumsq[j] += coeff[j] * coeff[j];
      if (t < 100) {
        auto residual = d.ambient;
        linalg::axpy(-1.0, linalg::project(basis, d.ambient), residual);
        CHECK(linalg::norm2(residual) < 1e-9);
      }
    }
    for (double s : sumsq) {
      const double var = s / draws / (c * sigma * c * sigma);
      CHECK(var > 0.97);
      CHECK(var < 1.03);
    }
  }

  TEST_CASE("q = 1, T = 1 equals the closed-form Gaussian conversion") {
    for (double sigma : {0.5, 1.0, 2.0, 5.0, 10.0}) {
      for (double delta : {1e-5, 1e-3}) {
        const double got = privacy::rdp_epsilon(1.0, sigma, 1, delta);
        CHECK(std::abs(got - gaussian_closed_form(sigma, delta)) < 1e-9);
      }
    }
  }

  TEST_CASE("log-space RDP matches a direct long-double sum") {
    for (double q : {0.01, 0.025, 0.1, 0.5})
      for (double sigma : {2.0, 4.0, 10.0})
        for (int alpha : {2, 3, 8, 20, 32}) {
          const double ours = privacy::subsampled_gaussian_rdp(q, sigma, alpha);
          CHECK(ours == doctest::Approx(rdp_direct(q, sigma, alpha)).epsilon(1e-9));
        }
    CHECK(privacy::subsampled_gaussian_rdp(1.0, 2.0, 5) == doctest::Approx(5.0 / 8.0));
  }

  TEST_CASE("reference (sigma, epsilon) pairs at q=0.025, T=3200, delta=1e-5 within a factor 1.6") {
    const std::pair<double, double> pairs[] = {{6, 1.18}, {10, 0.69}, {14, 0.49}, {18, 0.38},
                                               {22, 0.31}, {26, 0.26}, {30, 0.23}};
    double prev = std::numeric_limits<double>::infinity();
    for (const auto& [sigma, ref] : pairs) {
      const double eps = privacy::rdp_epsilon(0.025, sigma, 3200, 1e-5);
      CHECK_MESSAGE(eps / ref <= 1.6, "sigma " << sigma << " eps " << eps);
      CHECK_MESSAGE(ref / eps <= 1.6, "sigma " << sigma << " eps " << eps);
      CHECK(eps < prev);
      prev = eps;
    }
  }

  TEST_CASE("accountant monotonicity over a 27-point grid") {
    const double qs[] = {0.01, 0.025, 0.1};
    const double sigmas[] = {2.0, 6.0, 14.0};
    const std::size_t steps[] = {100, 1000, 3200};
    double eps[3][3][3];
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 3; ++c) eps[a][b][c] = privacy::rdp_epsilon(qs[a], sigmas[b], steps[c], 1e-5);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        for (int c = 0; c < 3; ++c) {
          CHECK(eps[a][b][c] > 0.0);
          if (a > 0) CHECK(eps[a][b][c] >= eps[a - 1][b][c]);
          if (b > 0) CHECK(eps[a][b][c] <= eps[a][b - 1][c]);
          if (c > 0) CHECK(eps[a][b][c] >= eps[a][b][c - 1]);
        }
  }

  TEST_CASE("composition: eps(2T) between eps(T) and twice eps(T) plus the order term") {
    for (std::size_t t : {10, 100, 1600}) {
      const double one = privacy::rdp_epsilon(0.025, 8.0, t, 1e-5);
      const double two = privacy::rdp_epsilon(0.025, 8.0, 2 * t, 1e-5);
      CHECK(two >= one);
      CHECK(two <= 2.0 * one + std::log(1e5));
    }
    const privacy::RdpAccountant acc(0.025, 10.0, 1e-5);
    CHECK(acc.epsilon(0) == 0.0);
    CHECK(acc.epsilon(3200) == doctest::Approx(privacy::rdp_epsilon(0.025, 10.0, 3200, 1e-5)));
  }

  TEST_CASE("accountant argument checks") {
    CHECK_THROWS_AS(privacy::rdp_epsilon(0.0, 1.0, 1, 1e-5), std::invalid_argument);
    CHECK_THROWS_AS(privacy::rdp_epsilon(0.5, 0.0, 1, 1e-5), std::invalid_argument);
    CHECK_THROWS_AS(privacy::rdp_epsilon(0.5, 1.0, 0, 1e-5), std::invalid_argument);
    CHECK_THROWS_AS(privacy::rdp_epsilon(0.5, 1.0, 1, 1.0), std::invalid_argument);
  }

  TEST_CASE("sigma calibration formula") {
    const double s = privacy::calibrate_sigma_moments(0.69, 1e-5, 0.025, 3200, 0.01, 2.0);
    // 0.01 * 0.025 * sqrt(2 * 3200 * ln 1e5) / 0.69
    const double oracle = 0.01 * 0.025 * std::sqrt(2.0 * 3200.0 * 11.512925464970229) / 0.69;
    CHECK(s == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(s == doctest::Approx(9.84e-2).epsilon(5e-3));
    CHECK(privacy::calibrate_sigma_moments(1.38, 1e-5, 0.025, 3200, 0.01) == doctest::Approx(s / 2));
    CHECK(privacy::calibrate_sigma_moments(0.69, 1e-5, 0.025, 12800, 0.01) == doctest::Approx(2 * s));
    CHECK_THROWS_AS(privacy::calibrate_sigma_moments(0.0, 1e-5, 0.025, 3200, 0.01), std::invalid_argument);
  }

  TEST_CASE("randomized clip, noise and dominance properties") {
    for (const auto& r : {testing::check_clip_bounds(300, 2), testing::check_noise_in_span(200, 2),
                          testing::check_clip_dominance(300, 2)})
      CHECK_MESSAGE(r.ok(), r.name << ": " << r.first_failure);
  }
}
