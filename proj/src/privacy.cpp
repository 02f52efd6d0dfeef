// SPDX-License-Identifier: Apache-2.0
#include "pcdp/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace pcdp::privacy {

namespace {

double log_sum_exp(std::span<const double> terms) {
  const double m = *std::max_element(terms.begin(), terms.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

double log_binomial(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

void check_accountant_args(double q, double sigma, double delta) {
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("accountant: q must lie in (0, 1]");
  if (!(sigma > 0.0)) throw std::invalid_argument("accountant: sigma must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("accountant: delta must lie in (0, 1)");
}

}  // namespace

std::string to_string(ClipMethod method) {
  switch (method) {
    case ClipMethod::kAbadi: return "abadi";
    case ClipMethod::kAutoS: return "auto_s";
    case ClipMethod::kNsgd: return "nsgd";
    case ClipMethod::kNone: return "none";
  }
  return "none";
}

ClipMethod parse_clip_method(const std::string& name) {
  if (name == "abadi") return ClipMethod::kAbadi;
  if (name == "auto_s") return ClipMethod::kAutoS;
  if (name == "nsgd") return ClipMethod::kNsgd;
  if (name == "none") return ClipMethod::kNone;
  throw std::invalid_argument("unknown clip method '" + name + "' (expected abadi, auto_s, nsgd, none)");
}

void ClipSpec::validate() const {
  if (!(threshold > 0.0)) throw std::invalid_argument("clip threshold must be positive");
  if (stabilizer < 0.0) throw std::invalid_argument("clip stabilizer must be non-negative");
}

double clip_factor(double norm, const ClipSpec& spec) {
  if (norm == 0.0) return 0.0;
  const double c = spec.threshold;
  switch (spec.method) {
    case ClipMethod::kAbadi: return norm > c ? c / norm : 1.0;
    case ClipMethod::kAutoS: return c / (norm + spec.stabilizer);
    case ClipMethod::kNsgd: return c / std::max(norm, spec.stabilizer);
    case ClipMethod::kNone: return 1.0;
  }
  return 1.0;
}

double clip_inplace(std::span<double> g, const ClipSpec& spec) {
  const double factor = clip_factor(linalg::norm2(g), spec);
  if (factor == 0.0) {
    std::fill(g.begin(), g.end(), 0.0);
  } else if (factor != 1.0) {
    linalg::scale(factor, g);
  }
  return factor;
}

std::vector<double> clip(std::span<const double> g, const ClipSpec& spec) {
  std::vector<double> out(g.begin(), g.end());
  clip_inplace(out, spec);
  return out;
}

NoiseDraw subspace_noise(const linalg::OrthoBasis& basis, double c, double sigma, SeededRng& rng) {
  if (sigma < 0.0) throw std::invalid_argument("subspace_noise: sigma must be non-negative");
  NoiseDraw draw;
  draw.coefficients = linalg::gaussian_vec(basis.k, c * sigma, rng);
  draw.ambient = linalg::expand(basis, draw.coefficients);
  return draw;
}

const std::vector<int>& default_orders() {
  static const std::vector<int> orders = [] {
    std::vector<int> o(255);
    std::iota(o.begin(), o.end(), 2);
    return o;
  }();
  return orders;
}

double subsampled_gaussian_rdp(double q, double sigma, int alpha) {
  if (alpha < 2) throw std::invalid_argument("subsampled_gaussian_rdp: order must be >= 2");
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("subsampled_gaussian_rdp: q must lie in (0, 1]");
  if (!(sigma > 0.0)) throw std::invalid_argument("subsampled_gaussian_rdp: sigma must be positive");
  if (q == 1.0) return alpha / (2.0 * sigma * sigma);
  const double log_q = std::log(q);
  const double log_1mq = std::log1p(-q);
  std::vector<double> terms(static_cast<std::size_t>(alpha) + 1);
  for (int j = 0; j <= alpha; ++j) {
    terms[j] = log_binomial(alpha, j) + (alpha - j) * log_1mq + j * log_q +
               static_cast<double>(j) * (j - 1) / (2.0 * sigma * sigma);
  }
  return log_sum_exp(terms) / (alpha - 1);
}

RdpAccountant::RdpAccountant(double q, double sigma, double delta) : q_(q), sigma_(sigma), delta_(delta) {
  check_accountant_args(q, sigma, delta);
  const auto& orders = default_orders();
  rdp_.reserve(orders.size());
  for (int a : orders) rdp_.push_back(subsampled_gaussian_rdp(q, sigma, a));
}

double RdpAccountant::epsilon(std::size_t steps) const {
  if (steps == 0) return 0.0;
  const auto& orders = default_orders();
  const double log_inv_delta = std::log(1.0 / delta_);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < orders.size(); ++i) {
    const double eps = static_cast<double>(steps) * rdp_[i] + log_inv_delta / (orders[i] - 1);
    best = std::min(best, eps);
  }
  return best;
}

double rdp_epsilon(double q, double sigma, std::size_t steps, double delta) {
  if (steps == 0) throw std::invalid_argument("rdp_epsilon: T must be at least 1");
  return RdpAccountant(q, sigma, delta).epsilon(steps);
}

double calibrate_sigma_moments(double epsilon, double delta, double q, std::size_t steps, double c,
                                double m2) {
  if (!(epsilon > 0.0)) throw std::invalid_argument("calibrate_sigma: epsilon must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("calibrate_sigma: delta must lie in (0, 1)");
  if (!(q > 0.0) || steps == 0 || !(c > 0.0) || !(m2 > 0.0))
    throw std::invalid_argument("calibrate_sigma: q, T, c, m2 must be positive");
  return c * q * std::sqrt(m2 * static_cast<double>(steps) * std::log(1.0 / delta)) / epsilon;
}

}  // namespace pcdp::privacy
