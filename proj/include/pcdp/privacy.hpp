// SPDX-License-Identifier: Apache-2.0
//
// Per-sample clipping, subspace-confined Gaussian noise and Renyi-DP
// accounting for the Poisson-subsampled Gaussian mechanism.
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "pcdp/linalg.hpp"
#include "pcdp/rng.hpp"

namespace pcdp::privacy {

enum class ClipMethod { kAbadi, kAutoS, kNsgd, kNone };

std::string to_string(ClipMethod method);
ClipMethod parse_clip_method(const std::string& name);

struct ClipSpec {
  ClipMethod method = ClipMethod::kAbadi;
  double threshold = 1.0;   // c
  double stabilizer = 0.0;  // r, auto_s / nsgd only

  void validate() const;
};

// Scale applied to a vector of norm `norm`:
//   abadi  min(1, c / norm)
//   auto_s c / (norm + r)
//   nsgd   c / max(norm, r)
//   none   1
// A zero vector maps to zero for every method.
double clip_factor(double norm, const ClipSpec& spec);
// Clips in place and returns the applied factor. Factor 1 leaves the data
// untouched bit-for-bit.
double clip_inplace(std::span<double> g, const ClipSpec& spec);
std::vector<double> clip(std::span<const double> g, const ClipSpec& spec);

struct NoiseDraw {
  std::vector<double> coefficients;  // k
  std::vector<double> ambient;       // d, = V * coefficients
};

// Coefficients ~ N(0, c^2 sigma^2 I_k) mapped through V. Same law as
// V V^T N(0, c^2 sigma^2 I_d) at O(k) draws.
NoiseDraw subspace_noise(const linalg::OrthoBasis& basis, double c, double sigma, SeededRng& rng);

// Integer Renyi orders 2..256.
const std::vector<int>& default_orders();

// RDP of one Poisson-subsampled Gaussian step at integer order alpha:
//   1/(alpha-1) * log sum_j C(alpha,j) (1-q)^(alpha-j) q^j exp(j(j-1)/(2 sigma^2))
// evaluated in log space; q = 1 gives alpha / (2 sigma^2).
double subsampled_gaussian_rdp(double q, double sigma, int alpha);

// (epsilon, delta) after T steps: min over orders of T*rdp + log(1/delta)/(alpha-1).
double rdp_epsilon(double q, double sigma, std::size_t steps, double delta);

// Caches per-order RDP for a fixed (q, sigma) so epsilon can be queried every
// training step cheaply.
class RdpAccountant {
 public:
  RdpAccountant(double q, double sigma, double delta);

  double epsilon(std::size_t steps) const;
  double q() const { return q_; }
  double sigma() const { return sigma_; }
  double delta() const { return delta_; }

 private:
  double q_;
  double sigma_;
  double delta_;
  std::vector<double> rdp_;  // per default_orders()
};

// sigma_dp = c q sqrt(m2 T ln(1/delta)) / epsilon
double calibrate_sigma_moments(double epsilon, double delta, double q, std::size_t steps, double c,
                                double m2 = 2.0);

}  // namespace pcdp::privacy
