// SPDX-License-Identifier: Apache-2.0
//
// Public-data pool, the per-layer top-k projection built from public
// per-sample gradients, and the subspace diagnostics (projector distance to
// a holdout projection, energy retained by the projection).
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcdp/linalg.hpp"
#include "pcdp/models.hpp"
#include "pcdp/rng.hpp"

namespace pcdp::subspace {

enum class Segmentation { kRbs, kIbs };
enum class ProjectionMode { kLayerwise, kWhole };

std::string to_string(Segmentation s);
Segmentation parse_segmentation(const std::string& name);
std::string to_string(ProjectionMode m);
ProjectionMode parse_projection_mode(const std::string& name);

// RBS draws B_pub indices uniformly with replacement on every refresh. IBS
// hands out disjoint consecutive blocks and fails once the pool is used up.
class PublicPool {
 public:
  PublicPool(models::Dataset data, Segmentation strategy, std::size_t batch_size, std::uint64_t seed);

  // Pool indices for refresh number `refresh_index`. A pure function of the
  // index, so RBS sequences are reproducible and independent of call order.
  std::vector<std::size_t> batch_indices(std::size_t refresh_index) const;
  models::Dataset draw(std::size_t refresh_index) const;

  const models::Dataset& data() const { return data_; }
  std::size_t size() const { return data_.size(); }
  std::size_t batch_size() const { return batch_size_; }
  Segmentation strategy() const { return strategy_; }
  // IBS only: number of disjoint blocks available.
  std::size_t block_count() const { return data_.size() / batch_size_; }

 private:
  models::Dataset data_;
  Segmentation strategy_;
  std::size_t batch_size_;
  std::uint64_t seed_;
};

// Orthonormal bases applied block-diagonally over the model layout (one
// per layer), or a single basis over the whole parameter vector. An identity
// set leaves vectors untouched and uploads every coordinate.
class ProjectionSet {
 public:
  static ProjectionSet layerwise(const models::ModelLayout& layout, std::vector<linalg::OrthoBasis> bases);
  static ProjectionSet whole(const models::ModelLayout& layout, linalg::OrthoBasis basis);
  static ProjectionSet identity(const models::ModelLayout& layout);

  ProjectionMode mode() const { return mode_; }
  bool is_identity() const { return identity_; }
  std::size_t dim() const { return layout_.dim; }
  const models::ModelLayout& layout() const { return layout_; }
  const std::vector<linalg::OrthoBasis>& bases() const { return bases_; }
  // Offset/length of the block each basis acts on.
  std::size_t block_offset(std::size_t i) const { return blocks_[i].first; }
  std::size_t block_length(std::size_t i) const { return blocks_[i].second; }
  std::size_t block_count() const { return blocks_.size(); }

  // Per-block coefficient counts and their sum (the upload width).
  std::vector<std::size_t> widths() const;
  std::size_t total_k() const;

  void apply(std::span<const double> v, std::span<double> out) const;
  std::vector<double> apply(std::span<const double> v) const;
  // Per-block V_i^T v_i.
  std::vector<std::vector<double>> coefficients(std::span<const double> v) const;
  // Inverse of coefficients() on the span: sum_i V_i c_i placed in block i.
  std::vector<double> expand(const std::vector<std::vector<double>>& coeffs) const;

  // Bookkeeping for reuse across a refresh interval.
  std::size_t k_requested = 0;
  std::size_t beta = 1;
  std::size_t last_refresh_step = 0;
  bool truncated = false;
  // lambda_k - lambda_{k+1} per block (NaN-free: 0 when lambda_{k+1} is unknown).
  std::vector<double> eigengaps;

 private:
  ProjectionMode mode_ = ProjectionMode::kLayerwise;
  bool identity_ = false;
  models::ModelLayout layout_;
  std::vector<linalg::OrthoBasis> bases_;
  std::vector<std::pair<std::size_t, std::size_t>> blocks_;
};

// Top-k bases of the public per-sample gradient matrix. In layerwise mode
// each layer gets k_i = min(k, rank, p_i) directions from its own gradient
// slice.
ProjectionSet projection_from_gradients(const models::ModelLayout& layout, const models::GradientMatrix& grads,
                                        std::size_t k, ProjectionMode mode);

std::shared_ptr<const ProjectionSet> refresh_projection(const models::Model& model,
                                                        const models::ModelParams& params,
                                                        const models::Dataset& public_batch, std::size_t k,
                                                        ProjectionMode mode, std::size_t beta,
                                                        std::size_t step);

// True when no set exists yet or the set has served `beta` steps.
bool needs_refresh(const ProjectionSet* current, std::size_t step);

struct SkewReport {
  std::size_t step = 0;
  std::vector<double> per_layer;
  double aggregate = 0.0;  // max over layers
  std::size_t holdout_size = 0;
  bool converged = true;
};

SkewReport skew(const ProjectionSet& current, const ProjectionSet& holdout, std::size_t step = 0,
                std::size_t holdout_size = 0);

struct ProjectionRatio {
  double kappa = 0.0;     // mean ||P g||^2 / ||g||^2 over nonzero rows
  std::size_t count = 0;  // rows used; 0 means undefined
};

ProjectionRatio projection_ratio(const ProjectionSet& pset, const models::GradientMatrix& grads);

// Gradients with a known low-rank second moment: g = sum_i scale_i z_i f_i + noise * xi,
// with orthonormal factors f_i, z_i, xi standard normal. Used to check that
// the sample projector approaches the population one as the batch grows.
struct FactorGradientModel {
  std::size_t dim = 0;
  std::vector<double> scales;  // one per factor, decreasing
  double noise = 0.0;
  linalg::OrthoBasis factors;

  static FactorGradientModel random(std::size_t dim, std::vector<double> scales, double noise,
                                    std::uint64_t seed);
  linalg::DenseMatrix sample(std::size_t m, SeededRng& rng) const;
};

}  // namespace pcdp::subspace
