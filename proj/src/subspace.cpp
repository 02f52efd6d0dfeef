// SPDX-License-Identifier: Apache-2.0
#include "pcdp/subspace.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pcdp::subspace {

using linalg::OrthoBasis;
using models::Dataset;
using models::GradientMatrix;
using models::ModelLayout;

std::string to_string(Segmentation s) { return s == Segmentation::kRbs ? "rbs" : "ibs"; }

Segmentation parse_segmentation(const std::string& name) {
  if (name == "rbs") return Segmentation::kRbs;
  if (name == "ibs") return Segmentation::kIbs;
  throw std::invalid_argument("unknown public segmentation '" + name + "' (expected rbs or ibs)");
}

std::string to_string(ProjectionMode m) { return m == ProjectionMode::kLayerwise ? "layerwise" : "whole"; }

ProjectionMode parse_projection_mode(const std::string& name) {
  if (name == "layerwise") return ProjectionMode::kLayerwise;
  if (name == "whole") return ProjectionMode::kWhole;
  throw std::invalid_argument("unknown projection mode '" + name + "' (expected layerwise or whole)");
}

// ---------------------------------------------------------------------------
// PublicPool

PublicPool::PublicPool(Dataset data, Segmentation strategy, std::size_t batch_size, std::uint64_t seed)
    : data_(std::move(data)), strategy_(strategy), batch_size_(batch_size), seed_(seed) {
  if (data_.size() == 0) throw std::invalid_argument("public pool is empty");
  if (batch_size_ == 0) throw std::invalid_argument("public batch size must be positive");
  if (strategy_ == Segmentation::kIbs && batch_size_ > data_.size()) {
    throw std::invalid_argument("IBS public batch size " + std::to_string(batch_size_) +
                                " exceeds pool size " + std::to_string(data_.size()));
  }
}

std::vector<std::size_t> PublicPool::batch_indices(std::size_t refresh_index) const {
  std::vector<std::size_t> idx(batch_size_);
  if (strategy_ == Segmentation::kIbs) {
    if (refresh_index >= block_count()) {
      throw std::runtime_error("IBS public pool exhausted: refresh " + std::to_string(refresh_index + 1) +
                               " needs " + std::to_string((refresh_index + 1) * batch_size_) +
                               " public samples but the pool holds " + std::to_string(data_.size()) +
                               "; enlarge the public set or use the rbs strategy");
    }
    for (std::size_t i = 0; i < batch_size_; ++i) idx[i] = refresh_index * batch_size_ + i;
    return idx;
  }
  SeededRng rng = SeededRng(seed_).fork("public-batch", refresh_index);
  for (auto& i : idx) i = rng.uniform_index(data_.size());
  return idx;
}

Dataset PublicPool::draw(std::size_t refresh_index) const {
  const auto idx = batch_indices(refresh_index);
  return models::subset(data_, idx);
}

// ---------------------------------------------------------------------------
// ProjectionSet

ProjectionSet ProjectionSet::layerwise(const ModelLayout& layout, std::vector<OrthoBasis> bases) {
  if (bases.size() != layout.layers.size()) throw std::invalid_argument("layerwise projection: one basis per layer required");
  ProjectionSet p;
  p.mode_ = ProjectionMode::kLayerwise;
  p.layout_ = layout;
  for (std::size_t i = 0; i < bases.size(); ++i) {
    if (bases[i].dim != layout.layers[i].length)
      throw std::invalid_argument("layerwise projection: basis dim does not match layer '" + layout.layers[i].name + "'");
    p.blocks_.emplace_back(layout.layers[i].offset, layout.layers[i].length);
    p.truncated = p.truncated || bases[i].truncated;
  }
  p.bases_ = std::move(bases);
  return p;
}

ProjectionSet ProjectionSet::whole(const ModelLayout& layout, OrthoBasis basis) {
  if (basis.dim != layout.dim) throw std::invalid_argument("whole projection: basis dim does not match model");
  ProjectionSet p;
  p.mode_ = ProjectionMode::kWhole;
  p.layout_ = layout;
  p.blocks_.emplace_back(0, layout.dim);
  p.truncated = basis.truncated;
  p.bases_.push_back(std::move(basis));
  return p;
}

ProjectionSet ProjectionSet::identity(const ModelLayout& layout) {
  ProjectionSet p;
  p.mode_ = ProjectionMode::kLayerwise;
  p.identity_ = true;
  p.layout_ = layout;
  for (const auto& l : layout.layers) p.blocks_.emplace_back(l.offset, l.length);
  return p;
}

std::vector<std::size_t> ProjectionSet::widths() const {
  std::vector<std::size_t> w;
  for (std::size_t i = 0; i < blocks_.size(); ++i) w.push_back(identity_ ? blocks_[i].second : bases_[i].k);
  return w;
}

std::size_t ProjectionSet::total_k() const {
  std::size_t s = 0;
  for (std::size_t w : widths()) s += w;
  return s;
}

void ProjectionSet::apply(std::span<const double> v, std::span<double> out) const {
  if (v.size() != layout_.dim || out.size() != layout_.dim)
    throw std::invalid_argument("projection: vector length does not match model dimension");
  if (identity_) {
    std::copy(v.begin(), v.end(), out.begin());
    return;
  }
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto [off, len] = blocks_[i];
    linalg::project_into(bases_[i], v.subspan(off, len), out.subspan(off, len));
  }
}

std::vector<double> ProjectionSet::apply(std::span<const double> v) const {
  std::vector<double> out(layout_.dim);
  apply(v, out);
  return out;
}

std::vector<std::vector<double>> ProjectionSet::coefficients(std::span<const double> v) const {
  if (v.size() != layout_.dim) throw std::invalid_argument("projection: vector length does not match model dimension");
  std::vector<std::vector<double>> out;
  out.reserve(blocks_.size());
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto [off, len] = blocks_[i];
    if (identity_) {
      out.emplace_back(v.begin() + off, v.begin() + off + len);
    } else {
      out.push_back(linalg::coefficients(bases_[i], v.subspan(off, len)));
    }
  }
  return out;
}

std::vector<double> ProjectionSet::expand(const std::vector<std::vector<double>>& coeffs) const {
  if (coeffs.size() != blocks_.size()) throw std::invalid_argument("projection: coefficient block count mismatch");
  std::vector<double> out(layout_.dim, 0.0);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto [off, len] = blocks_[i];
    if (identity_) {
      if (coeffs[i].size() != len) throw std::invalid_argument("projection: coefficient width mismatch");
      std::copy(coeffs[i].begin(), coeffs[i].end(), out.begin() + off);
    } else {
      const auto block = linalg::expand(bases_[i], coeffs[i]);
      std::copy(block.begin(), block.end(), out.begin() + off);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Top-k basis of the rows of `slice` plus the gap lambda_k - lambda_{k+1}.
std::pair<OrthoBasis, double> basis_with_gap(const linalg::DenseMatrix& slice, std::size_t k) {
  const bool any_nonzero = std::any_of(slice.data.begin(), slice.data.end(), [](double x) { return x != 0.0; });
  if (!any_nonzero) {
    OrthoBasis empty;
    empty.dim = slice.cols;
    empty.requested_k = k;
    empty.truncated = true;
    return {empty, 0.0};
  }
  const std::size_t want = std::min(k + 1, slice.cols);
  OrthoBasis b = linalg::topk_right_singular(slice, static_cast<int>(want));
  double gap = 0.0;
  if (b.k > k) {
    gap = b.eigvals[k - 1] - b.eigvals[k];
    b.k = k;
    b.vectors.resize(k * b.dim);
    b.eigvals.resize(k);
    b.truncated = false;
  } else if (b.k > 0) {
    gap = b.eigvals[b.k - 1];
    b.truncated = b.k < k;
  }
  b.requested_k = k;
  return {std::move(b), gap};
}

linalg::DenseMatrix slice_rows(const GradientMatrix& grads, std::size_t offset, std::size_t length) {
  linalg::DenseMatrix m(grads.batch, length);
  for (std::size_t r = 0; r < grads.batch; ++r) {
    const auto row = grads.row(r);
    std::copy(row.begin() + offset, row.begin() + offset + length, m.row(r).begin());
  }
  return m;
}

}  // namespace

ProjectionSet projection_from_gradients(const ModelLayout& layout, const GradientMatrix& grads, std::size_t k,
                                        ProjectionMode mode) {
  if (k == 0) throw std::invalid_argument("projection dimension k must be positive");
  if (grads.batch == 0) throw std::invalid_argument("projection: empty public batch");
  if (grads.dim != layout.dim) throw std::invalid_argument("projection: gradient width does not match layout");
  std::vector<double> gaps;
  ProjectionSet p;
  if (mode == ProjectionMode::kWhole) {
    linalg::DenseMatrix m(grads.batch, grads.dim);
    m.data = grads.rows;
    auto [b, gap] = basis_with_gap(m, std::min(k, layout.dim));
    gaps.push_back(gap);
    p = ProjectionSet::whole(layout, std::move(b));
  } else {
    std::vector<OrthoBasis> bases;
    for (const auto& l : layout.layers) {
      auto [b, gap] = basis_with_gap(slice_rows(grads, l.offset, l.length), std::min(k, l.length));
      gaps.push_back(gap);
      bases.push_back(std::move(b));
    }
    p = ProjectionSet::layerwise(layout, std::move(bases));
  }
  p.k_requested = k;
  p.eigengaps = std::move(gaps);
  return p;
}

std::shared_ptr<const ProjectionSet> refresh_projection(const models::Model& model, const models::ModelParams& params,
                                                        const Dataset& public_batch, std::size_t k,
                                                        ProjectionMode mode, std::size_t beta, std::size_t step) {
  if (public_batch.size() == 0) throw std::invalid_argument("refresh_projection: empty public batch");
  if (beta == 0) throw std::invalid_argument("refresh_projection: interval beta must be positive");
  const GradientMatrix grads = model.per_sample_grads(params, public_batch);
  auto set = std::make_shared<ProjectionSet>(projection_from_gradients(model.layout(), grads, k, mode));
  set->beta = beta;
  set->last_refresh_step = step;
  return set;
}

bool needs_refresh(const ProjectionSet* current, std::size_t step) {
  return current == nullptr || step < current->last_refresh_step ||
         step - current->last_refresh_step >= current->beta;
}

SkewReport skew(const ProjectionSet& current, const ProjectionSet& holdout, std::size_t step,
                std::size_t holdout_size) {
  if (current.dim() != holdout.dim() || current.block_count() != holdout.block_count() ||
      current.mode() != holdout.mode())
    throw std::invalid_argument("skew: projection layouts differ");
  SkewReport rep;
  rep.step = step;
  rep.holdout_size = holdout_size;
  for (std::size_t i = 0; i < current.block_count(); ++i) {
    if (current.block_length(i) != holdout.block_length(i)) throw std::invalid_argument("skew: projection layouts differ");
    double value = 0.0;
    if (!current.is_identity() || !holdout.is_identity()) {
      if (current.is_identity() || holdout.is_identity())
        throw std::invalid_argument("skew: cannot compare identity and subspace projections");
      const auto est = linalg::spectral_norm_diff(current.bases()[i], holdout.bases()[i]);
      value = est.value;
      rep.converged = rep.converged && est.converged;
    }
    rep.per_layer.push_back(value);
    rep.aggregate = std::max(rep.aggregate, value);
  }
  return rep;
}

ProjectionRatio projection_ratio(const ProjectionSet& pset, const GradientMatrix& grads) {
  ProjectionRatio r;
  std::vector<double> proj(grads.dim);
  double total = 0.0;
  for (std::size_t i = 0; i < grads.batch; ++i) {
    const auto g = grads.row(i);
    const double n2 = linalg::dot(g, g);
    if (n2 == 0.0) continue;
    pset.apply(g, proj);
    total += std::min(1.0, linalg::dot(proj, proj) / n2);
    ++r.count;
  }
  if (r.count > 0) r.kappa = total / static_cast<double>(r.count);
  return r;
}

FactorGradientModel FactorGradientModel::random(std::size_t dim, std::vector<double> scales, double noise,
                                                std::uint64_t seed) {
  if (scales.empty() || scales.size() > dim) throw std::invalid_argument("factor model: need 1..dim factors");
  FactorGradientModel m;
  m.dim = dim;
  m.scales = std::move(scales);
  m.noise = noise;
  SeededRng rng(seed);
  std::vector<std::vector<double>> raw;
  for (std::size_t i = 0; i < m.scales.size(); ++i) raw.push_back(linalg::gaussian_vec(dim, 1.0, rng));
  m.factors = linalg::orthonormalize(std::move(raw), dim);
  if (m.factors.k != m.scales.size()) throw std::runtime_error("factor model: degenerate factor draw");
  for (std::size_t i = 0; i < m.scales.size(); ++i) m.factors.eigvals[i] = m.scales[i] * m.scales[i] + noise * noise;
  return m;
}

linalg::DenseMatrix FactorGradientModel::sample(std::size_t m, SeededRng& rng) const {
  linalg::DenseMatrix out(m, dim);
  for (std::size_t r = 0; r < m; ++r) {
    auto row = out.row(r);
    for (auto& v : row) v = noise * rng.normal();
    for (std::size_t i = 0; i < scales.size(); ++i) linalg::axpy(scales[i] * rng.normal(), factors.column(i), row);
  }
  return out;
}

}  // namespace pcdp::subspace
