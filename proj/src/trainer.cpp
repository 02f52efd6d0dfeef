// SPDX-License-Identifier: Apache-2.0
#include "pcdp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace pcdp::trainer {

using models::Dataset;
using models::GradientMatrix;
using models::Model;
using models::ModelParams;
using subspace::ProjectionSet;

std::string to_string(Method m) {
  switch (m) {
    case Method::kPcdp: return "pcdp";
    case Method::kDpsgd: return "dpsgd";
    case Method::kPdp: return "pdp";
    case Method::kRpdp: return "rpdp";
    case Method::kRsdp: return "rsdp";
  }
  return "pcdp";
}

Method parse_method(const std::string& name) {
  if (name == "pcdp") return Method::kPcdp;
  if (name == "dpsgd") return Method::kDpsgd;
  if (name == "pdp") return Method::kPdp;
  if (name == "rpdp") return Method::kRpdp;
  if (name == "rsdp") return Method::kRsdp;
  throw std::invalid_argument("unknown method '" + name + "' (expected pcdp, dpsgd, pdp, rpdp, rsdp)");
}

std::string to_string(Sampling s) { return s == Sampling::kPoisson ? "poisson" : "fixed_shuffle"; }

Sampling parse_sampling(const std::string& name) {
  if (name == "poisson") return Sampling::kPoisson;
  if (name == "fixed_shuffle") return Sampling::kFixedShuffle;
  throw std::invalid_argument("unknown sampling '" + name + "' (expected poisson or fixed_shuffle)");
}

void TrainConfig::validate(std::size_t train_size) const {
  if (train_size == 0) throw std::invalid_argument("training set is empty");
  if (lot_size == 0 || lot_size > train_size)
    throw std::invalid_argument("lot size B must lie in [1, |D|] (q = B/|D| in (0, 1])");
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be non-negative");
  if (!(omega >= 0.0)) throw std::invalid_argument("omega must be non-negative");
  if (k == 0) throw std::invalid_argument("projection dimension k must be positive");
  if (beta == 0) throw std::invalid_argument("projection interval beta must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
  if (!(rsdp_keep > 0.0 && rsdp_keep <= 1.0)) throw std::invalid_argument("rsdp keep rate must lie in (0, 1]");
  if (rp_dim == 0) throw std::invalid_argument("random projection dimension must be positive");
  clip.validate();
}

std::string to_jsonl(const MetricRecord& r) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::json { return v ? nlohmann::json(*v) : nlohmann::json(); };
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["lot_size_actual"] = r.lot_size_actual;
  j["train_loss"] = opt(r.train_loss);
  j["test_acc"] = opt(r.test_acc);
  j["mean_norm_raw"] = r.mean_norm_raw;
  j["mean_norm_proj"] = r.mean_norm_proj;
  j["clipped_frac_raw"] = r.clipped_frac_raw;
  j["clipped_frac_proj"] = r.clipped_frac_proj;
  j["kappa"] = opt(r.kappa);
  j["skew"] = opt(r.skew);
  j["eps_spent"] = r.eps_spent;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Sampling

std::vector<std::size_t> sample_lot(std::size_t dataset_size, double q, SeededRng& rng) {
  if (!(q > 0.0 && q <= 1.0)) throw std::invalid_argument("sample_lot: q must lie in (0, 1]");
  std::vector<std::size_t> lot;
  if (q == 1.0) {
    lot.resize(dataset_size);
    std::iota(lot.begin(), lot.end(), 0);
    return lot;
  }
  for (std::size_t i = 0; i < dataset_size; ++i)
    if (rng.bernoulli(q)) lot.push_back(i);
  return lot;
}

LotSampler::LotSampler(std::size_t dataset_size, std::size_t lot_size, Sampling sampling, SeededRng rng)
    : n_(dataset_size), lot_(lot_size), sampling_(sampling), rng_(rng) {
  if (n_ == 0 || lot_ == 0 || lot_ > n_) throw std::invalid_argument("LotSampler: need 1 <= B <= |D|");
  q_ = static_cast<double>(lot_) / static_cast<double>(n_);
}

void LotSampler::reshuffle() {
  perm_.resize(n_);
  std::iota(perm_.begin(), perm_.end(), 0);
  for (std::size_t i = n_; i > 1; --i) std::swap(perm_[i - 1], perm_[rng_.uniform_index(i)]);
  cursor_ = 0;
}

std::vector<std::size_t> LotSampler::next() {
  if (sampling_ == Sampling::kPoisson) return sample_lot(n_, q_, rng_);
  if (perm_.empty() || cursor_ >= n_) reshuffle();
  const std::size_t end = std::min(n_, cursor_ + lot_);
  std::vector<std::size_t> lot(perm_.begin() + cursor_, perm_.begin() + end);
  cursor_ = end;
  return lot;
}

StepStreams StepStreams::from_seed(std::uint64_t seed) {
  SeededRng root(seed);
  return {root.fork("noise"), root.fork("symmetrize"), root.fork("mask")};
}

std::vector<std::uint8_t> sparsity_mask(std::size_t dim, double keep, SeededRng& rng) {
  std::vector<std::uint8_t> mask(dim);
  for (auto& m : mask) m = rng.bernoulli(keep) ? 1 : 0;
  return mask;
}

ProjectionSet random_projection(const models::ModelLayout& layout, std::size_t k, std::uint64_t seed) {
  const std::size_t kk = std::min(k, layout.dim);
  SeededRng rng = SeededRng(seed).fork("random-projection");
  std::vector<std::vector<double>> vecs;
  vecs.reserve(kk);
  for (std::size_t j = 0; j < kk; ++j) vecs.push_back(linalg::gaussian_vec(layout.dim, 1.0, rng));
  auto set = ProjectionSet::whole(layout, linalg::orthonormalize(std::move(vecs), layout.dim));
  set.k_requested = k;
  set.beta = std::numeric_limits<std::size_t>::max();
  return set;
}

// ---------------------------------------------------------------------------
// Step

namespace {

// Fixed-order pairwise reduction of the rows [lo, hi) of a row-major matrix
// with `width` columns into `out`.
void pairwise_sum(const double* rows, std::size_t width, std::size_t lo, std::size_t hi, std::span<double> out) {
  if (hi - lo == 1) {
    std::copy(rows + lo * width, rows + (lo + 1) * width, out.begin());
    return;
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  pairwise_sum(rows, width, lo, mid, out);
  std::vector<double> right(width);
  pairwise_sum(rows, width, mid, hi, right);
  for (std::size_t i = 0; i < width; ++i) out[i] += right[i];
}

void pairwise_sum(const GradientMatrix& m, std::span<double> out) {
  if (m.batch > 0) pairwise_sum(m.rows.data(), m.dim, 0, m.batch, out);
}

// Running per-step diagnostics over the lot.
struct LotStats {
  const TrainConfig& cfg;
  double loss = 0.0, norm_raw = 0.0, norm_proj = 0.0, kappa = 0.0;
  std::size_t rows = 0, clipped_raw = 0, clipped_proj = 0, kappa_rows = 0;

  void add(double sample_loss, double raw, double proj, double contribution, StepResult& res) {
    const bool clipping = cfg.clip.method != privacy::ClipMethod::kNone;
    const double c = cfg.clip.threshold;
    ++rows;
    loss += sample_loss;
    norm_raw += raw;
    norm_proj += proj;
    if (clipping && raw > c) ++clipped_raw;
    if (clipping && proj > c) ++clipped_proj;
    if (raw > 0.0) {
      kappa += std::min(1.0, (proj * proj) / (raw * raw));
      ++kappa_rows;
    }
    res.max_contribution_norm = std::max(res.max_contribution_norm, contribution);
  }

  void finish(MetricRecord& rec) const {
    if (rows == 0) return;
    const double n = static_cast<double>(rows);
    rec.train_loss = loss / n;
    rec.mean_norm_raw = norm_raw / n;
    rec.mean_norm_proj = norm_proj / n;
    rec.clipped_frac_raw = static_cast<double>(clipped_raw) / n;
    rec.clipped_frac_proj = static_cast<double>(clipped_proj) / n;
    if (kappa_rows > 0) rec.kappa = kappa / static_cast<double>(kappa_rows);
  }
};

// pcdp / pdp / rpdp with a subspace projection and no symmetrizing noise.
// Clipping a projected row scales its coefficients, so every row is reduced
// to its k coefficients, the scaled coefficients are summed, noise is added
// in coefficient space and the result is mapped back once per block.
void subspace_sum(Method method, const GradientMatrix& grads, const ProjectionSet& pset, const TrainConfig& cfg,
                  StepStreams& streams, LotStats& stats, StepResult& res, std::span<double> sum) {
  const auto& bases = pset.bases();
  const std::size_t blocks = pset.block_count();
  std::vector<std::vector<double>> coeffs(blocks);
  for (std::size_t b = 0; b < blocks; ++b) {
    coeffs[b].assign(grads.batch * bases[b].k, 0.0);
    linalg::coefficients_rows(bases[b], grads.rows.data() + pset.block_offset(b), grads.batch, grads.dim,
                              coeffs[b].data());
  }
  for (std::size_t i = 0; i < grads.batch; ++i) {
    const double raw = linalg::norm2(grads.row(i));
    double proj2 = 0.0;
    for (std::size_t b = 0; b < blocks; ++b) {
      const std::span<const double> ci(coeffs[b].data() + i * bases[b].k, bases[b].k);
      proj2 += linalg::dot(ci, ci);
    }
    const double proj = std::sqrt(proj2);
    const double factor = privacy::clip_factor(method == Method::kPcdp ? proj : raw, cfg.clip);
    if (factor != 1.0)
      for (std::size_t b = 0; b < blocks; ++b)
        linalg::scale(factor, std::span<double>(coeffs[b].data() + i * bases[b].k, bases[b].k));
    stats.add(grads.losses[i], raw, proj, factor * proj, res);
  }
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t k = bases[b].k;
    std::vector<double> total(k, 0.0);
    if (grads.batch > 0 && k > 0) pairwise_sum(coeffs[b].data(), k, 0, grads.batch, total);
    if (cfg.sigma > 0.0) {
      const auto draw = privacy::subspace_noise(bases[b], cfg.clip.threshold, cfg.sigma, streams.noise);
      for (std::size_t j = 0; j < k; ++j) total[j] += draw.coefficients[j];
    }
    linalg::expand_add(bases[b], total, sum.subspan(pset.block_offset(b), pset.block_length(b)));
  }
}

void add_subspace_noise(const ProjectionSet& pset, double c, double sigma, SeededRng& rng, std::span<double> acc) {
  if (sigma == 0.0) return;
  for (std::size_t b = 0; b < pset.block_count(); ++b) {
    auto block = acc.subspan(pset.block_offset(b), pset.block_length(b));
    if (pset.is_identity()) {
      const auto z = linalg::gaussian_vec(block.size(), c * sigma, rng);
      for (std::size_t i = 0; i < block.size(); ++i) block[i] += z[i];
    } else {
      const auto draw = privacy::subspace_noise(pset.bases()[b], c, sigma, rng);
      for (std::size_t i = 0; i < block.size(); ++i) block[i] += draw.ambient[i];
    }
  }
}

StepResult run_step(Method method, const Model& model, ModelParams& params, const Dataset& data,
                    std::span<const std::size_t> lot, const ProjectionSet* pset, const TrainConfig& cfg,
                    StepStreams& streams) {
  GradientMatrix grads =
      lot.empty() ? GradientMatrix{0, model.dim(), {}, {}} : model.per_sample_grads(params, data, lot);
  return apply_private_update(method, std::move(grads), params, pset, cfg, streams);
}

}  // namespace

StepResult apply_private_update(Method method, GradientMatrix grads, ModelParams& params, const ProjectionSet* pset,
                                const TrainConfig& cfg, StepStreams& streams) {
  const bool projects = method == Method::kPcdp || method == Method::kPdp || method == Method::kRpdp;
  const std::size_t d = params.values.size();
  if (projects && pset == nullptr) throw std::invalid_argument(to_string(method) + " step requires a projection");
  if (pset != nullptr && pset->dim() != d) throw std::invalid_argument("projection does not match model");
  if (grads.dim != d) throw std::invalid_argument("gradient width does not match parameters");

  std::vector<std::uint8_t> mask;
  if (method == Method::kRsdp) mask = sparsity_mask(d, cfg.rsdp_keep, streams.mask);

  StepResult res;
  res.record.lot_size_actual = grads.batch;
  LotStats stats{cfg};
  std::vector<double> sum(d, 0.0);

  const bool fast_subspace = projects && !pset->is_identity() && !(method == Method::kPcdp && cfg.omega > 0.0);
  if (fast_subspace) {
    subspace_sum(method, grads, *pset, cfg, streams, stats, res, sum);
  } else {
    std::vector<double> h(d);
    for (std::size_t i = 0; i < grads.batch; ++i) {
      auto g = grads.row(i);
      const double raw = linalg::norm2(g);
      double proj = raw;
      switch (method) {
        case Method::kPcdp:
          pset->apply(g, h);
          proj = linalg::norm2(h);
          if (cfg.omega > 0.0)
            for (auto& v : h) v += cfg.omega * streams.symmetrize.normal();
          privacy::clip_inplace(h, cfg.clip);
          std::copy(h.begin(), h.end(), g.begin());
          break;
        case Method::kPdp:
        case Method::kRpdp: {
          const double factor = privacy::clip_inplace(g, cfg.clip);
          pset->apply(g, h);
          // P is linear, so ||P g|| = ||P clip(g)|| / factor.
          proj = factor > 0.0 ? linalg::norm2(h) / factor : 0.0;
          std::copy(h.begin(), h.end(), g.begin());
          break;
        }
        case Method::kRsdp:
          for (std::size_t j = 0; j < d; ++j)
            if (!mask[j]) g[j] = 0.0;
          proj = linalg::norm2(g);
          privacy::clip_inplace(g, cfg.clip);
          break;
        case Method::kDpsgd:
          privacy::clip_inplace(g, cfg.clip);
          break;
      }
      stats.add(grads.losses[i], raw, proj, linalg::norm2(g), res);
    }
    pairwise_sum(grads, sum);
    if (cfg.sigma > 0.0) {
      if (projects) {
        add_subspace_noise(*pset, cfg.clip.threshold, cfg.sigma, streams.noise, sum);
      } else {
        const auto z = linalg::gaussian_vec(d, cfg.clip.threshold * cfg.sigma, streams.noise);
        for (std::size_t j = 0; j < d; ++j)
          if (method != Method::kRsdp || mask[j]) sum[j] += z[j];
      }
    }
  }
  stats.finish(res.record);

  const double step_scale = cfg.lr / static_cast<double>(cfg.lot_size);
  res.delta.resize(d);
  for (std::size_t j = 0; j < d; ++j) {
    res.delta[j] = -step_scale * sum[j];
    params.values[j] += res.delta[j];
  }
  return res;
}

StepResult pcdp_step(const Model& model, ModelParams& params, const Dataset& data, std::span<const std::size_t> lot,
                     const ProjectionSet& pset, const TrainConfig& cfg, StepStreams& streams) {
  return run_step(Method::kPcdp, model, params, data, lot, &pset, cfg, streams);
}

StepResult baseline_step(Method method, const Model& model, ModelParams& params, const Dataset& data,
                         std::span<const std::size_t> lot, const StepAux& aux, const TrainConfig& cfg,
                         StepStreams& streams) {
  if (method == Method::kPcdp) throw std::invalid_argument("baseline_step: use pcdp_step for pcdp");
  return run_step(method, model, params, data, lot, aux.projection, cfg, streams);
}

StepResult private_step(const Model& model, ModelParams& params, const Dataset& data, std::span<const std::size_t> lot,
                        const StepAux& aux, const TrainConfig& cfg, StepStreams& streams) {
  return run_step(cfg.method, model, params, data, lot, aux.projection, cfg, streams);
}

// ---------------------------------------------------------------------------
// Run

RunResult train_run(const Model& model, const TrainConfig& cfg, const RunInputs& inputs, const MetricObserver& on_record) {
  if (inputs.train == nullptr || inputs.test == nullptr) throw std::invalid_argument("train_run: missing train/test data");
  const Dataset& train = *inputs.train;
  cfg.validate(train.size());
  const bool public_projection = cfg.method == Method::kPcdp || cfg.method == Method::kPdp;
  if (public_projection && inputs.pool == nullptr)
    throw std::invalid_argument(to_string(cfg.method) + " needs a public data pool");
  if (cfg.diagnose_skew && inputs.holdout == nullptr)
    throw std::invalid_argument("skew diagnostics need a holdout public pool");

  SeededRng root(cfg.seed);
  RunResult result;
  result.params = model.init_params(root.fork("init").next_u64());
  LotSampler sampler(train.size(), cfg.lot_size, cfg.sampling, root.fork("lot"));
  StepStreams streams = StepStreams::from_seed(cfg.seed);
  std::optional<privacy::RdpAccountant> accountant;
  if (cfg.sigma > 0.0) accountant.emplace(sampler.q(), cfg.sigma, cfg.delta);

  const std::size_t steps_per_epoch = (train.size() + cfg.lot_size - 1) / cfg.lot_size;
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  const std::size_t eval_every = cfg.eval_every > 0 ? cfg.eval_every : steps_per_epoch;

  std::shared_ptr<const ProjectionSet> pset;
  if (cfg.method == Method::kRpdp) {
    pset = std::make_shared<ProjectionSet>(random_projection(model.layout(), cfg.rp_dim, root.fork("projection").next_u64()));
  }
  std::size_t refreshes = 0;

  for (std::size_t step = 0; step < total_steps; ++step) {
    const double eps_next = accountant ? accountant->epsilon(step + 1) : std::numeric_limits<double>::infinity();
    if (cfg.eps_cap > 0.0 && eps_next > cfg.eps_cap) {
      result.halted = true;
      result.message = "privacy budget cap " + std::to_string(cfg.eps_cap) + " would be exceeded at step " +
                       std::to_string(step) + " (epsilon " + std::to_string(eps_next) + ")";
      break;
    }
    const auto lot = sampler.next();

    std::optional<double> skew_value;
    if (public_projection && subspace::needs_refresh(pset.get(), step)) {
      pset = subspace::refresh_projection(model, result.params, inputs.pool->draw(refreshes), cfg.k,
                                          cfg.projection_mode, cfg.beta, step);
      if (cfg.diagnose_skew) {
        const Dataset hold = inputs.holdout->draw(refreshes);
        auto hold_set = subspace::refresh_projection(model, result.params, hold, cfg.k, cfg.projection_mode,
                                                     cfg.beta, step);
        auto report = subspace::skew(*pset, *hold_set, step, hold.size());
        skew_value = report.aggregate;
        result.skew_reports.push_back(std::move(report));
      }
      ++refreshes;
    }

    StepResult sr = run_step(cfg.method, model, result.params, train, lot, pset.get(), cfg, streams);
    MetricRecord& rec = sr.record;
    rec.step = step;
    rec.epoch = step / steps_per_epoch;
    rec.skew = skew_value;
    rec.eps_spent = accountant ? eps_next : 0.0;
    if ((step + 1) % eval_every == 0 && inputs.test->size() > 0) {
      rec.test_acc = model.evaluate(result.params, *inputs.test).accuracy;
    }
    if (on_record) on_record(rec);
    result.log.push_back(std::move(rec));
    result.steps = step + 1;
  }

  result.epsilon = accountant && result.steps > 0 ? accountant->epsilon(result.steps) : 0.0;
  if (inputs.test->size() > 0) result.final_test = model.evaluate(result.params, *inputs.test);
  result.final_train = model.evaluate(result.params, train);
  return result;
}

std::vector<io::Grad2dRow> grad2d_rows(const Model& model, const ModelParams& params, const Dataset& data,
                                       std::span<const std::size_t> indices, const ProjectionSet& pset,
                                       const std::vector<std::string>& layers, std::uint64_t seed, std::size_t step) {
  const GradientMatrix grads = model.per_sample_grads(params, data, indices);
  std::vector<io::Grad2dRow> rows;
  for (const auto& name : layers) {
    const auto& layer = model.layout().layer(name);
    SeededRng rng = SeededRng(seed).fork("grad2d:" + name);
    const double s = 1.0 / std::sqrt(static_cast<double>(layer.length));
    const auto r0 = linalg::gaussian_vec(layer.length, s, rng);
    const auto r1 = linalg::gaussian_vec(layer.length, s, rng);
    std::vector<double> proj(grads.dim);
    for (std::size_t i = 0; i < grads.batch; ++i) {
      const auto g = grads.row(i);
      pset.apply(g, proj);
      const auto raw_slice = g.subspan(layer.offset, layer.length);
      const auto proj_slice = std::span<const double>(proj).subspan(layer.offset, layer.length);
      rows.push_back({step, indices[i], name, "raw", linalg::dot(r0, raw_slice), linalg::dot(r1, raw_slice)});
      rows.push_back({step, indices[i], name, "proj", linalg::dot(r0, proj_slice), linalg::dot(r1, proj_slice)});
    }
  }
  return rows;
}

}  // namespace pcdp::trainer
