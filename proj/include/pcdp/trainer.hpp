// SPDX-License-Identifier: Apache-2.0
//
// Centralized private training. Every method shares one step skeleton and
// differs only in where the projection sits relative to clipping:
//
//   pcdp   project -> clip -> sum -> subspace noise
//   pdp    clip -> project -> sum -> subspace noise
//   rpdp   like pdp with a fixed random orthonormal basis
//   rsdp   random coordinate mask -> clip -> sum -> masked noise
//   dpsgd  clip -> sum -> ambient noise
//
// The noisy sum is divided by the configured lot size B (not the realized
// Poisson lot size) and applied as w <- w - lr * g.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pcdp/io.hpp"
#include "pcdp/models.hpp"
#include "pcdp/privacy.hpp"
#include "pcdp/subspace.hpp"

namespace pcdp::trainer {

enum class Method { kPcdp, kDpsgd, kPdp, kRpdp, kRsdp };
enum class Sampling { kPoisson, kFixedShuffle };

std::string to_string(Method m);
Method parse_method(const std::string& name);
std::string to_string(Sampling s);
Sampling parse_sampling(const std::string& name);

struct TrainConfig {
  Method method = Method::kPcdp;
  std::size_t epochs = 80;
  std::size_t lot_size = 250;  // B
  double lr = 1.0;
  privacy::ClipSpec clip{privacy::ClipMethod::kAbadi, 0.01, 0.0};
  double sigma = 10.0;
  std::size_t k = 100;
  std::size_t beta = 1;
  subspace::ProjectionMode projection_mode = subspace::ProjectionMode::kLayerwise;
  Sampling sampling = Sampling::kPoisson;
  // Scale of the full-dimensional N(0, I_d) perturbation added after
  // projection and before clipping (pcdp only). Breaks update confinement.
  double omega = 0.0;
  std::uint64_t seed = 0;
  double delta = 1e-5;
  std::size_t rp_dim = 800;
  double rsdp_keep = 0.3;
  std::size_t eval_every = 0;  // 0 = once per epoch
  double eps_cap = 0.0;        // 0 = no cap
  bool diagnose_skew = false;
  std::size_t holdout_batch = 512;

  void validate(std::size_t train_size) const;
  double sampling_rate(std::size_t train_size) const {
    return static_cast<double>(lot_size) / static_cast<double>(train_size);
  }
};

struct MetricRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::size_t lot_size_actual = 0;
  std::optional<double> train_loss;
  std::optional<double> test_acc;
  double mean_norm_raw = 0.0;
  double mean_norm_proj = 0.0;
  double clipped_frac_raw = 0.0;
  double clipped_frac_proj = 0.0;
  std::optional<double> kappa;
  std::optional<double> skew;
  double eps_spent = 0.0;
};

std::string to_jsonl(const MetricRecord& r);

// Draws lots either by Poisson subsampling (each index kept with probability
// q, variable size) or as consecutive B-blocks of a per-epoch shuffle.
class LotSampler {
 public:
  LotSampler(std::size_t dataset_size, std::size_t lot_size, Sampling sampling, SeededRng rng);
  std::vector<std::size_t> next();
  double q() const { return q_; }

 private:
  void reshuffle();
  std::size_t n_;
  std::size_t lot_;
  Sampling sampling_;
  double q_;
  SeededRng rng_;
  std::vector<std::size_t> perm_;
  std::size_t cursor_ = 0;
};

std::vector<std::size_t> sample_lot(std::size_t dataset_size, double q, SeededRng& rng);

// Random streams a step consumes. Each comes from its own named fork of the
// run seed.
struct StepStreams {
  SeededRng noise;
  SeededRng symmetrize;
  SeededRng mask;

  static StepStreams from_seed(std::uint64_t seed);
};

// Method-specific side inputs: the projection for pcdp/pdp/rpdp; rsdp draws
// its own mask per step.
struct StepAux {
  const subspace::ProjectionSet* projection = nullptr;
};

struct StepResult {
  MetricRecord record;
  // Largest norm any single sample contributed to the pre-noise sum.
  double max_contribution_norm = 0.0;
  // Applied parameter change w' - w.
  std::vector<double> delta;
};

StepResult pcdp_step(const models::Model& model, models::ModelParams& params, const models::Dataset& data,
                     std::span<const std::size_t> lot, const subspace::ProjectionSet& pset, const TrainConfig& cfg,
                     StepStreams& streams);

StepResult baseline_step(Method method, const models::Model& model, models::ModelParams& params,
                         const models::Dataset& data, std::span<const std::size_t> lot, const StepAux& aux,
                         const TrainConfig& cfg, StepStreams& streams);

// Dispatches on cfg.method.
StepResult private_step(const models::Model& model, models::ModelParams& params, const models::Dataset& data,
                        std::span<const std::size_t> lot, const StepAux& aux, const TrainConfig& cfg,
                        StepStreams& streams);

// The step body once per-sample gradients are known: per-method projection
// and clipping, summation, noise, division by cfg.lot_size and the update.
StepResult apply_private_update(Method method, models::GradientMatrix grads, models::ModelParams& params,
                                const subspace::ProjectionSet* pset, const TrainConfig& cfg, StepStreams& streams);

// Keep-mask with independent Bernoulli(keep) entries.
std::vector<std::uint8_t> sparsity_mask(std::size_t dim, double keep, SeededRng& rng);

// Fixed Gaussian d x k basis, orthonormalized.
subspace::ProjectionSet random_projection(const models::ModelLayout& layout, std::size_t k, std::uint64_t seed);

struct RunInputs {
  const models::Dataset* train = nullptr;
  const models::Dataset* test = nullptr;
  const subspace::PublicPool* pool = nullptr;     // pcdp / pdp
  const subspace::PublicPool* holdout = nullptr;  // diagnose_skew
};

struct RunResult {
  models::ModelParams params;
  std::vector<MetricRecord> log;
  std::vector<subspace::SkewReport> skew_reports;
  models::Evaluation final_test;
  models::Evaluation final_train;
  double epsilon = 0.0;
  std::size_t steps = 0;
  bool halted = false;
  std::string message;
};

using MetricObserver = std::function<void(const MetricRecord&)>;

RunResult train_run(const models::Model& model, const TrainConfig& cfg, const RunInputs& inputs,
                    const MetricObserver& on_record = {});

// Projects each sample's gradient slice for the named layers onto R^2 with a
// fixed seeded Gaussian map, before and after the public projection.
std::vector<io::Grad2dRow> grad2d_rows(const models::Model& model, const models::ModelParams& params,
                                       const models::Dataset& data, std::span<const std::size_t> indices,
                                       const subspace::ProjectionSet& pset,
                                       const std::vector<std::string>& layers, std::uint64_t seed,
                                       std::size_t step = 0);

}  // namespace pcdp::trainer
