// SPDX-License-Identifier: Apache-2.0
//
// Single-process federated simulation. Each round the server's virtual
// client trains on public data to produce a shared projection, sampled
// clients run private local steps, upload their update's coefficients in
// that projection, and the server restores and averages them.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pcdp/models.hpp"
#include "pcdp/privacy.hpp"
#include "pcdp/subspace.hpp"
#include "pcdp/trainer.hpp"

namespace pcdp::federated {

enum class FedMethod { kFedPcdp, kFedAvgDp, kFedProxDp, kFedPdp };
enum class PartitionMode { kIid, kShard, kExtreme };

std::string to_string(FedMethod m);
FedMethod parse_fed_method(const std::string& name);
std::string to_string(PartitionMode m);
PartitionMode parse_partition_mode(const std::string& name);

struct FedConfig {
  FedMethod method = FedMethod::kFedPcdp;
  std::size_t clients = 10;  // N
  std::size_t sampled = 8;   // S
  std::size_t rounds = 80;   // R
  std::size_t local_steps = 5;  // T
  double lr_local = 1.0;
  double lr_global = 1.0;
  PartitionMode partition = PartitionMode::kExtreme;
  double sigma = 6.0;
  privacy::ClipSpec clip{privacy::ClipMethod::kAbadi, 0.01, 0.0};
  std::size_t local_lot = 64;
  std::size_t k = 100;
  subspace::ProjectionMode projection_mode = subspace::ProjectionMode::kLayerwise;
  double mu = 0.01;  // fedprox only
  double omega = 0.0;
  double delta = 1e-5;
  std::uint64_t seed = 0;
  // Virtual-client SGD; 0 steps means local_steps. lr 0 means lr_local times
  // the clip threshold: a clipped private step moves at most lr_local * c, so
  // unclipped public steps at lr_local would leave the clients' neighbourhood.
  std::size_t virtual_steps = 0;
  double virtual_lr = 0.0;
  // Replaces the virtual-client projection with the identity (fedpcdp only).
  bool identity_projection = false;

  void validate() const;
  std::size_t resolved_virtual_steps() const { return virtual_steps > 0 ? virtual_steps : local_steps; }
  double resolved_virtual_lr() const {
    if (virtual_lr > 0.0) return virtual_lr;
    return clip.method == privacy::ClipMethod::kNone ? lr_local : lr_local * clip.threshold;
  }
};

struct PartitionPlan {
  std::vector<std::vector<std::size_t>> clients;
  std::vector<std::vector<std::size_t>> histograms;  // per client, per class
};

// iid: seeded shuffle cut into N near-equal parts.
// shard: indices sorted by label, cut into 2N shards, two random shards per client.
// extreme: client i is filled from class (i mod C) up to its share of the
// data; leftovers go round-robin to clients still below their share. With
// N > C classes are reused cyclically.
PartitionPlan partition(const models::Dataset& data, std::size_t clients, PartitionMode mode, std::uint64_t seed);

struct VirtualClientResult {
  std::shared_ptr<const subspace::ProjectionSet> projection;
  models::ModelParams weights;  // w_v after the public steps
};

// Copies w_g, runs `steps` plain SGD steps on successive public batches and
// builds the projection from the per-sample gradients of the last batch
// (taken before that batch's step). `first_draw` offsets the pool index.
VirtualClientResult virtual_client_projection(const models::Model& model, const models::ModelParams& global,
                                              const subspace::PublicPool& pool, std::size_t steps, double lr,
                                              std::size_t k, subspace::ProjectionMode mode,
                                              std::size_t first_draw = 0);

struct ClientUpdate {
  std::size_t client = 0;
  std::vector<std::vector<double>> coefficients;  // per projection block
  std::size_t bytes = 0;                          // coefficient count x 4
  std::size_t steps = 0;                          // local private steps run
  bool empty = false;
  // w_g - w_l before compression. Simulation-side diagnostics only.
  std::vector<double> delta;
};

ClientUpdate client_local_update(const models::Model& model, const models::ModelParams& global,
                                 const subspace::ProjectionSet& pset, const models::Dataset& client_data,
                                 std::size_t client_id, const FedConfig& cfg, std::uint64_t stream_seed);

struct AggregateResult {
  models::ModelParams params;
  bool skipped = false;
};

// w_g - lr_global * mean_i V c_i, summed in ascending client id.
AggregateResult server_aggregate(const models::ModelParams& global, std::vector<ClientUpdate> updates,
                                 const subspace::ProjectionSet& pset, double lr_global);

struct CommCost {
  std::size_t bytes_fedpcdp = 0;
  std::size_t bytes_raw = 0;
  double ratio = 0.0;  // fedpcdp / raw
};

// Per-client per-round upload size at 4 bytes per value.
CommCost comm_cost(const models::ModelLayout& layout, std::size_t k);

// Trace of the empirical covariance (1/n normalization) of the vectors.
double covariance_trace(const std::vector<std::vector<double>>& vectors);

struct RoundRecord {
  std::size_t round = 0;
  std::vector<std::size_t> participants;
  double test_acc = 0.0;
  double test_loss = 0.0;
  double trace_raw = 0.0;
  double trace_proj = 0.0;
  std::size_t bytes_per_client = 0;
  std::size_t bytes_total = 0;
  std::vector<double> client_eps;  // cumulative, every client
  bool skipped = false;
};

std::string to_jsonl(const RoundRecord& r);

struct FedInputs {
  const models::Dataset* train = nullptr;
  const models::Dataset* test = nullptr;
  const subspace::PublicPool* pool = nullptr;
};

struct FedResult {
  models::ModelParams params;
  std::vector<RoundRecord> rounds;
  PartitionPlan plan;
  models::Evaluation final_test;
  std::vector<double> client_eps;
  std::vector<std::size_t> client_steps;
  // Rounds where the projected dispersion exceeded the raw one.
  std::size_t contraction_violations = 0;
};

using RoundObserver = std::function<void(const RoundRecord&)>;

FedResult fed_train_run(const models::Model& model, const FedConfig& cfg, const FedInputs& inputs,
                        const RoundObserver& on_round = {});

}  // namespace pcdp::federated
