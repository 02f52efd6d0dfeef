// SPDX-License-Identifier: Apache-2.0
#include "pcdp/federated.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <stdexcept>

#include "json.hpp"

namespace pcdp::federated {

using models::Dataset;
using models::Model;
using models::ModelParams;
using subspace::ProjectionSet;

std::string to_string(FedMethod m) {
  switch (m) {
    case FedMethod::kFedPcdp: return "fedpcdp";
    case FedMethod::kFedAvgDp: return "fedavg_dp";
    case FedMethod::kFedProxDp: return "fedprox_dp";
    case FedMethod::kFedPdp: return "fedpdp";
  }
  return "fedpcdp";
}

FedMethod parse_fed_method(const std::string& name) {
  if (name == "fedpcdp") return FedMethod::kFedPcdp;
  if (name == "fedavg_dp") return FedMethod::kFedAvgDp;
  if (name == "fedprox_dp") return FedMethod::kFedProxDp;
  if (name == "fedpdp") return FedMethod::kFedPdp;
  throw std::invalid_argument("unknown federated method '" + name +
                              "' (expected fedpcdp, fedavg_dp, fedprox_dp, fedpdp)");
}

std::string to_string(PartitionMode m) {
  switch (m) {
    case PartitionMode::kIid: return "iid";
    case PartitionMode::kShard: return "shard";
    case PartitionMode::kExtreme: return "extreme";
  }
  return "iid";
}

PartitionMode parse_partition_mode(const std::string& name) {
  if (name == "iid") return PartitionMode::kIid;
  if (name == "shard") return PartitionMode::kShard;
  if (name == "extreme") return PartitionMode::kExtreme;
  throw std::invalid_argument("unknown partition mode '" + name + "' (expected iid, shard, extreme)");
}

void FedConfig::validate() const {
  if (clients == 0) throw std::invalid_argument("client count N must be positive");
  if (sampled == 0 || sampled > clients) throw std::invalid_argument("sampled clients S must lie in [1, N]");
  if (rounds == 0) throw std::invalid_argument("rounds R must be at least 1");
  if (local_steps == 0) throw std::invalid_argument("local steps T must be at least 1");
  if (!(lr_local > 0.0) || !(lr_global > 0.0)) throw std::invalid_argument("learning rates must be positive");
  if (!(sigma >= 0.0)) throw std::invalid_argument("sigma must be non-negative");
  if (local_lot == 0) throw std::invalid_argument("local lot size must be positive");
  if (k == 0) throw std::invalid_argument("projection dimension k must be positive");
  if (!(mu >= 0.0)) throw std::invalid_argument("mu must be non-negative");
  if (!(omega >= 0.0)) throw std::invalid_argument("omega must be non-negative");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
  if (!(virtual_lr >= 0.0)) throw std::invalid_argument("virtual-client lr must be non-negative");
  clip.validate();
}

// ---------------------------------------------------------------------------
// Partitioning

namespace {

void shuffle(std::vector<std::size_t>& v, SeededRng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_index(i)]);
}

}  // namespace

PartitionPlan partition(const Dataset& data, std::size_t clients, PartitionMode mode, std::uint64_t seed) {
  const std::size_t n = data.size();
  if (clients == 0) throw std::invalid_argument("partition: client count must be positive");
  if (clients > n) throw std::invalid_argument("partition: more clients than samples");
  SeededRng rng = SeededRng(seed).fork("partition");
  PartitionPlan plan;
  plan.clients.resize(clients);

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  shuffle(perm, rng);

  switch (mode) {
    case PartitionMode::kIid: {
      const std::size_t base = n / clients, extra = n % clients;
      std::size_t cursor = 0;
      for (std::size_t c = 0; c < clients; ++c) {
        const std::size_t len = base + (c < extra ? 1 : 0);
        plan.clients[c].assign(perm.begin() + cursor, perm.begin() + cursor + len);
        cursor += len;
      }
      break;
    }
    case PartitionMode::kShard: {
      std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) { return data.y[a] < data.y[b]; });
      const std::size_t shards = 2 * clients;
      if (shards > n) throw std::invalid_argument("partition: shard mode needs at least 2N samples");
      std::vector<std::size_t> order(shards);
      std::iota(order.begin(), order.end(), 0);
      shuffle(order, rng);
      auto shard_begin = [&](std::size_t s) { return s * n / shards; };
      for (std::size_t c = 0; c < clients; ++c) {
        for (std::size_t j = 0; j < 2; ++j) {
          const std::size_t s = order[2 * c + j];
          plan.clients[c].insert(plan.clients[c].end(), perm.begin() + shard_begin(s), perm.begin() + shard_begin(s + 1));
        }
      }
      break;
    }
    case PartitionMode::kExtreme: {
      const auto classes = static_cast<std::size_t>(data.classes);
      std::vector<std::vector<std::size_t>> by_class(classes);
      for (std::size_t i : perm) by_class[static_cast<std::size_t>(data.y[i])].push_back(i);
      std::vector<std::size_t> taken(classes, 0);
      std::vector<std::size_t> target(clients, n / clients);
      for (std::size_t c = 0; c < n % clients; ++c) ++target[c];
      for (std::size_t c = 0; c < clients; ++c) {
        const std::size_t cls = c % classes;
        auto& pool = by_class[cls];
        const std::size_t len = std::min(target[c], pool.size() - taken[cls]);
        plan.clients[c].assign(pool.begin() + taken[cls], pool.begin() + taken[cls] + len);
        taken[cls] += len;
      }
      std::vector<std::size_t> spill;
      for (std::size_t cls = 0; cls < classes; ++cls)
        spill.insert(spill.end(), by_class[cls].begin() + taken[cls], by_class[cls].end());
      std::size_t c = 0;
      for (std::size_t i : spill) {
        while (plan.clients[c].size() >= target[c]) c = (c + 1) % clients;
        plan.clients[c].push_back(i);
        c = (c + 1) % clients;
      }
      break;
    }
  }

  plan.histograms.assign(clients, std::vector<std::size_t>(static_cast<std::size_t>(data.classes), 0));
  for (std::size_t c = 0; c < clients; ++c)
    for (std::size_t i : plan.clients[c]) ++plan.histograms[c][static_cast<std::size_t>(data.y[i])];
  return plan;
}

// ---------------------------------------------------------------------------
// Virtual client

VirtualClientResult virtual_client_projection(const Model& model, const ModelParams& global,
                                              const subspace::PublicPool& pool, std::size_t steps, double lr,
                                              std::size_t k, subspace::ProjectionMode mode, std::size_t first_draw) {
  if (steps == 0) throw std::invalid_argument("virtual client: steps must be at least 1");
  VirtualClientResult out;
  out.weights = global;
  for (std::size_t t = 0; t < steps; ++t) {
    const Dataset batch = pool.draw(first_draw + t);
    const models::GradientMatrix grads = model.per_sample_grads(out.weights, batch);
    if (t + 1 == steps) {
      auto set = std::make_shared<ProjectionSet>(subspace::projection_from_gradients(model.layout(), grads, k, mode));
      out.projection = std::move(set);
    }
    const double scale = lr / static_cast<double>(grads.batch);
    for (std::size_t i = 0; i < grads.batch; ++i) linalg::axpy(-scale, grads.row(i), out.weights.values);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Client and server

namespace {

trainer::Method local_method(FedMethod m) {
  switch (m) {
    case FedMethod::kFedPcdp: return trainer::Method::kPcdp;
    case FedMethod::kFedPdp: return trainer::Method::kPdp;
    case FedMethod::kFedAvgDp:
    case FedMethod::kFedProxDp: return trainer::Method::kDpsgd;
  }
  return trainer::Method::kDpsgd;
}

std::size_t local_lot_size(const FedConfig& cfg, std::size_t client_size) {
  return std::min(cfg.local_lot, client_size);
}

}  // namespace

ClientUpdate client_local_update(const Model& model, const ModelParams& global, const ProjectionSet& pset,
                                 const Dataset& client_data, std::size_t client_id, const FedConfig& cfg,
                                 std::uint64_t stream_seed) {
  if (pset.dim() != model.dim()) throw std::invalid_argument("client update: projection does not match model");
  ClientUpdate up;
  up.client = client_id;
  ModelParams local = global;

  if (client_data.size() == 0) {
    up.empty = true;
  } else {
    trainer::TrainConfig tc;
    tc.method = local_method(cfg.method);
    tc.lot_size = local_lot_size(cfg, client_data.size());
    tc.lr = cfg.lr_local;
    tc.clip = cfg.clip;
    tc.sigma = cfg.sigma;
    tc.omega = cfg.method == FedMethod::kFedPcdp ? cfg.omega : 0.0;
    tc.delta = cfg.delta;
    tc.validate(client_data.size());

    SeededRng root(stream_seed);
    trainer::LotSampler sampler(client_data.size(), tc.lot_size, trainer::Sampling::kPoisson, root.fork("lot"));
    trainer::StepStreams streams = trainer::StepStreams::from_seed(stream_seed);
    const trainer::StepAux aux{&pset};
    std::vector<double> prox(model.dim());
    for (std::size_t t = 0; t < cfg.local_steps; ++t) {
      const auto lot = sampler.next();
      const bool proximal = cfg.method == FedMethod::kFedProxDp && cfg.mu > 0.0;
      if (proximal)
        for (std::size_t j = 0; j < prox.size(); ++j) prox[j] = cfg.mu * (local.values[j] - global.values[j]);
      trainer::private_step(model, local, client_data, lot, aux, tc, streams);
      // The proximal pull touches no private data, so it is applied after privatization.
      if (proximal) linalg::axpy(-cfg.lr_local, prox, local.values);
      ++up.steps;
    }
  }

  up.delta.resize(model.dim());
  for (std::size_t j = 0; j < up.delta.size(); ++j) up.delta[j] = global.values[j] - local.values[j];
  up.coefficients = pset.coefficients(up.delta);
  for (const auto& c : up.coefficients) up.bytes += c.size() * 4;
  return up;
}

AggregateResult server_aggregate(const ModelParams& global, std::vector<ClientUpdate> updates,
                                 const ProjectionSet& pset, double lr_global) {
  AggregateResult out;
  out.params = global;
  if (updates.empty()) {
    out.skipped = true;
    return out;
  }
  const auto widths = pset.widths();
  std::sort(updates.begin(), updates.end(), [](const ClientUpdate& a, const ClientUpdate& b) { return a.client < b.client; });
  std::vector<double> sum(pset.dim(), 0.0);
  for (const auto& u : updates) {
    if (u.coefficients.size() != widths.size())
      throw std::invalid_argument("aggregate: update from client " + std::to_string(u.client) + " has the wrong block count");
    for (std::size_t b = 0; b < widths.size(); ++b)
      if (u.coefficients[b].size() != widths[b])
        throw std::invalid_argument("aggregate: update from client " + std::to_string(u.client) +
                                    " does not match this round's projection");
    const auto restored = pset.expand(u.coefficients);
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += restored[j];
  }
  const double scale = lr_global / static_cast<double>(updates.size());
  linalg::axpy(-scale, sum, out.params.values);
  return out;
}

CommCost comm_cost(const models::ModelLayout& layout, std::size_t k) {
  CommCost c;
  for (const auto& l : layout.layers) {
    c.bytes_raw += l.length * 4;
    c.bytes_fedpcdp += std::min(k, l.length) * 4;
  }
  c.ratio = c.bytes_raw > 0 ? static_cast<double>(c.bytes_fedpcdp) / static_cast<double>(c.bytes_raw) : 0.0;
  return c;
}

double covariance_trace(const std::vector<std::vector<double>>& vectors) {
  if (vectors.size() < 2) return 0.0;
  const std::size_t d = vectors.front().size();
  const double n = static_cast<double>(vectors.size());
  std::vector<double> mean(d, 0.0);
  for (const auto& v : vectors) linalg::axpy(1.0 / n, v, mean);
  double trace = 0.0;
  for (const auto& v : vectors)
    for (std::size_t j = 0; j < d; ++j) trace += (v[j] - mean[j]) * (v[j] - mean[j]);
  return trace / n;
}

std::string to_jsonl(const RoundRecord& r) {
  nlohmann::ordered_json j;
  j["round"] = r.round;
  j["participants"] = r.participants;
  j["test_acc"] = r.test_acc;
  j["test_loss"] = r.test_loss;
  j["trace_raw"] = r.trace_raw;
  j["trace_proj"] = r.trace_proj;
  j["bytes_per_client"] = r.bytes_per_client;
  j["bytes_total"] = r.bytes_total;
  j["client_eps"] = r.client_eps;
  j["skipped"] = r.skipped;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Run

FedResult fed_train_run(const Model& model, const FedConfig& cfg, const FedInputs& inputs, const RoundObserver& on_round) {
  cfg.validate();
  if (inputs.train == nullptr || inputs.test == nullptr) throw std::invalid_argument("fed_train_run: missing train/test data");
  const bool needs_pool = (cfg.method == FedMethod::kFedPcdp && !cfg.identity_projection) || cfg.method == FedMethod::kFedPdp;
  if (needs_pool && inputs.pool == nullptr)
    throw std::invalid_argument(to_string(cfg.method) + " needs a public data pool for the virtual client");

  SeededRng root(cfg.seed);
  FedResult res;
  res.plan = partition(*inputs.train, cfg.clients, cfg.partition, root.fork("partition").next_u64());
  std::vector<Dataset> client_data;
  for (const auto& idx : res.plan.clients) client_data.push_back(models::subset(*inputs.train, idx));

  std::vector<std::optional<privacy::RdpAccountant>> accountants(cfg.clients);
  for (std::size_t c = 0; c < cfg.clients; ++c) {
    const std::size_t n = client_data[c].size();
    if (cfg.sigma > 0.0 && n > 0)
      accountants[c].emplace(static_cast<double>(local_lot_size(cfg, n)) / static_cast<double>(n), cfg.sigma, cfg.delta);
  }
  res.client_steps.assign(cfg.clients, 0);
  res.client_eps.assign(cfg.clients, 0.0);

  res.params = model.init_params(root.fork("init").next_u64());
  const auto identity = std::make_shared<ProjectionSet>(ProjectionSet::identity(model.layout()));
  const std::size_t vsteps = cfg.resolved_virtual_steps();

  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    RoundRecord rec;
    rec.round = r;

    std::vector<std::size_t> order(cfg.clients);
    std::iota(order.begin(), order.end(), 0);
    SeededRng select = root.fork("select", r);
    for (std::size_t i = 0; i < cfg.sampled; ++i) std::swap(order[i], order[i + select.uniform_index(cfg.clients - i)]);
    rec.participants.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cfg.sampled));
    std::sort(rec.participants.begin(), rec.participants.end());

    std::shared_ptr<const ProjectionSet> diag;
    if (inputs.pool != nullptr) {
      diag = virtual_client_projection(model, res.params, *inputs.pool, vsteps, cfg.resolved_virtual_lr(), cfg.k,
                                       cfg.projection_mode, r * vsteps)
                 .projection;
    }
    std::shared_ptr<const ProjectionSet> transport = identity;
    if ((cfg.method == FedMethod::kFedPcdp && !cfg.identity_projection) || cfg.method == FedMethod::kFedPdp)
      transport = diag;
    if (!diag) diag = transport;

    std::vector<ClientUpdate> updates;
    std::vector<std::vector<double>> raw, proj;
    for (std::size_t c : rec.participants) {
      const std::uint64_t stream = root.fork("client", r * cfg.clients + c).next_u64();
      ClientUpdate u = client_local_update(model, res.params, *transport, client_data[c], c, cfg, stream);
      res.client_steps[c] += u.steps;
      raw.push_back(u.delta);
      proj.push_back(diag->apply(u.delta));
      rec.bytes_per_client = std::max(rec.bytes_per_client, u.bytes);
      rec.bytes_total += u.bytes;
      updates.push_back(std::move(u));
    }
    rec.trace_raw = covariance_trace(raw);
    rec.trace_proj = covariance_trace(proj);
    if (rec.trace_proj > rec.trace_raw + 1e-12 * (1.0 + rec.trace_raw)) ++res.contraction_violations;

    auto agg = server_aggregate(res.params, std::move(updates), *transport, cfg.lr_global);
    res.params = std::move(agg.params);
    rec.skipped = agg.skipped;

    const auto eval = model.evaluate(res.params, *inputs.test);
    rec.test_acc = eval.accuracy;
    rec.test_loss = eval.loss;
    for (std::size_t c = 0; c < cfg.clients; ++c)
      res.client_eps[c] = accountants[c] && res.client_steps[c] > 0 ? accountants[c]->epsilon(res.client_steps[c]) : 0.0;
    rec.client_eps = res.client_eps;
    if (on_round) on_round(rec);
    res.rounds.push_back(std::move(rec));
  }
  res.final_test = model.evaluate(res.params, *inputs.test);
  return res;
}

}  // namespace pcdp::federated
