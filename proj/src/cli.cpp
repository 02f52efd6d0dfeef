// SPDX-License-Identifier: Apache-2.0
#include "pcdp/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pcdp/privacy.hpp"
#include "pcdp/rng.hpp"

namespace pcdp::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

trainer::TrainConfig train_config(const io::Config& c) {
  trainer::TrainConfig t;
  try {
    t.method = trainer::parse_method(c.str("method"));
    t.sampling = trainer::parse_sampling(c.str("sampling"));
    t.clip.method = privacy::parse_clip_method(c.str("clip"));
    t.projection_mode = subspace::parse_projection_mode(c.str("projection_mode"));
  } catch (const std::invalid_argument& e) {
    throw io::ConfigError(e.what());
  }
  t.epochs = c.count("epochs");
  t.lot_size = c.count("lot_size");
  t.lr = c.real("lr");
  t.clip.threshold = c.real("clip_threshold");
  t.clip.stabilizer = c.real("clip_stabilizer");
  t.sigma = c.real("sigma");
  t.k = c.count("k");
  t.beta = c.count("beta");
  t.omega = c.real("omega");
  t.seed = c.u64("seed");
  t.delta = c.real("delta");
  t.rp_dim = c.count("rp_dim");
  t.rsdp_keep = c.real("rsdp_keep");
  t.eval_every = c.count("eval_every");
  t.eps_cap = c.real("eps_cap");
  t.diagnose_skew = c.flag("diagnose_skew");
  t.holdout_batch = c.count("holdout_batch");
  return t;
}

federated::FedConfig fed_config(const io::Config& c) {
  federated::FedConfig f;
  try {
    f.method = federated::parse_fed_method(c.str("fed_method"));
    f.partition = federated::parse_partition_mode(c.str("partition"));
    f.clip.method = privacy::parse_clip_method(c.str("clip"));
    f.projection_mode = subspace::parse_projection_mode(c.str("projection_mode"));
  } catch (const std::invalid_argument& e) {
    throw io::ConfigError(e.what());
  }
  f.clients = c.count("clients");
  f.sampled = c.count("sampled_clients");
  f.rounds = c.count("rounds");
  f.local_steps = c.count("local_steps");
  f.lr_local = c.real("lr_local");
  f.lr_global = c.real("lr_global");
  f.sigma = c.real("sigma");
  f.clip.threshold = c.real("clip_threshold");
  f.clip.stabilizer = c.real("clip_stabilizer");
  f.local_lot = c.count("local_lot");
  f.k = c.count("k");
  f.mu = c.real("mu");
  f.omega = c.real("omega");
  f.delta = c.real("delta");
  f.seed = c.u64("seed");
  f.virtual_steps = c.count("virtual_steps");
  f.virtual_lr = c.real("virtual_lr");
  return f;
}

models::Model build_model(const io::Config& c, std::size_t features, int classes) {
  models::ModelKind kind;
  try {
    kind = models::parse_model_kind(c.str("model"));
  } catch (const std::invalid_argument& e) {
    throw io::ConfigError(e.what());
  }
  return models::Model::make(kind, features, c.count("hidden"), classes);
}

ExperimentData load_experiment_data(const io::Config& c) {
  const std::uint64_t seed = c.u64("seed");
  SeededRng root(seed);
  models::Dataset all;
  const std::string dataset = c.str("dataset");
  if (dataset == "mnist") {
    all = io::load_idx(c.str("mnist_images"), c.str("mnist_labels"));
  } else if (dataset == "synthetic") {
    io::SyntheticSpec spec;
    spec.classes = static_cast<int>(c.count("synthetic_classes"));
    spec.features = c.count("synthetic_features");
    spec.separation = c.real("synthetic_separation");
    spec.samples = c.count("synthetic_samples");
    const double decay = c.real("synthetic_noise_decay");
    for (std::size_t i = 0; i < spec.features; ++i) spec.noise_spectrum.push_back(std::pow(decay, static_cast<double>(i)));
    all = io::gen_synthetic(spec, root.fork("data").next_u64());
  } else {
    throw io::ConfigError("config key 'dataset': unknown dataset '" + dataset + "' (expected mnist or synthetic)");
  }

  io::SplitSpec spec;
  spec.private_size = c.count("private_size");
  spec.public_size = c.count("public_size");
  spec.holdout_size = c.count("holdout_size");
  spec.test_size = c.count("test_size");
  spec.seed = seed;
  ExperimentData d;
  d.splits = io::split(all, spec);

  subspace::Segmentation seg;
  try {
    seg = subspace::parse_segmentation(c.str("public_strategy"));
  } catch (const std::invalid_argument& e) {
    throw io::ConfigError(e.what());
  }
  if (d.splits.public_set.size() > 0)
    d.pool = std::make_unique<subspace::PublicPool>(d.splits.public_set, seg, c.count("public_batch"),
                                                    root.fork("public").next_u64());
  if (d.splits.holdout_set.size() > 0)
    d.holdout = std::make_unique<subspace::PublicPool>(d.splits.holdout_set, subspace::Segmentation::kRbs,
                                                       c.count("holdout_batch"), root.fork("holdout").next_u64());
  return d;
}

namespace {

struct Options {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool force = false;
  std::vector<std::string> overrides;
  bool diagnose_skew = false;
  std::string dump_layers;
};

// Errors raised before any work starts map to exit 1.
struct Stage {
  bool running = false;
};

void write_summary(const fs::path& dir, const ordered_json& summary) {
  std::ofstream out(dir / "summary.json", std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (dir / "summary.json").string());
  out << summary.dump(2) << '\n';
}

ordered_json eval_json(const models::Evaluation& e) { return {{"accuracy", e.accuracy}, {"loss", e.loss}}; }

fs::path prepare_out(const Options& o, const std::string& fallback) {
  const fs::path dir = o.out_dir.empty() ? fs::path(fallback) : fs::path(o.out_dir);
  if (fs::exists(dir / "summary.json") && !o.force)
    throw std::runtime_error((dir / "summary.json").string() + " already exists; pass --force to overwrite");
  fs::create_directories(dir);
  return dir;
}

int cmd_train(const io::Config& c, const Options& o, const std::string& command, Stage& stage, std::ostream& out) {
  trainer::TrainConfig tc = train_config(c);
  if (command == "diagnose-skew") tc.diagnose_skew = true;
  ExperimentData data = load_experiment_data(c);
  const auto& train = data.splits.private_set;
  tc.validate(train.size());
  const models::Model model = build_model(c, train.features, train.classes);
  const bool needs_pool = tc.method == trainer::Method::kPcdp || tc.method == trainer::Method::kPdp;
  if (needs_pool && !data.pool) throw io::ConfigError("method " + trainer::to_string(tc.method) + " needs public_size > 0");
  if (tc.diagnose_skew && !data.holdout) throw io::ConfigError("skew diagnostics need holdout_size > 0");

  stage.running = true;
  const fs::path dir = prepare_out(o, "out/" + command);
  io::JsonlWriter metrics(dir / "metrics.jsonl");
  trainer::RunInputs inputs{&train, &data.splits.test_set, data.pool.get(), data.holdout.get()};
  const auto result = trainer::train_run(model, tc, inputs,
                                         [&](const trainer::MetricRecord& r) { metrics.write_line(trainer::to_jsonl(r)); });
  io::save_params(dir / "params.json", model, result.params);

  ordered_json summary;
  summary["command"] = command;
  auto resolved = c.to_json();
  resolved["diagnose_skew"] = tc.diagnose_skew;
  summary["config"] = resolved;
  summary["final"] = {{"test", eval_json(result.final_test)}, {"train", eval_json(result.final_train)}};
  summary["epsilon"] = result.epsilon;
  summary["delta"] = tc.delta;
  summary["steps"] = result.steps;
  summary["halted"] = result.halted;
  summary["message"] = result.message;
  summary["metrics_lines"] = metrics.lines();
  summary["metrics_hash"] = io::hex64(metrics.hash());

  if (tc.diagnose_skew) {
    io::JsonlWriter skew_log(dir / "skew.jsonl");
    double mean = 0.0, peak = 0.0;
    for (const auto& rep : result.skew_reports) {
      ordered_json j;
      j["step"] = rep.step;
      j["aggregate"] = rep.aggregate;
      j["per_layer"] = rep.per_layer;
      j["holdout_size"] = rep.holdout_size;
      j["converged"] = rep.converged;
      skew_log.write_line(j.dump());
      mean += rep.aggregate;
      peak = std::max(peak, rep.aggregate);
    }
    if (!result.skew_reports.empty()) mean /= static_cast<double>(result.skew_reports.size());
    summary["skew"] = {{"reports", result.skew_reports.size()}, {"mean", mean}, {"max", peak},
                       {"hash", io::hex64(skew_log.hash())}};
  }
  write_summary(dir, summary);
  out << "test accuracy " << result.final_test.accuracy << ", epsilon " << result.epsilon << " after "
      << result.steps << " steps; wrote " << dir.string() << '\n';
  if (result.halted) throw std::runtime_error(result.message);
  return kExitOk;
}

int cmd_fedtrain(const io::Config& c, const Options& o, Stage& stage, std::ostream& out) {
  const federated::FedConfig fc = fed_config(c);
  fc.validate();
  ExperimentData data = load_experiment_data(c);
  const auto& train = data.splits.private_set;
  if (fc.clients > train.size()) throw io::ConfigError("clients exceeds private_size");
  const models::Model model = build_model(c, train.features, train.classes);
  const bool needs_pool = fc.method == federated::FedMethod::kFedPcdp || fc.method == federated::FedMethod::kFedPdp;
  if (needs_pool && !data.pool) throw io::ConfigError("method " + federated::to_string(fc.method) + " needs public_size > 0");

  stage.running = true;
  const fs::path dir = prepare_out(o, "out/fedtrain");
  io::JsonlWriter rounds(dir / "rounds.jsonl");
  federated::FedInputs inputs{&train, &data.splits.test_set, data.pool.get()};
  const auto result = federated::fed_train_run(model, fc, inputs,
                                               [&](const federated::RoundRecord& r) { rounds.write_line(federated::to_jsonl(r)); });
  io::save_params(dir / "params.json", model, result.params);
  const auto cost = federated::comm_cost(model.layout(), fc.k);

  ordered_json summary;
  summary["command"] = "fedtrain";
  summary["config"] = c.to_json();
  summary["final"] = {{"test", eval_json(result.final_test)}};
  summary["client_epsilon"] = result.client_eps;
  summary["epsilon"] = result.client_eps.empty() ? 0.0 : *std::max_element(result.client_eps.begin(), result.client_eps.end());
  summary["delta"] = fc.delta;
  summary["client_steps"] = result.client_steps;
  summary["contraction_violations"] = result.contraction_violations;
  summary["comm_cost"] = {{"bytes_fedpcdp", cost.bytes_fedpcdp}, {"bytes_raw", cost.bytes_raw}, {"ratio", cost.ratio}};
  summary["metrics_lines"] = rounds.lines();
  summary["metrics_hash"] = io::hex64(rounds.hash());
  write_summary(dir, summary);
  out << "global test accuracy " << result.final_test.accuracy << " after " << fc.rounds << " rounds; wrote "
      << dir.string() << '\n';
  return kExitOk;
}

int cmd_accountant(const io::Config& c, const Options& o, Stage& stage, std::ostream& out) {
  const std::size_t n = c.count("private_size");
  const std::size_t lot = c.count("lot_size");
  double q = c.real("accountant_q");
  std::size_t steps = c.count("accountant_steps");
  if (q == 0.0) {
    if (n == 0 || lot == 0) throw io::ConfigError("accountant needs accountant_q or positive lot_size/private_size");
    q = static_cast<double>(lot) / static_cast<double>(n);
  }
  if (steps == 0) steps = c.count("epochs") * ((n + lot - 1) / std::max<std::size_t>(lot, 1));
  const double sigma = c.real("sigma");
  const double delta = c.real("delta");
  if (!(q > 0.0 && q <= 1.0)) throw io::ConfigError("config key 'accountant_q' must lie in (0, 1]");
  if (!(sigma > 0.0)) throw io::ConfigError("config key 'sigma' must be positive for accounting");
  if (!(delta > 0.0 && delta < 1.0)) throw io::ConfigError("config key 'delta' must lie in (0, 1)");

  stage.running = true;
  ordered_json j;
  j["q"] = q;
  j["sigma"] = sigma;
  j["T"] = steps;
  j["delta"] = delta;
  j["epsilon"] = privacy::rdp_epsilon(q, sigma, steps, delta);
  const std::string line = j.dump();
  out << line << '\n';
  if (!o.out_dir.empty()) {
    const fs::path dir = prepare_out(o, o.out_dir);
    ordered_json summary;
    summary["command"] = "accountant";
    summary["config"] = c.to_json();
    summary["result"] = j;
    summary["metrics_lines"] = 1;
    summary["metrics_hash"] = io::hex64(fnv1a64("\n", fnv1a64(line)));
    write_summary(dir, summary);
  }
  return kExitOk;
}

int cmd_grad2d(const io::Config& c, const Options& o, Stage& stage, std::ostream& out) {
  const std::string ckpt_path = c.str("checkpoint");
  if (ckpt_path.empty()) throw io::ConfigError("dump-grad2d needs config key 'checkpoint'");
  const trainer::TrainConfig tc = train_config(c);
  ExperimentData data = load_experiment_data(c);
  if (!data.pool) throw io::ConfigError("dump-grad2d needs public_size > 0");
  const auto ckpt = io::load_params(ckpt_path);
  const auto& train = data.splits.private_set;
  if (ckpt.features != train.features || ckpt.classes != train.classes)
    throw io::ConfigError("checkpoint shape (" + std::to_string(ckpt.features) + " features, " +
                          std::to_string(ckpt.classes) + " classes) does not match the dataset");
  const models::Model model = models::Model::make(ckpt.kind, ckpt.features, ckpt.hidden, ckpt.classes);
  models::ModelParams params = model.zeros();
  if (ckpt.values.size() != params.values.size()) throw io::ConfigError("checkpoint parameter count does not match its model");
  params.values = ckpt.values;
  std::vector<std::string> layers = c.list("dump_layers");
  if (layers.empty())
    for (const auto& l : model.layout().layers) layers.push_back(l.name);
  for (const auto& name : layers) {
    const auto& ls = model.layout().layers;
    if (std::none_of(ls.begin(), ls.end(), [&](const models::LayerInfo& l) { return l.name == name; }))
      throw io::ConfigError("unknown layer '" + name + "' in dump_layers");
  }

  stage.running = true;
  const fs::path dir = prepare_out(o, "out/dump-grad2d");
  const auto pset = subspace::refresh_projection(model, params, data.pool->draw(0), tc.k, tc.projection_mode, 1, 0);
  std::vector<std::size_t> idx(std::min(c.count("grad2d_samples"), train.size()));
  std::iota(idx.begin(), idx.end(), 0);
  const auto rows = trainer::grad2d_rows(model, params, train, idx, *pset, layers,
                                         SeededRng(c.u64("seed")).fork("grad2d").next_u64());
  io::write_grad2d_csv(dir / "grad2d.csv", rows);
  std::ifstream in(dir / "grad2d.csv");
  std::stringstream ss;
  ss << in.rdbuf();

  ordered_json summary;
  summary["command"] = "dump-grad2d";
  summary["config"] = c.to_json();
  summary["rows"] = rows.size();
  summary["layers"] = layers;
  summary["metrics_lines"] = rows.size() + 1;
  summary["metrics_hash"] = io::hex64(fnv1a64(ss.str()));
  write_summary(dir, summary);
  out << "wrote " << rows.size() << " rows to " << (dir / "grad2d.csv").string() << '\n';
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Private training with public-subspace pre-projection"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "key = value config file");
    sub->add_option("--out", o.out_dir, "output directory");
    sub->add_option("--seed", o.seed, "root seed (overrides the config)");
    sub->add_flag("--force", o.force, "overwrite an existing summary.json");
    sub->add_option("--set", o.overrides, "key=value override, repeatable");
    sub->add_flag("--diagnose-skew", o.diagnose_skew, "record projector distance to a holdout projection");
    sub->add_option("--dump-layers", o.dump_layers, "comma-separated layers for dump-grad2d");
  };
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"train", "centralized private training"},
      {"fedtrain", "federated simulation"},
      {"accountant", "print epsilon for (q, sigma, T, delta)"},
      {"diagnose-skew", "training with subspace skew reporting"},
      {"dump-grad2d", "2-D random maps of per-sample gradients from a checkpoint"},
  };
  for (const auto& [name, help] : commands) add_common(app.add_subcommand(name, help));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  Stage stage;
  try {
    io::Config c = o.config_path.empty() ? io::Config() : io::Config::from_file(o.config_path);
    for (const auto& s : o.overrides) c.apply_override(s);
    if (o.seed) c.set("seed", std::to_string(*o.seed));
    if (o.diagnose_skew) c.set("diagnose_skew", "true");
    if (!o.dump_layers.empty()) c.set("dump_layers", o.dump_layers);

    if (command == "train" || command == "diagnose-skew") return cmd_train(c, o, command, stage, out);
    if (command == "fedtrain") return cmd_fedtrain(c, o, stage, out);
    if (command == "accountant") return cmd_accountant(c, o, stage, out);
    return cmd_grad2d(c, o, stage, out);
  } catch (const io::ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    err << (stage.running ? "error: " : "config error: ") << e.what() << '\n';
    return stage.running ? kExitRuntime : kExitConfig;
  }
}

}  // namespace pcdp::cli
