// SPDX-License-Identifier: Apache-2.0
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "pcdp/cli.hpp"

using namespace pcdp;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "pcdp");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("pcdp_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

// Small synthetic experiment: 20 features, 2 classes, 200 private samples.
// Defaults go right after the subcommand so later --set flags win.
std::vector<std::string> small(std::vector<std::string> args) {
  std::vector<std::string> defaults;
  for (const char* kv : {"dataset=synthetic", "synthetic_samples=400", "private_size=200", "public_size=50",
                         "holdout_size=50", "test_size=100", "k=5", "public_batch=20", "holdout_batch=50",
                         "lot_size=20", "epochs=1", "clients=4", "sampled_clients=2", "rounds=2",
                         "local_steps=2", "local_lot=10"}) {
    defaults.push_back("--set");
    defaults.push_back(kv);
  }
  args.insert(args.begin() + 1, defaults.begin(), defaults.end());
  return args;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("accountant prints epsilon for the reference setting") {
    const auto r = invoke({"accountant", "--set", "accountant_q=0.025", "--set", "accountant_steps=3200", "--set",
                           "sigma=10", "--set", "delta=1e-5"});
    REQUIRE(r.code == cli::kExitOk);
    const auto j = json::parse(r.out);
    CHECK(j["T"] == 3200);
    const double eps = j["epsilon"];
    CHECK(eps > 0.69 / 1.6);
    CHECK(eps < 0.69 * 1.6);
    // Derived rate: 50 / 2000 over 80 epochs of 40 lots.
    const auto d = invoke({"accountant", "--set", "sigma=10"});
    REQUIRE(d.code == cli::kExitOk);
    CHECK(json::parse(d.out)["epsilon"].get<double>() == doctest::Approx(eps).epsilon(1e-12));
  }

  TEST_CASE("train with zero epochs writes a summary holding the resolved config") {
    const auto dir = scratch("zero");
    const auto r = invoke(small({"train", "--out", dir.string(), "--set", "epochs=0", "--seed", "7"}));
    REQUIRE_MESSAGE(r.code == cli::kExitOk, r.err);
    const auto s = read_json(dir / "summary.json");
    CHECK(s["command"] == "train");
    CHECK(s["steps"] == 0);
    CHECK(s["config"]["seed"] == 7);
    CHECK(s["config"]["method"] == "pcdp");
    CHECK(fs::exists(dir / "params.json"));
    CHECK(fs::exists(dir / "metrics.jsonl"));
  }

  TEST_CASE("configuration errors exit 1 and name the key") {
    const auto r = invoke(small({"train", "--out", scratch("badkey").string(), "--set", "sigmaa=3"}));
    CHECK(r.code == cli::kExitConfig);
    CHECK(r.err.find("sigmaa") != std::string::npos);
    const auto v = invoke(small({"train", "--out", scratch("badval").string(), "--set", "method=sgd"}));
    CHECK(v.code == cli::kExitConfig);
    CHECK(invoke({"nonsense"}).code == cli::kExitConfig);
    const auto cfg = scratch("cfgfile");
    fs::create_directories(cfg);
    std::ofstream(cfg / "exp.cfg") << "sigma = 2\nnot a line\n";
    const auto f = invoke({"train", "--config", (cfg / "exp.cfg").string()});
    CHECK(f.code == cli::kExitConfig);
    CHECK(f.err.find("exp.cfg:2") != std::string::npos);
  }

  TEST_CASE("existing summary is kept unless --force") {
    const auto dir = scratch("force");
    REQUIRE(invoke(small({"train", "--out", dir.string(), "--set", "epochs=0"})).code == cli::kExitOk);
    const auto again = invoke(small({"train", "--out", dir.string(), "--set", "epochs=0"}));
    CHECK(again.code == cli::kExitRuntime);
    CHECK(again.err.find("--force") != std::string::npos);
    CHECK(invoke(small({"train", "--out", dir.string(), "--set", "epochs=0", "--force"})).code == cli::kExitOk);
  }

  TEST_CASE("train is reproducible and reports its metrics hash") {
    const auto a = scratch("repro_a"), b = scratch("repro_b");
    REQUIRE(invoke(small({"train", "--out", a.string()})).code == cli::kExitOk);
    REQUIRE(invoke(small({"train", "--out", b.string()})).code == cli::kExitOk);
    const auto sa = read_json(a / "summary.json"), sb = read_json(b / "summary.json");
    CHECK(sa["metrics_hash"] == sb["metrics_hash"]);
    CHECK(sa["steps"] == 10);
    CHECK(sa["metrics_lines"].get<int>() >= 10);
    CHECK(sa["epsilon"].get<double>() > 0.0);
  }

  TEST_CASE("fedtrain writes rounds and communication cost") {
    const auto dir = scratch("fed");
    const auto r = invoke(small({"fedtrain", "--out", dir.string(), "--set", "partition=iid"}));
    REQUIRE_MESSAGE(r.code == cli::kExitOk, r.err);
    const auto s = read_json(dir / "summary.json");
    CHECK(s["command"] == "fedtrain");
    CHECK(s["contraction_violations"] == 0);
    CHECK(s["client_epsilon"].size() == 4);
    CHECK(s["comm_cost"]["bytes_fedpcdp"] == (5 + 2) * 4);
    std::ifstream in(dir / "rounds.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == 2);
    CHECK(invoke(small({"fedtrain", "--out", scratch("fed_bad").string(), "--set", "clients=500"})).code ==
          cli::kExitConfig);
  }

  TEST_CASE("diagnose-skew logs one report per refresh") {
    const auto dir = scratch("skew");
    const auto r = invoke(small({"diagnose-skew", "--out", dir.string(), "--set", "beta=5"}));
    REQUIRE_MESSAGE(r.code == cli::kExitOk, r.err);
    const auto s = read_json(dir / "summary.json");
    CHECK(s["skew"]["reports"] == 2);
    std::ifstream in(dir / "skew.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
      const auto j = json::parse(line);
      CHECK(j["aggregate"].get<double>() >= 0.0);
      CHECK(j["aggregate"].get<double>() <= 1.0 + 1e-9);
      ++lines;
    }
    CHECK(lines == 2);
    CHECK(invoke(small({"diagnose-skew", "--out", scratch("skew_bad").string(), "--set", "holdout_size=0"})).code ==
          cli::kExitConfig);
  }

  TEST_CASE("dump-grad2d reads a checkpoint and rejects unknown layers") {
    const auto run_dir = scratch("ckpt_run");
    REQUIRE(invoke(small({"train", "--out", run_dir.string()})).code == cli::kExitOk);
    const std::string ckpt = "checkpoint=" + (run_dir / "params.json").string();
    const auto dir = scratch("grad2d");
    const auto r = invoke(small({"dump-grad2d", "--out", dir.string(), "--set", ckpt, "--set", "grad2d_samples=8",
                                 "--dump-layers", "fc.weight"}));
    REQUIRE_MESSAGE(r.code == cli::kExitOk, r.err);
    std::ifstream in(dir / "grad2d.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "step,sample,layer,variant,x,y");
    CHECK(read_json(dir / "summary.json")["layers"] == json::array({"fc.weight"}));
    const auto bad = invoke(small({"dump-grad2d", "--out", scratch("grad2d_bad").string(), "--set", ckpt,
                                   "--dump-layers", "fc9.weight"}));
    CHECK(bad.code == cli::kExitConfig);
    CHECK(bad.err.find("fc9.weight") != std::string::npos);
    CHECK(invoke(small({"dump-grad2d", "--out", scratch("grad2d_none").string()})).code == cli::kExitConfig);
  }

  TEST_CASE("eps_cap halts with exit 2 after writing the summary") {
    const auto dir = scratch("cap");
    const auto r = invoke(small({"train", "--out", dir.string(), "--set", "eps_cap=0.5", "--set", "sigma=1",
                                 "--set", "epochs=5"}));
    CHECK(r.code == cli::kExitRuntime);
    REQUIRE(fs::exists(dir / "summary.json"));
    const auto s = read_json(dir / "summary.json");
    CHECK(s["halted"] == true);
    CHECK(s["epsilon"].get<double>() <= 0.5);
    CHECK(s["steps"].get<int>() < 50);
  }
}
