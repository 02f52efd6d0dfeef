// SPDX-License-Identifier: Apache-2.0
//
// Command entry points: train, fedtrain, accountant, diagnose-skew,
// dump-grad2d. Exit status 0 on success, 1 on configuration or usage
// errors, 2 on runtime failures.
#pragma once

#include <iosfwd>
#include <memory>

#include "pcdp/config.hpp"
#include "pcdp/federated.hpp"
#include "pcdp/io.hpp"
#include "pcdp/models.hpp"
#include "pcdp/subspace.hpp"
#include "pcdp/trainer.hpp"

namespace pcdp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitRuntime = 2;

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Config to typed settings. Throw io::ConfigError on bad values.
trainer::TrainConfig train_config(const io::Config& cfg);
federated::FedConfig fed_config(const io::Config& cfg);
models::Model build_model(const io::Config& cfg, std::size_t features, int classes);

struct ExperimentData {
  io::Splits splits;
  std::unique_ptr<subspace::PublicPool> pool;
  std::unique_ptr<subspace::PublicPool> holdout;
};

// Loads or generates the dataset and splits it with the `split` stream of
// the root seed.
ExperimentData load_experiment_data(const io::Config& cfg);

}  // namespace pcdp::cli
