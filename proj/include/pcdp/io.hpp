// SPDX-License-Identifier: Apache-2.0
//
// Dataset ingestion (IDX, synthetic clusters), seeded splits and the on-disk
// artifacts: metrics JSONL, grad2d CSV, parameter checkpoints.
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcdp/models.hpp"

namespace pcdp::io {

enum class IdxErrorKind { kOpen, kBadMagic, kTruncated, kCountMismatch };

class IdxError : public std::runtime_error {
 public:
  IdxError(IdxErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  IdxErrorKind kind() const { return kind_; }

 private:
  IdxErrorKind kind_;
};

// Big-endian IDX image (magic 0x00000803) and label (0x00000801) files; gzip
// compressed files are read transparently. Pixels are scaled to [0, 1].
// `classes` of 0 infers max(label) + 1.
models::Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                         int classes = 10);

// Writers for fixtures and tooling. Pixels are written as given.
void write_idx_images(const std::filesystem::path& path, std::uint32_t rows, std::uint32_t cols,
                      std::span<const std::uint8_t> pixels, std::uint32_t count);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

struct SyntheticSpec {
  int classes = 2;
  std::size_t features = 10;
  double separation = 5.0;  // distance between any two class means
  // Per-coordinate noise standard deviations; empty means all ones. A
  // decaying spectrum gives anisotropic clusters.
  std::vector<double> noise_spectrum;
  std::size_t samples = 1000;
  // Min-max scale every feature into [0, 1] after sampling.
  bool normalize = true;
};

// Gaussian class clusters with balanced labels (sample i has label i mod C).
models::Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

struct SplitSpec {
  std::size_t private_size = 0;
  std::size_t public_size = 0;
  std::size_t holdout_size = 0;
  std::size_t test_size = 0;
  std::uint64_t seed = 0;
};

struct Splits {
  models::Dataset private_set;
  models::Dataset public_set;
  models::Dataset holdout_set;
  models::Dataset test_set;
  // Source indices of each part, in the same order.
  std::vector<std::size_t> private_idx, public_idx, holdout_idx, test_idx;
};

Splits split(const models::Dataset& data, const SplitSpec& spec);

// ---------------------------------------------------------------------------
// Output artifacts

// Appends lines and tracks an FNV-1a hash of everything written.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path);
  void write_line(const std::string& json);
  std::uint64_t hash() const { return hash_; }
  std::size_t lines() const { return lines_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::uint64_t hash_;
  std::size_t lines_ = 0;
};

struct Grad2dRow {
  std::size_t step = 0;
  std::size_t sample = 0;
  std::string layer;
  std::string variant;  // raw | proj
  double x = 0.0;
  double y = 0.0;
};

void write_grad2d_csv(const std::filesystem::path& path, std::span<const Grad2dRow> rows);

// JSON checkpoint: model shape and the flat parameter vector.
void save_params(const std::filesystem::path& path, const models::Model& model, const models::ModelParams& params);
struct Checkpoint {
  models::ModelKind kind = models::ModelKind::kLogistic;
  std::size_t features = 0;
  std::size_t hidden = 0;
  int classes = 0;
  std::vector<double> values;
};
Checkpoint load_params(const std::filesystem::path& path);

std::string hex64(std::uint64_t v);

}  // namespace pcdp::io
