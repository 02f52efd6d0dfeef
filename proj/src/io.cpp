// SPDX-License-Identifier: Apache-2.0
#include "pcdp/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numeric>

#include "json.hpp"
#include "pcdp/linalg.hpp"
#include "pcdp/rng.hpp"

namespace pcdp::io {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

struct GzCloser {
  void operator()(gzFile f) const { gzclose(f); }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

GzHandle open_gz(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (f == nullptr) throw IdxError(IdxErrorKind::kOpen, "cannot open IDX file " + path.string());
  return GzHandle(f);
}

void read_exact(gzFile f, void* dst, std::size_t n, const std::filesystem::path& path) {
  std::size_t done = 0;
  auto* p = static_cast<unsigned char*>(dst);
  while (done < n) {
    const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n - done, 1u << 30));
    const int got = gzread(f, p + done, chunk);
    if (got <= 0) {
      throw IdxError(IdxErrorKind::kTruncated, "truncated IDX file " + path.string() + ": expected " +
                                                   std::to_string(n) + " bytes, got " + std::to_string(done));
    }
    done += static_cast<std::size_t>(got);
  }
}

std::uint32_t read_be32(gzFile f, const std::filesystem::path& path) {
  unsigned char b[4];
  read_exact(f, b, 4, path);
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

void put_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode = std::ios::binary) {
  std::ofstream out(path, mode);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

models::Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, int classes) {
  auto img = open_gz(images);
  const std::uint32_t img_magic = read_be32(img.get(), images);
  if (img_magic != kImageMagic) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", img_magic);
    throw IdxError(IdxErrorKind::kBadMagic, "bad image magic " + std::string(buf) + " in " + images.string());
  }
  const std::uint32_t count = read_be32(img.get(), images);
  const std::uint32_t rows = read_be32(img.get(), images);
  const std::uint32_t cols = read_be32(img.get(), images);

  auto lab = open_gz(labels);
  const std::uint32_t lab_magic = read_be32(lab.get(), labels);
  if (lab_magic != kLabelMagic) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", lab_magic);
    throw IdxError(IdxErrorKind::kBadMagic, "bad label magic " + std::string(buf) + " in " + labels.string());
  }
  const std::uint32_t label_count = read_be32(lab.get(), labels);
  if (label_count != count) {
    throw IdxError(IdxErrorKind::kCountMismatch, "image count " + std::to_string(count) +
                                                     " does not match label count " + std::to_string(label_count));
  }

  const std::size_t features = std::size_t{rows} * cols;
  std::vector<std::uint8_t> pixels(std::size_t{count} * features);
  read_exact(img.get(), pixels.data(), pixels.size(), images);
  std::vector<std::uint8_t> raw_labels(count);
  read_exact(lab.get(), raw_labels.data(), raw_labels.size(), labels);

  models::Dataset d;
  d.features = features;
  d.x.resize(pixels.size());
  std::transform(pixels.begin(), pixels.end(), d.x.begin(), [](std::uint8_t p) { return p / 255.0; });
  d.y.assign(raw_labels.begin(), raw_labels.end());
  int max_label = -1;
  for (int l : d.y) max_label = std::max(max_label, l);
  d.classes = classes > 0 ? classes : max_label + 1;
  models::validate(d);
  return d;
}

void write_idx_images(const std::filesystem::path& path, std::uint32_t rows, std::uint32_t cols,
                      std::span<const std::uint8_t> pixels, std::uint32_t count) {
  if (pixels.size() != std::size_t{rows} * cols * count) throw std::invalid_argument("write_idx_images: size mismatch");
  auto out = open_out(path);
  put_be32(out, kImageMagic);
  put_be32(out, count);
  put_be32(out, rows);
  put_be32(out, cols);
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
  auto out = open_out(path);
  put_be32(out, kLabelMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

models::Dataset gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.classes < 2) throw std::invalid_argument("synthetic: need at least 2 classes");
  if (spec.features == 0) throw std::invalid_argument("synthetic: feature dimension must be positive");
  if (spec.samples == 0) throw std::invalid_argument("synthetic: sample count must be positive");
  if (spec.separation < 0.0) throw std::invalid_argument("synthetic: separation must be non-negative");
  std::vector<double> spectrum = spec.noise_spectrum;
  if (spectrum.empty()) spectrum.assign(spec.features, 1.0);
  if (spectrum.size() != spec.features) throw std::invalid_argument("synthetic: noise spectrum length must equal features");
  for (double s : spectrum)
    if (!(s >= 0.0)) throw std::invalid_argument("synthetic: noise spectrum must be non-negative");

  SeededRng rng(seed);
  const auto classes = static_cast<std::size_t>(spec.classes);
  // Means at separation/sqrt(2) along distinct axes (pairwise distance =
  // separation); with fewer features than classes, random unit directions.
  std::vector<std::vector<double>> means(classes, std::vector<double>(spec.features, 0.0));
  SeededRng mean_rng = rng.fork("means");
  for (std::size_t c = 0; c < classes; ++c) {
    if (spec.features >= classes) {
      means[c][c] = spec.separation / std::sqrt(2.0);
    } else {
      auto dir = linalg::gaussian_vec(spec.features, 1.0, mean_rng);
      const double n = linalg::norm2(dir);
      for (std::size_t i = 0; i < spec.features; ++i) means[c][i] = dir[i] / n * spec.separation / std::sqrt(2.0);
    }
  }

  models::Dataset d;
  d.features = spec.features;
  d.classes = spec.classes;
  d.x.resize(spec.samples * spec.features);
  d.y.resize(spec.samples);
  SeededRng noise_rng = rng.fork("noise");
  for (std::size_t s = 0; s < spec.samples; ++s) {
    const std::size_t c = s % classes;
    d.y[s] = static_cast<int>(c);
    for (std::size_t i = 0; i < spec.features; ++i)
      d.x[s * spec.features + i] = means[c][i] + spectrum[i] * noise_rng.normal();
  }
  if (spec.normalize) {
    for (std::size_t i = 0; i < spec.features; ++i) {
      double lo = d.x[i], hi = d.x[i];
      for (std::size_t s = 1; s < spec.samples; ++s) {
        lo = std::min(lo, d.x[s * spec.features + i]);
        hi = std::max(hi, d.x[s * spec.features + i]);
      }
      const double span = hi - lo;
      for (std::size_t s = 0; s < spec.samples; ++s) {
        double& v = d.x[s * spec.features + i];
        v = span > 0.0 ? (v - lo) / span : 0.0;
      }
    }
  }
  return d;
}

Splits split(const models::Dataset& data, const SplitSpec& spec) {
  const std::size_t need = spec.private_size + spec.public_size + spec.holdout_size + spec.test_size;
  if (need > data.size()) {
    throw std::invalid_argument("split sizes (" + std::to_string(need) + ") exceed dataset size (" +
                                std::to_string(data.size()) + ")");
  }
  if (spec.private_size == 0) throw std::invalid_argument("split: private set must be nonempty");
  std::vector<std::size_t> perm(data.size());
  std::iota(perm.begin(), perm.end(), 0);
  SeededRng rng = SeededRng(spec.seed).fork("split");
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_index(i)]);

  Splits out;
  auto take = [&, cursor = std::size_t{0}](std::size_t n) mutable {
    std::vector<std::size_t> idx(perm.begin() + cursor, perm.begin() + cursor + n);
    cursor += n;
    return idx;
  };
  out.private_idx = take(spec.private_size);
  out.public_idx = take(spec.public_size);
  out.holdout_idx = take(spec.holdout_size);
  out.test_idx = take(spec.test_size);
  out.private_set = models::subset(data, out.private_idx);
  out.public_set = models::subset(data, out.public_idx);
  out.holdout_set = models::subset(data, out.holdout_idx);
  out.test_set = models::subset(data, out.test_idx);
  return out;
}

JsonlWriter::JsonlWriter(const std::filesystem::path& path)
    : path_(path), out_(open_out(path, std::ios::out | std::ios::trunc)), hash_(fnv1a64("")) {}

void JsonlWriter::write_line(const std::string& json) {
  out_ << json << '\n';
  out_.flush();
  if (!out_) throw std::runtime_error("cannot append to " + path_.string());
  hash_ = fnv1a64(json, hash_);
  hash_ = fnv1a64("\n", hash_);
  ++lines_;
}

void write_grad2d_csv(const std::filesystem::path& path, std::span<const Grad2dRow> rows) {
  auto out = open_out(path, std::ios::out | std::ios::trunc);
  out << "step,sample,layer,variant,x,y\n";
  char buf[64];
  for (const auto& r : rows) {
    out << r.step << ',' << r.sample << ',' << r.layer << ',' << r.variant << ',';
    std::snprintf(buf, sizeof buf, "%.17g,%.17g", r.x, r.y);
    out << buf << '\n';
  }
}

void save_params(const std::filesystem::path& path, const models::Model& model, const models::ModelParams& params) {
  nlohmann::json j;
  j["model"] = models::to_string(model.kind());
  j["features"] = model.features();
  j["hidden"] = model.hidden();
  j["classes"] = model.classes();
  j["values"] = params.values;
  auto out = open_out(path, std::ios::out | std::ios::trunc);
  out << j.dump() << '\n';
}

Checkpoint load_params(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    Checkpoint c;
    c.kind = models::parse_model_kind(j.at("model").get<std::string>());
    c.features = j.at("features").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.classes = j.at("classes").get<int>();
    c.values = j.at("values").get<std::vector<double>>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace pcdp::io
