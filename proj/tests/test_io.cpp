// SPDX-License-Identifier: Apache-2.0
#include <stdexcept>
#include <zlib.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "pcdp/config.hpp"
#include "pcdp/io.hpp"
#include "pcdp/models.hpp"
#include "pcdp/trainer.hpp"

using namespace pcdp;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("pcdp_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void gzip_copy(const fs::path& from, const fs::path& to) {
  const std::string bytes = slurp(from);
  gzFile gz = gzopen(to.string().c_str(), "wb");
  REQUIRE(gz != nullptr);
  gzwrite(gz, bytes.data(), static_cast<unsigned>(bytes.size()));
  gzclose(gz);
}

// Two 2x2 images with pixels 0, 51, 102, 255 and 255, 0, 0, 128; labels 7 and 3.
void write_fixture(const fs::path& dir) {
  const std::vector<std::uint8_t> pixels{0, 51, 102, 255, 255, 0, 0, 128};
  io::write_idx_images(dir / "img", 2, 2, pixels, 2);
  io::write_idx_labels(dir / "lbl", std::vector<std::uint8_t>{7, 3});
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("IDX fixture round-trip, plain and gzip") {
    const auto dir = scratch("idx");
    write_fixture(dir);
    const std::string img = slurp(dir / "img");
    REQUIRE(img.size() == 16 + 8);
    CHECK(static_cast<unsigned char>(img[2]) == 0x08);
    CHECK(static_cast<unsigned char>(img[3]) == 0x03);
    CHECK(static_cast<unsigned char>(img[7]) == 2);

    for (bool gz : {false, true}) {
      fs::path ip = dir / "img", lp = dir / "lbl";
      if (gz) {
        gzip_copy(ip, dir / "img.gz");
        gzip_copy(lp, dir / "lbl.gz");
        ip = dir / "img.gz";
        lp = dir / "lbl.gz";
      }
      const auto d = io::load_idx(ip, lp);
      CHECK(d.size() == 2);
      CHECK(d.features == 4);
      CHECK(d.classes == 10);
      CHECK(d.y == std::vector<int>{7, 3});
      const std::vector<double> expect{0.0, 0.2, 0.4, 1.0, 1.0, 0.0, 0.0, 128.0 / 255.0};
      for (std::size_t i = 0; i < 8; ++i) CHECK(d.x[i] == doctest::Approx(expect[i]).epsilon(1e-15));
      for (double v : d.x) CHECK((v >= 0.0 && v <= 1.0));
    }
    CHECK(io::load_idx(dir / "img", dir / "lbl", 0).classes == 8);
  }

  TEST_CASE("IDX errors are distinct") {
    const auto dir = scratch("idx_err");
    write_fixture(dir);
    auto kind_of = [](const fs::path& i, const fs::path& l) {
      try {
        io::load_idx(i, l);
      } catch (const io::IdxError& e) {
        return static_cast<int>(e.kind());
      }
      return -1;
    };
    CHECK(kind_of(dir / "missing", dir / "lbl") == static_cast<int>(io::IdxErrorKind::kOpen));
    // Labels passed as images: wrong magic.
    CHECK(kind_of(dir / "lbl", dir / "lbl") == static_cast<int>(io::IdxErrorKind::kBadMagic));
    io::write_idx_labels(dir / "short", std::vector<std::uint8_t>{1});
    CHECK(kind_of(dir / "img", dir / "short") == static_cast<int>(io::IdxErrorKind::kCountMismatch));
    std::string bytes = slurp(dir / "img");
    bytes.resize(bytes.size() - 3);
    std::ofstream(dir / "trunc", std::ios::binary) << bytes;
    CHECK(kind_of(dir / "trunc", dir / "lbl") == static_cast<int>(io::IdxErrorKind::kTruncated));
  }

  TEST_CASE("synthetic clusters: deterministic, balanced, normalized") {
    io::SyntheticSpec spec;
    spec.classes = 3;
    spec.features = 5;
    spec.samples = 300;
    const auto a = io::gen_synthetic(spec, 4);
    const auto b = io::gen_synthetic(spec, 4);
    CHECK(a.x == b.x);
    CHECK(a.y == b.y);
    CHECK(a.x != io::gen_synthetic(spec, 5).x);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.y[i] == static_cast<int>(i % 3));
    for (double v : a.x) CHECK((v >= 0.0 && v <= 1.0));
    spec.classes = 1;
    CHECK_THROWS_AS(io::gen_synthetic(spec, 1), std::invalid_argument);
    spec.classes = 2;
    spec.noise_spectrum = {1.0, -1.0, 1.0, 1.0, 1.0};
    CHECK_THROWS_AS(io::gen_synthetic(spec, 1), std::invalid_argument);
  }

  TEST_CASE("synthetic separation controls learnability") {
    auto train_acc = [](double separation, std::uint64_t seed) {
      io::SyntheticSpec spec;
      spec.classes = 2;
      spec.features = 10;
      spec.samples = 4000;
      spec.separation = separation;
      const auto all = io::gen_synthetic(spec, seed);
      const auto s = io::split(all, {2000, 0, 0, 2000, seed});
      const auto model = models::Model::logistic(10, 2);
      trainer::TrainConfig cfg;
      cfg.method = trainer::Method::kDpsgd;
      cfg.sigma = 0.0;
      cfg.clip = {privacy::ClipMethod::kNone, 1.0, 0.0};
      cfg.lot_size = 50;
      cfg.epochs = 10;
      const auto r = trainer::train_run(model, cfg, {&s.private_set, &s.test_set, nullptr, nullptr});
      return r.final_test.accuracy;
    };
    CHECK(train_acc(10.0, 1) >= 0.99);
    const double chance = train_acc(0.0, 2);
    CHECK(chance > 0.44);
    CHECK(chance < 0.56);
  }

  TEST_CASE("split: exact partition, disjoint, deterministic") {
    io::SyntheticSpec spec;
    spec.samples = 100;
    const auto data = io::gen_synthetic(spec, 1);
    const auto s = io::split(data, {50, 10, 15, 25, 9});
    std::set<std::size_t> all;
    for (const auto* part : {&s.private_idx, &s.public_idx, &s.holdout_idx, &s.test_idx}) all.insert(part->begin(), part->end());
    CHECK(all.size() == 100);
    CHECK(s.private_set.size() == 50);
    CHECK(s.public_set.size() == 10);
    CHECK(s.holdout_set.size() == 15);
    CHECK(s.test_set.size() == 25);
    CHECK(s.private_set.row(0)[0] == data.row(s.private_idx[0])[0]);
    const auto again = io::split(data, {50, 10, 15, 25, 9});
    CHECK(again.private_idx == s.private_idx);
    CHECK(io::split(data, {50, 10, 15, 25, 10}).private_idx != s.private_idx);
    CHECK_THROWS_AS(io::split(data, {90, 10, 1, 0, 1}), std::invalid_argument);
  }

  TEST_CASE("JSONL writer hashes exactly what it writes") {
    const auto dir = scratch("jsonl");
    std::uint64_t h = 0;
    {
      io::JsonlWriter w(dir / "m.jsonl");
      w.write_line("{\"a\":1}");
      w.write_line("{\"b\":2}");
      CHECK(w.lines() == 2);
      h = w.hash();
    }
    CHECK(h == fnv1a64(slurp(dir / "m.jsonl")));
    io::JsonlWriter again(dir / "m.jsonl");
    again.write_line("{}");
    CHECK(slurp(dir / "m.jsonl") == "{}\n");
  }

  TEST_CASE("checkpoints and grad2d CSV") {
    const auto dir = scratch("ckpt");
    const auto model = models::Model::mlp(3, 2, 2);
    const auto p = model.init_params(5);
    io::save_params(dir / "p.json", model, p);
    const auto c = io::load_params(dir / "p.json");
    CHECK(c.kind == models::ModelKind::kMlp);
    CHECK(c.features == 3);
    CHECK(c.hidden == 2);
    CHECK(c.values == p.values);
    std::ofstream(dir / "bad.json") << "{\"model\": 3}";
    CHECK_THROWS_AS(io::load_params(dir / "bad.json"), std::runtime_error);

    const std::vector<io::Grad2dRow> rows{{0, 4, "w", "raw", 0.5, -1.25}};
    io::write_grad2d_csv(dir / "g.csv", rows);
    CHECK(slurp(dir / "g.csv") == "step,sample,layer,variant,x,y\n0,4,w,raw,0.5,-1.25\n");
    CHECK(io::hex64(255) == "00000000000000ff");
  }

  TEST_CASE("config text: comments, overrides, typed access and errors") {
    const auto c = io::Config::from_string("# experiment\nsigma = 14   # noise\n\nmethod=pdp\nlot_size = 250\n");
    CHECK(c.real("sigma") == 14.0);
    CHECK(c.str("method") == "pdp");
    CHECK(c.count("lot_size") == 250);
    CHECK(c.str("clip") == "abadi");
    try {
      io::Config::from_string("sigma = 1\nsigam = 2\n", "exp.cfg");
      FAIL("expected an error");
    } catch (const io::ConfigError& e) {
      const std::string what = e.what();
      CHECK(what.find("sigam") != std::string::npos);
      CHECK(what.find("exp.cfg:2") != std::string::npos);
    }
    CHECK_THROWS_AS(io::Config::from_string("just words\n"), io::ConfigError);
    io::Config o;
    o.apply_override("epochs=3");
    CHECK(o.count("epochs") == 3);
    CHECK_THROWS_AS(o.apply_override("epochs"), io::ConfigError);
    o.set("sigma", "abc");
    CHECK_THROWS_AS(o.real("sigma"), io::ConfigError);
    o.set("epochs", "-1");
    CHECK_THROWS_AS(o.count("epochs"), io::ConfigError);
    o.set("diagnose_skew", "yes");
    CHECK(o.flag("diagnose_skew"));
    o.set("dump_layers", " a, b ,,c ");
    CHECK(o.list("dump_layers") == std::vector<std::string>{"a", "b", "c"});
    const auto j = io::Config().to_json();
    CHECK(j["sigma"].is_number());
    CHECK(j["diagnose_skew"].is_boolean());
    CHECK(j["method"] == "pcdp");
    CHECK(j.size() == io::config_keys().size());
  }
}
