// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "oracles.hpp"
#include "paca/checkpoint.hpp"
#include "paca/model.hpp"
#include "support.hpp"

using paca::AttentionVariant;
using paca::ConvSpec;
using paca::Geometry;
using paca::Grid;
using F = paca::Tensor<float>;

namespace {

struct Expected {
  std::size_t channels[4];
  std::size_t depth[4];
};

// Stage widths and depths, one row per preset.
const std::pair<const char*, Expected> kPresets[] = {
    {"b0", {{32, 64, 160, 256}, {2, 2, 2, 2}}},
    {"b1", {{64, 128, 320, 512}, {2, 2, 2, 2}}},
    {"b2", {{64, 128, 320, 512}, {3, 4, 6, 3}}},
};
constexpr std::size_t kHeads[] = {1, 2, 5, 8};
constexpr std::size_t kExpansion[] = {8, 8, 4, 4};

std::uint64_t file_fnv(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return paca::fnv1a64(bytes);
}

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("presets have the expected stage layout") {
    for (const auto& [name, want] : kPresets) {
      for (Geometry g : {Geometry::kIn1k, Geometry::kC100}) {
        CAPTURE(name);
        CAPTURE(paca::geometry_name(g));
        const bool in1k = g == Geometry::kIn1k;
        const auto cfg = paca::preset(name, g, in1k ? 1000 : 100);
        REQUIRE(cfg.stages.size() == 4);
        CHECK(cfg.input_height == (in1k ? 224u : 32u));
        CHECK(cfg.input_width == cfg.input_height);
        CHECK(cfg.num_classes == (in1k ? 1000u : 100u));
        CHECK(cfg.stages[0].conv == (in1k ? ConvSpec{7, 4, 3, want.channels[0]} : ConvSpec{3, 1, 1, want.channels[0]}));
        CHECK(cfg.stages[1].conv == ConvSpec{3, 2, 1, want.channels[1]});
        CHECK(cfg.stages[2].conv == ConvSpec{3, 2, 1, want.channels[2]});
        CHECK(cfg.stages[3].conv == (in1k ? ConvSpec{3, 2, 1, want.channels[3]} : ConvSpec{3, 1, 1, want.channels[3]}));
        for (std::size_t i = 0; i < 4; ++i) {
          const auto& s = cfg.stages[i];
          CAPTURE(i);
          CHECK(s.channels == want.channels[i]);
          CHECK(s.depth == want.depth[i]);
          CHECK(s.heads == kHeads[i]);
          CHECK(s.expansion == kExpansion[i]);
          const bool paca = i < 2 || (i == 2 && in1k);
          CHECK(s.variant == (paca ? AttentionVariant::kPaca : AttentionVariant::kMhsa));
          if (paca) {
            CHECK(s.clusters == (in1k ? 49u : 64u));
            CHECK(s.reduction == 4);
          }
        }
      }
    }
    CHECK_THROWS_AS(paca::preset("b3", Geometry::kIn1k, 10), std::invalid_argument);
    CHECK_THROWS_AS(paca::preset("b0", Geometry::kCustom, 10), std::invalid_argument);
  }

  TEST_CASE("stage grids for both geometries") {
    for (const auto& [name, want] : kPresets) {
      const auto in1k = paca::preset(name, Geometry::kIn1k, 1000).stage_grids();
      const auto c100 = paca::preset(name, Geometry::kC100, 100).stage_grids();
      const std::size_t a[] = {56, 28, 14, 7}, b[] = {32, 16, 8, 8};
      for (std::size_t i = 0; i < 4; ++i) {
        CHECK(in1k[i] == Grid{a[i], a[i]});
        CHECK(c100[i] == Grid{b[i], b[i]});
      }
    }
  }

  TEST_CASE("invalid configs are rejected") {
    auto cfg = paca::preset("tiny-debug", Geometry::kCustom, 4);
    auto bad = cfg;
    bad.stages[1].heads = 3;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.stages[0].reduction = 3;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.stages[0].clusters = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.num_classes = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.stages[0].conv.out_channels = 9;
    CHECK_THROWS_AS(paca::build_model<float>(bad, 1), std::invalid_argument);
  }

  TEST_CASE("hash covers every field except the name") {
    auto a = paca::preset("tiny-debug", Geometry::kCustom, 4);
    auto b = a;
    b.name = "renamed";
    CHECK(a.hash() == b.hash());
    b.num_classes = 5;
    CHECK(a.hash() != b.hash());
    b = a;
    b.stages[1].clusters = 5;
    CHECK(a.hash() != b.hash());
    CHECK(paca::fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(paca::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  }

  TEST_CASE("same seed gives bitwise identical parameters") {
    const auto cfg = paca::preset("tiny-debug", Geometry::kCustom, 4);
    const auto a = paca::build_model<float>(cfg, 42), b = paca::build_model<float>(cfg, 42),
               c = paca::build_model<float>(cfg, 43);
    REQUIRE(a.params().size() == b.params().size());
    bool any_diff = false;
    for (const auto& [name, t] : a.params()) {
      const F& u = b.params().at(name);
      CHECK(std::memcmp(t.data().data(), u.data().data(), t.numel() * sizeof(float)) == 0);
      const F& v = c.params().at(name);
      any_diff |= std::memcmp(t.data().data(), v.data().data(), t.numel() * sizeof(float)) != 0;
    }
    CHECK(any_diff);
  }

  TEST_CASE("tiny-debug parameter count by hand") {
    const std::size_t classes = 7;
    const auto model = paca::build_model<float>(paca::preset("tiny-debug", Geometry::kCustom, classes), 1);
    auto linear = [](std::size_t i, std::size_t o) { return i * o + o; };
    auto norm = [](std::size_t c) { return 2 * c; };
    auto conv = [](std::size_t k, std::size_t ci, std::size_t co) { return k * k * ci * co + co; };
    auto block = [&](std::size_t c, std::size_t m, std::size_t r, std::size_t e) {
      return norm(c) + 4 * linear(c, c) + conv(3, c, c / r) + linear(c / r, m) + norm(c) + norm(c) +
             linear(c, e * c) + conv(3, 1, e * c) + linear(e * c, c);
    };
    const std::size_t stage1 = conv(3, 3, 8) + norm(8) + block(8, 4, 2, 2) + norm(8);
    const std::size_t stage2 = conv(3, 8, 16) + norm(16) + block(16, 4, 2, 2) + norm(16);
    CHECK(paca::param_count(model) == stage1 + stage2 + linear(16, classes));
    CHECK(stage1 == 1344);
    CHECK(stage2 == 5004);
  }

  TEST_CASE("logits shape, finiteness and no batch coupling") {
    const auto model = paca::build_model<float>(paca::preset("tiny-debug", Geometry::kCustom, 5), 3);
    paca::Rng rng(3);
    F batch = support::randn<float>({3, 16, 16, 3}, rng);
    const std::size_t image = 16 * 16 * 3;
    std::memcpy(batch.data().data() + 2 * image, batch.data().data(), image * sizeof(float));
    const auto r = paca::forward(model, batch, false);
    CHECK(r.logits.shape() == paca::Shape{3, 5});
    for (float v : r.logits.data()) CHECK(std::isfinite(v));
    for (std::size_t k = 0; k < 5; ++k) CHECK(r.logits.at({0, k}) == r.logits.at({2, k}));
    CHECK_THROWS_AS(paca::forward(model, support::randn<float>({1, 8, 8, 3}, rng), false), paca::ShapeError);
  }

  TEST_CASE("logits are bitwise repeatable") {
    const auto model = paca::build_model<float>(paca::preset("tiny-debug", Geometry::kCustom, 5), 4);
    paca::Rng rng(4);
    const F batch = support::randn<float>({2, 16, 16, 3}, rng);
    const F a = paca::forward(model, batch, false).logits, b = paca::forward(model, batch, false).logits;
    CHECK(std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0);
  }

  TEST_CASE("explanations are retained only on request") {
    const auto model = paca::build_model<float>(paca::preset("tiny-debug", Geometry::kCustom, 5), 5);
    paca::Rng rng(5);
    const F batch = support::randn<float>({2, 16, 16, 3}, rng);
    const auto before = paca::retained_explanation_count();
    const auto plain = paca::forward(model, batch, false);
    CHECK(plain.explanations.empty());
    CHECK(paca::retained_explanation_count() == before);
    const auto kept = paca::forward(model, batch, true);
    REQUIRE(kept.explanations.size() == 2);
    CHECK(kept.explanations[0].size() == model.num_layers());
    CHECK(paca::retained_explanation_count() == before + 2 * model.num_layers());
    const auto& layer = kept.explanations[1][1];
    CHECK(layer.stage == 1);
    CHECK(layer.grid == Grid{4, 4});
    REQUIRE(layer.clusters.has_value());
    CHECK(layer.clusters->weights.shape() == paca::Shape{16, 4});
  }

  TEST_CASE("two-stage 8x8 model matches the hand-composed oracle") {
    const auto cfg = support::tiny_gradcheck_config();
    auto model = paca::build_model<float>(cfg, 6);
    paca::Rng rng(6);
    support::jitter_params(model.params(), rng);
    for (int trial = 0; trial < 3; ++trial) {
      const F img = support::randn<float>({8, 8, 3}, rng);
      oracle::Map m(8, 8, 3);
      m.v = oracle::values(img);
      CHECK(oracle::max_abs_diff(oracle::values(paca::forward_image(model, img)), oracle::model_logits(model, m)) <= 1e-4);
    }
  }

  TEST_CASE("parameter counts of the presets") {
    // Targets in millions with a 5% band.
    const std::tuple<const char*, Geometry, std::size_t, double> targets[] = {
        {"b0", Geometry::kIn1k, 1000, 3.4}, {"b1", Geometry::kIn1k, 1000, 12.7}, {"b2", Geometry::kIn1k, 1000, 22.7},
        {"b0", Geometry::kC100, 100, 3.0},  {"b1", Geometry::kC100, 100, 11.8},  {"b2", Geometry::kC100, 100, 20.8},
    };
    for (const auto& [name, g, classes, millions] : targets) {
      CAPTURE(name);
      const auto model = paca::build_model<float>(paca::preset(name, g, classes), 0);
      const double got = static_cast<double>(paca::param_count(model)) / 1e6;
      CHECK(std::abs(got - millions) / millions <= 0.05);
    }
  }

  // Generated once from this implementation; any change to initialization,
  // preset shapes or the file layout shows up here.
  TEST_CASE("seeded B0 checkpoint bytes are stable") {
    const auto model = paca::build_model<float>(paca::preset("b0", Geometry::kIn1k, 1000), 2024);
    const auto path = std::filesystem::temp_directory_path() / "paca_golden_b0.ckpt";
    paca::save_checkpoint(model, path);
    const std::uint64_t sum = file_fnv(path);
    std::filesystem::remove(path);
    CHECK(sum == 0x7fcd226877703b8eULL);
  }
}
