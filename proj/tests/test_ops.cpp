// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <cstring>
#include <string>

#include "doctest.h"
#include "oracles.hpp"
#include "paca/ops.hpp"
#include "paca/params.hpp"
#include "support.hpp"

using paca::Shape;
using F = paca::Tensor<float>;
using D = paca::Tensor<double>;

namespace {

template <typename T>
bool same_bits(const paca::Tensor<T>& a, const paca::Tensor<T>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(T)) == 0;
}

}  // namespace

TEST_SUITE("ops") {
  TEST_CASE("matmul small cases") {
    const F eye(Shape{2, 2}, {1, 0, 0, 1});
    const F m(Shape{2, 2}, {1, 2, 3, 4});
    const F r = paca::matmul(eye, m);
    for (std::size_t i = 0; i < 4; ++i) CHECK(r[i] == m[i]);
    const F row(Shape{1, 2}, {1, 2}), col(Shape{2, 1}, {3, 4});
    CHECK(paca::matmul(row, col)[0] == 11.0f);
  }

  TEST_CASE("matmul matches a triple loop") {
    paca::Rng rng(1);
    const F a = support::randn<float>({5, 7}, rng), b = support::randn<float>({7, 3}, rng);
    const auto ref = oracle::matmul(oracle::mat(a), oracle::mat(b));
    CHECK(oracle::max_abs_diff(oracle::values(paca::matmul(a, b)), ref.v) <= 1e-6);
  }

  TEST_CASE("matmul reports both shapes on mismatch") {
    const F a(Shape{2, 3}), b(Shape{4, 5});
    try {
      (void)paca::matmul(a, b);
      FAIL("expected ShapeError");
    } catch (const paca::ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2,3]") != std::string::npos);
      CHECK(msg.find("[4,5]") != std::string::npos);
    }
  }

  TEST_CASE("softmax examples") {
    const F zeros(Shape{3}, 0.0f);
    const F uniform = paca::softmax(zeros, 0);
    for (float v : uniform.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-7));
    const F big(Shape{2}, {1000.0f, 0.0f});
    const F s = paca::softmax(big, 0);
    CHECK(std::abs(s[0] - 1.0f) <= 1e-6);
    CHECK(std::abs(s[1]) <= 1e-6);
    CHECK_THROWS_AS(paca::softmax(big, 1), paca::ShapeError);
  }

  TEST_CASE("softmax slices sum to one on every axis") {
    paca::Rng rng(2);
    const F x = support::randn<float>({4, 6}, rng);
    const F s = paca::softmax(x, 1);
    for (std::size_t i = 0; i < 4; ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < 6; ++j) sum += s[i * 6 + j];
      CHECK(std::abs(sum - 1.0) <= 1e-6);
    }
    const F big = support::randn<float>({3, 4, 5}, rng, 1e4 / 3);
    const std::size_t dims[] = {3, 4, 5};
    for (std::size_t axis = 0; axis < 3; ++axis) {
      const F t = paca::softmax(big, axis);
      const std::size_t stride = axis == 0 ? 20 : axis == 1 ? 5 : 1;
      for (std::size_t base = 0; base < 60; ++base) {
        if ((base / stride) % dims[axis] != 0) continue;
        double sum = 0;
        for (std::size_t k = 0; k < dims[axis]; ++k) sum += t[base + k * stride];
        CHECK(std::abs(sum - 1.0) <= 1e-6);
      }
    }
  }

  TEST_CASE("layer_norm examples") {
    const F ones(Shape{6}, 1.0f), zeros(Shape{6}, 0.0f);
    const F flat = paca::layer_norm(F(Shape{2, 6}, 3.5f), ones, zeros, 1e-6f);
    for (float v : flat.data()) CHECK(v == 0.0f);
    const F beta(Shape{6}, {1, 2, 3, 4, 5, 6});
    paca::Rng rng(3);
    const F x = support::randn<float>({2, 6}, rng);
    const F y = paca::layer_norm(x, zeros, beta, 1e-6f);
    for (std::size_t i = 0; i < 12; ++i) CHECK(y[i] == beta[i % 6]);
  }

  TEST_CASE("layer_norm statistics and two-pass oracle") {
    paca::Rng rng(4);
    const F x = support::randn<float>({3, 8}, rng, 2.0);
    paca::LayerNormParams<float> ln{F(Shape{8}, 1.0f), F(Shape{8}, 0.0f)};
    const F y = paca::apply_layer_norm(x, ln);
    for (std::size_t i = 0; i < 3; ++i) {
      double mean = 0, var = 0;
      for (std::size_t j = 0; j < 8; ++j) mean += y[i * 8 + j];
      mean /= 8;
      for (std::size_t j = 0; j < 8; ++j) var += (y[i * 8 + j] - mean) * (y[i * 8 + j] - mean);
      var /= 8;
      CHECK(std::abs(mean) <= 1e-5);
      CHECK(std::abs(var - 1.0) <= 1e-4);
    }
    ln.gamma = support::randn<float>({8}, rng);
    ln.beta = support::randn<float>({8}, rng);
    const auto ref = oracle::layer_norm(oracle::mat(x), ln);
    CHECK(oracle::max_abs_diff(oracle::values(paca::apply_layer_norm(x, ln)), ref.v) <= 1e-6);
  }

  TEST_CASE("gelu examples") {
    const D x(Shape{3}, {0.0, 100.0, -1.0});
    const D y = paca::gelu(x);
    CHECK(y[0] == 0.0);
    CHECK(std::abs(y[1] - 100.0) <= 1e-6);
    CHECK(std::abs(y[2] - oracle::gelu(-1.0)) <= 1e-12);
    CHECK(std::abs(y[2] - (-0.15865525393145707)) <= 1e-12);
  }

  TEST_CASE("conv2d identity 1x1") {
    paca::Rng rng(5);
    const F x = support::randn<float>({4, 5, 3}, rng);
    F w(Shape{1, 1, 3, 3}, 0.0f);
    for (std::size_t c = 0; c < 3; ++c) w[c * 3 + c] = 1.0f;
    const F y = paca::conv2d(x, w, F(), {.stride = 1, .pad = 0, .groups = 1});
    CHECK(same_bits(x, y));
  }

  TEST_CASE("conv2d counts overlaps") {
    const F x(Shape{3, 3, 1}, 1.0f), w(Shape{3, 3, 1, 1}, 1.0f);
    const F y = paca::conv2d(x, w, F(), {.stride = 1, .pad = 1, .groups = 1});
    const float want[] = {4, 6, 4, 6, 9, 6, 4, 6, 4};
    for (std::size_t i = 0; i < 9; ++i) CHECK(y[i] == want[i]);
  }

  TEST_CASE("conv2d matches the six-loop oracle") {
    paca::Rng rng(6);
    const F x = support::randn<float>({5, 5, 2}, rng);
    oracle::Map xm(5, 5, 2);
    xm.v = oracle::values(x);
    struct Geometry {
      std::size_t k, stride, pad, groups, cout;
    };
    for (const Geometry g : {Geometry{3, 1, 1, 1, 4}, Geometry{3, 2, 1, 1, 3}, Geometry{2, 2, 0, 1, 2},
                             Geometry{3, 1, 1, 2, 2}, Geometry{5, 1, 0, 1, 1}}) {
      const F w = support::randn<float>({g.k, g.k, 2 / g.groups, g.cout}, rng);
      const F b = support::randn<float>({g.cout}, rng);
      const F y = paca::conv2d(x, w, b, {.stride = g.stride, .pad = g.pad, .groups = g.groups});
      const auto ref = oracle::conv2d(xm, w, &b, g.stride, g.pad, g.groups);
      CHECK(y.dim(0) == ref.h);
      CHECK(y.dim(1) == ref.w);
      CHECK(oracle::max_abs_diff(oracle::values(y), ref.v) <= 1e-5);
    }
  }

  TEST_CASE("conv2d rejects a kernel larger than the padded input") {
    const F x(Shape{2, 2, 1}), w(Shape{5, 5, 1, 1});
    CHECK_THROWS_AS(paca::conv2d(x, w, F(), {.stride = 1, .pad = 1, .groups = 1}), paca::ShapeError);
    CHECK_THROWS_AS(paca::conv_output_extent(2, 5, 1, 1), paca::ShapeError);
    CHECK(paca::conv_output_extent(224, 7, 4, 3) == 56);
    const F x3(Shape{4, 4, 3}), w3(Shape{3, 3, 1, 3});
    CHECK_THROWS_AS(paca::conv2d(x3, w3, F(), {.stride = 1, .pad = 1, .groups = 2}), paca::ShapeError);
  }

  TEST_CASE("matmul and conv2d are bitwise repeatable") {
    paca::Rng rng(7);
    const F a = support::randn<float>({33, 65}, rng), b = support::randn<float>({65, 17}, rng);
    CHECK(same_bits(paca::matmul(a, b), paca::matmul(a, b)));
    const F x = support::randn<float>({9, 9, 8}, rng), w = support::randn<float>({3, 3, 8, 16}, rng);
    const paca::Conv2dGeometry g{.stride = 2, .pad = 1, .groups = 1};
    CHECK(same_bits(paca::conv2d(x, w, F(), g), paca::conv2d(x, w, F(), g)));
  }

  TEST_CASE("head split and merge are inverse") {
    paca::Rng rng(8);
    const F x = support::randn<float>({6, 8}, rng);
    const F h = paca::split_heads(x, 2);
    CHECK(h.shape() == Shape{2, 6, 4});
    CHECK(h.at({1, 2, 3}) == x.at({2, 7}));
    CHECK(same_bits(paca::merge_heads(h), x));
    CHECK_THROWS_AS(paca::split_heads(x, 3), paca::ShapeError);
  }
}
