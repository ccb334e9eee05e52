// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>

#include "oracles.hpp"
#include "paca/attention.hpp"
#include "paca/blocks.hpp"
#include "paca/ops.hpp"
#include "paca/train.hpp"

namespace support {

using paca::Grid;
using paca::Shape;
using paca::Tensor;
using D = Tensor<double>;

template <typename T>
void jitter_params(paca::ParamRegistry<T>& params, paca::Rng& rng, double scale) {
  for (auto& [name, t] : params) {
    if (t.rank() != 1) continue;
    for (T& v : t.data()) v += static_cast<T>(scale * rng.normal());
  }
}

template void jitter_params<float>(paca::ParamRegistry<float>&, paca::Rng&, double);
template void jitter_params<double>(paca::ParamRegistry<double>&, paca::Rng&, double);

GradCheck gradcheck(const std::function<D()>& output, std::vector<D> inputs, std::uint64_t probe_seed, double h,
                    double abs_floor) {
  for (D& t : inputs) {
    t.set_requires_grad();
    t.clear_grad();
  }
  paca::Tape<double> tape;
  std::vector<double> w;
  {
    auto rec = tape.record();
    const D out = output();
    D loss = out;
    if (out.rank() == 0) {
      w = {1.0};
    } else {
      paca::Rng rng(probe_seed);
      const D weights = randn<double>(out.shape(), rng);
      w.assign(weights.data().begin(), weights.data().end());
      loss = paca::sum(paca::mul(out, weights));
    }
    tape.backward(loss);
  }

  GradCheck r;
  for (D& t : inputs) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double saved = t[i];
      t[i] = saved + h;
      const D up = output();
      t[i] = saved - h;
      const D down = output();
      t[i] = saved;
      // Differencing each output before contracting keeps the summation
      // rounding of a large probe out of the difference quotient.
      double numeric = 0;
      for (std::size_t j = 0; j < w.size(); ++j) numeric += w[j] * (up[j] - down[j]);
      numeric /= 2 * h;
      const double diff = std::abs(analytic[i] - numeric);
      r.max_abs = std::max(r.max_abs, diff);
      if (diff > abs_floor) {
        const double rel = diff / std::max(std::abs(analytic[i]), std::abs(numeric));
        if (rel > r.max_rel) {
          r.max_rel = rel;
          r.worst_analytic = analytic[i];
          r.worst_numeric = numeric;
        }
      }
      ++r.checked;
    }
    t.clear_grad();
  }
  return r;
}

paca::ModelConfig tiny_gradcheck_config() {
  paca::ModelConfig cfg;
  cfg.name = "gradcheck";
  cfg.input_height = cfg.input_width = 8;
  cfg.input_channels = 3;
  cfg.num_classes = 3;
  for (int i = 0; i < 2; ++i) {
    paca::StageConfig s;
    s.conv = {3, 2, 1, 8};
    s.channels = 8;
    s.depth = 1;
    s.heads = 2;
    s.expansion = 2;
    s.variant = paca::AttentionVariant::kPaca;
    s.clusters = 2;
    s.reduction = 2;
    cfg.stages.push_back(s);
  }
  cfg.validate();
  return cfg;
}

namespace {

struct Case {
  std::string name;
  std::vector<D> inputs;
  std::function<D()> output;
};

std::vector<D> with_params(paca::ParamBuilder<double>& b, std::vector<D> extra) {
  for (auto& [name, t] : b.registry()) extra.push_back(t);
  return extra;
}

// Every case is rebuilt from `seed`, so one seed gives one generic instance.
std::vector<Case> op_cases(std::uint64_t seed) {
  paca::Rng rng(seed);
  std::vector<Case> cs;
  auto add = [&](std::string name, std::vector<D> in, std::function<D()> f) {
    cs.push_back({std::move(name), std::move(in), std::move(f)});
  };

  {
    D a = randn<double>({3, 4}, rng), b = randn<double>({4, 5}, rng);
    add("matmul", {a, b}, [=] { return paca::matmul(a, b); });
  }
  {
    D a = randn<double>({2, 3, 4}, rng), b = randn<double>({2, 4, 2}, rng);
    add("matmul_batched", {a, b}, [=] { return paca::matmul(a, b); });
  }
  {
    D a = randn<double>({2, 3, 4}, rng);
    add("transpose", {a}, [=] { return paca::transpose(a); });
  }
  {
    D a = randn<double>({3, 4}, rng), b = randn<double>({3, 4}, rng);
    add("add", {a, b}, [=] { return paca::add(a, b); });
    add("mul", {a, b}, [=] { return paca::mul(a, b); });
    add("scale", {a}, [=] { return paca::scale(a, 0.37); });
    add("sum", {a}, [=] { return paca::sum(paca::mul(a, a)); });
    add("mean_rows", {a}, [=] { return paca::mean_rows(a); });
    add("reshape", {a}, [=] { return paca::reshape(a, Shape{2, 6}); });
    add("stack", {a, b}, [=] { return paca::stack(std::vector<D>{a, b}); });
  }
  {
    D x = randn<double>({2, 3, 4}, rng), bias = randn<double>({4}, rng);
    add("add_bias", {x, bias}, [=] { return paca::add_bias(x, bias); });
    add("select", {x}, [=] { return paca::select(x, 1); });
    for (std::size_t axis = 0; axis < 3; ++axis) {
      add("softmax_axis" + std::to_string(axis), {x}, [=] { return paca::softmax(x, axis); });
    }
    add("gelu", {x}, [=] { return paca::gelu(x); });
  }
  {
    D x = randn<double>({5, 6}, rng), g = randn<double>({6}, rng, 0.5), b = randn<double>({6}, rng, 0.5);
    add("layer_norm", {x, g, b}, [=] { return paca::layer_norm(x, g, b, paca::kLayerNormEps); });
  }
  {
    D x = randn<double>({4, 3}, rng), w = randn<double>({3, 5}, rng), b = randn<double>({5}, rng);
    add("linear", {x, w, b}, [=] { return paca::linear(x, w, b); });
  }
  {
    D x = randn<double>({5, 5, 3}, rng), w = randn<double>({3, 3, 3, 4}, rng), b = randn<double>({4}, rng);
    add("conv2d", {x, w, b}, [=] { return paca::conv2d(x, w, b, {.stride = 1, .pad = 1, .groups = 1}); });
    add("conv2d_strided", {x, w, b},
        [=] { return paca::conv2d(x, w, b, {.stride = 2, .pad = 1, .groups = 1}); });
  }
  {
    D x = randn<double>({4, 4, 6}, rng), w = randn<double>({3, 3, 1, 6}, rng), b = randn<double>({6}, rng);
    add("conv2d_depthwise", {x, w, b},
        [=] { return paca::conv2d(x, w, b, {.stride = 1, .pad = 1, .groups = 6}); });
  }
  {
    D x = randn<double>({6, 4}, rng);
    add("split_heads", {x}, [=] { return paca::split_heads(x, 2); });
    D y = randn<double>({2, 6, 2}, rng);
    add("merge_heads", {y}, [=] { return paca::merge_heads(y); });
  }
  {
    D logits = randn<double>({3, 5}, rng);
    const std::vector<std::size_t> labels{0, 4, 2};
    add("cross_entropy", {logits}, [=] { return paca::cross_entropy(logits, labels); });
  }
  {
    D q = randn<double>({2, 5, 3}, rng), k = randn<double>({2, 4, 3}, rng), v = randn<double>({2, 4, 3}, rng);
    add("scaled_attention", {q, k, v}, [=] { return paca::scaled_attention(q, k, v).out; });
  }

  const Grid grid{4, 4};
  const std::size_t n = grid.size(), c = 8;
  auto builder = [&](const char* tag) {
    auto b = std::make_shared<paca::ParamBuilder<double>>(paca::mix_seed(seed, paca::fnv1a64(tag)));
    return b;
  };
  {
    auto b = builder("mhsa");
    auto ap = paca::make_attention_params(*b, "attn", c, 2);
    jitter_params(b->registry(), rng);
    D x = randn<double>({n, c}, rng);
    add("mhsa", with_params(*b, {x}), [=] { return paca::mhsa(x, ap).out; });
  }
  {
    auto b = builder("paca");
    auto cp = paca::make_cluster_params(*b, "cluster", c, 3, 2);
    auto tn = b->layer_norm("token_norm", c);
    auto ap = paca::make_attention_params(*b, "attn", c, 2);
    jitter_params(b->registry(), rng);
    D x = randn<double>({n, c}, rng);
    std::vector<D> cluster_inputs{x, cp.conv_weight, cp.conv_bias, cp.assign.weight, cp.assign.bias};
    add("compute_clusters", cluster_inputs, [=] { return paca::compute_clusters(x, grid, cp).weights; });
    std::vector<D> token_inputs = cluster_inputs;
    token_inputs.push_back(tn.gamma);
    token_inputs.push_back(tn.beta);
    add("paca_tokens", token_inputs,
        [=] { return paca::paca_tokens(paca::compute_clusters(x, grid, cp), x, tn); });
    add("paca_attention", with_params(*b, {x}), [=] { return paca::paca_attention(x, grid, cp, tn, ap).out; });
  }
  {
    auto b = builder("nested");
    auto np = paca::make_nested_params(*b, "nested", c, 2);
    auto ap = paca::make_attention_params(*b, "attn", c, 2);
    jitter_params(b->registry(), rng);
    D x = randn<double>({n, c}, rng);
    add("nested_attention", with_params(*b, {x}), [=] { return paca::nested_attention(x, grid, np, ap).out; });
  }
  {
    auto b = builder("ffn");
    auto fp = paca::make_ffn_params(*b, "ffn", c, 2);
    jitter_params(b->registry(), rng);
    D x = randn<double>({n, c}, rng);
    add("mblock_ffn", with_params(*b, {x}), [=] { return paca::mblock_ffn(x, grid, fp); });
  }
  for (auto variant : {paca::AttentionVariant::kPaca, paca::AttentionVariant::kMhsa, paca::AttentionVariant::kNested}) {
    const std::string name = "block_" + std::string(paca::variant_name(variant));
    auto b = builder(name.c_str());
    paca::BlockShape shape{.channels = c, .heads = 2, .expansion = 2, .variant = variant, .clusters = 3,
                           .reduction = 2, .patch = 2};
    auto bp = paca::make_block_params(*b, "block", shape);
    jitter_params(b->registry(), rng);
    D x = randn<double>({n, c}, rng);
    add(name, with_params(*b, {x}), [=] { return paca::transformer_block(x, grid, bp).x; });
  }
  {
    auto b = builder("stem");
    auto ep = paca::make_embed_params(*b, "stem", 3, paca::ConvSpec{3, 2, 1, 4});
    jitter_params(b->registry(), rng);
    D img = randn<double>({6, 6, 3}, rng);
    add("stem", with_params(*b, {img}), [=] { return paca::stem(img, ep).first; });
  }
  {
    auto b = builder("transition");
    auto ep = paca::make_embed_params(*b, "transition", c, paca::ConvSpec{3, 2, 1, 6});
    jitter_params(b->registry(), rng);
    D x = randn<double>({n, c}, rng);
    add("transition", with_params(*b, {x}), [=] { return paca::transition(x, grid, ep).first; });
  }
  return cs;
}

}  // namespace

std::vector<CheckResult> op_gradient_suite(int seeds) {
  constexpr double kTol = 1e-6;
  std::vector<CheckResult> results;
  for (int s = 0; s < seeds; ++s) {
    auto cases = op_cases(paca::mix_seed(0x9c, static_cast<std::uint64_t>(s)));
    if (results.empty()) {
      for (const auto& c : cases) results.push_back({c.name, 0.0, kTol, true});
    }
    for (std::size_t i = 0; i < cases.size(); ++i) {
      const GradCheck g = gradcheck(cases[i].output, cases[i].inputs, paca::mix_seed(s, 99));
      if (std::getenv("PACA_GRADCHECK_TRACE") && g.max_rel > 1e-7)
        std::fprintf(stderr, "%s seed %d rel %.3g abs %.3g a %.12g n %.12g\n", cases[i].name.c_str(), s, g.max_rel,
                     g.max_abs, g.worst_analytic, g.worst_numeric);
      results[i].value = std::max(results[i].value, g.max_rel);
    }
  }
  for (auto& r : results) r.pass = r.value < r.tolerance;
  return results;
}

CheckResult model_gradient_check(std::uint64_t seed) {
  auto model = paca::build_model<double>(tiny_gradcheck_config(), seed);
  paca::Rng rng(paca::mix_seed(seed, 1));
  jitter_params(model.params(), rng);
  const D batch = randn<double>({2, 8, 8, 3}, rng);
  const std::vector<std::size_t> labels{1, 2};
  std::vector<D> inputs;
  for (auto& [name, t] : model.params()) inputs.push_back(t);
  const GradCheck g = gradcheck(
      [&] { return paca::cross_entropy(paca::forward(model, batch, false).logits, labels); }, inputs, 0);
  CheckResult r{"model_end_to_end", g.max_rel, 1e-5, false};
  r.pass = r.value < r.tolerance;
  return r;
}

std::vector<CheckResult> oracle_suite(std::uint64_t seed) {
  constexpr double kTol = 1e-5;
  using F = Tensor<float>;
  std::vector<CheckResult> results;
  auto record = [&](std::string name, const std::vector<double>& lib, const std::vector<double>& ref) {
    const double d = oracle::max_abs_diff(lib, ref);
    results.push_back({std::move(name), d, kTol, d <= kTol});
  };
  paca::Rng rng(seed);
  const Grid grid{4, 4};
  const std::size_t n = grid.size(), c = 8;
  const F x = randn<float>({n, c}, rng);
  const oracle::Mat xm = oracle::mat(x);

  {
    paca::ParamBuilder<float> b(paca::mix_seed(seed, 1));
    auto ap = paca::make_attention_params(b, "attn", c, 2);
    jitter_params(b.registry(), rng);
    const auto lib = paca::mhsa(x, ap);
    const auto ref = oracle::attend(xm, xm, ap);
    record("mhsa", oracle::values(lib.out), ref.out.v);
  }
  {
    paca::ParamBuilder<float> b(paca::mix_seed(seed, 2));
    auto cp = paca::make_cluster_params(b, "cluster", c, 3, 2);
    auto tn = b.layer_norm("token_norm", c);
    auto ap = paca::make_attention_params(b, "attn", c, 2);
    jitter_params(b.registry(), rng);
    const auto lib = paca::paca_attention(x, grid, cp, tn, ap);
    record("clusters", oracle::values(lib.clusters.weights), oracle::clusters(xm, grid, cp).v);
    record("paca_tokens", oracle::values(paca::paca_tokens(lib.clusters, x, tn)),
           oracle::paca_tokens(oracle::clusters(xm, grid, cp), xm, tn).v);
    const auto ref = oracle::paca_attention(xm, grid, cp, tn, ap);
    record("paca_attention", oracle::values(lib.out), ref.out.v);
    std::vector<double> attn;
    for (const auto& a : ref.attn) attn.insert(attn.end(), a.v.begin(), a.v.end());
    record("paca_attention_weights", oracle::values(lib.attn), attn);
  }
  {
    paca::ParamBuilder<float> b(paca::mix_seed(seed, 3));
    auto np = paca::make_nested_params(b, "nested", c, 2);
    auto ap = paca::make_attention_params(b, "attn", c, 2);
    jitter_params(b.registry(), rng);
    const auto lib = paca::nested_attention(x, grid, np, ap);
    record("nested_attention", oracle::values(lib.out), oracle::attend(xm, oracle::nested_tokens(xm, grid, np), ap).out.v);
  }
  {
    paca::ParamBuilder<float> b(paca::mix_seed(seed, 4));
    auto fp = paca::make_ffn_params(b, "ffn", c, 4);
    jitter_params(b.registry(), rng);
    record("mblock_ffn", oracle::values(paca::mblock_ffn(x, grid, fp)), oracle::mblock(xm, grid, fp).v);
  }
  for (auto variant : {paca::AttentionVariant::kPaca, paca::AttentionVariant::kMhsa, paca::AttentionVariant::kNested}) {
    paca::ParamBuilder<float> b(paca::mix_seed(seed, 5));
    paca::BlockShape shape{.channels = c, .heads = 2, .expansion = 4, .variant = variant, .clusters = 3,
                           .reduction = 2, .patch = 2};
    auto bp = paca::make_block_params(b, "block", shape);
    jitter_params(b.registry(), rng);
    record("block_" + std::string(paca::variant_name(variant)),
           oracle::values(paca::transformer_block(x, grid, bp).x), oracle::block(xm, grid, bp).v);
  }
  {
    auto model = paca::build_model<float>(paca::preset("tiny-debug", paca::Geometry::kCustom, 5), seed);
    jitter_params(model.params(), rng);
    const F img = randn<float>({16, 16, 3}, rng);
    oracle::Map im(16, 16, 3);
    im.v = oracle::values(img);
    record("model_logits", oracle::values(paca::forward_image(model, img)), oracle::model_logits(model, im));
  }
  return results;
}

namespace {

// Largest |row sum - 1| over [h, N, M] along the last axis.
template <typename T>
double row_sum_error(const Tensor<T>& a) {
  const std::size_t m = a.dim(a.rank() - 1), rows = a.numel() / m;
  double worst = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t j = 0; j < m; ++j) {
      if (a[r * m + j] < T(0)) worst = std::max(worst, 1.0);
      s += a[r * m + j];
    }
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

// Largest |column sum - 1| over [N, M].
template <typename T>
double col_sum_error(const Tensor<T>& c) {
  const std::size_t n = c.dim(0), m = c.dim(1);
  double worst = 0;
  for (std::size_t j = 0; j < m; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (c[i * m + j] < T(0)) worst = std::max(worst, 1.0);
      s += c[i * m + j];
    }
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

}  // namespace

std::vector<CheckResult> stochasticity_suite(int count) {
  constexpr double kTol = 1e-5;
  using F = Tensor<float>;
  const Grid grid{4, 4};
  const std::size_t n = grid.size(), c = 8;
  paca::ParamBuilder<float> b(0x51);
  auto ap = paca::make_attention_params(b, "attn", c, 2);
  auto cp = paca::make_cluster_params(b, "cluster", c, 5, 2);
  auto tn = b.layer_norm("token_norm", c);
  auto np = paca::make_nested_params(b, "nested", c, 2);
  auto model = paca::build_model<float>(paca::preset("tiny-debug", paca::Geometry::kCustom, 4), 0x52);

  double mhsa_rows = 0, nested_rows = 0, paca_rows = 0, paca_cols = 0, model_rows = 0, model_cols = 0;
  for (int i = 0; i < count; ++i) {
    paca::Rng rng(paca::mix_seed(0x53, static_cast<std::uint64_t>(i)));
    const double spread = 0.5 + 4.0 * rng.uniform();
    const F x = randn<float>({n, c}, rng, spread);
    mhsa_rows = std::max(mhsa_rows, row_sum_error(paca::mhsa(x, ap).attn));
    nested_rows = std::max(nested_rows, row_sum_error(paca::nested_attention(x, grid, np, ap).attn));
    const auto p = paca::paca_attention(x, grid, cp, tn, ap);
    paca_rows = std::max(paca_rows, row_sum_error(p.attn));
    paca_cols = std::max(paca_cols, col_sum_error(p.clusters.weights));

    const F img = randn<float>({16, 16, 3}, rng, spread);
    std::vector<paca::LayerExplanation<float>> layers;
    paca::forward_image(model, img, &layers);
    for (const auto& l : layers) {
      model_rows = std::max(model_rows, row_sum_error(l.attn));
      if (l.clusters) model_cols = std::max(model_cols, col_sum_error(l.clusters->weights));
    }
  }
  std::vector<CheckResult> r{{"mhsa_attention_rows", mhsa_rows, kTol, false},
                             {"nested_attention_rows", nested_rows, kTol, false},
                             {"paca_attention_rows", paca_rows, kTol, false},
                             {"paca_cluster_columns", paca_cols, kTol, false},
                             {"model_attention_rows", model_rows, kTol, false},
                             {"model_cluster_columns", model_cols, kTol, false}};
  for (auto& x : r) x.pass = x.value <= x.tolerance;
  return r;
}

}  // namespace support
