// SPDX-License-Identifier: Apache-2.0
#include "paca/profiler.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "paca/attention.hpp"
#include "paca/blocks.hpp"
#include "paca/rng.hpp"

namespace paca {

std::string_view mechanism_name(Mechanism m) {
  switch (m) {
    case Mechanism::kVanilla: return "vanilla";
    case Mechanism::kNested: return "nested";
    case Mechanism::kPaca: return "paca";
  }
  return "?";
}

Mechanism parse_mechanism(std::string_view name) {
  if (name == "vanilla" || name == "mhsa") return Mechanism::kVanilla;
  if (name == "nested") return Mechanism::kNested;
  if (name == "paca") return Mechanism::kPaca;
  throw std::invalid_argument("unknown mechanism '" + std::string(name) + "' (expected vanilla, nested or paca)");
}

void LayerSpec::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("layer spec: " + what); };
  if (n == 0 || channels == 0 || heads == 0) fail("N, C and h must be >= 1");
  if (channels % heads != 0) fail("C must be divisible by h");
  if (expansion && *expansion == 0) fail("expansion must be >= 1");
  switch (mechanism) {
    case Mechanism::kVanilla: break;
    case Mechanism::kPaca:
      if (m_or_p == 0) fail("paca needs M >= 1");
      if (reduction == 0 || channels % reduction != 0) fail("C must be divisible by the reduction ratio");
      break;
    case Mechanism::kNested: {
      if (m_or_p == 0) fail("nested needs p >= 1");
      const std::size_t area = m_or_p * m_or_p;
      if (n % area != 0) fail("N must be divisible by p^2");
      break;
    }
  }
}

std::size_t LayerSpec::kv_tokens() const {
  switch (mechanism) {
    case Mechanism::kVanilla: return n;
    case Mechanism::kNested: return n / (m_or_p * m_or_p);
    case Mechanism::kPaca: return m_or_p;
  }
  return n;
}

FlopReport from_tally(const FlopTally& tally) {
  FlopReport r;
  r.projection = tally[FlopBucket::kProjection];
  r.attn_matrix = tally[FlopBucket::kAttentionMatrix];
  r.attn_apply = tally[FlopBucket::kAttentionApply];
  r.clustering = tally[FlopBucket::kClustering];
  r.ffn = tally[FlopBucket::kFfn];
  r.softmax_elements = tally.softmax_elements;
  return r;
}

FlopReport attention_flops(const LayerSpec& s) {
  s.validate();
  const std::uint64_t n = s.n, c = s.channels, h = s.heads, kv = s.kv_tokens();
  FlopReport r;
  r.projection = 2 * n * c * c + 2 * kv * c * c;
  r.attn_matrix = n * kv * c;
  r.attn_apply = n * kv * c;
  r.softmax_elements = h * n * kv;
  if (s.mechanism == Mechanism::kPaca) {
    const std::uint64_t m = s.m_or_p, cr = c / s.reduction;
    r.clustering = n * 9 * c * cr + n * cr * m + m * n * c;
    r.softmax_elements += n * m;
  } else if (s.mechanism == Mechanism::kNested) {
    r.clustering = kv * s.m_or_p * s.m_or_p * c * c;
  }
  if (s.expansion) {
    const std::uint64_t hidden = c * *s.expansion;
    r.ffn = 2 * n * c * hidden + n * 9 * hidden;
  }
  return r;
}

std::pair<std::size_t, std::size_t> near_square_grid(std::size_t n, std::size_t multiple) {
  std::pair<std::size_t, std::size_t> best{0, 0};
  for (std::size_t hgt = multiple; hgt * hgt <= n; hgt += multiple) {
    if (n % hgt == 0 && (n / hgt) % multiple == 0) best = {hgt, n / hgt};
  }
  if (best.first == 0) {
    throw std::invalid_argument("no grid for " + std::to_string(n) + " tokens with sides divisible by " +
                                std::to_string(multiple));
  }
  return best;
}

FlopReport instrumented_flops(const LayerSpec& s, std::uint64_t seed) {
  s.validate();
  ParamBuilder<float> b(seed);
  BlockShape shape;
  shape.channels = s.channels;
  shape.heads = s.heads;
  shape.expansion = s.expansion.value_or(1);
  shape.clusters = s.m_or_p;
  shape.reduction = s.reduction;
  shape.patch = s.m_or_p;
  const auto [gh, gw] = near_square_grid(s.n, s.mechanism == Mechanism::kNested ? s.m_or_p : 1);
  const Grid grid{gh, gw};

  Tensor<float> x(Shape{s.n, s.channels});
  Rng rng(mix_seed(seed, 1));
  for (float& v : x.data()) v = static_cast<float>(rng.normal());

  AttentionParams<float> ap = make_attention_params(b, "attn", s.channels, s.heads);
  std::optional<ClusterParams<float>> cp;
  std::optional<LayerNormParams<float>> tn;
  std::optional<NestedParams<float>> np;
  std::optional<FfnParams<float>> fp;
  if (s.mechanism == Mechanism::kPaca) {
    cp = make_cluster_params(b, "cluster", s.channels, s.m_or_p, s.reduction);
    tn = b.layer_norm("token_norm", s.channels);
  } else if (s.mechanism == Mechanism::kNested) {
    np = make_nested_params(b, "nested", s.channels, s.m_or_p);
  }
  if (s.expansion) fp = make_ffn_params(b, "mlp", s.channels, *s.expansion);

  const std::int64_t base = ActivationMeter::live();
  ActivationMeter::reset_peak();
  FlopCounter::Session session;
  {
    Tensor<float> out;
    switch (s.mechanism) {
      case Mechanism::kVanilla: out = mhsa(x, ap).out; break;
      case Mechanism::kNested: out = nested_attention(x, grid, *np, ap).out; break;
      case Mechanism::kPaca: out = paca_attention(x, grid, *cp, *tn, ap).out; break;
    }
    if (fp) out = mblock_ffn(out, grid, *fp);
  }
  FlopReport r = from_tally(session.tally());
  r.peak_elements = ActivationMeter::peak() - base;
  return r;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need >= 2 paired points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0 && y[i] > 0)) throw std::invalid_argument("loglog_slope: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  if (sxx == 0) throw std::invalid_argument("loglog_slope: x values are all equal");
  return sxy / sxx;
}

ScalingReport scaling_report(const LayerSpec& base, const std::vector<std::size_t>& ns, bool instrumented) {
  if (ns.size() < 3) throw std::invalid_argument("scaling report needs at least 3 values of N");
  ScalingReport rep;
  rep.base = base;
  std::vector<double> xs, ys;
  for (std::size_t n : ns) {
    LayerSpec s = base;
    s.n = n;
    const FlopReport r = instrumented ? instrumented_flops(s) : attention_flops(s);
    rep.rows.push_back({n, r});
    xs.push_back(static_cast<double>(n));
    ys.push_back(static_cast<double>(r.attention_macs()));
  }
  rep.slope = loglog_slope(xs, ys);
  return rep;
}

void ScalingReport::write_csv(std::ostream& os) const {
  os << "mechanism,N,projections,attn_matrix,attn_apply,clustering,ffn,total,attention_total,softmax,peak_elements\n";
  const std::string mech(mechanism_name(base.mechanism));
  std::vector<std::vector<double>> cols(9);
  std::vector<double> xs;
  for (const ScalingRow& row : rows) {
    const FlopReport& r = row.report;
    const std::uint64_t v[] = {2 * r.projection, 2 * r.attn_matrix, 2 * r.attn_apply, 2 * r.clustering, 2 * r.ffn,
                               2 * r.total_macs(), 2 * r.attention_macs(), 2 * r.softmax_elements};
    os << mech << ',' << row.n;
    for (std::size_t i = 0; i < 8; ++i) {
      os << ',' << v[i];
      cols[i].push_back(static_cast<double>(v[i]));
    }
    os << ',';
    if (r.peak_elements) {
      os << *r.peak_elements;
      cols[8].push_back(static_cast<double>(*r.peak_elements));
    }
    os << '\n';
    xs.push_back(static_cast<double>(row.n));
  }
  os << mech << ",slope";
  char buf[32];
  for (const auto& col : cols) {
    os << ',';
    bool positive = col.size() == xs.size();
    for (double v : col) positive = positive && v > 0;
    if (positive) {
      std::snprintf(buf, sizeof buf, "%.6f", loglog_slope(xs, col));
      os << buf;
    }
  }
  os << '\n';
}

}  // namespace paca
