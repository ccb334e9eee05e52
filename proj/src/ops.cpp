// SPDX-License-Identifier: Apache-2.0
#include "paca/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "paca/flops.hpp"
#include "paca/simd/kernels.hpp"

namespace paca {

namespace {

template <typename T>
bool wants_grad(const std::vector<Tensor<T>>& inputs) {
  if (Tape<T>::active() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T>& t) { return t.defined() && t.requires_grad(); });
}

[[noreturn]] void shape_fail(const std::string& op, const Shape& a, const Shape& b) {
  throw ShapeError(op + ": incompatible shapes " + a.to_string() + " and " + b.to_string());
}

// c[m,n] = a[m,k] . b[k,n], overwriting c.
template <typename T>
void gemm(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n,
          const simd::Kernels<T>& kern) {
  std::fill(c, c + m * n, T(0));
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) kern.axpy(arow[p], b + p * n, crow, n);
  }
}

// out[n,m] = in[m,n]
template <typename T>
void transpose_into(const T* in, T* out, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
}

}  // namespace

template <typename T>
void record_op(std::string name, const std::vector<Tensor<T>>& inputs, Tensor<T>& out,
               std::function<void()> backward) {
  check_finite(name.c_str(), out);
  if (!wants_grad(inputs)) return;
  out.set_requires_grad(true);
  typename Tape<T>::Entry entry;
  entry.op = std::move(name);
  for (const auto& t : inputs)
    if (t.defined()) entry.inputs.push_back(t.handle());
  entry.output = out.handle();
  entry.backward = std::move(backward);
  Tape<T>::active()->push(std::move(entry));
}

template <typename T>
void check_finite(const char* op, const Tensor<T>& x) {
  if (!finite_checks()) return;
  for (T v : x.data()) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string(op) + ": produced a non-finite value");
  }
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0) throw ShapeError("conv2d: stride must be >= 1");
  if (in + 2 * pad < kernel) {
    throw ShapeError("conv2d: kernel " + std::to_string(kernel) + " exceeds padded extent " +
                     std::to_string(in + 2 * pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  const bool batched = a.rank() == 3;
  if (!((a.rank() == 2 && b.rank() == 2) || (a.rank() == 3 && b.rank() == 3))) shape_fail("matmul", a.shape(), b.shape());
  const std::size_t batch = batched ? a.dim(0) : 1;
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (k != kb || (batched && b.dim(0) != batch)) shape_fail("matmul", a.shape(), b.shape());

  Tensor<T> out(batched ? Shape{batch, m, n} : Shape{m, n});
  const auto& kern = simd::kernels<T>();
  for (std::size_t bi = 0; bi < batch; ++bi) {
    gemm(a.data().data() + bi * m * k, b.data().data() + bi * k * n, out.data().data() + bi * m * n, m, k, n, kern);
  }
  FlopCounter::add_macs(static_cast<std::uint64_t>(batch) * m * k * n);

  record_op<T>("matmul", {a, b}, out, [a, b, out, batch, m, k, n]() mutable {
    const auto& kern = simd::kernels<T>();
    const T* g = out.grad().data();
    if (a.requires_grad()) {
      std::vector<T> bt(k * n), da(batch * m * k);
      for (std::size_t bi = 0; bi < batch; ++bi) {
        transpose_into(b.data().data() + bi * k * n, bt.data(), k, n);
        gemm(g + bi * m * n, bt.data(), da.data() + bi * m * k, m, n, k, kern);
      }
      a.accumulate_grad(da);
    }
    if (b.requires_grad()) {
      std::vector<T> db(batch * k * n, T(0));
      for (std::size_t bi = 0; bi < batch; ++bi) {
        const T* ab = a.data().data() + bi * m * k;
        T* dbb = db.data() + bi * k * n;
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) kern.axpy(ab[i * k + p], g + bi * m * n + i * n, dbb + p * n, n);
      }
      b.accumulate_grad(db);
    }
  });
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2 && x.rank() != 3) throw ShapeError("transpose: expected rank 2 or 3, got " + x.shape().to_string());
  const bool batched = x.rank() == 3;
  const std::size_t batch = batched ? x.dim(0) : 1;
  const std::size_t m = x.dim(x.rank() - 2), n = x.dim(x.rank() - 1);
  Tensor<T> out(batched ? Shape{batch, n, m} : Shape{n, m});
  for (std::size_t bi = 0; bi < batch; ++bi)
    transpose_into(x.data().data() + bi * m * n, out.data().data() + bi * m * n, m, n);
  record_op<T>("transpose", {x}, out, [x, out, batch, m, n]() mutable {
    std::vector<T> dx(batch * m * n);
    for (std::size_t bi = 0; bi < batch; ++bi)
      transpose_into(out.grad().data() + bi * m * n, dx.data() + bi * m * n, n, m);
    x.accumulate_grad(dx);
  });
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_fail("add", a.shape(), b.shape());
  Tensor<T> out = a.clone();
  simd::kernels<T>().add(b.data().data(), out.data().data(), out.numel());
  record_op<T>("add", {a, b}, out, [a, b, out]() mutable {
    if (a.requires_grad()) a.accumulate_grad(out.grad());
    if (b.requires_grad()) b.accumulate_grad(out.grad());
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_fail("mul", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  simd::kernels<T>().mul_acc(a.data().data(), b.data().data(), out.data().data(), out.numel());
  record_op<T>("mul", {a, b}, out, [a, b, out]() mutable {
    const auto& kern = simd::kernels<T>();
    const std::size_t n = out.numel();
    if (a.requires_grad()) {
      std::vector<T> da(n, T(0));
      kern.mul_acc(out.grad().data(), b.data().data(), da.data(), n);
      a.accumulate_grad(da);
    }
    if (b.requires_grad()) {
      std::vector<T> db(n, T(0));
      kern.mul_acc(out.grad().data(), a.data().data(), db.data(), n);
      b.accumulate_grad(db);
    }
  });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  Tensor<T> out = x.clone();
  simd::kernels<T>().scale(factor, out.data().data(), out.numel());
  record_op<T>("scale", {x}, out, [x, out, factor]() mutable {
    std::vector<T> dx(out.grad().begin(), out.grad().end());
    simd::kernels<T>().scale(factor, dx.data(), dx.size());
    x.accumulate_grad(dx);
  });
  return out;
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t c = bias.numel();
  if (bias.rank() != 1 || x.rank() == 0 || x.dim(x.rank() - 1) != c) shape_fail("add_bias", x.shape(), bias.shape());
  Tensor<T> out = x.clone();
  const auto& kern = simd::kernels<T>();
  const std::size_t rows = x.numel() / c;
  for (std::size_t r = 0; r < rows; ++r) kern.add(bias.data().data(), out.data().data() + r * c, c);
  record_op<T>("add_bias", {x, bias}, out, [x, bias, out, rows, c]() mutable {
    if (x.requires_grad()) x.accumulate_grad(out.grad());
    if (bias.requires_grad()) {
      std::vector<T> db(c, T(0));
      const auto& kern = simd::kernels<T>();
      for (std::size_t r = 0; r < rows; ++r) kern.add(out.grad().data() + r * c, db.data(), c);
      bias.accumulate_grad(db);
    }
  });
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  Tensor<T> y = matmul(x, w);
  return b.defined() ? add_bias(y, b) : y;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  Tensor<T> out = Tensor<T>::scalar(acc);
  record_op<T>("sum", {x}, out, [x, out]() mutable {
    x.accumulate_grad(std::vector<T>(x.numel(), out.grad()[0]));
  });
  return out;
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  if (x.rank() != 2) throw ShapeError("mean_rows: expected [N, C], got " + x.shape().to_string());
  const std::size_t n = x.dim(0), c = x.dim(1);
  Tensor<T> out(Shape{c});
  const auto& kern = simd::kernels<T>();
  for (std::size_t r = 0; r < n; ++r) kern.add(x.data().data() + r * c, out.data().data(), c);
  const T inv = T(1) / static_cast<T>(n);
  kern.scale(inv, out.data().data(), c);
  record_op<T>("mean_rows", {x}, out, [x, out, n, c, inv]() mutable {
    std::vector<T> dx(n * c);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < c; ++j) dx[r * c + j] = out.grad()[j] * inv;
    x.accumulate_grad(dx);
  });
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for " + x.shape().to_string());
  const auto& dims = x.shape().dims();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= dims[i];
  for (std::size_t i = axis + 1; i < dims.size(); ++i) inner *= dims[i];
  const std::size_t len = dims[axis];

  Tensor<T> out(x.shape());
  const T* in = x.data().data();
  T* y = out.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * len * inner + i;
      T mx = in[base];
      for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, in[base + l * inner]);
      T total = T(0);
      for (std::size_t l = 0; l < len; ++l) {
        const T e = std::exp(in[base + l * inner] - mx);
        y[base + l * inner] = e;
        total += e;
      }
      for (std::size_t l = 0; l < len; ++l) y[base + l * inner] /= total;
    }
  }
  FlopCounter::add_softmax(x.numel());

  record_op<T>("softmax", {x}, out, [x, out, outer, inner, len]() mutable {
    const T* g = out.grad().data();
    const T* y = out.data().data();
    std::vector<T> dx(x.numel());
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * len * inner + i;
        T dot = T(0);
        for (std::size_t l = 0; l < len; ++l) dot += g[base + l * inner] * y[base + l * inner];
        for (std::size_t l = 0; l < len; ++l) {
          const std::size_t idx = base + l * inner;
          dx[idx] = y[idx] * (g[idx] - dot);
        }
      }
    }
    x.accumulate_grad(dx);
  });
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t c = x.dim(x.rank() - 1);
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) shape_fail("layer_norm", x.shape(), gamma.shape());
  const std::size_t rows = x.numel() / c;

  Tensor<T> out(x.shape());
  std::vector<T> xhat(x.numel()), rstd(rows);
  const T* in = x.data().data();
  T* y = out.data().data();
  const T* gm = gamma.data().data();
  const T* bt = beta.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in + r * c;
    T mean = T(0);
    for (std::size_t j = 0; j < c; ++j) mean += row[j];
    mean /= static_cast<T>(c);
    T var = T(0);
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(c);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (row[j] - mean) * rs;
      xhat[r * c + j] = h;
      y[r * c + j] = h * gm[j] + bt[j];
    }
  }

  record_op<T>("layer_norm", {x, gamma, beta}, out,
               [x, gamma, beta, out, xhat = std::move(xhat), rstd = std::move(rstd), rows, c]() mutable {
                 const T* g = out.grad().data();
                 const T* gm = gamma.data().data();
                 if (x.requires_grad()) {
                   std::vector<T> dx(rows * c);
                   for (std::size_t r = 0; r < rows; ++r) {
                     T mean_d = T(0), mean_dh = T(0);
                     for (std::size_t j = 0; j < c; ++j) {
                       const T d = g[r * c + j] * gm[j];
                       mean_d += d;
                       mean_dh += d * xhat[r * c + j];
                     }
                     mean_d /= static_cast<T>(c);
                     mean_dh /= static_cast<T>(c);
                     for (std::size_t j = 0; j < c; ++j) {
                       const T d = g[r * c + j] * gm[j];
                       dx[r * c + j] = rstd[r] * (d - mean_d - xhat[r * c + j] * mean_dh);
                     }
                   }
                   x.accumulate_grad(dx);
                 }
                 if (gamma.requires_grad() || beta.requires_grad()) {
                   std::vector<T> dg(c, T(0)), db(c, T(0));
                   for (std::size_t r = 0; r < rows; ++r) {
                     for (std::size_t j = 0; j < c; ++j) {
                       dg[j] += g[r * c + j] * xhat[r * c + j];
                       db[j] += g[r * c + j];
                     }
                   }
                   if (gamma.requires_grad()) gamma.accumulate_grad(dg);
                   if (beta.requires_grad()) beta.accumulate_grad(db);
                 }
               });
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kInvSqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  Tensor<T> out(x.shape());
  const T* in = x.data().data();
  T* y = out.data().data();
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = T(0.5) * in[i] * (T(1) + std::erf(in[i] * kInvSqrt2));
  record_op<T>("gelu", {x}, out, [x, out]() mutable {
    constexpr T kInvSqrt2Pi = std::numbers::inv_sqrtpi_v<T> / std::numbers::sqrt2_v<T>;
    const T* in = x.data().data();
    const T* g = out.grad().data();
    std::vector<T> dx(x.numel());
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const T v = in[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
      const T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
      dx[i] = g[i] * (cdf + v * pdf);
    }
    x.accumulate_grad(dx);
  });
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, Conv2dGeometry geom) {
  if (x.rank() != 3 || w.rank() != 4) shape_fail("conv2d", x.shape(), w.shape());
  const std::size_t h = x.dim(0), wd = x.dim(1), cin = x.dim(2);
  const std::size_t kh = w.dim(0), kw = w.dim(1), cig = w.dim(2), cout = w.dim(3);
  const std::size_t groups = geom.groups;
  if (groups == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cig) {
    throw ShapeError("conv2d: weight " + w.shape().to_string() + " incompatible with input " + x.shape().to_string() +
                     " and groups=" + std::to_string(groups));
  }
  if (bias.defined() && bias.shape() != Shape{cout}) shape_fail("conv2d bias", w.shape(), bias.shape());
  const std::size_t oh = conv_output_extent(h, kh, geom.stride, geom.pad);
  const std::size_t ow = conv_output_extent(wd, kw, geom.stride, geom.pad);
  const std::size_t cog = cout / groups;
  const bool depthwise = cig == 1 && cog == 1;
  const std::size_t stride = geom.stride, pad = geom.pad;

  // Visits every in-bounds (output pixel, tap) pair in a fixed order.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(wd)) continue;
            fn(oy * ow + ox, static_cast<std::size_t>(iy) * wd + static_cast<std::size_t>(ix), ky * kw + kx);
          }
        }
  };

  Tensor<T> out(Shape{oh, ow, cout});
  {
    const auto& kern = simd::kernels<T>();
    const T* in = x.data().data();
    const T* wt = w.data().data();
    T* y = out.data().data();
    for_each_tap([&](std::size_t opix, std::size_t ipix, std::size_t tap) {
      const T* xp = in + ipix * cin;
      T* yp = y + opix * cout;
      const T* wtap = wt + tap * cig * cout;
      if (depthwise) {
        kern.mul_acc(xp, wtap, yp, cout);
        return;
      }
      for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t ci = 0; ci < cig; ++ci)
          kern.axpy(xp[g * cig + ci], wtap + ci * cout + g * cog, yp + g * cog, cog);
    });
    if (bias.defined())
      for (std::size_t p = 0; p < oh * ow; ++p) kern.add(bias.data().data(), y + p * cout, cout);
  }
  FlopCounter::add_macs(static_cast<std::uint64_t>(oh) * ow * kh * kw * cig * cout);

  record_op<T>("conv2d", {x, w, bias}, out, [=]() mutable {
    const auto& kern = simd::kernels<T>();
    const T* g = out.grad().data();
    if (x.requires_grad()) {
      // wt_t[tap][g][co][ci] so the input-gradient update is an axpy over ci.
      const T* wt = w.data().data();
      std::vector<T> wtt(kh * kw * cig * cout);
      for (std::size_t tap = 0; tap < kh * kw; ++tap)
        for (std::size_t ci = 0; ci < cig; ++ci)
          for (std::size_t co = 0; co < cout; ++co) {
            const std::size_t grp = co / cog;
            wtt[tap * cig * cout + (grp * cog + co % cog) * cig + ci] = wt[tap * cig * cout + ci * cout + co];
          }
      std::vector<T> dx(x.numel(), T(0));
      for_each_tap([&](std::size_t opix, std::size_t ipix, std::size_t tap) {
        const T* gp = g + opix * cout;
        T* dxp = dx.data() + ipix * cin;
        if (depthwise) {
          kern.mul_acc(gp, wt + tap * cout, dxp, cout);
          return;
        }
        for (std::size_t co = 0; co < cout; ++co) {
          const std::size_t grp = co / cog;
          kern.axpy(gp[co], wtt.data() + tap * cig * cout + co * cig, dxp + grp * cig, cig);
        }
      });
      x.accumulate_grad(dx);
    }
    if (w.requires_grad()) {
      const T* in = x.data().data();
      std::vector<T> dw(w.numel(), T(0));
      for_each_tap([&](std::size_t opix, std::size_t ipix, std::size_t tap) {
        const T* gp = g + opix * cout;
        const T* xp = in + ipix * cin;
        T* dwt = dw.data() + tap * cig * cout;
        if (depthwise) {
          kern.mul_acc(xp, gp, dwt, cout);
          return;
        }
        for (std::size_t grp = 0; grp < groups; ++grp)
          for (std::size_t ci = 0; ci < cig; ++ci)
            kern.axpy(xp[grp * cig + ci], gp + grp * cog, dwt + ci * cout + grp * cog, cog);
      });
      w.accumulate_grad(dw);
    }
    if (bias.defined() && bias.requires_grad()) {
      std::vector<T> db(cout, T(0));
      for (std::size_t p = 0; p < oh * ow; ++p) kern.add(g + p * cout, db.data(), cout);
      bias.accumulate_grad(db);
    }
  });
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape.numel() != x.numel()) shape_fail("reshape", x.shape(), shape);
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  record_op<T>("reshape", {x}, out, [x, out]() mutable { x.accumulate_grad(out.grad()); });
  return out;
}

template <typename T>
Tensor<T> select(const Tensor<T>& x, std::size_t index) {
  if (x.rank() == 0 || index >= x.dim(0)) throw ShapeError("select: index out of range for " + x.shape().to_string());
  std::vector<std::size_t> dims(x.shape().dims().begin() + 1, x.shape().dims().end());
  Shape sub(dims);
  const std::size_t n = sub.numel();
  Tensor<T> out(sub, std::vector<T>(x.data().begin() + index * n, x.data().begin() + (index + 1) * n));
  record_op<T>("select", {x}, out, [x, out, index, n]() mutable {
    std::vector<T> dx(x.numel(), T(0));
    std::copy(out.grad().begin(), out.grad().end(), dx.begin() + index * n);
    x.accumulate_grad(dx);
  });
  return out;
}

template <typename T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("stack: no tensors");
  const Shape& s = parts.front().shape();
  for (const auto& p : parts)
    if (p.shape() != s) shape_fail("stack", s, p.shape());
  std::vector<std::size_t> dims{parts.size()};
  dims.insert(dims.end(), s.dims().begin(), s.dims().end());
  std::vector<T> buf;
  buf.reserve(parts.size() * s.numel());
  for (const auto& p : parts) buf.insert(buf.end(), p.data().begin(), p.data().end());
  Tensor<T> out(Shape(dims), std::move(buf));
  record_op<T>("stack", parts, out, [parts, out]() mutable {
    const std::size_t n = parts.front().numel();
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (parts[i].requires_grad()) parts[i].accumulate_grad(out.grad().subspan(i * n, n));
    }
  });
  return out;
}

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  if (x.rank() != 2 || heads == 0 || x.dim(1) % heads != 0) {
    throw ShapeError("split_heads: cannot split " + x.shape().to_string() + " into " + std::to_string(heads) + " heads");
  }
  const std::size_t n = x.dim(0), c = x.dim(1), d = c / heads;
  Tensor<T> out(Shape{heads, n, d});
  const T* in = x.data().data();
  T* y = out.data().data();
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t r = 0; r < n; ++r) std::copy_n(in + r * c + h * d, d, y + (h * n + r) * d);
  record_op<T>("split_heads", {x}, out, [x, out, heads, n, c, d]() mutable {
    std::vector<T> dx(n * c);
    const T* g = out.grad().data();
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t r = 0; r < n; ++r) std::copy_n(g + (h * n + r) * d, d, dx.data() + r * c + h * d);
    x.accumulate_grad(dx);
  });
  return out;
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("merge_heads: expected [h, N, d], got " + x.shape().to_string());
  const std::size_t heads = x.dim(0), n = x.dim(1), d = x.dim(2), c = heads * d;
  Tensor<T> out(Shape{n, c});
  const T* in = x.data().data();
  T* y = out.data().data();
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t r = 0; r < n; ++r) std::copy_n(in + (h * n + r) * d, d, y + r * c + h * d);
  record_op<T>("merge_heads", {x}, out, [x, out, heads, n, c, d]() mutable {
    std::vector<T> dx(x.numel());
    const T* g = out.grad().data();
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t r = 0; r < n; ++r) std::copy_n(g + r * c + h * d, d, dx.data() + (h * n + r) * d);
    x.accumulate_grad(dx);
  });
  return out;
}

#define PACA_INSTANTIATE_OPS(T)                                                                        \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                       \
  template Tensor<T> transpose(const Tensor<T>&);                                                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                          \
  template Tensor<T> scale(const Tensor<T>&, T);                                                       \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                     \
  template Tensor<T> sum(const Tensor<T>&);                                                            \
  template Tensor<T> mean_rows(const Tensor<T>&);                                                      \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                           \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);              \
  template Tensor<T> gelu(const Tensor<T>&);                                                           \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dGeometry);     \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                 \
  template Tensor<T> select(const Tensor<T>&, std::size_t);                                            \
  template Tensor<T> stack(const std::vector<Tensor<T>>&);                                             \
  template Tensor<T> split_heads(const Tensor<T>&, std::size_t);                                       \
  template Tensor<T> merge_heads(const Tensor<T>&);                                                    \
  template void record_op(std::string, const std::vector<Tensor<T>>&, Tensor<T>&, std::function<void()>); \
  template void check_finite(const char*, const Tensor<T>&);

PACA_INSTANTIATE_OPS(float)
PACA_INSTANTIATE_OPS(double)

#undef PACA_INSTANTIATE_OPS

}  // namespace paca
