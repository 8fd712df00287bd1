#pragma once

// Raw forward/backward kernels shared by the value-level API (ops.hpp) and
// the gradient tape (autodiff.hpp). Nothing here validates user input beyond
// what the loops themselves need; callers check contracts.

#include "mcms/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <type_traits>
#include <vector>

namespace mcms::kernels {

// Mirror index without edge repetition ("reflect"), periodic for pads
// that exceed the extent.
inline std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  if (n == 1)
    return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * n - 2);
  i %= period;
  if (i < 0)
    i += period;
  if (i >= static_cast<std::ptrdiff_t>(n))
    i = period - i;
  return static_cast<std::size_t>(i);
}

// ---------------------------------------------------------------- padding

template <class T>
Tensor<T> pad_reflect(const Tensor<T> &x, std::size_t ph, std::size_t pw) {
  if (ph == 0 && pw == 0)
    return x;
  const Shape s = x.shape();
  Tensor<T> out({s.n, s.c, s.h + 2 * ph, s.w + 2 * pw});
  std::vector<std::size_t> col(out.w());
  for (std::size_t ox = 0; ox < out.w(); ++ox)
    col[ox] = reflect_index(static_cast<std::ptrdiff_t>(ox) -
                                static_cast<std::ptrdiff_t>(pw),
                            s.w);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T *src = x.plane(n, c);
      T *dst = out.plane(n, c);
      for (std::size_t oy = 0; oy < out.h(); ++oy) {
        const std::size_t sy = reflect_index(
            static_cast<std::ptrdiff_t>(oy) - static_cast<std::ptrdiff_t>(ph),
            s.h);
        const T *row = src + sy * s.w;
        T *drow = dst + oy * out.w();
        for (std::size_t ox = 0; ox < out.w(); ++ox)
          drow[ox] = row[col[ox]];
      }
    }
  return out;
}

template <class T>
Tensor<T> pad_reflect_backward(const Tensor<T> &g, const Shape &in,
                               std::size_t ph, std::size_t pw) {
  if (ph == 0 && pw == 0)
    return g;
  Tensor<T> gx(in);
  std::vector<std::size_t> col(g.w());
  for (std::size_t ox = 0; ox < g.w(); ++ox)
    col[ox] = reflect_index(static_cast<std::ptrdiff_t>(ox) -
                                static_cast<std::ptrdiff_t>(pw),
                            in.w);
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t c = 0; c < in.c; ++c) {
      const T *src = g.plane(n, c);
      T *dst = gx.plane(n, c);
      for (std::size_t oy = 0; oy < g.h(); ++oy) {
        const std::size_t sy = reflect_index(
            static_cast<std::ptrdiff_t>(oy) - static_cast<std::ptrdiff_t>(ph),
            in.h);
        T *row = dst + sy * in.w;
        const T *grow = src + oy * g.w();
        for (std::size_t ox = 0; ox < g.w(); ++ox)
          row[col[ox]] += grow[ox];
      }
    }
  return gx;
}

// ---------------------------------------------------------------- matrices

namespace detail {
// c (r x m) += A * b where A(i, p) = a[i * si + p * sp]. Columns are
// processed in cache-sized blocks and rows four at a time; each c entry
// accumulates over p in order, in double for float inputs (long reductions
// such as attention over every pixel lose ~k ulps otherwise).
template <class T>
void gemm_strided(const T *a, std::size_t si, std::size_t sp, const T *b, T *c,
                  std::size_t r, std::size_t k, std::size_t m) {
  using Acc = std::conditional_t<std::is_same_v<T, float>, double, T>;
  constexpr std::size_t kBlock = 256;
  Acc acc[4][kBlock];
  for (std::size_t j0 = 0; j0 < m; j0 += kBlock) {
    const std::size_t jn = std::min(kBlock, m - j0);
    std::size_t i = 0;
    for (; i < r; i += 4) {
      const std::size_t rows = std::min<std::size_t>(4, r - i);
      for (std::size_t q = 0; q < rows; ++q)
        for (std::size_t j = 0; j < jn; ++j)
          acc[q][j] = c[(i + q) * m + j0 + j];
      if (rows == 4) {
        for (std::size_t p = 0; p < k; ++p) {
          const Acc a0 = a[i * si + p * sp], a1 = a[(i + 1) * si + p * sp],
                    a2 = a[(i + 2) * si + p * sp], a3 = a[(i + 3) * si + p * sp];
          const T *brow = b + p * m + j0;
          for (std::size_t j = 0; j < jn; ++j) {
            const Acc bv = brow[j];
            acc[0][j] += a0 * bv;
            acc[1][j] += a1 * bv;
            acc[2][j] += a2 * bv;
            acc[3][j] += a3 * bv;
          }
        }
      } else {
        for (std::size_t q = 0; q < rows; ++q)
          for (std::size_t p = 0; p < k; ++p) {
            const Acc av = a[(i + q) * si + p * sp];
            const T *brow = b + p * m + j0;
            for (std::size_t j = 0; j < jn; ++j)
              acc[q][j] += av * static_cast<Acc>(brow[j]);
          }
      }
      for (std::size_t q = 0; q < rows; ++q)
        for (std::size_t j = 0; j < jn; ++j)
          c[(i + q) * m + j0 + j] = static_cast<T>(acc[q][j]);
    }
  }
}
} // namespace detail

// c (r x m) += a (r x k) * b (k x m)
template <class T>
void gemm_nn(const T *a, const T *b, T *c, std::size_t r, std::size_t k,
             std::size_t m) {
  detail::gemm_strided(a, k, 1, b, c, r, k, m);
}

// c (r x m) += a^T * b, a is (k x r), b is (k x m)
template <class T>
void gemm_tn(const T *a, const T *b, T *c, std::size_t r, std::size_t k,
             std::size_t m) {
  detail::gemm_strided(a, 1, r, b, c, r, k, m);
}

// c (r x m) += a * b^T, a is (r x k), b is (m x k). b is transposed first
// so the inner loop is a contiguous axpy.
template <class T>
void gemm_nt(const T *a, const T *b, T *c, std::size_t r, std::size_t k,
             std::size_t m) {
  std::vector<T> bt(k * m);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t p = 0; p < k; ++p)
      bt[p * m + j] = b[j * k + p];
  gemm_nn(a, bt.data(), c, r, k, m);
}


// ---------------------------------------------------------------- conv

namespace detail {
// col is (ic * kh * kw) x (ho * wo) for one sample.
template <class T>
void im2col(const T *x, std::size_t ic, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, std::size_t stride, std::size_t ho,
            std::size_t wo, T *col) {
  for (std::size_t c = 0; c < ic; ++c)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        T *dst = col + ((c * kh + ky) * kw + kx) * ho * wo;
        const T *src = x + c * h * w;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const T *row = src + (oy * stride + ky) * w + kx;
          for (std::size_t ox = 0; ox < wo; ++ox)
            dst[oy * wo + ox] = row[ox * stride];
        }
      }
}

template <class T>
void col2im_add(const T *col, std::size_t ic, std::size_t h, std::size_t w,
                std::size_t kh, std::size_t kw, std::size_t stride,
                std::size_t ho, std::size_t wo, T *x) {
  for (std::size_t c = 0; c < ic; ++c)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const T *src = col + ((c * kh + ky) * kw + kx) * ho * wo;
        T *dst = x + c * h * w;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          T *row = dst + (oy * stride + ky) * w + kx;
          for (std::size_t ox = 0; ox < wo; ++ox)
            row[ox * stride] += src[oy * wo + ox];
        }
      }
}

inline bool is_pointwise(std::size_t kh, std::size_t kw, std::size_t stride) {
  return kh == 1 && kw == 1 && stride == 1;
}
} // namespace detail

// Cross-correlation without padding. weight is (out_c, in_c/groups, kh, kw);
// bias (when given) holds out_c values. Ungrouped convs go through
// im2col + gemm, grouped ones through direct loops.
template <class T>
Tensor<T> conv_valid(const Tensor<T> &x, const Tensor<T> &weight,
                     const Tensor<T> *bias, std::size_t stride,
                     std::size_t groups) {
  const Shape s = x.shape();
  const std::size_t oc_n = weight.n(), icg = weight.c(), kh = weight.h(),
                    kw = weight.w();
  const std::size_t ho = (s.h - kh) / stride + 1, wo = (s.w - kw) / stride + 1;
  const std::size_t ocg = oc_n / groups;
  Tensor<T> out({s.n, oc_n, ho, wo});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t oc = 0; oc < oc_n; ++oc) {
      T *o = out.plane(n, oc);
      std::fill(o, o + ho * wo, bias ? (*bias)[oc] : T(0));
    }
  if (groups == 1) {
    const std::size_t k = icg * kh * kw;
    const bool pw = detail::is_pointwise(kh, kw, stride);
    std::vector<T> col(pw ? 0 : k * ho * wo);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T *src = x.plane(n, 0);
      if (!pw) {
        detail::im2col(src, icg, s.h, s.w, kh, kw, stride, ho, wo, col.data());
        src = col.data();
      }
      gemm_nn(weight.data(), src, out.plane(n, 0), oc_n, k, ho * wo);
    }
    return out;
  }
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t oc = 0; oc < oc_n; ++oc) {
      T *o = out.plane(n, oc);
      const std::size_t g = oc / ocg;
      for (std::size_t ic = 0; ic < icg; ++ic) {
        const T *in = x.plane(n, g * icg + ic);
        const T *wk = weight.plane(oc, ic);
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const T wv = wk[ky * kw + kx];
            if (wv == T(0))
              continue;
            for (std::size_t oy = 0; oy < ho; ++oy) {
              const T *irow = in + (oy * stride + ky) * s.w + kx;
              T *orow = o + oy * wo;
              if (stride == 1) {
                for (std::size_t ox = 0; ox < wo; ++ox)
                  orow[ox] += wv * irow[ox];
              } else {
                for (std::size_t ox = 0; ox < wo; ++ox)
                  orow[ox] += wv * irow[ox * stride];
              }
            }
          }
      }
    }
  return out;
}

template <class T>
void conv_valid_backward(const Tensor<T> &x, const Tensor<T> &weight,
                         const Tensor<T> &g, std::size_t stride,
                         std::size_t groups, Tensor<T> *gx, Tensor<T> *gw,
                         Tensor<T> *gb) {
  const Shape s = x.shape();
  const std::size_t oc_n = weight.n(), icg = weight.c(), kh = weight.h(),
                    kw = weight.w();
  const std::size_t ho = g.h(), wo = g.w();
  const std::size_t ocg = oc_n / groups;
  if (gb)
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t oc = 0; oc < oc_n; ++oc) {
        const T *go = g.plane(n, oc);
        T acc = T(0);
        for (std::size_t i = 0; i < ho * wo; ++i)
          acc += go[i];
        (*gb)[oc] += acc;
      }
  if (groups == 1) {
    const std::size_t k = icg * kh * kw;
    const bool pw = detail::is_pointwise(kh, kw, stride);
    std::vector<T> col(pw ? 0 : k * ho * wo), gcol(gx && !pw ? k * ho * wo : 0);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T *go = g.plane(n, 0);
      if (gw) {
        const T *src = x.plane(n, 0);
        if (!pw) {
          detail::im2col(src, icg, s.h, s.w, kh, kw, stride, ho, wo, col.data());
          src = col.data();
        }
        gemm_nt(go, src, gw->data(), oc_n, ho * wo, k);
      }
      if (gx) {
        if (pw) {
          gemm_tn(weight.data(), go, gx->plane(n, 0), k, oc_n, ho * wo);
        } else {
          std::fill(gcol.begin(), gcol.end(), T(0));
          gemm_tn(weight.data(), go, gcol.data(), k, oc_n, ho * wo);
          detail::col2im_add(gcol.data(), icg, s.h, s.w, kh, kw, stride, ho,
                             wo, gx->plane(n, 0));
        }
      }
    }
    return;
  }
  std::vector<T> acc_row(wo);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t oc = 0; oc < oc_n; ++oc) {
      const T *go = g.plane(n, oc);
      const std::size_t grp = oc / ocg;
      for (std::size_t ic = 0; ic < icg; ++ic) {
        const std::size_t cin = grp * icg + ic;
        const T *in = x.plane(n, cin);
        const T *wk = weight.plane(oc, ic);
        T *gin = gx ? gx->plane(n, cin) : nullptr;
        T *gwk = gw ? gw->plane(oc, ic) : nullptr;
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const T wv = wk[ky * kw + kx];
            std::fill(acc_row.begin(), acc_row.end(), T(0));
            for (std::size_t oy = 0; oy < ho; ++oy) {
              const std::size_t base = (oy * stride + ky) * s.w + kx;
              const T *grow = go + oy * wo;
              if (gwk) {
                const T *irow = in + base;
                for (std::size_t ox = 0; ox < wo; ++ox)
                  acc_row[ox] += grow[ox] * irow[ox * stride];
              }
              if (gin && wv != T(0)) {
                T *girow = gin + base;
                for (std::size_t ox = 0; ox < wo; ++ox)
                  girow[ox * stride] += wv * grow[ox];
              }
            }
            if (gwk) {
              T acc = T(0);
              for (T v : acc_row)
                acc += v;
              gwk[ky * kw + kx] += acc;
            }
          }
      }
    }
}

// ---------------------------------------------------------------- pooling

template <class T> Tensor<T> avgpool(const Tensor<T> &x, std::size_t k) {
  const Shape s = x.shape();
  Tensor<T> out({s.n, s.c, s.h / k, s.w / k});
  const T inv = T(1) / static_cast<T>(k * k);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T *in = x.plane(n, c);
      T *o = out.plane(n, c);
      for (std::size_t y = 0; y < s.h; ++y) {
        T *orow = o + (y / k) * out.w();
        const T *irow = in + y * s.w;
        for (std::size_t xx = 0; xx < s.w; ++xx)
          orow[xx / k] += irow[xx];
      }
      for (std::size_t i = 0; i < out.shape().plane(); ++i)
        o[i] *= inv;
    }
  return out;
}

template <class T>
Tensor<T> avgpool_backward(const Tensor<T> &g, const Shape &in, std::size_t k) {
  Tensor<T> gx(in);
  const T inv = T(1) / static_cast<T>(k * k);
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t c = 0; c < in.c; ++c) {
      const T *go = g.plane(n, c);
      T *gi = gx.plane(n, c);
      for (std::size_t y = 0; y < in.h; ++y) {
        const T *grow = go + (y / k) * g.w();
        T *irow = gi + y * in.w;
        for (std::size_t xx = 0; xx < in.w; ++xx)
          irow[xx] = grow[xx / k] * inv;
      }
    }
  return gx;
}

// ---------------------------------------------------------------- upsample

// Bilinear 2x with half-pixel centers and clamped borders.
struct LerpTap {
  std::size_t i0, i1;
  double w0, w1;
};

inline std::vector<LerpTap> upsample_taps(std::size_t n) {
  std::vector<LerpTap> taps(2 * n);
  for (std::size_t o = 0; o < 2 * n; ++o) {
    const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    const double fl = std::floor(src);
    const double frac = src - fl;
    const auto lo = static_cast<std::ptrdiff_t>(fl);
    const auto last = static_cast<std::ptrdiff_t>(n) - 1;
    const auto clamp = [&](std::ptrdiff_t i) {
      return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, last));
    };
    taps[o] = {clamp(lo), clamp(lo + 1), 1.0 - frac, frac};
  }
  return taps;
}

template <class T> Tensor<T> upsample2x(const Tensor<T> &x) {
  const Shape s = x.shape();
  Tensor<T> out({s.n, s.c, 2 * s.h, 2 * s.w});
  const auto ty = upsample_taps(s.h), tx = upsample_taps(s.w);
  std::vector<T> row(out.w());
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T *in = x.plane(n, c);
      T *o = out.plane(n, c);
      for (std::size_t oy = 0; oy < out.h(); ++oy) {
        const LerpTap &vy = ty[oy];
        const T *r0 = in + vy.i0 * s.w, *r1 = in + vy.i1 * s.w;
        T *orow = o + oy * out.w();
        for (std::size_t ox = 0; ox < out.w(); ++ox) {
          const LerpTap &vx = tx[ox];
          const T top = static_cast<T>(vx.w0) * r0[vx.i0] +
                        static_cast<T>(vx.w1) * r0[vx.i1];
          const T bot = static_cast<T>(vx.w0) * r1[vx.i0] +
                        static_cast<T>(vx.w1) * r1[vx.i1];
          orow[ox] = static_cast<T>(vy.w0) * top + static_cast<T>(vy.w1) * bot;
        }
      }
    }
  return out;
}

template <class T>
Tensor<T> upsample2x_backward(const Tensor<T> &g, const Shape &in) {
  Tensor<T> gx(in);
  const auto ty = upsample_taps(in.h), tx = upsample_taps(in.w);
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t c = 0; c < in.c; ++c) {
      const T *go = g.plane(n, c);
      T *gi = gx.plane(n, c);
      for (std::size_t oy = 0; oy < g.h(); ++oy) {
        const LerpTap &vy = ty[oy];
        T *r0 = gi + vy.i0 * in.w, *r1 = gi + vy.i1 * in.w;
        const T *grow = go + oy * g.w();
        for (std::size_t ox = 0; ox < g.w(); ++ox) {
          const LerpTap &vx = tx[ox];
          const T v = grow[ox];
          const T a = static_cast<T>(vy.w0) * v, b = static_cast<T>(vy.w1) * v;
          r0[vx.i0] += static_cast<T>(vx.w0) * a;
          r0[vx.i1] += static_cast<T>(vx.w1) * a;
          r1[vx.i0] += static_cast<T>(vx.w0) * b;
          r1[vx.i1] += static_cast<T>(vx.w1) * b;
        }
      }
    }
  return gx;
}

// ---------------------------------------------------------------- activation

// Leaky GELU: x * (a + (1 - a) * Phi(x)). With a = 1/8 the derivative stays
// positive everywhere (plain GELU dips below zero near x = -sqrt(2)).
inline constexpr double kActivationLeak = 0.125;

template <class T> T activation_value(T x) {
  const double xd = static_cast<double>(x);
  const double phi = 0.5 * std::erfc(-xd / std::numbers::sqrt2);
  return static_cast<T>(xd * (kActivationLeak + (1.0 - kActivationLeak) * phi));
}

template <class T> T activation_derivative(T x) {
  const double xd = static_cast<double>(x);
  const double phi = 0.5 * std::erfc(-xd / std::numbers::sqrt2);
  const double pdf =
      std::exp(-0.5 * xd * xd) / std::sqrt(2.0 * std::numbers::pi);
  return static_cast<T>(kActivationLeak +
                        (1.0 - kActivationLeak) * (phi + xd * pdf));
}

// ---------------------------------------------------------------- layer norm

inline constexpr double kNormEps = 1e-6;

// Normalizes across channels at each (n, y, x); gamma/beta hold c values.
template <class T>
Tensor<T> channel_norm(const Tensor<T> &x, const Tensor<T> &gamma,
                       const Tensor<T> &beta, Tensor<T> *xhat_out,
                       std::vector<T> *inv_std_out) {
  const Shape s = x.shape();
  const std::size_t hw = s.plane();
  Tensor<T> out(s);
  Tensor<T> xhat(s);
  std::vector<T> inv_std(s.n * hw);
  std::vector<double> mean(hw), var(hw);
  for (std::size_t n = 0; n < s.n; ++n) {
    std::fill(mean.begin(), mean.end(), 0.0);
    std::fill(var.begin(), var.end(), 0.0);
    for (std::size_t c = 0; c < s.c; ++c) {
      const T *p = x.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i)
        mean[i] += p[i];
    }
    for (std::size_t i = 0; i < hw; ++i)
      mean[i] /= static_cast<double>(s.c);
    for (std::size_t c = 0; c < s.c; ++c) {
      const T *p = x.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        const double d = p[i] - mean[i];
        var[i] += d * d;
      }
    }
    for (std::size_t i = 0; i < hw; ++i)
      inv_std[n * hw + i] = static_cast<T>(
          1.0 / std::sqrt(var[i] / static_cast<double>(s.c) + kNormEps));
    for (std::size_t c = 0; c < s.c; ++c) {
      const T *p = x.plane(n, c);
      T *xh = xhat.plane(n, c);
      T *o = out.plane(n, c);
      const T gm = gamma[c], bt = beta[c];
      for (std::size_t i = 0; i < hw; ++i) {
        xh[i] = static_cast<T>((p[i] - mean[i]) * inv_std[n * hw + i]);
        o[i] = xh[i] * gm + bt;
      }
    }
  }
  if (xhat_out)
    *xhat_out = std::move(xhat);
  if (inv_std_out)
    *inv_std_out = std::move(inv_std);
  return out;
}

template <class T>
void channel_norm_backward(const Tensor<T> &xhat,
                           const std::vector<T> &inv_std,
                           const Tensor<T> &gamma, const Tensor<T> &g,
                           Tensor<T> *gx, Tensor<T> *ggamma,
                           Tensor<T> *gbeta) {
  const Shape s = xhat.shape();
  const std::size_t hw = s.plane();
  std::vector<double> m1(hw), m2(hw);
  for (std::size_t n = 0; n < s.n; ++n) {
    std::fill(m1.begin(), m1.end(), 0.0);
    std::fill(m2.begin(), m2.end(), 0.0);
    for (std::size_t c = 0; c < s.c; ++c) {
      const T *gp = g.plane(n, c);
      const T *xh = xhat.plane(n, c);
      const T gm = gamma[c];
      double gg = 0.0, gbt = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        const double gxh = static_cast<double>(gp[i]) * gm;
        m1[i] += gxh;
        m2[i] += gxh * xh[i];
        gg += static_cast<double>(gp[i]) * xh[i];
        gbt += gp[i];
      }
      if (ggamma)
        (*ggamma)[c] += static_cast<T>(gg);
      if (gbeta)
        (*gbeta)[c] += static_cast<T>(gbt);
    }
    if (!gx)
      continue;
    const double inv_c = 1.0 / static_cast<double>(s.c);
    for (std::size_t c = 0; c < s.c; ++c) {
      const T *gp = g.plane(n, c);
      const T *xh = xhat.plane(n, c);
      T *out = gx->plane(n, c);
      const T gm = gamma[c];
      for (std::size_t i = 0; i < hw; ++i) {
        const double gxh = static_cast<double>(gp[i]) * gm;
        out[i] += static_cast<T>(inv_std[n * hw + i] *
                                 (gxh - m1[i] * inv_c - xh[i] * m2[i] * inv_c));
      }
    }
  }
}

template <class T>
void softmax_rows(const T *x, T *y, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T *xr = x + r * cols;
    T *yr = y + r * cols;
    T mx = xr[0];
    for (std::size_t j = 1; j < cols; ++j)
      mx = std::max(mx, xr[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = static_cast<T>(std::exp(static_cast<double>(xr[j] - mx)));
      sum += yr[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < cols; ++j)
      yr[j] = static_cast<T>(yr[j] * inv);
  }
}

template <class T>
void softmax_rows_backward(const T *y, const T *g, T *gx, std::size_t rows,
                           std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T *yr = y + r * cols;
    const T *gr = g + r * cols;
    T *out = gx + r * cols;
    double dot = 0.0;
    for (std::size_t j = 0; j < cols; ++j)
      dot += static_cast<double>(yr[j]) * gr[j];
    for (std::size_t j = 0; j < cols; ++j)
      out[j] += static_cast<T>(yr[j] * (gr[j] - dot));
  }
}

} // namespace mcms::kernels
