#pragma once

// Orthonormal 2-D DCT-II, the low/high frequency split built on it, and the
// forward 2-D DFT used by the frequency-domain loss.
//
// Transforms are separable matrix products against cached basis tables
// (O(h*w*(h+w)) per plane), evaluated in double regardless of T.

#include "mcms/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numbers>
#include <vector>

namespace mcms {

namespace detail {

// basis[k * n + i] = a(k) cos(pi (2i + 1) k / 2n)
inline const std::vector<double> &dct_basis(std::size_t n) {
  thread_local std::map<std::size_t, std::shared_ptr<std::vector<double>>> cache;
  auto &slot = cache[n];
  if (!slot) {
    slot = std::make_shared<std::vector<double>>(n * n);
    const double a0 = std::sqrt(1.0 / static_cast<double>(n));
    const double ak = std::sqrt(2.0 / static_cast<double>(n));
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < n; ++i)
        (*slot)[k * n + i] =
            (k == 0 ? a0 : ak) *
            std::cos(std::numbers::pi * static_cast<double>((2 * i + 1) * k) /
                     (2.0 * static_cast<double>(n)));
  }
  return *slot;
}

struct Twiddles {
  std::vector<double> cos, sin; // [k * n + i] = cos/sin(2 pi k i / n)
};

inline const Twiddles &dft_twiddles(std::size_t n) {
  thread_local std::map<std::size_t, std::shared_ptr<Twiddles>> cache;
  auto &slot = cache[n];
  if (!slot) {
    slot = std::make_shared<Twiddles>();
    slot->cos.resize(n * n);
    slot->sin.resize(n * n);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < n; ++i) {
        // Reduce k*i mod n first so large sizes keep full accuracy.
        const double ang = 2.0 * std::numbers::pi *
                           static_cast<double>((k * i) % n) /
                           static_cast<double>(n);
        slot->cos[k * n + i] = std::cos(ang);
        slot->sin[k * n + i] = std::sin(ang);
      }
  }
  return *slot;
}

// out = Bh * in * Bw^T (forward) or Bh^T * in * Bw (inverse), one plane.
inline void dct_plane(const double *in, double *out, std::size_t h,
                      std::size_t w, bool inverse) {
  const auto &bh = dct_basis(h);
  const auto &bw = dct_basis(w);
  std::vector<double> tmp(h * w, 0.0);
  // Along rows.
  for (std::size_t y = 0; y < h; ++y) {
    const double *row = in + y * w;
    double *trow = tmp.data() + y * w;
    for (std::size_t k = 0; k < w; ++k) {
      double acc = 0.0;
      if (!inverse) {
        const double *b = bw.data() + k * w;
        for (std::size_t x = 0; x < w; ++x)
          acc += row[x] * b[x];
      } else {
        for (std::size_t x = 0; x < w; ++x)
          acc += row[x] * bw[x * w + k];
      }
      trow[k] = acc;
    }
  }
  // Along columns.
  std::fill(out, out + h * w, 0.0);
  for (std::size_t u = 0; u < h; ++u) {
    double *orow = out + u * w;
    for (std::size_t y = 0; y < h; ++y) {
      const double c = inverse ? bh[y * h + u] : bh[u * h + y];
      const double *trow = tmp.data() + y * w;
      for (std::size_t k = 0; k < w; ++k)
        orow[k] += c * trow[k];
    }
  }
}

template <class T>
Tensor<T> dct_all_planes(const Tensor<T> &x, bool inverse) {
  const Shape s = x.shape();
  Tensor<T> out(s);
  std::vector<double> in(s.plane()), res(s.plane());
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      std::copy_n(x.plane(n, c), s.plane(), in.begin());
      dct_plane(in.data(), res.data(), s.h, s.w, inverse);
      T *o = out.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i)
        o[i] = static_cast<T>(res[i]);
    }
  return out;
}

} // namespace detail

// DCT-II coefficient planes, one per (n, c) of the source.
template <class T> struct Spectrum {
  Tensor<T> coefficients;
  Shape source_shape() const { return coefficients.shape(); }
};

template <class T> struct ComplexSpectrum {
  Tensor<T> real;
  Tensor<T> imag;
};

// keep(u, v) is true (low frequency) when u/h + v/w <= tau.
struct FrequencyMask {
  std::size_t h = 0, w = 0;
  double tau = 0.0;
  std::vector<std::uint8_t> keep;

  bool low(std::size_t u, std::size_t v) const { return keep[u * w + v] != 0; }
  std::size_t low_count() const {
    std::size_t n = 0;
    for (auto k : keep)
      n += k;
    return n;
  }
};

inline FrequencyMask make_frequency_mask(std::size_t h, std::size_t w,
                                         double tau) {
  if (h == 0 || w == 0)
    shape_fail("frequency mask needs h, w >= 1");
  if (!(tau >= 0.0 && tau <= 2.0))
    throw ConfigError("frequency cutoff tau must lie in [0, 2], got " +
                      std::to_string(tau));
  FrequencyMask m{h, w, tau, std::vector<std::uint8_t>(h * w)};
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v)
      m.keep[u * w + v] = static_cast<double>(u) / static_cast<double>(h) +
                                  static_cast<double>(v) / static_cast<double>(w) <=
                              tau
                              ? 1
                              : 0;
  return m;
}

template <class T> Spectrum<T> dct2(const Tensor<T> &x) {
  return {detail::dct_all_planes(x, false)};
}

template <class T> Tensor<T> idct2(const Spectrum<T> &s) {
  return detail::dct_all_planes(s.coefficients, true);
}

template <class T> struct FrequencySplit {
  Tensor<T> hf;
  Tensor<T> lf;
};

template <class T>
FrequencySplit<T> split_hf_lf(const Tensor<T> &x, const FrequencyMask &mask) {
  const Shape s = x.shape();
  if (mask.h != s.h || mask.w != s.w)
    shape_fail("split_hf_lf: mask is " + std::to_string(mask.h) + "x" +
               std::to_string(mask.w) + " but image is " + std::to_string(s.h) +
               "x" + std::to_string(s.w));
  const Spectrum<T> full = dct2(x);
  Spectrum<T> low{full.coefficients}, high{full.coefficients};
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      T *lp = low.coefficients.plane(n, c);
      T *hp = high.coefficients.plane(n, c);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        if (mask.keep[i])
          hp[i] = T(0);
        else
          lp[i] = T(0);
      }
    }
  return {idct2(high), idct2(low)};
}

// Unnormalized forward DFT per plane: X(u,v) = sum x(y,x) e^{-2 pi i (uy/h + vx/w)}.
template <class T> ComplexSpectrum<T> fft2(const Tensor<T> &x) {
  const Shape s = x.shape();
  const auto &th = detail::dft_twiddles(s.h);
  const auto &tw = detail::dft_twiddles(s.w);
  ComplexSpectrum<T> out{Tensor<T>(s), Tensor<T>(s)};
  std::vector<double> rr(s.plane()), ri(s.plane()), ar(s.w), ai(s.w);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const T *p = x.plane(n, c);
      for (std::size_t y = 0; y < s.h; ++y) {
        const T *row = p + y * s.w;
        for (std::size_t v = 0; v < s.w; ++v) {
          const double *cw = tw.cos.data() + v * s.w;
          const double *sw = tw.sin.data() + v * s.w;
          double re = 0.0, im = 0.0;
          for (std::size_t xx = 0; xx < s.w; ++xx) {
            re += row[xx] * cw[xx];
            im -= row[xx] * sw[xx];
          }
          rr[y * s.w + v] = re;
          ri[y * s.w + v] = im;
        }
      }
      T *ore = out.real.plane(n, c);
      T *oim = out.imag.plane(n, c);
      for (std::size_t u = 0; u < s.h; ++u) {
        std::fill(ar.begin(), ar.end(), 0.0);
        std::fill(ai.begin(), ai.end(), 0.0);
        for (std::size_t y = 0; y < s.h; ++y) {
          const double cc = th.cos[u * s.h + y], ss = th.sin[u * s.h + y];
          const double *r = rr.data() + y * s.w;
          const double *i = ri.data() + y * s.w;
          // (r + i j)(cc - ss j)
          for (std::size_t v = 0; v < s.w; ++v) {
            ar[v] += r[v] * cc + i[v] * ss;
            ai[v] += i[v] * cc - r[v] * ss;
          }
        }
        for (std::size_t v = 0; v < s.w; ++v) {
          ore[u * s.w + v] = static_cast<T>(ar[v]);
          oim[u * s.w + v] = static_cast<T>(ai[v]);
        }
      }
    }
  return out;
}

} // namespace mcms
