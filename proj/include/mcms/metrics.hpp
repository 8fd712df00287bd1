#pragma once

#include "mcms/tensor.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace mcms {

// -10 log10(MSE) for unit-range images; +inf when identical.
template <class T> double psnr(const Tensor<T> &x, const Tensor<T> &y) {
  if (x.shape() != y.shape())
    shape_fail("psnr: shape mismatch " + x.shape().str() + " vs " +
               y.shape().str());
  double se = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    se += d * d;
  }
  if (se == 0.0)
    return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(se / static_cast<double>(x.size()));
}

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double range = 1.0;
};

namespace detail {
inline std::vector<double> gaussian_window(std::size_t n, double sigma) {
  std::vector<double> g(n);
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += g[i];
  }
  for (auto &v : g)
    v /= sum;
  return g;
}

// Separable valid-mode filter of an h x w plane.
inline std::vector<double> filter_valid(const std::vector<double> &img,
                                        std::size_t h, std::size_t w,
                                        const std::vector<double> &g) {
  const std::size_t k = g.size(), ho = h - k + 1, wo = w - k + 1;
  std::vector<double> tmp(h * wo, 0.0), out(ho * wo, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < wo; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < k; ++i)
        acc += g[i] * img[y * w + x + i];
      tmp[y * wo + x] = acc;
    }
  for (std::size_t y = 0; y < ho; ++y)
    for (std::size_t x = 0; x < wo; ++x) {
      double acc = 0.0;
      for (std::size_t i = 0; i < k; ++i)
        acc += g[i] * tmp[(y + i) * wo + x];
      out[y * wo + x] = acc;
    }
  return out;
}
} // namespace detail

// Mean local SSIM of the channel-mean grayscale images (averaged over the
// batch), Gaussian window, valid region only.
template <class T>
double ssim(const Tensor<T> &x, const Tensor<T> &y, const SsimParams &p = {}) {
  if (x.shape() != y.shape())
    shape_fail("ssim: shape mismatch " + x.shape().str() + " vs " +
               y.shape().str());
  const Shape s = x.shape();
  if (s.h < p.window || s.w < p.window)
    shape_fail("ssim: image " + std::to_string(s.h) + "x" +
               std::to_string(s.w) + " is smaller than the " +
               std::to_string(p.window) + "x" + std::to_string(p.window) +
               " window");
  const auto g = detail::gaussian_window(p.window, p.sigma);
  const double c1 = (p.k1 * p.range) * (p.k1 * p.range);
  const double c2 = (p.k2 * p.range) * (p.k2 * p.range);
  const std::size_t hw = s.plane();
  double total = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    std::vector<double> gx(hw, 0.0), gy(hw, 0.0);
    for (std::size_t c = 0; c < s.c; ++c) {
      const T *px = x.plane(n, c), *py = y.plane(n, c);
      for (std::size_t i = 0; i < hw; ++i) {
        gx[i] += static_cast<double>(px[i]);
        gy[i] += static_cast<double>(py[i]);
      }
    }
    for (std::size_t i = 0; i < hw; ++i) {
      gx[i] /= static_cast<double>(s.c);
      gy[i] /= static_cast<double>(s.c);
    }
    std::vector<double> xx(hw), yy(hw), xy(hw);
    for (std::size_t i = 0; i < hw; ++i) {
      xx[i] = gx[i] * gx[i];
      yy[i] = gy[i] * gy[i];
      xy[i] = gx[i] * gy[i];
    }
    const auto mx = detail::filter_valid(gx, s.h, s.w, g);
    const auto my = detail::filter_valid(gy, s.h, s.w, g);
    const auto exx = detail::filter_valid(xx, s.h, s.w, g);
    const auto eyy = detail::filter_valid(yy, s.h, s.w, g);
    const auto exy = detail::filter_valid(xy, s.h, s.w, g);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = exx[i] - mx[i] * mx[i];
      const double vy = eyy[i] - my[i] * my[i];
      const double cov = exy[i] - mx[i] * my[i];
      const double num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
      const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
      acc += num / den;
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(s.n);
}

} // namespace mcms
