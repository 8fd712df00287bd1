#pragma once

// Blur synthesis b = I (*) k + n with linear motion kernels and i.i.d.
// Gaussian noise, plus a procedural generator of sharp test images.

#include "mcms/ops.hpp"
#include "mcms/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace mcms {

struct BlurKernel {
  Tensor<double> taps; // 1x1xkhxkw, nonnegative, sums to 1
  double length = 1.0;
  double angle = 0.0; // degrees, counter-clockwise from +x

  std::size_t kh() const { return taps.h(); }
  std::size_t kw() const { return taps.w(); }
};

// Anti-aliased line segment through the kernel center: ceil(length) evenly
// spaced samples over [-(L-1)/2, (L-1)/2], each splatted bilinearly.
inline BlurKernel motion_kernel(double length, double angle_deg) {
  if (!(length >= 1.0))
    fail("motion_kernel: length must be >= 1, got " + std::to_string(length));
  const auto samples = static_cast<std::size_t>(std::ceil(length - 1e-9));
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const auto snap = [](double v) {
    const double r = std::round(v);
    return std::abs(v - r) < 1e-9 ? r : v;
  };

  std::vector<double> dx(samples), dy(samples);
  double ex = 0.0, ey = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double t =
        samples == 1 ? 0.0
                     : -(length - 1.0) / 2.0 +
                           static_cast<double>(i) * (length - 1.0) /
                               static_cast<double>(samples - 1);
    dx[i] = snap(t * cs);
    dy[i] = snap(-t * sn); // image rows grow downwards
    ex = std::max(ex, std::ceil(std::abs(dx[i])));
    ey = std::max(ey, std::ceil(std::abs(dy[i])));
  }
  const auto hx = static_cast<std::size_t>(ex), hy = static_cast<std::size_t>(ey);
  Tensor<double> taps({1, 1, 2 * hy + 1, 2 * hx + 1});
  const double wgt = 1.0 / static_cast<double>(samples);
  for (std::size_t i = 0; i < samples; ++i) {
    const double px = dx[i] + static_cast<double>(hx);
    const double py = dy[i] + static_cast<double>(hy);
    const double fx = std::floor(px), fy = std::floor(py);
    const double ax = px - fx, ay = py - fy;
    const auto x0 = static_cast<std::size_t>(fx), y0 = static_cast<std::size_t>(fy);
    const double corner[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay,
                              ax * ay};
    const std::size_t cx[4] = {x0, x0 + 1, x0, x0 + 1};
    const std::size_t cy[4] = {y0, y0, y0 + 1, y0 + 1};
    for (int k = 0; k < 4; ++k)
      if (corner[k] > 0.0)
        taps.at(0, 0, cy[k], cx[k]) += wgt * corner[k];
  }
  const double total = sum_of(taps);
  for (auto &v : taps.values())
    v /= total;
  return {std::move(taps), length, angle_deg};
}

inline BlurKernel dirac_kernel() { return motion_kernel(1.0, 0.0); }

// Reflect-padded convolution with k, additive N(0, sigma^2) noise from a
// seeded stream, clamped to [0, 1].
template <class T>
Tensor<T> synthesize_blur(const Tensor<T> &sharp, const BlurKernel &k,
                          double noise_sigma, std::uint64_t seed) {
  if (!(noise_sigma >= 0.0))
    fail("synthesize_blur: noise sigma must be >= 0");
  const Shape s = sharp.shape();
  // True convolution: flip the taps, apply depthwise.
  Tensor<T> weight({s.c, 1, k.kh(), k.kw()});
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t y = 0; y < k.kh(); ++y)
      for (std::size_t x = 0; x < k.kw(); ++x)
        weight.at(c, 0, y, x) = static_cast<T>(
            k.taps.at(0, 0, k.kh() - 1 - y, k.kw() - 1 - x));
  Tensor<T> out = conv2d(sharp, weight, std::optional<Tensor<T>>{},
                         ConvOptions{1, Padding::SameReflect, s.c});
  if (noise_sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (auto &v : out.values())
      v = static_cast<T>(static_cast<double>(v) + noise(rng));
  }
  for (auto &v : out.values())
    v = std::clamp(v, T(0), T(1));
  return out;
}

// Piecewise-smooth synthetic scene: gradient background, hard-edged
// rectangles and ellipses, and a band of stripes. Values in [0, 1].
template <class T = float>
Tensor<T> procedural_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Tensor<T> img({1, 3, h, w});
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = u01(rng);
    c1[c] = u01(rng);
  }
  const double gdir = u01(rng) * 2.0 * std::numbers::pi;
  const double gx = std::cos(gdir), gy = std::sin(gdir);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double t =
          0.5 + 0.5 * (gx * (static_cast<double>(x) / w - 0.5) +
                       gy * (static_cast<double>(y) / h - 0.5));
      for (std::size_t c = 0; c < 3; ++c)
        img.at(0, c, y, x) = static_cast<T>(c0[c] + (c1[c] - c0[c]) * t);
    }

  const std::size_t shapes = 6 + static_cast<std::size_t>(u01(rng) * 6);
  for (std::size_t k = 0; k < shapes; ++k) {
    const bool ellipse = u01(rng) < 0.5;
    const double cx = u01(rng) * w, cy = u01(rng) * h;
    const double rx = (0.05 + 0.25 * u01(rng)) * w;
    const double ry = (0.05 + 0.25 * u01(rng)) * h;
    double col[3];
    for (double &v : col)
      v = u01(rng);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double ux = (static_cast<double>(x) + 0.5 - cx) / rx;
        const double uy = (static_cast<double>(y) + 0.5 - cy) / ry;
        const bool inside = ellipse ? ux * ux + uy * uy <= 1.0
                                    : std::abs(ux) <= 1.0 && std::abs(uy) <= 1.0;
        if (inside)
          for (std::size_t c = 0; c < 3; ++c)
            img.at(0, c, y, x) = static_cast<T>(col[c]);
      }
  }

  // Stripe band: a periodic pattern with random orientation and period.
  const double period = 3.0 + 5.0 * u01(rng);
  const double sdir = u01(rng) * std::numbers::pi;
  const double sx = std::cos(sdir), sy = std::sin(sdir);
  const double y_lo = u01(rng) * h * 0.6, y_hi = y_lo + h * (0.15 + 0.2 * u01(rng));
  const double amp = 0.2 + 0.3 * u01(rng);
  for (std::size_t y = 0; y < h; ++y) {
    if (y < y_lo || y > y_hi)
      continue;
    for (std::size_t x = 0; x < w; ++x) {
      const double phase = (sx * x + sy * y) / period;
      const double v = (phase - std::floor(phase)) < 0.5 ? amp : -amp;
      for (std::size_t c = 0; c < 3; ++c)
        img.at(0, c, y, x) = static_cast<T>(
            std::clamp(static_cast<double>(img.at(0, c, y, x)) + v, 0.0, 1.0));
    }
  }
  return img;
}

} // namespace mcms
