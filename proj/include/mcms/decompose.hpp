#pragma once

// 8-bit PNG export of the HF/LF split. Both components are offset-encoded as
// v * 0.5 + 0.5 because HF is signed; decode with 2 p - 1. LF is quantized
// first and HF is taken from the quantized LF, so the decoded pair sums back
// to the input within one 8-bit step.

#include "mcms/freq.hpp"
#include "mcms/image_io.hpp"

#include <filesystem>

namespace mcms {

template <class T> Tensor<T> offset_encode(const Tensor<T> &x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = x[i] * T(0.5) + T(0.5);
  return y;
}

template <class T> Tensor<T> offset_decode(const Tensor<T> &y) {
  Tensor<T> x(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i)
    x[i] = y[i] * T(2) - T(1);
  return x;
}

// Round trip through the 8-bit code used by save_png.
template <class T> Tensor<T> quantize8(const Tensor<T> &x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = static_cast<T>(to_byte(static_cast<double>(x[i]))) / T(255);
  return y;
}

struct DecomposeOutput {
  std::filesystem::path hf, lf;
};

inline DecomposeOutput decompose_png(const std::filesystem::path &in,
                                     double tau,
                                     const std::filesystem::path &out_dir) {
  const Tensor<double> x = load_png<double>(in);
  const auto split = split_hf_lf(x, make_frequency_mask(x.h(), x.w(), tau));
  const Tensor<double> lf_code = quantize8(offset_encode(split.lf));
  const Tensor<double> lf_q = offset_decode(lf_code);
  Tensor<double> hf = x;
  for (std::size_t i = 0; i < hf.size(); ++i)
    hf[i] -= lf_q[i];
  const std::string stem = in.stem().string();
  std::filesystem::create_directories(out_dir);
  DecomposeOutput out{out_dir / (stem + "_hf.png"), out_dir / (stem + "_lf.png")};
  save_png(out.lf, lf_code);
  save_png(out.hf, offset_encode(hf));
  return out;
}

} // namespace mcms
