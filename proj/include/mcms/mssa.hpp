#pragma once

// Multi-scale stripe attention.
//
// For one C x H x W map I:
//   Î = conv1x1(I)                     (C/8 channels)
//   A = Re(Î)          C/8 x HW
//   P_s = Re(pool_s(Î)) C/8 x HW/s^2,  s in {2, 4, 8}
//   Sx_s = softmax(A^T P_s)            HW x HW/s^2
//   Sy_s = softmax(P_s^T A)            HW/s^2 x HW
//   F = softmax(sum_s Sx_s Sy_s)       HW x HW
//   O = Re(R F) + I,  R = Re(I)        C x HW
// Every softmax normalizes rows.

#include "mcms/ops.hpp"
#include "mcms/params.hpp"

#include <array>
#include <string>
#include <tuple>
#include <utility>

namespace mcms {

inline constexpr std::array<std::size_t, 3> kStripeScales = {2, 4, 8};

struct MssaLayout {
  std::size_t channels = 0;
  ConvLayer proj; // C -> C/8, 1x1
};

namespace detail {
inline void check_mssa_shape(const Shape &s, std::size_t channels) {
  if (s.c % 8 != 0)
    shape_fail("mssa: channel count " + std::to_string(s.c) +
               " is not divisible by 8");
  if (channels && s.c != channels)
    shape_fail("mssa: expected " + std::to_string(channels) +
               " channels, got " + std::to_string(s.c));
  if (s.h % 8 != 0 || s.w % 8 != 0)
    shape_fail("mssa: spatial dims " + std::to_string(s.h) + "x" +
               std::to_string(s.w) + " are not divisible by 8");
}
} // namespace detail

template <class T>
MssaLayout add_mssa(ParamStore<T> &store, const std::string &name,
                    std::size_t channels, std::mt19937_64 &rng,
                    Init init = Init::FanIn) {
  if (channels == 0 || channels % 8 != 0)
    shape_fail("mssa: channel count " + std::to_string(channels) +
               " is not divisible by 8");
  return {channels,
          add_conv(store, name + ".proj", channels, channels / 8, 1, rng, init)};
}

template <class T> struct MssaTrace {
  std::array<Var<T>, 4> descriptors; // A, B, C, D
  std::array<Var<T>, 3> sx, sy;
  Var<T> fused; // F
  Var<T> residual_source; // R
};

// Pooled descriptors A, B, C, D for a single-sample map.
template <class T>
std::array<Var<T>, 4> mssa_descriptors(const Var<T> &x, const MssaLayout &m,
                                       ParamView<T> p) {
  const Shape s = x.shape();
  if (s.n != 1)
    shape_fail("mssa: descriptors take one sample at a time");
  detail::check_mssa_shape(s, m.channels);
  const std::size_t rc = s.c / 8;
  const Var<T> proj = apply(m.proj, x, p);
  std::array<Var<T>, 4> d;
  d[0] = as_matrix(proj, rc, s.plane());
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t k = kStripeScales[i];
    d[i + 1] = as_matrix(avgpool2d(proj, k), rc, s.plane() / (k * k));
  }
  return d;
}

// (Sx, Sy) for one scale.
template <class T>
std::pair<Var<T>, Var<T>> stripe_pair(const Var<T> &a, const Var<T> &pooled) {
  const Var<T> at = transpose(a);
  return {softmax_rows(matmul(at, pooled)),
          softmax_rows(matmul(transpose(pooled), a))};
}

// Attention term Re(R F) for one sample (no residual).
template <class T>
Var<T> mssa_attention_single(const Var<T> &x, const MssaLayout &m,
                             ParamView<T> p, MssaTrace<T> *trace = nullptr) {
  const Shape s = x.shape();
  const auto d = mssa_descriptors(x, m, p);
  Var<T> sum_of_pairs;
  std::array<Var<T>, 3> sx, sy;
  for (std::size_t i = 0; i < 3; ++i) {
    std::tie(sx[i], sy[i]) = stripe_pair(d[0], d[i + 1]);
    const Var<T> prod = matmul(sx[i], sy[i]);
    sum_of_pairs = i == 0 ? prod : add(sum_of_pairs, prod);
  }
  const Var<T> f = softmax_rows(sum_of_pairs);
  const Var<T> r = as_matrix(x, s.c, s.plane());
  const Var<T> att = reshape(matmul(r, f), s);
  if (trace)
    *trace = {d, sx, sy, f, r};
  return att;
}

// Attention term for a batch, looping over samples.
template <class T>
Var<T> mssa_attention(const Var<T> &x, const MssaLayout &m, ParamView<T> p) {
  detail::check_mssa_shape(x.shape(), m.channels);
  if (x.shape().n == 1)
    return mssa_attention_single(x, m, p);
  std::vector<Var<T>> outs;
  for (std::size_t n = 0; n < x.shape().n; ++n)
    outs.push_back(mssa_attention_single(select_batch(x, n), m, p));
  return stack_batch(outs);
}

template <class T>
Var<T> mssa_apply(const Var<T> &x, const MssaLayout &m, ParamView<T> p) {
  return add(mssa_attention(x, m, p), x);
}

// Dense element count held by one sample's forward: R, F and every stripe
// matrix (both orientations at each scale).
inline std::size_t mssa_dense_elements(std::size_t c, std::size_t h,
                                       std::size_t w) {
  const std::size_t hw = h * w;
  std::size_t n = c * hw + hw * hw;
  for (std::size_t s : kStripeScales)
    n += 2 * hw * (hw / (s * s));
  return n;
}

// ---------------------------------------------------------------- values

template <class T> struct MssaParams {
  ParamStore<T> store;
  MssaLayout layout;
};

template <class T>
MssaParams<T> make_mssa_params(std::size_t channels, std::uint64_t seed,
                               Init init = Init::FanIn) {
  MssaParams<T> p;
  std::mt19937_64 rng(seed);
  p.layout = add_mssa(p.store, "mssa", channels, rng, init);
  return p;
}

template <class T> struct StripeWeights {
  Matrix<T> sx; // HW x HW/s^2
  Matrix<T> sy; // HW/s^2 x HW
  std::size_t scale = 0;
};

template <class T>
std::array<Matrix<T>, 4> descriptors(const Tensor<T> &x, const MssaParams<T> &p) {
  Tape<T> tape(false);
  const auto vars = p.store.bind(tape);
  const auto d =
      mssa_descriptors(Tape<T>::constant(x), p.layout, ParamView<T>(vars));
  std::array<Matrix<T>, 4> out;
  for (std::size_t i = 0; i < 4; ++i)
    out[i] = Matrix<T>::from_tensor(d[i].value());
  return out;
}

template <class T>
StripeWeights<T> stripe_weights(const Matrix<T> &a, const Matrix<T> &pooled,
                                 std::size_t scale) {
  if (a.rows() != pooled.rows())
    shape_fail("stripe_weights: descriptor row counts differ");
  if (scale == 0 || pooled.cols() * scale * scale != a.cols())
    shape_fail("stripe_weights: pooled descriptor does not match scale " +
               std::to_string(scale));
  const auto [sx, sy] = stripe_pair(Tape<T>::constant(a.as_tensor()),
                                    Tape<T>::constant(pooled.as_tensor()));
  return {Matrix<T>::from_tensor(sx.value()), Matrix<T>::from_tensor(sy.value()),
          scale};
}

template <class T> struct MssaResult {
  Tensor<T> output;
  Matrix<T> fused;                       // F of the last sample
  std::array<StripeWeights<T>, 3> stripes; // of the last sample
  std::size_t dense_elements = 0;          // per sample
};

template <class T>
MssaResult<T> mssa_forward_traced(const Tensor<T> &x, const MssaParams<T> &p) {
  detail::check_mssa_shape(x.shape(), p.layout.channels);
  Tape<T> tape(false);
  const auto vars = p.store.bind(tape);
  const Var<T> in = Tape<T>::constant(x);
  MssaResult<T> res;
  std::vector<Var<T>> outs;
  for (std::size_t n = 0; n < x.shape().n; ++n) {
    MssaTrace<T> tr;
    const Var<T> sample = select_batch(in, n);
    outs.push_back(add(mssa_attention_single(sample, p.layout,
                                             ParamView<T>(vars), &tr),
                       sample));
    res.fused = Matrix<T>::from_tensor(tr.fused.value());
    res.dense_elements = tr.residual_source.value().size() + tr.fused.value().size();
    for (std::size_t i = 0; i < 3; ++i) {
      res.stripes[i] = {Matrix<T>::from_tensor(tr.sx[i].value()),
                        Matrix<T>::from_tensor(tr.sy[i].value()),
                        kStripeScales[i]};
      res.dense_elements += tr.sx[i].value().size() + tr.sy[i].value().size();
    }
  }
  res.output = stack_batch(outs).value();
  return res;
}

template <class T>
Tensor<T> mssa_forward(const Tensor<T> &x, const MssaParams<T> &p) {
  Tape<T> tape(false);
  const auto vars = p.store.bind(tape);
  return mssa_apply(Tape<T>::constant(x), p.layout, ParamView<T>(vars)).value();
}

} // namespace mcms
