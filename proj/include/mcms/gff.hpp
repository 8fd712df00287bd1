#pragma once

// Grouped feature fusion.
//
//   M          = conv3x3(I1 + I2)
//   C1..C4     = chunk(M, 4)
//   G1 = conv1x1(C1), G2 = conv3x3(G1 + C2),
//   G3 = conv5x5(G2 + C3), G4 = conv7x7(G3 + C4)
//   out        = concat(G1, G2, G3, G4) + M
//
// The operator only sees I1 + I2, so it is symmetric in its inputs.

#include "mcms/params.hpp"

#include <array>
#include <string>

namespace mcms {

inline constexpr std::array<std::size_t, 4> kGffKernels = {1, 3, 5, 7};

struct GffLayout {
  std::size_t channels = 0;
  ConvLayer fuse;                 // C -> C, 3x3
  std::array<ConvLayer, 4> group; // C/4 -> C/4, kernels 1/3/5/7
};

template <class T>
GffLayout add_gff(ParamStore<T> &store, const std::string &name,
                  std::size_t channels, std::mt19937_64 &rng,
                  Init init = Init::FanIn) {
  if (channels == 0 || channels % 4 != 0)
    shape_fail("gff: channel count " + std::to_string(channels) +
               " is not divisible by 4");
  GffLayout g;
  g.channels = channels;
  g.fuse = add_conv(store, name + ".fuse", channels, channels, 3, rng, init);
  for (std::size_t i = 0; i < 4; ++i)
    g.group[i] = add_conv(store, name + ".group" + std::to_string(i),
                          channels / 4, channels / 4, kGffKernels[i], rng, init);
  return g;
}

template <class T>
Var<T> gff_apply(const Var<T> &i1, const Var<T> &i2, const GffLayout &g,
                 ParamView<T> p) {
  if (i1.shape() != i2.shape())
    shape_fail("gff: input shapes differ (" + i1.shape().str() + " vs " +
               i2.shape().str() + ")");
  if (i1.shape().c != g.channels)
    shape_fail("gff: expected " + std::to_string(g.channels) +
               " channels, got " + std::to_string(i1.shape().c));
  const Var<T> fused = apply(g.fuse, add(i1, i2), p);
  const std::vector<Var<T>> parts = chunk(fused, 4);
  std::vector<Var<T>> outs;
  outs.reserve(4);
  outs.push_back(apply(g.group[0], parts[0], p));
  for (std::size_t i = 1; i < 4; ++i)
    outs.push_back(apply(g.group[i], add(outs.back(), parts[i]), p));
  return add(concat(outs), fused);
}

// Standalone parameter set for the operator.
template <class T> struct GffParams {
  ParamStore<T> store;
  GffLayout layout;
};

template <class T>
GffParams<T> make_gff_params(std::size_t channels, std::uint64_t seed,
                             Init init = Init::FanIn) {
  GffParams<T> p;
  std::mt19937_64 rng(seed);
  p.layout = add_gff(p.store, "gff", channels, rng, init);
  return p;
}

template <class T>
Tensor<T> gff_forward(const Tensor<T> &i1, const Tensor<T> &i2,
                      const GffParams<T> &p) {
  Tape<T> tape(false);
  const auto vars = p.store.bind(tape);
  return gff_apply(Tape<T>::constant(i1), Tape<T>::constant(i2), p.layout,
                   ParamView<T>(vars))
      .value();
}

} // namespace mcms
