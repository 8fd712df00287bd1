#pragma once

#include "mcms/autodiff.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace mcms {

using ParamId = std::size_t;

// Named, ordered parameter tensors. Order is insertion order and is part of
// the weight-file contract.
template <class T> class ParamStore {
public:
  ParamId add(std::string name, Tensor<T> value) {
    if (index_.count(name))
      fail("duplicate parameter name '" + name + "'");
    index_.emplace(name, values_.size());
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.size() - 1;
  }

  std::size_t size() const { return values_.size(); }
  Tensor<T> &operator[](ParamId id) { return values_[id]; }
  const Tensor<T> &operator[](ParamId id) const { return values_[id]; }
  const std::string &name(ParamId id) const { return names_[id]; }
  const std::vector<std::string> &names() const { return names_; }
  std::vector<Tensor<T>> &values() { return values_; }
  const std::vector<Tensor<T>> &values() const { return values_; }

  ParamId id_of(const std::string &name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      fail("unknown parameter '" + name + "'");
    return it->second;
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto &v : values_)
      n += v.size();
    return n;
  }

  // One tape leaf per parameter, indexed by ParamId.
  std::vector<Var<T>> bind(Tape<T> &tape) const {
    std::vector<Var<T>> vars;
    vars.reserve(values_.size());
    for (const auto &v : values_)
      vars.push_back(tape.leaf(v));
    return vars;
  }

  template <class U> ParamStore<U> cast() const {
    ParamStore<U> out;
    for (std::size_t i = 0; i < values_.size(); ++i)
      out.add(names_[i], values_[i].template cast<U>());
    return out;
  }

private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
  std::unordered_map<std::string, ParamId> index_;
};

template <class T> using ParamView = std::span<const Var<T>>;

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for a (out, in, kh, kw) weight.
template <class T>
Tensor<T> fan_in_uniform(const Shape &s, std::mt19937_64 &rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(s.c * s.h * s.w));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(s);
  for (auto &v : t.values())
    v = static_cast<T>(dist(rng));
  return t;
}

// Identity kernel: 1 at the center tap of the matching input channel.
template <class T> Tensor<T> dirac_weight(const Shape &s, std::size_t groups = 1) {
  Tensor<T> t(s);
  const std::size_t ocg = s.n / groups;
  for (std::size_t oc = 0; oc < s.n; ++oc) {
    const std::size_t ic = (oc % ocg) % s.c;
    if (ocg == s.c || groups > 1)
      t.at(oc, ic, s.h / 2, s.w / 2) = T(1);
  }
  return t;
}

template <class T> Tensor<T> bias_tensor(std::size_t channels) {
  return Tensor<T>({1, channels, 1, 1});
}

// A conv layer's parameter pair inside a ParamStore.
struct ConvLayer {
  ParamId weight;
  ParamId bias;
  ConvOptions options;
};

enum class Init { FanIn, Zero, Dirac };

template <class T>
ConvLayer add_conv(ParamStore<T> &store, const std::string &name,
                   std::size_t in_c, std::size_t out_c, std::size_t k,
                   std::mt19937_64 &rng, Init init = Init::FanIn,
                   ConvOptions opt = {}) {
  const Shape ws{out_c, in_c / opt.groups, k, k};
  Tensor<T> w = init == Init::FanIn  ? fan_in_uniform<T>(ws, rng)
                : init == Init::Dirac ? dirac_weight<T>(ws, opt.groups)
                                      : Tensor<T>(ws);
  const ParamId wid = store.add(name + ".weight", std::move(w));
  const ParamId bid = store.add(name + ".bias", bias_tensor<T>(out_c));
  return {wid, bid, opt};
}

template <class T>
Var<T> apply(const ConvLayer &layer, const Var<T> &x, ParamView<T> p) {
  return conv2d(x, p[layer.weight], &p[layer.bias], layer.options);
}

} // namespace mcms
