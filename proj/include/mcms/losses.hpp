#pragma once

#include "mcms/freq.hpp"
#include "mcms/net.hpp"

namespace mcms {

// Weight of the frequency-domain term inside the output loss.
inline constexpr double kMsfrWeight = 0.1;

template <class T> Var<T> l1_loss(const Var<T> &x, const Var<T> &y) {
  if (x.shape() != y.shape())
    shape_fail("l1_loss: shape mismatch " + x.shape().str() + " vs " +
               y.shape().str());
  return mean(abs(sub(x, y)));
}

// Mean absolute difference of the DFTs, real and imaginary planes stacked:
// (sum |Re D| + sum |Im D|) / 2N with D = fft2(x - y).
//
// Gradient: Re/Im of a real-input DFT are C d and -S d with C, S symmetric,
// so d/dd of the sum is Re(fft2(sign Re D)) + Im(fft2(sign Im D)).
template <class T> Var<T> msfr_loss(const Var<T> &x, const Var<T> &y) {
  if (x.shape() != y.shape())
    shape_fail("msfr_loss: shape mismatch " + x.shape().str() + " vs " +
               y.shape().str());
  const Var<T> d = sub(x, y);
  const ComplexSpectrum<T> spec = fft2(d.value());
  const std::size_t n = d.value().size();
  long double acc = 0.0L;
  for (std::size_t i = 0; i < n; ++i)
    acc += std::abs(static_cast<long double>(spec.real[i])) +
           std::abs(static_cast<long double>(spec.imag[i]));
  const double norm = 1.0 / (2.0 * static_cast<double>(n));
  Tensor<T> out({1, 1, 1, 1}, static_cast<T>(static_cast<double>(acc) * norm));
  const auto sign = [](T v) { return v > T(0) ? T(1) : v < T(0) ? T(-1) : T(0); };
  auto sre = std::make_shared<Tensor<T>>(d.shape());
  auto sim = std::make_shared<Tensor<T>>(d.shape());
  for (std::size_t i = 0; i < n; ++i) {
    (*sre)[i] = sign(spec.real[i]);
    (*sim)[i] = sign(spec.imag[i]);
  }
  return Tape<T>::record({&d}, std::move(out),
                         [d, sre, sim, norm](const Tensor<T> &g, Tape<T> &t) {
                           const auto a = fft2(*sre);
                           const auto b = fft2(*sim);
                           Tensor<T> &s = t.grad_slot(d.id());
                           const double k = norm * static_cast<double>(g[0]);
                           for (std::size_t i = 0; i < s.size(); ++i)
                             s[i] += static_cast<T>(
                                 k * (static_cast<double>(a.real[i]) +
                                      static_cast<double>(b.imag[i])));
                         });
}

template <class T> double l1_loss(const Tensor<T> &x, const Tensor<T> &y) {
  return static_cast<double>(
      l1_loss(Tape<T>::constant(x), Tape<T>::constant(y)).value()[0]);
}

template <class T> double msfr_loss(const Tensor<T> &x, const Tensor<T> &y) {
  return static_cast<double>(
      msfr_loss(Tape<T>::constant(x), Tape<T>::constant(y)).value()[0]);
}

struct LossBreakdown {
  double l_hf = 0.0;
  double l_lf = 0.0;
  double l_o = 0.0;
  double l_msfr = 0.0; // unweighted frequency distance inside l_o
  double l_total = 0.0;

  LossBreakdown &operator+=(const LossBreakdown &o) {
    l_hf += o.l_hf;
    l_lf += o.l_lf;
    l_o += o.l_o;
    l_msfr += o.l_msfr;
    l_total += o.l_total;
    return *this;
  }
  LossBreakdown scaled(double k) const {
    return {l_hf * k, l_lf * k, l_o * k, l_msfr * k, l_total * k};
  }
};

template <class T> struct LossTerms {
  Var<T> l_hf, l_lf, l_o, l_msfr, l_total;

  LossBreakdown values() const {
    const auto v = [](const Var<T> &x) { return static_cast<double>(x.value()[0]); };
    return {v(l_hf), v(l_lf), v(l_o), v(l_msfr), v(l_total)};
  }
};

// L_HF = l1(hf, y_hf), L_LF = l1(lf, y_lf),
// L_O = l1(restored, y) + 0.1 msfr(restored, y), L_T = L_HF + L_LF + L_O.
template <class T>
LossTerms<T> total_loss(const McmsOutput<T> &out, const Var<T> &target,
                        const Var<T> &target_hf, const Var<T> &target_lf) {
  LossTerms<T> t;
  t.l_hf = l1_loss(out.restored_hf, target_hf);
  t.l_lf = l1_loss(out.restored_lf, target_lf);
  t.l_msfr = msfr_loss(out.restored, target);
  t.l_o = add(l1_loss(out.restored, target),
              scale(t.l_msfr, static_cast<T>(kMsfrWeight)));
  t.l_total = add(add(t.l_hf, t.l_lf), t.l_o);
  return t;
}

// Value form: splits the target with mask first.
template <class T>
LossBreakdown total_loss(const McmsImages<T> &out, const Tensor<T> &target,
                         const FrequencyMask &mask) {
  const auto split = split_hf_lf(target, mask);
  const McmsOutput<T> o{Tape<T>::constant(out.restored),
                        Tape<T>::constant(out.restored_hf),
                        Tape<T>::constant(out.restored_lf)};
  return total_loss(o, Tape<T>::constant(target), Tape<T>::constant(split.hf),
                    Tape<T>::constant(split.lf))
      .values();
}

} // namespace mcms
