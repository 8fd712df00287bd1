#pragma once

// Invariant and gradient-check suites shared by the CLI and the tests.

#include "mcms/freq.hpp"
#include "mcms/gff.hpp"
#include "mcms/losses.hpp"
#include "mcms/mssa.hpp"
#include "mcms/net.hpp"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace mcms {

struct CheckResult {
  std::string name;
  bool pass = false;
  double value = 0.0;     // measured error (or 0/1 for boolean checks)
  double tolerance = 0.0;
  std::string detail;
};

namespace detail {
inline Tensor<double> random_tensor(const Shape &s, std::mt19937_64 &rng,
                                    double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(s);
  for (auto &v : t.values())
    v = u(rng);
  return t;
}

// Values with |v| in [0.2, 1], random sign: keeps abs/L1 away from the kink.
inline Tensor<double> signed_away_from_zero(const Shape &s, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> u(0.2, 1.0);
  Tensor<double> t(s);
  for (auto &v : t.values())
    v = (rng() & 1u) ? u(rng) : -u(rng);
  return t;
}

// sum(r * y) with a fixed random r: a smooth scalar probe of a tensor op.
inline Var<double> probe(const Var<double> &y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, Tape<double>::constant(random_tensor(y.shape(), rng))));
}
} // namespace detail

struct OpGradCase {
  std::string name;
  // Builds the inputs for one trial.
  std::function<std::vector<Tensor<double>>(std::mt19937_64 &)> inputs;
  ScalarFn f;
};

// One case per differentiable operator (and the composite layers).
inline std::vector<OpGradCase> op_grad_cases() {
  using detail::probe;
  using detail::random_tensor;
  using V = Var<double>;
  using Vs = std::span<const V>;
  using R = std::mt19937_64;
  std::vector<OpGradCase> cs;
  const auto conv_case = [&](std::string name, Shape x, Shape w,
                             ConvOptions opt) {
    cs.push_back({std::move(name),
                  [x, w](R &r) {
                    return std::vector<Tensor<double>>{
                        random_tensor(x, r), random_tensor(w, r),
                        random_tensor({1, w.n, 1, 1}, r)};
                  },
                  [opt](Tape<double> &, Vs v) {
                    return probe(conv2d(v[0], v[1], &v[2], opt), 11);
                  }});
  };
  conv_case("conv2d_3x3_same", {2, 3, 6, 6}, {4, 3, 3, 3}, {});
  conv_case("conv2d_1x1", {1, 4, 5, 5}, {3, 4, 1, 1}, {});
  conv_case("conv2d_5x5_valid", {1, 2, 7, 7}, {2, 2, 5, 5},
            {1, Padding::Valid, 1});
  conv_case("conv2d_stride2", {1, 2, 8, 8}, {3, 2, 3, 3},
            {2, Padding::SameReflect, 1});
  conv_case("conv2d_depthwise", {1, 4, 6, 6}, {4, 1, 3, 3},
            {1, Padding::SameReflect, 4});
  conv_case("conv2d_7x7_same", {1, 1, 8, 8}, {1, 1, 7, 7}, {});

  const auto unary = [&](std::string name, Shape s,
                         std::function<V(const V &)> op) {
    cs.push_back({std::move(name),
                  [s](R &r) { return std::vector<Tensor<double>>{random_tensor(s, r)}; },
                  [op](Tape<double> &, Vs v) { return probe(op(v[0]), 12); }});
  };
  unary("avgpool2d", {1, 2, 8, 8}, [](const V &x) { return avgpool2d(x, 4); });
  unary("upsample2x", {1, 2, 3, 5}, [](const V &x) { return upsample2x(x); });
  unary("activation", {1, 2, 4, 4}, [](const V &x) {
    return activation(scale(x, 3.0));
  });
  unary("pad_reflect", {1, 1, 4, 5}, [](const V &x) { return pad_reflect(x, 3, 2); });
  unary("reshape_chunk_concat", {1, 8, 2, 2}, [](const V &x) {
    auto parts = chunk(x, 4);
    for (std::size_t i = 0; i < parts.size(); ++i)
      parts[i] = scale(parts[i], static_cast<double>(i + 1));
    return reshape(concat(parts), Shape{1, 1, 4, 8});
  });
  unary("select_stack_batch", {3, 2, 2, 2}, [](const V &x) {
    return stack_batch(std::vector<V>{select_batch(x, 2), select_batch(x, 0)});
  });
  unary("transpose", {1, 1, 3, 5}, [](const V &x) { return transpose(x); });
  unary("softmax_rows", {1, 1, 4, 6}, [](const V &x) {
    return softmax_rows(scale(x, 2.0));
  });
  unary("mean_square", {1, 1, 3, 3}, [](const V &x) { return mean(mul(x, x)); });
  cs.push_back({"abs",
                [](R &r) {
                  return std::vector<Tensor<double>>{
                      detail::signed_away_from_zero({1, 2, 3, 3}, r)};
                },
                [](Tape<double> &, Vs v) { return probe(abs(v[0]), 13); }});
  cs.push_back({"add_sub_scale",
                [](R &r) {
                  return std::vector<Tensor<double>>{random_tensor({1, 2, 3, 3}, r),
                                                     random_tensor({1, 2, 3, 3}, r)};
                },
                [](Tape<double> &, Vs v) {
                  return probe(sub(add(v[0], scale(v[1], 2.5)), mul(v[0], v[1])), 14);
                }});
  cs.push_back({"channel_norm",
                [](R &r) {
                  return std::vector<Tensor<double>>{random_tensor({2, 4, 3, 3}, r),
                                                     random_tensor({1, 4, 1, 1}, r),
                                                     random_tensor({1, 4, 1, 1}, r)};
                },
                [](Tape<double> &, Vs v) {
                  return probe(channel_norm(v[0], v[1], v[2]), 15);
                }});
  cs.push_back({"matmul",
                [](R &r) {
                  return std::vector<Tensor<double>>{random_tensor({1, 1, 3, 4}, r),
                                                     random_tensor({1, 1, 4, 2}, r)};
                },
                [](Tape<double> &, Vs v) { return probe(matmul(v[0], v[1]), 16); }});
  cs.push_back({"l1_loss",
                [](R &r) {
                  const auto d = detail::signed_away_from_zero({1, 3, 4, 4}, r);
                  auto x = random_tensor({1, 3, 4, 4}, r);
                  auto y = x;
                  for (std::size_t i = 0; i < y.size(); ++i)
                    y[i] -= d[i];
                  return std::vector<Tensor<double>>{x, y};
                },
                [](Tape<double> &, Vs v) { return l1_loss(v[0], v[1]); }});
  cs.push_back({"msfr_loss",
                [](R &r) {
                  return std::vector<Tensor<double>>{random_tensor({1, 3, 5, 7}, r),
                                                     random_tensor({1, 3, 5, 7}, r)};
                },
                [](Tape<double> &, Vs v) { return msfr_loss(v[0], v[1]); }});
  return cs;
}

// Parameters followed by extra tensors, all checked.
struct LayerGradCase {
  std::string name;
  std::function<ParamStore<double>(std::uint64_t seed)> params;
  std::function<std::vector<Tensor<double>>(std::mt19937_64 &)> extra;
  std::function<Var<double>(ParamView<double>, std::span<const Var<double>>)> f;
};

inline ScalarFn layer_fn(const LayerGradCase &c, std::size_t param_count) {
  return [&c, param_count](Tape<double> &, std::span<const Var<double>> v) {
    return c.f(v.first(param_count), v.subspan(param_count));
  };
}

inline std::vector<LayerGradCase> layer_grad_cases() {
  using detail::probe;
  using detail::random_tensor;
  using Vs = std::span<const Var<double>>;
  std::vector<LayerGradCase> cs;
  // Layouts only depend on the channel count, so one copy serves every seed.
  static const BlockLayout block = make_block_params<double>(8, 0).layout;
  static const GffLayout gff = make_gff_params<double>(8, 0).layout;
  static const MssaLayout mssa = make_mssa_params<double>(8, 0).layout;
  cs.push_back({"block",
                [](std::uint64_t s) {
                  auto p = make_block_params<double>(8, s).store;
                  std::mt19937_64 r(s + 1);
                  for (auto &t : p.values())
                    t = random_tensor(t.shape(), r, -0.5, 0.5);
                  return p;
                },
                [](std::mt19937_64 &r) {
                  return std::vector<Tensor<double>>{random_tensor({1, 8, 4, 4}, r)};
                },
                [](ParamView<double> p, Vs x) {
                  return probe(block_apply(x[0], block, p), 21);
                }});
  cs.push_back({"gff",
                [](std::uint64_t s) { return make_gff_params<double>(8, s).store; },
                [](std::mt19937_64 &r) {
                  return std::vector<Tensor<double>>{random_tensor({1, 8, 6, 6}, r),
                                                     random_tensor({1, 8, 6, 6}, r)};
                },
                [](ParamView<double> p, Vs x) {
                  return probe(gff_apply(x[0], x[1], gff, p), 22);
                }});
  cs.push_back({"mssa",
                [](std::uint64_t s) {
                  auto p = make_mssa_params<double>(8, s).store;
                  std::mt19937_64 r(s + 2);
                  for (auto &t : p.values())
                    t = random_tensor(t.shape(), r);
                  return p;
                },
                [](std::mt19937_64 &r) {
                  return std::vector<Tensor<double>>{random_tensor({1, 8, 8, 8}, r)};
                },
                [](ParamView<double> p, Vs x) {
                  return probe(mssa_apply(x[0], mssa, p), 23);
                }});
  return cs;
}

// Worst report over `trials` random inputs (all coordinates checked).
inline GradCheckReport check_op_case(const OpGradCase &c, std::size_t trials,
                                     std::uint64_t seed, double eps = 1e-5) {
  GradCheckReport worst;
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const auto r = grad_check_report(c.f, c.inputs(rng), eps);
    if (t == 0 || r.max_relative_error > worst.max_relative_error)
      worst = r;
  }
  return worst;
}

inline GradCheckReport check_layer_case(const LayerGradCase &c,
                                        std::size_t trials, std::uint64_t seed,
                                        double eps = 1e-5) {
  GradCheckReport worst;
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const ParamStore<double> store = c.params(seed + t);
    std::vector<Tensor<double>> inputs = store.values();
    const std::size_t np = inputs.size();
    for (auto &x : c.extra(rng))
      inputs.push_back(std::move(x));
    const auto r = grad_check_report(layer_fn(c, np), std::move(inputs), eps);
    if (t == 0 || r.max_relative_error > worst.max_relative_error)
      worst = r;
  }
  return worst;
}

// ---------------------------------------------------------------- full model

// A model whose heads carry small random weights and a constant 0.3 bias,
// paired with target = input. Every L1 residual then sits near 0.3, well
// clear of the |.| kink, so central differences see a smooth function.
struct ModelGradSetup {
  McmsModel<double> model;
  Tensor<double> input;
  Tensor<double> target;
  FrequencyMask mask;
};

// Evaluation point for the whole-model check. At initialization the heads are
// zero (no gradient reaches the trunk) and the stripe-attention logits are
// O(1/HW), leaving F nearly uniform with gradients near 1e-9 that central
// differences cannot resolve. Random heads and wider attention projections
// give every parameter a measurable derivative.
inline ModelGradSetup model_grad_setup(const ModelConfig &cfg, std::size_t size,
                                       std::uint64_t seed) {
  ModelGradSetup s{init_params<double>(cfg, seed), {}, {},
                   make_frequency_mask(size, size, cfg.freq_tau)};
  std::mt19937_64 rng(seed + 17);
  auto &p = s.model.params;
  for (const ConvLayer *h : {&s.model.hf.head, &s.model.lf.head, &s.model.stage3.head}) {
    p[h->weight] = detail::random_tensor(p[h->weight].shape(), rng, -0.05, 0.05);
    p[h->bias].fill(0.3);
  }
  for (const auto *a : {&s.model.hf.attention, &s.model.lf.attention,
                        &s.model.stage3.attention})
    if (*a) {
      p[(*a)->proj.weight] = detail::random_tensor(p[(*a)->proj.weight].shape(), rng, -2.0, 2.0);
      p[(*a)->proj.bias] = detail::random_tensor(p[(*a)->proj.bias].shape(), rng, -2.0, 2.0);
    }
  s.input = detail::random_tensor({1, 3, size, size}, rng, 0.0, 1.0);
  s.target = detail::random_tensor({1, 3, size, size}, rng, 0.0, 1.0);
  return s;
}

inline Var<double> model_loss(const ModelGradSetup &s, ParamView<double> p) {
  const auto in = split_hf_lf(s.input, s.mask);
  const auto tg = split_hf_lf(s.target, s.mask);
  const auto out = mcms_apply(Tape<double>::constant(s.input),
                              Tape<double>::constant(in.hf),
                              Tape<double>::constant(in.lf), s.model, p);
  return total_loss(out, Tape<double>::constant(s.target),
                    Tape<double>::constant(tg.hf), Tape<double>::constant(tg.lf))
      .l_total;
}

// Gradient of L_T with respect to every parameter tensor, sampling
// `coords_per_tensor` coordinates from each.
inline GradCheckReport model_grad_check(const ModelConfig &cfg, std::size_t size,
                                        std::uint64_t seed,
                                        std::size_t coords_per_tensor,
                                        double eps = 1e-5) {
  const ModelGradSetup s = model_grad_setup(cfg, size, seed);
  ScalarFn f = [&](Tape<double> &, std::span<const Var<double>> v) {
    return model_loss(s, v);
  };
  GradCheckOptions opt;
  opt.max_coords_per_input = coords_per_tensor;
  opt.seed = seed;
  return grad_check_report(f, s.model.params.values(), eps, opt);
}

// ---------------------------------------------------------------- self-test

inline CheckResult check(std::string name, double value, double tol,
                         std::string detail = {}) {
  return {std::move(name), value < tol, value, tol, std::move(detail)};
}

// The invariant groups behind `selftest`. `with_model` adds the full-model
// gradient check, the slowest group.
inline std::vector<CheckResult> run_selftest(std::uint64_t seed, bool with_model) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(seed);

  { // DCT round trip and Parseval
    double err = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      const std::size_t h = 1 + rng() % 24, w = 1 + rng() % 24;
      const auto x = detail::random_tensor({1, 3, h, w}, rng);
      const auto back = idct2(dct2(x));
      err = std::max(err, max_abs_diff(x, back));
      const double e0 = squared_norm(x), e1 = squared_norm(dct2(x).coefficients);
      err = std::max(err, std::abs(e0 - e1) / e0);
      const auto split = split_hf_lf(x, make_frequency_mask(h, w, 0.1));
      Tensor<double> sum = split.hf;
      for (std::size_t k = 0; k < sum.size(); ++k)
        sum[k] += split.lf[k];
      err = std::max(err, max_abs_diff(sum, x));
    }
    out.push_back(check("dct_round_trip", err, 1e-9));
  }
  { // softmax rows sum to one and ignore row shifts
    double err = 0.0;
    const auto m = detail::random_tensor({1, 1, 7, 9}, rng, -20.0, 20.0);
    const auto y = softmax(Matrix<double>::from_tensor(m));
    auto shifted = m;
    for (std::size_t r = 0; r < 7; ++r)
      for (std::size_t c = 0; c < 9; ++c)
        shifted.at(0, 0, r, c) += 3.0 * static_cast<double>(r);
    const auto ys = softmax(Matrix<double>::from_tensor(shifted));
    for (std::size_t r = 0; r < 7; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 9; ++c) {
        s += y(r, c);
        err = std::max(err, std::abs(y(r, c) - ys(r, c)));
      }
      err = std::max(err, std::abs(s - 1.0));
    }
    out.push_back(check("softmax_rows", err, 1e-9));
  }
  { // GFF with Dirac weights is a prefix sum over the chunks
    const auto p = make_gff_params<double>(8, seed, Init::Dirac);
    const auto a = detail::random_tensor({2, 8, 6, 6}, rng);
    const auto b = detail::random_tensor({2, 8, 6, 6}, rng);
    const auto y = gff_forward(a, b, p);
    double err = max_abs_diff(y, gff_forward(b, a, p));
    Tensor<double> expect(a.shape());
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 36; ++i)
        for (std::size_t g = 0; g < 4; ++g)
          for (std::size_t c = 0; c < 2; ++c) {
            double acc = 0.0;
            for (std::size_t q = 0; q <= g; ++q)
              acc += a.plane(n, q * 2 + c)[i] + b.plane(n, q * 2 + c)[i];
            expect.plane(n, g * 2 + c)[i] =
                acc + a.plane(n, g * 2 + c)[i] + b.plane(n, g * 2 + c)[i];
          }
    err = std::max(err, max_abs_diff(y, expect));
    out.push_back(check("gff_dirac_oracle", err, 1e-12));
  }
  { // MSSA fixes zero and doubles channelwise constants
    auto p = make_mssa_params<double>(16, seed);
    for (auto &t : p.store.values())
      t = detail::random_tensor(t.shape(), rng);
    const auto zero = mssa_forward(Tensor<double>({1, 16, 8, 8}), p);
    double err = max_abs_diff(zero, Tensor<double>({1, 16, 8, 8}));
    Tensor<double> c({1, 16, 8, 8});
    for (std::size_t ch = 0; ch < 16; ++ch)
      std::fill_n(c.plane(0, ch), 64, 0.1 * static_cast<double>(ch) - 0.7);
    const auto y = mssa_forward(c, p);
    for (std::size_t i = 0; i < c.size(); ++i)
      err = std::max(err, std::abs(y[i] - 2.0 * c[i]));
    out.push_back(check("mssa_fixed_points", err, 1e-9));
  }
  { // gradient checks, operators then layers
    double worst = 0.0;
    std::string where;
    for (const auto &c : op_grad_cases()) {
      const double e = check_op_case(c, 2, seed).max_relative_error;
      if (e >= worst) {
        worst = e;
        where = c.name;
      }
    }
    for (const auto &c : layer_grad_cases()) {
      const double e = check_layer_case(c, 1, seed).max_relative_error;
      if (e >= worst) {
        worst = e;
        where = c.name;
      }
    }
    out.push_back(check("gradcheck_ops", worst, 1e-4, "worst: " + where));
  }
  if (with_model) {
    ModelConfig cfg = ModelConfig::toy();
    cfg.hf_blocks = cfg.lf_blocks = 1;
    cfg.stage3_blocks = 3;
    const auto r = model_grad_check(cfg, 32, seed, 1);
    out.push_back(check("gradcheck_model", r.max_relative_error, 1e-3));
  }
  return out;
}

} // namespace mcms
