#pragma once

// Adam, the training loop, and dataset evaluation.

#include "mcms/dataset.hpp"
#include "mcms/kernels.hpp"
#include "mcms/losses.hpp"
#include "mcms/metrics.hpp"
#include "mcms/parallel.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace mcms {

// ---------------------------------------------------------------- Adam

template <class T> struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<Tensor<T>> m, v; // mirror the parameter shapes
};

template <class T>
AdamState<T> make_adam(const std::vector<Tensor<T>> &params, double lr) {
  AdamState<T> s;
  s.lr = lr;
  for (const auto &p : params) {
    s.m.emplace_back(p.shape());
    s.v.emplace_back(p.shape());
  }
  return s;
}

// One bias-corrected Adam update, in place.
template <class T>
void adam_step(AdamState<T> &s, const std::vector<Tensor<T>> &grads,
               std::vector<Tensor<T>> &params) {
  if (grads.size() != params.size() || s.m.size() != params.size())
    shape_fail("adam_step: gradient/parameter/moment counts differ");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (grads[i].shape() != params[i].shape() ||
        s.m[i].shape() != params[i].shape())
      shape_fail("adam_step: shape mismatch at parameter " + std::to_string(i));
  ++s.step;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    T *p = params[i].data();
    T *m = s.m[i].data();
    T *v = s.v[i].data();
    const T *g = grads[i].data();
    for (std::size_t k = 0; k < params[i].size(); ++k) {
      const double gk = static_cast<double>(g[k]);
      const double mk = s.beta1 * m[k] + (1.0 - s.beta1) * gk;
      const double vk = s.beta2 * v[k] + (1.0 - s.beta2) * gk * gk;
      m[k] = static_cast<T>(mk);
      v[k] = static_cast<T>(vk);
      const double mhat = mk / bc1, vhat = vk / bc2;
      p[k] = static_cast<T>(static_cast<double>(p[k]) -
                            s.lr * mhat / (std::sqrt(vhat) + s.eps));
    }
  }
}

// ---------------------------------------------------------------- training

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch = 8;
  std::size_t steps = 1000;
  std::size_t crop = 256;
  std::uint64_t seed = 0;
  bool flip = false; // random horizontal flips

  void validate() const {
    if (!(lr > 0.0))
      throw ConfigError("train.lr must be > 0");
    if (batch < 1)
      throw ConfigError("train.batch must be >= 1");
    if (crop < 32 || crop % 32 != 0)
      throw ConfigError("train.crop must be a positive multiple of 32, got " +
                        std::to_string(crop));
  }
  friend bool operator==(const TrainConfig &, const TrainConfig &) = default;
};

template <class T> struct TrainState {
  AdamState<T> adam;
  std::size_t step = 0;
  std::size_t epoch = 0;
  std::vector<LossBreakdown> loss_history; // one entry per step
};

template <class T>
TrainState<T> make_train_state(const McmsModel<T> &m, const TrainConfig &cfg) {
  return {make_adam(m.params.values(), cfg.lr), 0, 0, {}};
}

// Sample order for an epoch; a pure function of (count, seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t count,
                                            std::uint64_t seed,
                                            std::size_t epoch) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

namespace detail {
template <class T>
Tensor<T> crop_image(const Tensor<T> &img, std::size_t y0, std::size_t x0,
                     std::size_t size, bool flip) {
  const Shape s = img.shape();
  Tensor<T> out({1, s.c, size, size});
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x)
        out.at(0, c, y, x) =
            img.at(0, c, y0 + y, flip ? x0 + size - 1 - x : x0 + x);
  return out;
}

template <class T> Tensor<T> stack(const std::vector<Tensor<T>> &items) {
  std::vector<Var<T>> vs;
  for (const auto &t : items)
    vs.push_back(Tape<T>::constant(t));
  return stack_batch(vs).value();
}
} // namespace detail

// Forward + backward on one batch; returns the loss and the gradient per
// parameter (ordered like the ParamStore).
template <class T>
LossBreakdown loss_and_gradients(const McmsModel<T> &model,
                                 const Tensor<T> &blurry,
                                 const Tensor<T> &sharp,
                                 const FrequencyMask &mask,
                                 std::vector<Tensor<T>> *grads) {
  const auto bsplit = split_hf_lf(blurry, mask);
  const auto ssplit = split_hf_lf(sharp, mask);
  Tape<T> tape(grads != nullptr);
  const auto vars = model.params.bind(tape);
  const auto out =
      mcms_apply(Tape<T>::constant(blurry), Tape<T>::constant(bsplit.hf),
                 Tape<T>::constant(bsplit.lf), model, ParamView<T>(vars));
  const auto terms =
      total_loss(out, Tape<T>::constant(sharp), Tape<T>::constant(ssplit.hf),
                 Tape<T>::constant(ssplit.lf));
  const LossBreakdown lb = terms.values();
  if (!std::isfinite(lb.l_total))
    fail("training loss became non-finite");
  if (grads) {
    tape.backward(terms.l_total);
    grads->clear();
    for (const auto &v : vars)
      grads->push_back(tape.grad_or_zero(v));
  }
  return lb;
}

// One pass over the shuffled dataset, stopping early once state.step reaches
// cfg.steps. Returns the mean breakdown over the batches it ran.
template <class T>
LossBreakdown train_epoch(McmsModel<T> &model,
                          const std::vector<ImagePair<T>> &data,
                          TrainState<T> &state, const TrainConfig &cfg) {
  cfg.validate();
  if (data.empty())
    fail("train_epoch: empty dataset");
  for (const auto &p : data)
    if (p.sharp.h() < cfg.crop || p.sharp.w() < cfg.crop)
      fail("train_epoch: crop " + std::to_string(cfg.crop) +
           " is larger than image '" + p.id + "' (" +
           std::to_string(p.sharp.h()) + "x" + std::to_string(p.sharp.w()) +
           ")");
  const FrequencyMask mask =
      make_frequency_mask(cfg.crop, cfg.crop, model.config.freq_tau);
  const auto order = epoch_order(data.size(), cfg.seed, state.epoch);
  std::mt19937_64 rng(cfg.seed ^ (0x9e3779b97f4a7c15ULL * (state.epoch + 1)));

  LossBreakdown acc;
  std::size_t samples = 0;
  std::vector<Tensor<T>> grads;
  for (std::size_t start = 0; start < order.size() && state.step < cfg.steps;
       start += cfg.batch) {
    const std::size_t end = std::min(order.size(), start + cfg.batch);
    std::vector<Tensor<T>> bl, sh;
    for (std::size_t k = start; k < end; ++k) {
      const auto &pair = data[order[k]];
      const std::size_t y0 = std::uniform_int_distribution<std::size_t>(
          0, pair.sharp.h() - cfg.crop)(rng);
      const std::size_t x0 = std::uniform_int_distribution<std::size_t>(
          0, pair.sharp.w() - cfg.crop)(rng);
      const bool flip = cfg.flip && (rng() & 1u);
      bl.push_back(detail::crop_image(pair.blurry, y0, x0, cfg.crop, flip));
      sh.push_back(detail::crop_image(pair.sharp, y0, x0, cfg.crop, flip));
    }
    const LossBreakdown lb = loss_and_gradients(
        model, detail::stack(bl), detail::stack(sh), mask, &grads);
    adam_step(state.adam, grads, model.params.values());
    ++state.step;
    state.loss_history.push_back(lb);
    acc += lb.scaled(static_cast<double>(end - start));
    samples += end - start;
  }
  ++state.epoch;
  return samples ? acc.scaled(1.0 / static_cast<double>(samples)) : acc;
}

struct EpochSummary {
  std::size_t epoch = 0;
  std::size_t steps_done = 0;
  LossBreakdown mean;
};

template <class T>
std::vector<EpochSummary>
train(McmsModel<T> &model, const std::vector<ImagePair<T>> &data,
      TrainState<T> &state, const TrainConfig &cfg,
      const std::function<void(const EpochSummary &)> &on_epoch = {}) {
  std::vector<EpochSummary> log;
  while (state.step < cfg.steps) {
    const std::size_t epoch = state.epoch;
    const LossBreakdown mean = train_epoch(model, data, state, cfg);
    log.push_back({epoch, state.step, mean});
    if (on_epoch)
      on_epoch(log.back());
  }
  return log;
}

// ---------------------------------------------------------------- evaluation

// Reflect-pads bottom/right up to the next multiple of `multiple`.
template <class T>
Tensor<T> pad_to_multiple(const Tensor<T> &img, std::size_t multiple) {
  const Shape s = img.shape();
  const std::size_t h = (s.h + multiple - 1) / multiple * multiple;
  const std::size_t w = (s.w + multiple - 1) / multiple * multiple;
  if (h == s.h && w == s.w)
    return img;
  Tensor<T> out({s.n, s.c, h, w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < h; ++y) {
        const std::size_t sy =
            kernels::reflect_index(static_cast<std::ptrdiff_t>(y), s.h);
        for (std::size_t x = 0; x < w; ++x)
          out.at(n, c, y, x) = img.at(
              n, c, sy, kernels::reflect_index(static_cast<std::ptrdiff_t>(x), s.w));
      }
  return out;
}

template <class T>
Tensor<T> crop_to(const Tensor<T> &img, std::size_t h, std::size_t w) {
  const Shape s = img.shape();
  if (s.h == h && s.w == w)
    return img;
  Tensor<T> out({s.n, s.c, h, w});
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < h; ++y)
        std::copy_n(img.plane(n, c) + y * s.w, w, out.plane(n, c) + y * w);
  return out;
}

// Restores an arbitrary-size image: pad to a multiple of 32, run, crop back.
template <class T>
Tensor<T> deblur_image(const Tensor<T> &blurry, const McmsModel<T> &model) {
  const Shape s = blurry.shape();
  const Tensor<T> padded = pad_to_multiple(blurry, 32);
  const FrequencyMask mask =
      make_frequency_mask(padded.h(), padded.w(), model.config.freq_tau);
  return crop_to(mcms_forward(padded, model, mask).restored, s.h, s.w);
}

struct EvalRow {
  std::string id;
  double psnr = 0.0;
  double ssim = 0.0;
  double baseline_psnr = 0.0;
  double baseline_ssim = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  EvalRow mean{"MEAN"};
};

template <class T>
EvalReport evaluate(const McmsModel<T> &model,
                    const std::vector<ImagePair<T>> &pairs) {
  EvalReport r;
  r.rows.resize(pairs.size());
  parallel_for(pairs.size(), [&](std::size_t i) {
    const auto &p = pairs[i];
    const Tensor<T> restored = deblur_image(p.blurry, model);
    r.rows[i] = {p.id, psnr(restored, p.sharp), ssim(restored, p.sharp),
                 psnr(p.blurry, p.sharp), ssim(p.blurry, p.sharp)};
  });
  for (const auto &row : r.rows) {
    r.mean.psnr += row.psnr;
    r.mean.ssim += row.ssim;
    r.mean.baseline_psnr += row.baseline_psnr;
    r.mean.baseline_ssim += row.baseline_ssim;
  }
  const double k = pairs.empty() ? 0.0 : 1.0 / static_cast<double>(pairs.size());
  r.mean.psnr *= k;
  r.mean.ssim *= k;
  r.mean.baseline_psnr *= k;
  r.mean.baseline_ssim *= k;
  return r;
}

inline std::string format_metric(double v) {
  if (std::isinf(v))
    return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline std::string eval_csv(const EvalReport &r) {
  std::ostringstream o;
  o << "id,psnr_db,ssim,baseline_psnr_db,baseline_ssim\n";
  const auto line = [&o](const EvalRow &row) {
    o << row.id << ',' << format_metric(row.psnr) << ','
      << format_metric(row.ssim) << ',' << format_metric(row.baseline_psnr)
      << ',' << format_metric(row.baseline_ssim) << '\n';
  };
  for (const auto &row : r.rows)
    line(row);
  line(r.mean);
  return o.str();
}

inline void write_eval_csv(const EvalReport &r,
                           const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot write " + path.string());
  out << eval_csv(r);
}

} // namespace mcms
