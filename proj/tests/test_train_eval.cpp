#include "mcms/dataset.hpp"
#include "mcms/losses.hpp"
#include "mcms/metrics.hpp"
#include "mcms/train.hpp"

#include "oracles.hpp"
#include "scratch_dir.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

using namespace mcms;

namespace {

double l1(const Tensor<double> &x, const Tensor<double> &y) { return l1_loss(x, y); }
double msfr(const Tensor<double> &x, const Tensor<double> &y) { return msfr_loss(x, y); }

// Windowed SSIM straight from the definition: Gaussian weights renormalized
// over each 11x11 window, statistics of the channel-mean image.
double naive_ssim(const Tensor<double> &x, const Tensor<double> &y) {
  const Shape s = x.shape();
  const int win = 11, r = 5;
  std::vector<double> g(win * win);
  double gs = 0.0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j)
      gs += g[i * win + j] =
          std::exp(-((i - r) * (i - r) + (j - r) * (j - r)) / (2.0 * 1.5 * 1.5));
  for (double &v : g)
    v /= gs;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    const auto gray = [&](const Tensor<double> &t, std::size_t yy, std::size_t xx) {
      double v = 0.0;
      for (std::size_t c = 0; c < s.c; ++c)
        v += t.at(n, c, yy, xx);
      return v / static_cast<double>(s.c);
    };
    double acc = 0.0;
    std::size_t count = 0;
    for (std::size_t y0 = 0; y0 + win <= s.h; ++y0)
      for (std::size_t x0 = 0; x0 + win <= s.w; ++x0) {
        double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            const double w = g[i * win + j];
            const double a = gray(x, y0 + i, x0 + j), b = gray(y, y0 + i, x0 + j);
            mx += w * a;
            my += w * b;
            sxx += w * a * a;
            syy += w * b * b;
            sxy += w * a * b;
          }
        const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
        acc += (2 * mx * my + c1) * (2 * cov + c2) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    total += acc / static_cast<double>(count);
  }
  return total / static_cast<double>(s.n);
}

std::vector<ImagePair<float>> synthetic_pairs(std::size_t count, std::size_t size,
                                              std::uint64_t seed) {
  std::vector<ImagePair<float>> out;
  for (std::size_t i = 0; i < count; ++i) {
    const auto sharp = procedural_image<float>(size, size, seed + i);
    out.push_back({synthesize_blur(sharp, motion_kernel(7, 20.0 * i), 0.01, seed + 100 + i),
                   sharp, "p" + std::to_string(i)});
  }
  return out;
}

} // namespace

// ---------------------------------------------------------------- losses

TEST(L1Loss, Examples) {
  const auto x = oracle::random({1, 3, 4, 5}, 1);
  EXPECT_EQ(l1(x, x), 0.0);
  EXPECT_DOUBLE_EQ(l1(Tensor<double>({1, 1, 3, 3}, 1.0), Tensor<double>({1, 1, 3, 3})), 1.0);
  EXPECT_DOUBLE_EQ(l1(Tensor<double>({1, 1, 1, 2}, std::vector<double>{0, 2}),
                      Tensor<double>({1, 1, 1, 2}, std::vector<double>{1, 1})),
                   1.0);
  EXPECT_THROW(l1(Tensor<double>({1, 1, 2, 2}), Tensor<double>({1, 1, 2, 3})), ShapeError);
}

TEST(MsfrLoss, Examples) {
  Tensor<double> impulse({1, 1, 2, 2});
  impulse[0] = 1.0;
  const Tensor<double> zero({1, 1, 2, 2});
  EXPECT_NEAR(msfr(impulse, zero), 0.5, 1e-15);
  const auto x = oracle::random({1, 3, 6, 10}, 2);
  EXPECT_EQ(msfr(x, x), 0.0);
  const Tensor<double> z(x.shape());
  Tensor<double> x3 = x;
  for (auto &v : x3.values())
    v *= 3.0;
  EXPECT_NEAR(msfr(x3, z), 3.0 * msfr(x, z), 1e-12);
  EXPECT_THROW(msfr(zero, Tensor<double>({1, 1, 2, 3})), ShapeError);
}

TEST(MsfrLoss, MatchesNaiveDftDistance) {
  const auto x = oracle::random({2, 3, 5, 6}, 3), y = oracle::random({2, 3, 5, 6}, 4);
  Tensor<double> d = x;
  for (std::size_t i = 0; i < d.size(); ++i)
    d[i] -= y[i];
  double acc = 0.0;
  std::vector<double> re, im;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c) {
      oracle::dft2_plane(d.plane(n, c), 5, 6, re, im);
      for (std::size_t i = 0; i < re.size(); ++i)
        acc += std::abs(re[i]) + std::abs(im[i]);
    }
  EXPECT_NEAR(msfr(x, y), acc / (2.0 * d.size()), 1e-12);
}

TEST(MsfrLoss, ZeroExactlyWhenL1IsZero) {
  const auto x = oracle::random({1, 3, 8, 8}, 5);
  Tensor<double> y = x;
  y[17] += 1e-6;
  EXPECT_GT(l1(x, y), 0.0);
  EXPECT_GT(msfr(x, y), 0.0);
}

TEST(TotalLoss, PerfectRestorationIsZero) {
  const auto target = oracle::random({1, 3, 16, 16}, 6, 0, 1);
  const auto mask = make_frequency_mask(16, 16, 0.1);
  const auto split = split_hf_lf(target, mask);
  const auto lb = total_loss(McmsImages<double>{target, split.hf, split.lf}, target, mask);
  EXPECT_EQ(lb.l_hf, 0.0);
  EXPECT_EQ(lb.l_lf, 0.0);
  EXPECT_EQ(lb.l_o, 0.0);
  EXPECT_EQ(lb.l_total, 0.0);
}

TEST(TotalLoss, SumOfPartsAndWeighting) {
  const auto mask = make_frequency_mask(16, 16, 0.1);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto target = oracle::random({1, 3, 16, 16}, 10 + s, 0, 1);
    const McmsImages<double> out{oracle::random(target.shape(), 20 + s),
                                 oracle::random(target.shape(), 30 + s),
                                 oracle::random(target.shape(), 40 + s)};
    const auto lb = total_loss(out, target, mask);
    EXPECT_NEAR(lb.l_total, lb.l_hf + lb.l_lf + lb.l_o, 1e-9);
    const auto split = split_hf_lf(target, mask);
    EXPECT_NEAR(lb.l_hf, l1(out.restored_hf, split.hf), 1e-12);
    EXPECT_NEAR(lb.l_lf, l1(out.restored_lf, split.lf), 1e-12);
    EXPECT_NEAR(lb.l_msfr, msfr(out.restored, target), 1e-12);
    EXPECT_NEAR(lb.l_o, l1(out.restored, target) + 0.1 * lb.l_msfr, 1e-12);
    for (double v : {lb.l_hf, lb.l_lf, lb.l_o, lb.l_msfr})
      EXPECT_GE(v, 0.0);
  }
}

TEST(TotalLoss, FrequencyTermEntersLinearlyWithWeightPointOne) {
  // A pure frequency-domain change that leaves the mean absolute error alone
  // is hard to build, so probe linearity instead: with the other terms fixed,
  // scaling the restoration error by k scales l_o by k.
  const auto mask = make_frequency_mask(8, 8, 0.1);
  const auto target = oracle::random({1, 3, 8, 8}, 50, 0, 1);
  const auto err = oracle::random(target.shape(), 51);
  const auto split = split_hf_lf(target, mask);
  const auto with = [&](double k) {
    Tensor<double> r = target;
    for (std::size_t i = 0; i < r.size(); ++i)
      r[i] += k * err[i];
    return total_loss(McmsImages<double>{r, split.hf, split.lf}, target, mask);
  };
  const auto a = with(0.5), b = with(1.0);
  EXPECT_NEAR(b.l_msfr, 2.0 * a.l_msfr, 1e-12);
  EXPECT_NEAR(b.l_o - a.l_o, (l1(err, Tensor<double>(err.shape())) * 0.5) + 0.1 * (b.l_msfr - a.l_msfr),
              1e-12);
  EXPECT_EQ(a.l_hf, 0.0);
  EXPECT_EQ(a.l_lf, 0.0);
}

// ---------------------------------------------------------------- metrics

TEST(Psnr, Examples) {
  const auto x = oracle::random({1, 3, 8, 8}, 60, 0, 1);
  EXPECT_EQ(psnr(x, x), std::numeric_limits<double>::infinity());
  EXPECT_NEAR(psnr(Tensor<double>({1, 3, 4, 4}, 0.1), Tensor<double>({1, 3, 4, 4})), 20.0, 1e-9);
  EXPECT_NEAR(psnr(Tensor<double>({1, 3, 4, 4}, 1.0), Tensor<double>({1, 3, 4, 4})), 0.0, 1e-12);
  EXPECT_THROW(psnr(x, Tensor<double>({1, 3, 8, 9})), ShapeError);
}

TEST(Psnr, AntiMonotoneInMse) {
  const Tensor<double> zero({1, 1, 8, 8});
  double prev = std::numeric_limits<double>::infinity();
  for (double e : {0.001, 0.01, 0.05, 0.2, 0.7}) {
    const double p = psnr(Tensor<double>({1, 1, 8, 8}, e), zero);
    EXPECT_LT(p, prev);
    prev = p;
  }
}

TEST(Ssim, IdentityConstantsAndBounds) {
  const auto x = oracle::random({1, 3, 24, 20}, 61, 0, 1);
  EXPECT_NEAR(ssim(x, x), 1.0, 1e-12);
  EXPECT_NEAR(ssim(Tensor<double>({1, 3, 16, 16}, 0.5), Tensor<double>({1, 3, 16, 16}, 0.5)),
              1.0, 1e-12);
  const double a = 0.3, b = 0.7, c1 = 1e-4;
  EXPECT_NEAR(ssim(Tensor<double>({1, 3, 16, 16}, a), Tensor<double>({1, 3, 16, 16}, b)),
              (2 * a * b + c1) / (a * a + b * b + c1), 1e-12);
  const auto y = oracle::random(x.shape(), 62, 0, 1);
  EXPECT_LT(ssim(x, y), 1.0);
  EXPECT_NEAR(ssim(x, y), ssim(y, x), 1e-12);
  EXPECT_THROW(ssim(Tensor<double>({1, 3, 10, 30}), Tensor<double>({1, 3, 10, 30})), ShapeError);
  EXPECT_THROW(ssim(x, Tensor<double>({1, 3, 24, 21})), ShapeError);
}

TEST(Ssim, MatchesNaiveWindowedDefinition) {
  const auto x = procedural_image<double>(32, 28, 63);
  const auto y = synthesize_blur(x, motion_kernel(5, 45), 0.02, 64);
  EXPECT_NEAR(ssim(x, y), naive_ssim(x, y), 1e-12);
  const auto u = oracle::random({2, 3, 16, 16}, 65, 0, 1), v = oracle::random({2, 3, 16, 16}, 66, 0, 1);
  EXPECT_NEAR(ssim(u, v), naive_ssim(u, v), 1e-12);
}

// ---------------------------------------------------------------- Adam

TEST(Adam, ZeroGradientLeavesParametersAlone) {
  std::vector<Tensor<double>> p{oracle::random({1, 2, 3, 3}, 70)};
  const auto before = p[0];
  auto s = make_adam(p, 0.1);
  for (int i = 0; i < 3; ++i)
    adam_step(s, {Tensor<double>(p[0].shape())}, p);
  EXPECT_EQ(max_abs_diff(p[0], before), 0.0);
}

TEST(Adam, FirstStepOnSquareMovesByLr) {
  std::vector<Tensor<double>> w{Tensor<double>({1, 1, 1, 1}, 1.0)};
  auto s = make_adam(w, 0.1);
  adam_step(s, {Tensor<double>({1, 1, 1, 1}, 2.0 * w[0][0])}, w);
  EXPECT_NEAR(w[0][0], 0.9, 1e-8);
  // A few more steps keep heading to the minimum.
  for (int i = 0; i < 5; ++i)
    adam_step(s, {Tensor<double>({1, 1, 1, 1}, 2.0 * w[0][0])}, w);
  EXPECT_LT(w[0][0], 0.9);
  EXPECT_GT(w[0][0], 0.0);
}

TEST(Adam, MatchesHandRolledRecurrence) {
  std::vector<Tensor<double>> p{oracle::random({1, 1, 2, 3}, 71)};
  auto ref = p[0];
  std::vector<double> m(6, 0.0), v(6, 0.0);
  auto s = make_adam(p, 0.01);
  for (int t = 1; t <= 4; ++t) {
    const auto g = oracle::random(p[0].shape(), 72 + t);
    adam_step(s, {g}, p);
    for (std::size_t i = 0; i < 6; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      ref[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
    EXPECT_LT(max_abs_diff(p[0], ref), 1e-15);
  }
}

TEST(Adam, ShapeMismatchThrows) {
  std::vector<Tensor<double>> p{Tensor<double>({1, 1, 2, 2})};
  auto s = make_adam(p, 0.1);
  EXPECT_THROW(adam_step(s, {Tensor<double>({1, 1, 2, 3})}, p), ShapeError);
  EXPECT_THROW(adam_step(s, {}, p), ShapeError);
}

// ---------------------------------------------------------------- training

TEST(EpochOrder, SeededPermutation) {
  const auto a = epoch_order(10, 3, 0);
  EXPECT_EQ(a, epoch_order(10, 3, 0));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 10; ++i)
    EXPECT_EQ(sorted[i], i);
  EXPECT_NE(a, epoch_order(10, 3, 1));
  EXPECT_NE(a, epoch_order(10, 4, 0));
}

TEST(TrainEpoch, FirstEpochLossIsTheBlurryLoss) {
  const auto pairs = synthetic_pairs(1, 32, 80);
  auto model = init_params<float>(ModelConfig::toy(), 0);
  TrainConfig cfg;
  cfg.crop = 32;
  cfg.batch = 1;
  cfg.steps = 5;
  cfg.lr = 1e-3;
  auto state = make_train_state(model, cfg);
  const auto lb = train_epoch(model, pairs, state, cfg);
  const auto mask = make_frequency_mask(32, 32, 0.1);
  const auto bs = split_hf_lf(pairs[0].blurry, mask);
  const auto want =
      total_loss(McmsImages<float>{pairs[0].blurry, bs.hf, bs.lf}, pairs[0].sharp, mask);
  EXPECT_NEAR(lb.l_total, want.l_total, 1e-6);
  EXPECT_NEAR(lb.l_hf, want.l_hf, 1e-6);
  EXPECT_NEAR(lb.l_lf, want.l_lf, 1e-6);
  EXPECT_NEAR(lb.l_o, want.l_o, 1e-6);
  EXPECT_EQ(state.step, 1u);
  EXPECT_EQ(state.epoch, 1u);
  EXPECT_EQ(state.loss_history.size(), 1u);
}

TEST(TrainEpoch, StepsBatchesAndErrors) {
  const auto pairs = synthetic_pairs(5, 32, 90);
  auto model = init_params<float>(ModelConfig::toy(), 0);
  TrainConfig cfg;
  cfg.crop = 32;
  cfg.batch = 2;
  cfg.steps = 4;
  auto state = make_train_state(model, cfg);
  const auto log = train(model, pairs, state, cfg);
  // 5 pairs in batches of 2: three steps per epoch, stop after four.
  ASSERT_EQ(log.size(), 2u);
  EXPECT_EQ(log[0].steps_done, 3u);
  EXPECT_EQ(log[1].steps_done, 4u);
  EXPECT_EQ(state.loss_history.size(), 4u);

  TrainConfig big = cfg;
  big.crop = 64;
  EXPECT_THROW(train_epoch(model, pairs, state, big), Error);
  EXPECT_THROW(train_epoch(model, std::vector<ImagePair<float>>{}, state, cfg), Error);
  TrainConfig odd = cfg;
  odd.crop = 48;
  EXPECT_THROW(train_epoch(model, pairs, state, odd), ConfigError);
}

TEST(Train, DeterministicForAFixedSeed) {
  const auto pairs = synthetic_pairs(3, 64, 100);
  TrainConfig cfg;
  cfg.crop = 32;
  cfg.batch = 2;
  cfg.steps = 3;
  cfg.lr = 1e-3;
  cfg.flip = true;
  cfg.seed = 5;
  std::uint64_t sums[2];
  std::vector<double> losses[2];
  for (int run = 0; run < 2; ++run) {
    auto model = init_params<float>(ModelConfig::toy(), 1);
    auto state = make_train_state(model, cfg);
    train(model, pairs, state, cfg);
    sums[run] = weights_checksum(model.params);
    for (const auto &lb : state.loss_history)
      losses[run].push_back(lb.l_total);
  }
  EXPECT_EQ(sums[0], sums[1]);
  EXPECT_EQ(losses[0], losses[1]);
  EXPECT_NE(sums[0], weights_checksum(init_params<float>(ModelConfig::toy(), 1).params));
}

// ---------------------------------------------------------------- evaluation

TEST(Evaluate, IdentityModelReproducesTheBaseline) {
  auto pairs = synthetic_pairs(3, 40, 110); // 40 is padded up to 64 internally
  const auto model = init_params<float>(ModelConfig::toy(), 2);
  const auto r = evaluate(model, pairs);
  ASSERT_EQ(r.rows.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r.rows[i].id, pairs[i].id);
    EXPECT_EQ(r.rows[i].psnr, r.rows[i].baseline_psnr);
    EXPECT_EQ(r.rows[i].ssim, r.rows[i].baseline_ssim);
    EXPECT_DOUBLE_EQ(r.rows[i].baseline_psnr, psnr(pairs[i].blurry, pairs[i].sharp));
  }
  EXPECT_EQ(r.mean.psnr, r.mean.baseline_psnr);
  EXPECT_EQ(r.mean.id, "MEAN");
}

TEST(Evaluate, PerfectRowAndCsv) {
  auto pairs = synthetic_pairs(2, 32, 120);
  pairs[1].blurry = pairs[1].sharp;
  const auto model = init_params<float>(ModelConfig::toy(), 3);
  const auto r = evaluate(model, pairs);
  EXPECT_TRUE(std::isinf(r.rows[1].psnr));
  EXPECT_NEAR(r.rows[1].ssim, 1.0, 1e-12);

  std::istringstream csv(eval_csv(r));
  std::vector<std::string> lines;
  for (std::string l; std::getline(csv, l);)
    lines.push_back(l);
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "id,psnr_db,ssim,baseline_psnr_db,baseline_ssim");
  EXPECT_EQ(lines[2].substr(0, 7), "p1,inf,");
  EXPECT_EQ(lines[3].substr(0, 9), "MEAN,inf,");
  EXPECT_EQ(format_metric(12.345678), "12.3457");
  EXPECT_EQ(format_metric(0.5), "0.5000");

  ScratchDir dir;
  write_eval_csv(r, dir / "eval.csv");
  EXPECT_EQ(slurp(dir / "eval.csv"), eval_csv(r));
}

TEST(Evaluate, Deterministic) {
  const auto pairs = synthetic_pairs(3, 32, 130);
  auto model = init_params<float>(ModelConfig::toy(), 4);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-0.05f, 0.05f);
  for (auto &v : model.params[model.stage3.head.weight].values())
    v = u(rng);
  EXPECT_EQ(eval_csv(evaluate(model, pairs)), eval_csv(evaluate(model, pairs)));
}
