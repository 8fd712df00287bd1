#include "mcms/losses.hpp"
#include "mcms/net.hpp"
#include "mcms/selftest.hpp"
#include "mcms/train.hpp"

#include "oracles.hpp"
#include "scratch_dir.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace mcms;

namespace {

// Closed-form parameter count, written out layer by layer.
std::size_t conv_count(std::size_t in, std::size_t out, std::size_t k) {
  return in * out * k * k + out;
}
std::size_t block_count(std::size_t c) {
  return 2 * c + conv_count(c, 2 * c, 1) + (2 * c * 9 + 2 * c) + conv_count(c, c, 1);
}
std::size_t mssa_count(std::size_t c) { return conv_count(c, c / 8, 1); }
std::size_t gff_count(std::size_t c) {
  std::size_t n = conv_count(c, c, 3);
  for (std::size_t k : {1, 3, 5, 7})
    n += conv_count(c / 4, c / 4, k);
  return n;
}
std::size_t expected_params(const ModelConfig &cfg) {
  const std::size_t c = cfg.base_width;
  const auto branch = [&](std::size_t blocks) {
    return conv_count(3, c, 3) + 2 * blocks * block_count(c) +
           (cfg.use_mssa ? mssa_count(c) : 0) + conv_count(c, 3, 3);
  };
  const std::size_t q = cfg.stage3_blocks / 3, r = cfg.stage3_blocks - 2 * q;
  const std::size_t d = cfg.decoder_blocks;
  std::size_t s3 = conv_count(3, c, 3) + conv_count(c, c, 3) + (cfg.use_gff ? gff_count(c) : 0);
  s3 += q * block_count(c) + conv_count(c, 2 * c, 3);
  s3 += q * block_count(2 * c) + conv_count(2 * c, 4 * c, 3);
  s3 += r * block_count(4 * c) + (cfg.use_mssa ? mssa_count(5 * c) : 0);
  s3 += conv_count(5 * c, 4 * c, 1) + d * block_count(4 * c);
  s3 += conv_count(4 * c, 2 * c, 1) + d * block_count(2 * c);
  s3 += conv_count(2 * c, c, 1) + d * block_count(c) + conv_count(c, 3, 3);
  return branch(cfg.hf_blocks) + branch(cfg.lf_blocks) + s3;
}

ModelConfig variant(ModelConfig c, bool gff, bool mssa) {
  c.use_gff = gff;
  c.use_mssa = mssa;
  return c;
}

template <class T> void randomize_heads(McmsModel<T> &m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (const ConvLayer *h : {&m.hf.head, &m.lf.head, &m.stage3.head})
    for (auto &v : m.params[h->weight].values())
      v = static_cast<T>(u(rng));
}

} // namespace

// ---------------------------------------------------------------- config

TEST(ModelConfig, DefaultsToyAndValidation) {
  const ModelConfig d;
  EXPECT_EQ(d.base_width, 32u);
  EXPECT_EQ(d.hf_blocks, 3u);
  EXPECT_EQ(d.lf_blocks, 3u);
  EXPECT_EQ(d.stage3_blocks, 28u);
  EXPECT_EQ(d.encoder_split(), (std::array<std::size_t, 3>{9, 9, 10}));
  const auto t = ModelConfig::toy();
  EXPECT_EQ(t.base_width, 8u);
  EXPECT_EQ(t.stage3_blocks, 4u);
  EXPECT_EQ(t.encoder_split(), (std::array<std::size_t, 3>{1, 1, 2}));

  ModelConfig bad;
  bad.base_width = 12;
  try {
    bad.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError &e) {
    EXPECT_NE(std::string(e.what()).find("base_width"), std::string::npos);
  }
  bad = {};
  bad.hf_blocks = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = {};
  bad.freq_tau = 3.0;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_NO_THROW(ModelConfig{}.validate());
  EXPECT_NO_THROW(ModelConfig::toy().validate());
}

// ---------------------------------------------------------------- block

TEST(Block, ZeroWeightsAreTheIdentity) {
  const auto p = make_block_params<double>(8, 0, Init::Zero);
  const auto x = oracle::random({2, 8, 16, 16}, 1);
  const auto y = block_forward(x, p);
  EXPECT_EQ(y.shape(), (Shape{2, 8, 16, 16}));
  EXPECT_EQ(max_abs_diff(y, x), 0.0);
}

TEST(Block, ShapePreservedAndChannelCheck) {
  const auto p = make_block_params<double>(8, 2);
  EXPECT_EQ(block_forward(oracle::random({1, 8, 16, 16}, 3), p).shape(),
            (Shape{1, 8, 16, 16}));
  EXPECT_THROW(block_forward(Tensor<double>({1, 16, 4, 4}), p), ShapeError);
}

TEST(Block, ParameterNames) {
  const auto p = make_block_params<double>(8, 0);
  EXPECT_EQ(p.store.names(),
            (std::vector<std::string>{"block.norm.gamma", "block.norm.beta",
                                      "block.expand.weight", "block.expand.bias",
                                      "block.depth.weight", "block.depth.bias",
                                      "block.project.weight", "block.project.bias"}));
  EXPECT_EQ(p.store.element_count(), block_count(8));
}

TEST(Block, GradientsMatchFiniteDifferences) {
  for (const auto &c : layer_grad_cases())
    if (c.name == "block") {
      const auto r = check_layer_case(c, 3, 1234);
      EXPECT_LT(r.max_relative_error, 1e-4)
          << "input " << r.worst_input << " index " << r.worst_index << " analytic "
          << r.worst_analytic << " numeric " << r.worst_numeric;
      return;
    }
  FAIL() << "no block gradient case";
}

// ---------------------------------------------------------------- branch

TEST(Branch, ZeroHeadRestoresTheComponent) {
  const auto m = init_params<double>(ModelConfig::toy(), 4);
  Tape<double> tape(false);
  const auto vars = m.params.bind(tape);
  const auto comp = oracle::random({1, 3, 64, 64}, 5);
  const auto out = branch_apply(Tape<double>::constant(comp), m.hf, ParamView<double>(vars));
  EXPECT_EQ(max_abs_diff(out.restored.value(), comp), 0.0);
  EXPECT_EQ(out.f_e.shape(), (Shape{1, 8, 64, 64}));
  EXPECT_EQ(out.f_d.shape(), (Shape{1, 8, 64, 64}));
  EXPECT_THROW(branch_apply(Tape<double>::constant(Tensor<double>({1, 1, 64, 64})), m.hf,
                            ParamView<double>(vars)),
               ShapeError);
}

TEST(Branch, EveryParameterReceivesGradient) {
  auto m = init_params<double>(ModelConfig::toy(), 6);
  randomize_heads(m, 7);
  Tape<double> tape;
  const auto vars = m.params.bind(tape);
  const auto comp = oracle::random({1, 3, 32, 32}, 8);
  const auto target = oracle::random({1, 3, 32, 32}, 9);
  const auto out = branch_apply(Tape<double>::constant(comp), m.hf, ParamView<double>(vars));
  const auto loss = l1_loss(out.restored, Tape<double>::constant(target));
  tape.backward(loss);
  std::size_t checked = 0;
  for (std::size_t i = 0; i < vars.size(); ++i) {
    if (m.params.name(i).rfind("hf.", 0) != 0)
      continue;
    ++checked;
    const auto g = tape.grad_or_zero(vars[i]);
    double norm = 0.0;
    for (double v : g.values())
      norm += std::abs(v);
    EXPECT_GT(norm, 0.0) << m.params.name(i);
  }
  EXPECT_GT(checked, 20u);
}

// ---------------------------------------------------------------- stage 3

TEST(FuseStage3, ShapeAndOperandSymmetry) {
  auto m = init_params<double>(ModelConfig::toy(), 10);
  Tape<double> tape(false);
  const auto vars = m.params.bind(tape);
  const ParamView<double> p(vars);
  const auto in = Tape<double>::constant(oracle::random({1, 3, 64, 64}, 11));
  const auto hf = branch_apply(Tape<double>::constant(oracle::random({1, 3, 64, 64}, 12)), m.hf, p);
  const auto lf = branch_apply(Tape<double>::constant(oracle::random({1, 3, 64, 64}, 13)), m.lf, p);
  const auto fe = fuse_stage3(in, hf, lf, m.stage3, p);
  EXPECT_EQ(fe.shape(), (Shape{1, 4 * 8 + 8, 16, 16}));
  // Swapping the branches swaps the operands of both sums, which commute.
  const auto swapped = fuse_stage3(in, lf, hf, m.stage3, p);
  EXPECT_EQ(max_abs_diff(fe.value(), swapped.value()), 0.0);
}

TEST(FuseStage3, ZerosGiveZeros) {
  auto m = init_params<double>(ModelConfig::toy(), 14);
  Tape<double> tape(false);
  const auto vars = m.params.bind(tape);
  const ParamView<double> p(vars);
  const auto z = Tape<double>::constant(Tensor<double>({1, 3, 32, 32}));
  const auto hf = branch_apply(z, m.hf, p), lf = branch_apply(z, m.lf, p);
  const auto fe = fuse_stage3(z, hf, lf, m.stage3, p);
  for (double v : fe.value().values())
    EXPECT_EQ(v, 0.0);
}

// ---------------------------------------------------------------- model

TEST(Mcms, IdentityAtInitialization) {
  for (const auto &cfg : {ModelConfig::toy(), variant(ModelConfig::toy(), false, true),
                          variant(ModelConfig::toy(), true, false)}) {
    const auto m = init_params<double>(cfg, 15);
    const auto b = oracle::random({1, 3, 64, 32}, 16, 0.0, 1.0);
    const auto mask = make_frequency_mask(64, 32, cfg.freq_tau);
    const auto out = mcms_forward(b, m, mask);
    const auto split = split_hf_lf(b, mask);
    EXPECT_EQ(max_abs_diff(out.restored, b), 0.0);
    EXPECT_EQ(max_abs_diff(out.restored_hf, split.hf), 0.0);
    EXPECT_EQ(max_abs_diff(out.restored_lf, split.lf), 0.0);
    EXPECT_TRUE(std::isinf(psnr(out.restored, b)));
  }
}

TEST(Mcms, ShapesAndInputChecks) {
  auto m = init_params<float>(ModelConfig::toy(), 17);
  randomize_heads(m, 18);
  const auto b = oracle::random({2, 3, 32, 64}, 19, 0.0, 1.0).cast<float>();
  const auto out = mcms_forward(b, m, make_frequency_mask(32, 64, 0.1));
  for (const auto *t : {&out.restored, &out.restored_hf, &out.restored_lf})
    EXPECT_EQ(t->shape(), b.shape());
  for (float v : out.restored.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  EXPECT_THROW(mcms_forward(Tensor<float>({1, 3, 48, 32}), m, make_frequency_mask(48, 32, 0.1)),
               ShapeError);
  EXPECT_THROW(mcms_forward(Tensor<float>({1, 1, 32, 32}), m, make_frequency_mask(32, 32, 0.1)),
               ShapeError);
}

// Adam's first update moves every coordinate by about lr, whatever the
// gradient size. The low-frequency residual is tiny, so only a genuinely small
// step is a descent step; at lr 1e-3 the LF head overshoots (the acceptance
// report covers that setting).
TEST(Mcms, OneSmallAdamStepLowersTheLoss) {
  for (std::uint64_t seed : {0u, 1u, 2u, 3u, 20u}) {
    auto m = init_params<double>(ModelConfig::toy(), seed);
    const auto sharp = procedural_image<double>(32, 32, seed + 1);
    const auto blurry = synthesize_blur(sharp, motion_kernel(7, 30), 0.01, seed + 2);
    const auto mask = make_frequency_mask(32, 32, m.config.freq_tau);
    std::vector<Tensor<double>> grads;
    const double before = loss_and_gradients(m, blurry, sharp, mask, &grads).l_total;
    auto adam = make_adam(m.params.values(), 1e-5);
    adam_step(adam, grads, m.params.values());
    const double after = loss_and_gradients<double>(m, blurry, sharp, mask, nullptr).l_total;
    EXPECT_LT(after, before) << "seed " << seed;
  }
}

TEST(Mcms, FullModelGradientsAtToySize) {
  // Heavier variant of the criterion check: fewer coordinates, same tolerance.
  const auto r = model_grad_check(ModelConfig::toy(), 32, 0, 6, 1e-5);
  EXPECT_LT(r.max_relative_error, 1e-3)
      << "input " << r.worst_input << " index " << r.worst_index << " analytic "
      << r.worst_analytic << " numeric " << r.worst_numeric;
}

// ---------------------------------------------------------------- init

TEST(InitParams, DeterministicPerSeed) {
  const auto a = init_params<float>(ModelConfig::toy(), 3);
  const auto b = init_params<float>(ModelConfig::toy(), 3);
  const auto c = init_params<float>(ModelConfig::toy(), 4);
  ASSERT_EQ(a.params.size(), b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i)
    EXPECT_EQ(max_abs_diff(a.params[i], b.params[i]), 0.0f) << a.params.name(i);
  EXPECT_EQ(weights_checksum(a.params), weights_checksum(b.params));
  EXPECT_NE(weights_checksum(a.params), weights_checksum(c.params));
}

TEST(InitParams, BiasesAndHeadsStartAtZero) {
  const auto m = init_params<float>(ModelConfig::toy(), 5);
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const auto &n = m.params.name(i);
    const bool zero = n.ends_with(".bias") || n.ends_with("norm.beta") ||
                      n.find(".head.") != std::string::npos;
    if (!zero)
      continue;
    for (float v : m.params[i].values())
      ASSERT_EQ(v, 0.0f) << n;
  }
}

TEST(InitParams, ParameterCountPerConfig) {
  struct Row {
    ModelConfig cfg;
    std::size_t recorded;
  };
  const ModelConfig toy = ModelConfig::toy(), full;
  const Row rows[] = {
      {toy, 30288},
      {variant(toy, false, true), 29360},
      {variant(toy, true, false), 30065},
      {variant(toy, false, false), 29137},
      {full, 955909},
      {variant(full, false, true), 941253},
      {variant(full, true, false), 952425},
      {variant(full, false, false), 937769},
  };
  for (const auto &r : rows) {
    const std::size_t got = init_params<float>(r.cfg, 0).params.element_count();
    EXPECT_EQ(got, r.recorded) << r.cfg.base_width << " gff " << r.cfg.use_gff << " mssa "
                               << r.cfg.use_mssa;
    EXPECT_EQ(got, expected_params(r.cfg));
  }
}

// ---------------------------------------------------------------- weights IO

TEST(Weights, SaveLoadSaveIsByteIdentical) {
  ScratchDir dir;
  auto m = init_params<float>(ModelConfig::toy(), 23);
  randomize_heads(m, 24);
  save_weights(m, dir / "a.bin");
  const auto loaded = load_weights<float>(dir / "a.bin", ModelConfig::toy());
  save_weights(loaded, dir / "b.bin");
  EXPECT_EQ(slurp(dir / "a.bin"), slurp(dir / "b.bin"));
  EXPECT_EQ(weights_checksum(loaded.params), weights_checksum(m.params));
  for (std::size_t i = 0; i < m.params.size(); ++i)
    EXPECT_EQ(max_abs_diff(loaded.params[i], m.params[i]), 0.0f);
}

TEST(Weights, HeaderLayout) {
  ScratchDir dir;
  const auto m = init_params<float>(ModelConfig::toy(), 0);
  save_weights(m, dir / "w.bin");
  const std::string bytes = slurp(dir / "w.bin");
  ASSERT_GT(bytes.size(), 12u);
  EXPECT_EQ(bytes.substr(0, 4), "MCMS");
  EXPECT_EQ(bytes.substr(4, 4), std::string("\x01\x00\x00\x00", 4));
  const std::string first = m.params.name(0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), first.size());
  EXPECT_EQ(bytes.substr(12, first.size()), first);
  // Header + per tensor (len, name, rank, 4 dims, payload).
  std::size_t size = 8;
  for (std::size_t i = 0; i < m.params.size(); ++i)
    size += 4 + m.params.name(i).size() + 4 + 16 + 4 * m.params[i].size();
  EXPECT_EQ(bytes.size(), size);
}

TEST(Weights, TruncatedAndCorruptFilesAreStructuredErrors) {
  ScratchDir dir;
  save_weights(init_params<float>(ModelConfig::toy(), 0), dir / "w.bin");
  const std::string bytes = slurp(dir / "w.bin");
  for (std::size_t cut : {std::size_t{2}, std::size_t{6}, std::size_t{10}, std::size_t{40},
                          bytes.size() / 2, bytes.size() - 1}) {
    {
      std::ofstream(dir / "t.bin", std::ios::binary).write(bytes.data(), cut);
    }
    EXPECT_THROW(load_weights<float>(dir / "t.bin", ModelConfig::toy()), Error) << cut;
  }
  std::string bad = bytes;
  bad[0] = 'X';
  {
    std::ofstream(dir / "m.bin", std::ios::binary) << bad;
  }
  EXPECT_THROW(load_weights<float>(dir / "m.bin", ModelConfig::toy()), IoError);
  bad = bytes;
  bad[4] = 2;
  {
    std::ofstream(dir / "v.bin", std::ios::binary) << bad;
  }
  EXPECT_THROW(load_weights<float>(dir / "v.bin", ModelConfig::toy()), IoError);
  EXPECT_THROW(load_weights<float>(dir / "missing.bin", ModelConfig::toy()), IoError);
}

TEST(Weights, WrongBaseWidthNamesTheTensor) {
  ScratchDir dir;
  save_weights(init_params<float>(ModelConfig::toy(), 0), dir / "w.bin");
  ModelConfig wide = ModelConfig::toy();
  wide.base_width = 16;
  try {
    load_weights<float>(dir / "w.bin", wide);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError &e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("hf.embed.weight"), std::string::npos) << msg;
    EXPECT_NE(msg.find("shape mismatch"), std::string::npos) << msg;
  }
  // An ablated model lacks tensors the file has.
  EXPECT_THROW(load_weights<float>(dir / "w.bin", variant(ModelConfig::toy(), false, true)),
               IoError);
}
