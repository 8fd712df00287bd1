#pragma once

// Three-stage restoration network.
//
//   HF branch:  embed -> blocks -> f_e -> [stripe attention] -> blocks -> f_d
//               restored_hf = hf + head(f_d)
//   LF branch:  same structure on the low-frequency component
//   Stage 3:    I0  = gff(embed(b), proj(f_hf_d + f_lf_d))
//               F_E = concat(E3(E2(E1(I0))), avgpool4(f_hf_e + f_lf_e))
//               -> [stripe attention] -> 1x1 -> decoder (two 2x upsamples)
//               restored = b + head(decoder)
//
// Heads start at zero so the untrained network is the identity on all three
// outputs.

#include "mcms/freq.hpp"
#include "mcms/gff.hpp"
#include "mcms/mssa.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace mcms {

struct ModelConfig {
  std::size_t base_width = 32;
  std::size_t hf_blocks = 3;
  std::size_t lf_blocks = 3;
  std::size_t stage3_blocks = 28;
  std::size_t decoder_blocks = 1;  // per stage-3 decoder level
  std::size_t branch_attention_pool = 4;
  bool use_mssa = true;
  bool use_gff = true;
  bool stage3_skips = false; // add E1/E2 outputs to the matching decoder levels
  double freq_tau = 0.1;

  static ModelConfig toy() {
    ModelConfig c;
    c.base_width = 8;
    c.stage3_blocks = 4;
    return c;
  }

  void validate() const {
    if (base_width == 0 || base_width % 8 != 0)
      throw ConfigError("base_width must be a positive multiple of 8, got " +
                        std::to_string(base_width));
    if (hf_blocks < 1)
      throw ConfigError("hf_blocks must be >= 1");
    if (lf_blocks < 1)
      throw ConfigError("lf_blocks must be >= 1");
    if (stage3_blocks < 1)
      throw ConfigError("stage3_blocks must be >= 1");
    if (decoder_blocks < 1)
      throw ConfigError("decoder_blocks must be >= 1");
    if (branch_attention_pool != 1 && branch_attention_pool != 2 &&
        branch_attention_pool != 4)
      throw ConfigError("branch_attention_pool must be 1, 2 or 4");
    if (!(freq_tau >= 0.0 && freq_tau <= 2.0))
      throw ConfigError("freq.tau must lie in [0, 2]");
  }

  // E1/E2/E3 block counts: even split, remainder to E3.
  std::array<std::size_t, 3> encoder_split() const {
    const std::size_t q = stage3_blocks / 3;
    return {q, q, stage3_blocks - 2 * q};
  }

  friend bool operator==(const ModelConfig &, const ModelConfig &) = default;
};

// ---------------------------------------------------------------- block

// norm -> 1x1 (C->2C) -> depthwise 3x3 -> gate a * act(b) -> 1x1 (C->C),
// added to the input.
struct BlockLayout {
  std::size_t channels = 0;
  ParamId norm_gamma = 0, norm_beta = 0;
  ConvLayer expand, depth, project;
};

template <class T>
BlockLayout add_block(ParamStore<T> &store, const std::string &name,
                      std::size_t c, std::mt19937_64 &rng,
                      Init init = Init::FanIn) {
  BlockLayout b;
  b.channels = c;
  b.norm_gamma = store.add(name + ".norm.gamma", Tensor<T>({1, c, 1, 1}, T(1)));
  b.norm_beta = store.add(name + ".norm.beta", Tensor<T>({1, c, 1, 1}));
  b.expand = add_conv(store, name + ".expand", c, 2 * c, 1, rng, init);
  b.depth = add_conv(store, name + ".depth", 2 * c, 2 * c, 3, rng, init,
                     ConvOptions{1, Padding::SameReflect, 2 * c});
  b.project = add_conv(store, name + ".project", c, c, 1, rng, init);
  return b;
}

template <class T>
Var<T> block_apply(const Var<T> &x, const BlockLayout &b, ParamView<T> p) {
  if (x.shape().c != b.channels)
    shape_fail("block: expected " + std::to_string(b.channels) +
               " channels, got " + std::to_string(x.shape().c));
  Var<T> y = channel_norm(x, p[b.norm_gamma], p[b.norm_beta]);
  y = apply(b.expand, y, p);
  y = apply(b.depth, y, p);
  const auto halves = chunk(y, 2);
  y = mul(halves[0], activation(halves[1]));
  y = apply(b.project, y, p);
  return add(x, y);
}

template <class T> struct BlockParams {
  ParamStore<T> store;
  BlockLayout layout;
};

template <class T>
BlockParams<T> make_block_params(std::size_t channels, std::uint64_t seed,
                                 Init init = Init::FanIn) {
  BlockParams<T> p;
  std::mt19937_64 rng(seed);
  p.layout = add_block(p.store, "block", channels, rng, init);
  return p;
}

template <class T>
Tensor<T> block_forward(const Tensor<T> &x, const BlockParams<T> &p) {
  Tape<T> tape(false);
  const auto vars = p.store.bind(tape);
  return block_apply(Tape<T>::constant(x), p.layout, ParamView<T>(vars)).value();
}

template <class T>
Var<T> run_blocks(Var<T> x, const std::vector<BlockLayout> &blocks,
                  ParamView<T> p) {
  for (const auto &b : blocks)
    x = block_apply(x, b, p);
  return x;
}

// ---------------------------------------------------------------- layouts

struct BranchLayout {
  ConvLayer embed; // 3 -> C
  std::vector<BlockLayout> encoder;
  std::optional<MssaLayout> attention;
  std::size_t attention_pool = 1;
  std::vector<BlockLayout> decoder;
  ConvLayer head; // C -> 3, zero-initialized
};

struct Stage3Layout {
  ConvLayer embed_input; // 3 -> C
  ConvLayer embed_fused; // C -> C, lifts F_O for the fusion
  std::optional<GffLayout> fusion;
  std::vector<BlockLayout> e1;
  ConvLayer down1; // C -> 2C, stride 2
  std::vector<BlockLayout> e2;
  ConvLayer down2; // 2C -> 4C, stride 2
  std::vector<BlockLayout> e3;
  std::optional<MssaLayout> attention; // on the 5C concat
  ConvLayer bottleneck;                // 5C -> 4C, 1x1
  std::vector<BlockLayout> d3;
  ConvLayer up1; // 4C -> 2C, 1x1 after upsampling
  std::vector<BlockLayout> d2;
  ConvLayer up2; // 2C -> C
  std::vector<BlockLayout> d1;
  ConvLayer head; // C -> 3, zero-initialized
};

template <class T> struct McmsModel {
  ModelConfig config;
  ParamStore<T> params;
  BranchLayout hf, lf;
  Stage3Layout stage3;
};

namespace detail {
template <class T>
std::vector<BlockLayout> add_blocks(ParamStore<T> &s, const std::string &name,
                                    std::size_t count, std::size_t c,
                                    std::mt19937_64 &rng) {
  std::vector<BlockLayout> v;
  for (std::size_t i = 0; i < count; ++i)
    v.push_back(add_block(s, name + "." + std::to_string(i), c, rng));
  return v;
}

template <class T>
BranchLayout add_branch(ParamStore<T> &s, const std::string &name,
                        std::size_t blocks, const ModelConfig &cfg,
                        std::mt19937_64 &rng) {
  const std::size_t c = cfg.base_width;
  BranchLayout b;
  b.embed = add_conv(s, name + ".embed", 3, c, 3, rng);
  b.encoder = add_blocks(s, name + ".encoder", blocks, c, rng);
  if (cfg.use_mssa) {
    b.attention = add_mssa(s, name + ".attention", c, rng);
    b.attention_pool = cfg.branch_attention_pool;
  }
  b.decoder = add_blocks(s, name + ".decoder", blocks, c, rng);
  b.head = add_conv(s, name + ".head", c, 3, 3, rng, Init::Zero);
  return b;
}
} // namespace detail

// Fan-in uniform weights, zero biases, zero heads. Deterministic per seed.
template <class T>
McmsModel<T> init_params(const ModelConfig &cfg, std::uint64_t seed) {
  cfg.validate();
  McmsModel<T> m;
  m.config = cfg;
  std::mt19937_64 rng(seed);
  auto &s = m.params;
  const std::size_t c = cfg.base_width;
  m.hf = detail::add_branch(s, "hf", cfg.hf_blocks, cfg, rng);
  m.lf = detail::add_branch(s, "lf", cfg.lf_blocks, cfg, rng);

  auto &t = m.stage3;
  const auto split = cfg.encoder_split();
  t.embed_input = add_conv(s, "stage3.embed_input", 3, c, 3, rng);
  t.embed_fused = add_conv(s, "stage3.embed_fused", c, c, 3, rng);
  if (cfg.use_gff)
    t.fusion = add_gff(s, "stage3.fusion", c, rng);
  t.e1 = detail::add_blocks(s, "stage3.e1", split[0], c, rng);
  t.down1 = add_conv(s, "stage3.down1", c, 2 * c, 3, rng, Init::FanIn,
                     ConvOptions{2, Padding::SameReflect, 1});
  t.e2 = detail::add_blocks(s, "stage3.e2", split[1], 2 * c, rng);
  t.down2 = add_conv(s, "stage3.down2", 2 * c, 4 * c, 3, rng, Init::FanIn,
                     ConvOptions{2, Padding::SameReflect, 1});
  t.e3 = detail::add_blocks(s, "stage3.e3", split[2], 4 * c, rng);
  if (cfg.use_mssa)
    t.attention = add_mssa(s, "stage3.attention", 5 * c, rng);
  t.bottleneck = add_conv(s, "stage3.bottleneck", 5 * c, 4 * c, 1, rng);
  t.d3 = detail::add_blocks(s, "stage3.d3", cfg.decoder_blocks, 4 * c, rng);
  t.up1 = add_conv(s, "stage3.up1", 4 * c, 2 * c, 1, rng);
  t.d2 = detail::add_blocks(s, "stage3.d2", cfg.decoder_blocks, 2 * c, rng);
  t.up2 = add_conv(s, "stage3.up2", 2 * c, c, 1, rng);
  t.d1 = detail::add_blocks(s, "stage3.d1", cfg.decoder_blocks, c, rng);
  t.head = add_conv(s, "stage3.head", c, 3, 3, rng, Init::Zero);
  return m;
}

// ---------------------------------------------------------------- forward

template <class T> struct BranchOutput {
  Var<T> restored;
  Var<T> f_e; // encoder output, C x H x W
  Var<T> f_d; // decoder feature before the head
};

template <class T> Var<T> pool_down(Var<T> x, std::size_t k) {
  return k == 1 ? x : avgpool2d(x, k);
}

template <class T> Var<T> upsample_by(Var<T> x, std::size_t k) {
  for (; k > 1; k /= 2)
    x = upsample2x(x);
  return x;
}

template <class T>
BranchOutput<T> branch_apply(const Var<T> &comp, const BranchLayout &b,
                             ParamView<T> p) {
  if (comp.shape().c != 3)
    shape_fail("branch: expected a 3-channel component, got " +
               comp.shape().str());
  Var<T> x = apply(b.embed, comp, p);
  const Var<T> f_e = run_blocks(x, b.encoder, p);
  x = f_e;
  if (b.attention) {
    // Attention runs on the pooled map; its residual-free term is lifted back
    // to full resolution and added.
    const Var<T> att =
        mssa_attention(pool_down(f_e, b.attention_pool), *b.attention, p);
    x = add(f_e, upsample_by(att, b.attention_pool));
  }
  const Var<T> f_d = run_blocks(x, b.decoder, p);
  return {add(comp, apply(b.head, f_d, p)), f_e, f_d};
}

// `skips`, when given, receives the E1 and E2 outputs.
template <class T>
Var<T> fuse_stage3(const Var<T> &input, const BranchOutput<T> &hf,
                   const BranchOutput<T> &lf, const Stage3Layout &t,
                   ParamView<T> p, std::array<Var<T>, 2> *skips = nullptr) {
  if (hf.f_e.shape() != lf.f_e.shape() || hf.f_d.shape() != lf.f_d.shape())
    shape_fail("fuse_stage3: branch feature shapes differ");
  if (hf.f_e.shape().h != input.shape().h || hf.f_e.shape().w != input.shape().w)
    shape_fail("fuse_stage3: branch features and input resolution differ");
  const Var<T> f_o = add(hf.f_d, lf.f_d);
  const Var<T> lifted_in = apply(t.embed_input, input, p);
  const Var<T> lifted_fo = apply(t.embed_fused, f_o, p);
  const Var<T> i0 = t.fusion ? gff_apply(lifted_in, lifted_fo, *t.fusion, p)
                             : add(lifted_in, lifted_fo);
  const Var<T> e1 = run_blocks(i0, t.e1, p);
  const Var<T> e2 = run_blocks(apply(t.down1, e1, p), t.e2, p);
  const Var<T> e = run_blocks(apply(t.down2, e2, p), t.e3, p);
  if (skips)
    *skips = {e1, e2};
  const Var<T> pooled = avgpool2d(add(lf.f_e, hf.f_e), 4);
  if (pooled.shape().h != e.shape().h || pooled.shape().w != e.shape().w)
    shape_fail("fuse_stage3: concat arms differ in resolution");
  return concat(std::vector<Var<T>>{e, pooled});
}

template <class T> struct McmsOutput {
  Var<T> restored;
  Var<T> restored_hf;
  Var<T> restored_lf;
};

inline void check_model_input(const Shape &s) {
  if (s.c != 3)
    shape_fail("model input must have 3 channels, got " + s.str());
  if (s.h % 32 != 0 || s.w % 32 != 0)
    shape_fail("model input spatial dims " + std::to_string(s.h) + "x" +
               std::to_string(s.w) + " must be divisible by 32");
}

// Differentiable forward given the already split components.
template <class T>
McmsOutput<T> mcms_apply(const Var<T> &blurry, const Var<T> &hf_comp,
                         const Var<T> &lf_comp, const McmsModel<T> &m,
                         ParamView<T> p) {
  check_model_input(blurry.shape());
  const BranchOutput<T> hf = branch_apply(hf_comp, m.hf, p);
  const BranchOutput<T> lf = branch_apply(lf_comp, m.lf, p);
  const auto &t = m.stage3;
  std::array<Var<T>, 2> skips;
  Var<T> x = fuse_stage3(blurry, hf, lf, t, p, &skips);
  if (t.attention)
    x = mssa_apply(x, *t.attention, p);
  x = run_blocks(apply(t.bottleneck, x, p), t.d3, p);
  x = apply(t.up1, upsample2x(x), p);
  if (m.config.stage3_skips)
    x = add(x, skips[1]);
  x = run_blocks(x, t.d2, p);
  x = apply(t.up2, upsample2x(x), p);
  if (m.config.stage3_skips)
    x = add(x, skips[0]);
  x = run_blocks(x, t.d1, p);
  return {add(blurry, apply(t.head, x, p)), hf.restored, lf.restored};
}

template <class T> struct McmsImages {
  Tensor<T> restored;
  Tensor<T> restored_hf;
  Tensor<T> restored_lf;
};

// Inference: split, run, clamp the final image to [0, 1].
template <class T>
McmsImages<T> mcms_forward(const Tensor<T> &blurry, const McmsModel<T> &m,
                           const FrequencyMask &mask) {
  check_model_input(blurry.shape());
  const auto split = split_hf_lf(blurry, mask);
  Tape<T> tape(false);
  const auto vars = m.params.bind(tape);
  const auto out =
      mcms_apply(Tape<T>::constant(blurry), Tape<T>::constant(split.hf),
                 Tape<T>::constant(split.lf), m, ParamView<T>(vars));
  McmsImages<T> res{out.restored.value(), out.restored_hf.value(),
                    out.restored_lf.value()};
  for (auto &v : res.restored.values())
    v = std::clamp(v, T(0), T(1));
  return res;
}

// ---------------------------------------------------------------- weights

// FNV-1a over every parameter name and its little-endian f32 payload.
template <class T> std::uint64_t weights_checksum(const ParamStore<T> &s) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto mix = [&h](const void *data, std::size_t n) {
    const auto *b = static_cast<const unsigned char *>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (std::size_t i = 0; i < s.size(); ++i) {
    mix(s.name(i).data(), s.name(i).size());
    for (T v : s[i].values()) {
      const float f = static_cast<float>(v);
      mix(&f, sizeof f);
    }
  }
  return h;
}

inline constexpr char kWeightMagic[4] = {'M', 'C', 'M', 'S'};
inline constexpr std::uint32_t kWeightVersion = 1;

namespace detail {
inline void put_u32(std::ostream &o, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  o.write(reinterpret_cast<const char *>(b), 4);
}

inline bool get_u32(std::istream &in, std::uint32_t &v) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char *>(b), 4))
    return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) |
      (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}
} // namespace detail

// "MCMS", u32 version, then per tensor: u32 name length, name bytes,
// u32 rank (always 4), u32 dims, f32 payload. All little-endian.
template <class T>
void save_weights(const McmsModel<T> &m, const std::filesystem::path &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot write weights to " + path.string());
  out.write(kWeightMagic, 4);
  detail::put_u32(out, kWeightVersion);
  const auto &s = m.params;
  for (std::size_t i = 0; i < s.size(); ++i) {
    detail::put_u32(out, static_cast<std::uint32_t>(s.name(i).size()));
    out.write(s.name(i).data(), static_cast<std::streamsize>(s.name(i).size()));
    const Shape sh = s[i].shape();
    detail::put_u32(out, 4);
    for (std::size_t d : {sh.n, sh.c, sh.h, sh.w})
      detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (T v : s[i].values()) {
      const float f = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      detail::put_u32(out, bits);
    }
  }
  if (!out)
    throw IoError("failed writing weights to " + path.string());
}

// Builds the model for cfg and fills it from path; every tensor in the model
// must appear in the file with the same shape.
template <class T>
McmsModel<T> load_weights(const std::filesystem::path &path,
                          const ModelConfig &cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open weights " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kWeightMagic, 4) != 0)
    throw IoError(path.string() + ": bad magic, not an MCMS weight file");
  std::uint32_t version = 0;
  if (!detail::get_u32(in, version))
    throw IoError(path.string() + ": truncated header");
  if (version != kWeightVersion)
    throw IoError(path.string() + ": unsupported weight format version " +
                  std::to_string(version));

  McmsModel<T> m = init_params<T>(cfg, 0);
  std::vector<bool> seen(m.params.size(), false);
  while (in.peek() != std::char_traits<char>::eof()) {
    std::uint32_t len = 0, rank = 0;
    if (!detail::get_u32(in, len) || len > 4096)
      throw IoError(path.string() + ": truncated or corrupt record header");
    std::string name(len, '\0');
    if (!in.read(name.data(), len) || !detail::get_u32(in, rank) || rank != 4)
      throw IoError(path.string() + ": truncated or corrupt record '" + name +
                    "'");
    std::uint32_t dims[4];
    for (auto &d : dims)
      if (!detail::get_u32(in, d))
        throw IoError(path.string() + ": truncated record '" + name + "'");
    ParamId id;
    try {
      id = m.params.id_of(name);
    } catch (const Error &) {
      throw IoError(path.string() + ": tensor '" + name +
                    "' does not exist in this model configuration");
    }
    Tensor<T> &dst = m.params[id];
    const Shape want = dst.shape();
    const Shape got{dims[0], dims[1], dims[2], dims[3]};
    if (got != want)
      throw ShapeError(path.string() + ": shape mismatch for tensor '" + name +
                       "': file has " + got.str() + ", model expects " +
                       want.str());
    for (auto &v : dst.values()) {
      std::uint32_t bits;
      if (!detail::get_u32(in, bits))
        throw IoError(path.string() + ": truncated payload for '" + name + "'");
      float f;
      std::memcpy(&f, &bits, 4);
      v = static_cast<T>(f);
    }
    seen[id] = true;
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i])
      throw IoError(path.string() + ": missing tensor '" + m.params.name(i) + "'");
  return m;
}

} // namespace mcms
