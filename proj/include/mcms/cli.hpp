#pragma once

// The `mcms` command line: synth, decompose, train, deblur, eval, gradcheck
// and selftest. run_cli returns the process exit code.

#include "mcms/config.hpp"
#include "mcms/dataset.hpp"
#include "mcms/decompose.hpp"
#include "mcms/selftest.hpp"
#include "mcms/train.hpp"

#include <CLI11.hpp>

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace mcms {

namespace cli_detail {
namespace fs = std::filesystem;

inline std::string hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

// Flags shared by every command that builds or trains a model.
struct Overrides {
  std::string config;
  std::string in, out_dir, weights;
  std::optional<std::uint64_t> seed;
  std::optional<double> tau, lr;
  std::optional<std::size_t> steps, batch, crop;
  bool no_mssa = false, no_gff = false;
};

inline void add_model_flags(CLI::App *c, Overrides &o) {
  c->add_option("--config", o.config, "JSON run configuration");
  c->add_option("--seed", o.seed, "Seed for all randomness");
  c->add_option("--tau", o.tau, "LF cutoff: keep u/h + v/w <= tau");
  c->add_flag("--no-mssa", o.no_mssa, "Disable multi-scale stripe attention");
  c->add_flag("--no-gff", o.no_gff, "Disable grouped feature fusion");
}

// Defaults <- config file <- explicit flags, validated.
inline RunConfig resolve(const Overrides &o,
                         const std::optional<fs::path> &fallback = {}) {
  RunConfig c;
  if (!o.config.empty())
    c = load_config(o.config);
  else if (fallback && fs::exists(*fallback))
    c = load_config(*fallback);
  if (!o.in.empty())
    c.paths.data = o.in;
  if (!o.out_dir.empty())
    c.paths.out_dir = o.out_dir;
  if (!o.weights.empty())
    c.paths.weights = o.weights;
  if (o.seed)
    c.train.seed = *o.seed;
  if (o.tau)
    c.model.freq_tau = *o.tau;
  if (o.lr)
    c.train.lr = *o.lr;
  if (o.steps)
    c.train.steps = *o.steps;
  if (o.batch)
    c.train.batch = *o.batch;
  if (o.crop)
    c.train.crop = *o.crop;
  if (o.no_mssa)
    c.model.use_mssa = false;
  if (o.no_gff)
    c.model.use_gff = false;
  detail::validate_named(c);
  return c;
}

inline McmsModel<float> model_for(const RunConfig &c) {
  if (c.paths.weights.empty())
    return init_params<float>(c.model, c.train.seed);
  return load_weights<float>(c.paths.weights, c.model);
}

// Config stored next to a weight file by `train`.
inline std::optional<fs::path> sibling_config(const std::string &weights) {
  if (weights.empty())
    return std::nullopt;
  return fs::path(weights).parent_path() / "resolved_config.json";
}

inline fs::path dataset_manifest(const std::string &dir) {
  if (dir.empty())
    throw ConfigError("no dataset given (use --in or paths.data)");
  const fs::path p(dir);
  return fs::is_directory(p) ? p / "manifest.json" : p;
}

inline int cmd_synth(const std::string &in, std::size_t generate,
                     std::size_t size, const std::string &out_dir,
                     const BlurParams &bp, std::uint64_t seed,
                     std::ostream &out) {
  if (in.empty() == (generate == 0))
    throw ConfigError("synth needs exactly one of --in or --generate");
  fs::path sharp = in;
  if (generate) {
    if (size < 1)
      throw ConfigError("--size must be >= 1");
    sharp = fs::path(out_dir) / "sharp";
    generate_sharp_images(sharp, generate, size, seed);
  }
  const auto m = build_manifest(sharp, out_dir, bp, seed);
  out << "wrote " << m.entries.size() << " pairs to "
      << (fs::path(out_dir) / "manifest.json").string() << "\n";
  return 0;
}

inline void write_train_log(const TrainState<float> &st, const fs::path &path) {
  std::ofstream f(path, std::ios::binary);
  if (!f)
    throw IoError("cannot write " + path.string());
  f << "step,l_hf,l_lf,l_o,l_msfr,l_total\n";
  char buf[160];
  for (std::size_t i = 0; i < st.loss_history.size(); ++i) {
    const auto &b = st.loss_history[i];
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,%.6f\n", i + 1,
                  b.l_hf, b.l_lf, b.l_o, b.l_msfr, b.l_total);
    f << buf;
  }
}

inline int cmd_train(const Overrides &o, std::size_t log_every,
                     std::ostream &out) {
  const RunConfig c = resolve(o);
  const auto manifest = load_manifest(dataset_manifest(c.paths.data));
  const auto data = load_pairs<float>(manifest);
  McmsModel<float> model = model_for(c);
  const fs::path dir = c.paths.out_dir;
  write_resolved_config(c, dir);
  TrainState<float> st = make_train_state(model, c.train);
  train(model, data, st, c.train, [&](const EpochSummary &e) {
    if (log_every && (e.epoch % log_every == 0 || e.steps_done == c.train.steps))
      out << "epoch " << e.epoch << " step " << e.steps_done << " L_T "
          << format_metric(e.mean.l_total) << "\n";
  });
  save_weights(model, dir / "weights.bin");
  write_train_log(st, dir / "train_log.csv");
  out << "weights " << (dir / "weights.bin").string() << "\n"
      << "checksum " << hex64(weights_checksum(model.params)) << "\n";
  return 0;
}

inline int cmd_deblur(const Overrides &o, std::ostream &out) {
  if (o.weights.empty())
    throw ConfigError("deblur needs --weights");
  if (o.in.empty() || o.out_dir.empty())
    throw ConfigError("deblur needs --in and --out-dir");
  const RunConfig c = resolve(o, sibling_config(o.weights));
  const McmsModel<float> model = model_for(c);
  std::vector<fs::path> inputs;
  if (fs::is_directory(o.in)) {
    for (const auto &de : fs::directory_iterator(o.in))
      if (de.is_regular_file() && de.path().extension() == ".png")
        inputs.push_back(de.path());
    std::sort(inputs.begin(), inputs.end());
  } else {
    inputs.push_back(o.in);
  }
  if (inputs.empty())
    throw IoError("no PNG images in " + o.in);
  fs::create_directories(o.out_dir);
  for (const auto &p : inputs) {
    const auto img = load_png<float>(p);
    const auto dst = fs::path(o.out_dir) / (p.stem().string() + ".png");
    save_png(dst, deblur_image(img, model));
    out << dst.string() << "\n";
  }
  return 0;
}

inline int cmd_eval(const Overrides &o, std::ostream &out) {
  const RunConfig c = resolve(o, sibling_config(o.weights));
  const auto manifest = load_manifest(dataset_manifest(c.paths.data));
  const auto pairs = load_pairs<float>(manifest);
  const McmsModel<float> model = model_for(c);
  const EvalReport r = evaluate(model, pairs);
  const fs::path dir = c.paths.out_dir;
  fs::create_directories(dir);
  write_eval_csv(r, dir / "eval.csv");
  out << "rows " << r.rows.size() << "\n"
      << "mean psnr_db " << format_metric(r.mean.psnr) << " ssim "
      << format_metric(r.mean.ssim) << " baseline_psnr_db "
      << format_metric(r.mean.baseline_psnr) << " baseline_ssim "
      << format_metric(r.mean.baseline_ssim) << "\n"
      << "csv " << (dir / "eval.csv").string() << "\n";
  return 0;
}

inline void print_check(std::ostream &out, const CheckResult &r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3e (tol %.0e)", r.value, r.tolerance);
  out << (r.pass ? "PASS " : "FAIL ") << r.name << " " << buf;
  if (!r.detail.empty())
    out << " " << r.detail;
  out << "\n";
}

inline int cmd_gradcheck(std::uint64_t seed, std::size_t trials,
                         std::size_t coords, bool skip_model,
                         std::ostream &out) {
  bool ok = true;
  const auto report = [&](const CheckResult &r) {
    print_check(out, r);
    ok = ok && r.pass;
  };
  for (const auto &c : op_grad_cases())
    report(check(c.name, check_op_case(c, trials, seed).max_relative_error, 1e-4));
  for (const auto &c : layer_grad_cases())
    report(check(c.name, check_layer_case(c, trials, seed).max_relative_error, 1e-4));
  if (!skip_model) {
    const auto r = model_grad_check(ModelConfig::toy(), 32, seed, coords);
    report(check("model_total_loss", r.max_relative_error, 1e-3,
                 "coords " + std::to_string(r.coordinates)));
  }
  return ok ? 0 : 1;
}

inline int cmd_selftest(std::uint64_t seed, bool with_model, std::ostream &out) {
  bool ok = true;
  for (const auto &r : run_selftest(seed, with_model)) {
    print_check(out, r);
    ok = ok && r.pass;
  }
  out << (ok ? "selftest passed" : "selftest FAILED") << "\n";
  return ok ? 0 : 1;
}
} // namespace cli_detail

inline int run_cli(int argc, char **argv, std::ostream &out = std::cout,
                   std::ostream &err = std::cerr) {
  using namespace cli_detail;
  CLI::App app{"Frequency-split multi-scale deblurring network toolkit", "mcms"};
  app.require_subcommand(1);
  app.fallthrough(false);

  // synth
  std::string synth_in, synth_out;
  std::size_t generate = 0, size = 64;
  std::uint64_t synth_seed = 0;
  BlurParams bp;
  std::optional<double> angle;
  auto *synth = app.add_subcommand("synth", "Blur sharp PNGs into a training set with manifest.json");
  synth->add_option("--in", synth_in, "Directory of sharp PNG images");
  synth->add_option("--generate", generate, "Generate N procedural sharp images instead of --in");
  synth->add_option("--size", size, "Side length of generated images")->capture_default_str();
  synth->add_option("--out-dir", synth_out, "Output dataset directory")->required();
  synth->add_option("--seed", synth_seed, "Seed for angles and noise")->capture_default_str();
  synth->add_option("--length", bp.length, "Motion length in pixels")->capture_default_str();
  synth->add_option("--angle", angle, "Motion angle in degrees (random per image if unset)");
  synth->add_option("--sigma", bp.noise_sigma, "Gaussian noise sigma")->capture_default_str();

  // decompose
  std::string dec_in, dec_out;
  double dec_tau = 0.1;
  auto *decompose = app.add_subcommand(
      "decompose",
      "Split a PNG into <name>_hf.png and <name>_lf.png. Both are stored "
      "offset-encoded as v*0.5+0.5 (HF is signed); decode each with 2*p-1 "
      "and sum them to recover the input within 1/255.");
  decompose->add_option("--in", dec_in, "Input PNG")->required();
  decompose->add_option("--tau", dec_tau, "LF cutoff: keep u/h + v/w <= tau")->capture_default_str();
  decompose->add_option("--out-dir", dec_out, "Output directory")->required();

  // train
  Overrides tr;
  std::size_t log_every = 10;
  auto *train_cmd = app.add_subcommand("train", "Train on a synth dataset; writes weights.bin, train_log.csv, resolved_config.json");
  add_model_flags(train_cmd, tr);
  train_cmd->add_option("--in", tr.in, "Dataset directory (holding manifest.json)");
  train_cmd->add_option("--out-dir", tr.out_dir, "Run output directory");
  train_cmd->add_option("--weights", tr.weights, "Initial weights (default: fresh init)");
  train_cmd->add_option("--steps", tr.steps, "Optimizer steps");
  train_cmd->add_option("--lr", tr.lr, "Adam learning rate");
  train_cmd->add_option("--batch", tr.batch, "Batch size");
  train_cmd->add_option("--crop", tr.crop, "Random crop size (multiple of 32)");
  train_cmd->add_option("--log-every", log_every, "Print every N epochs (0: quiet)")->capture_default_str();

  // deblur
  Overrides db;
  auto *deblur = app.add_subcommand("deblur", "Restore a PNG (or a directory of PNGs)");
  add_model_flags(deblur, db);
  deblur->add_option("--in", db.in, "Input PNG or directory")->required();
  deblur->add_option("--out-dir", db.out_dir, "Output directory")->required();
  deblur->add_option("--weights", db.weights, "Trained weights")->required();

  // eval
  Overrides ev;
  auto *eval = app.add_subcommand("eval", "PSNR/SSIM over a dataset; writes eval.csv");
  add_model_flags(eval, ev);
  eval->add_option("--in", ev.in, "Dataset directory (holding manifest.json)");
  eval->add_option("--out-dir", ev.out_dir, "Output directory");
  eval->add_option("--weights", ev.weights, "Trained weights (default: fresh init)");

  // gradcheck
  std::uint64_t gc_seed = 0;
  std::size_t gc_trials = 10, gc_coords = 2;
  bool gc_skip_model = false;
  auto *gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operator and the full model");
  gradcheck->add_option("--seed", gc_seed)->capture_default_str();
  gradcheck->add_option("--trials", gc_trials, "Random inputs per operator")->capture_default_str();
  gradcheck->add_option("--coords", gc_coords, "Sampled coordinates per model tensor")->capture_default_str();
  gradcheck->add_flag("--skip-model", gc_skip_model, "Operators only");

  // selftest
  std::uint64_t st_seed = 0;
  bool st_model = false;
  auto *selftest = app.add_subcommand("selftest", "Run the invariant suite, PASS/FAIL per group");
  selftest->add_option("--seed", st_seed)->capture_default_str();
  selftest->add_flag("--with-model", st_model, "Include the full-model gradient check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &) {
    out << (app.get_subcommands().empty() ? app.help()
                                          : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp &) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError &e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (*synth) {
      bp.angle = angle;
      return cmd_synth(synth_in, generate, size, synth_out, bp, synth_seed, out);
    }
    if (*decompose) {
      const auto r = decompose_png(dec_in, dec_tau, dec_out);
      out << r.hf.string() << "\n" << r.lf.string() << "\n";
      return 0;
    }
    if (*train_cmd)
      return cmd_train(tr, log_every, out);
    if (*deblur)
      return cmd_deblur(db, out);
    if (*eval)
      return cmd_eval(ev, out);
    if (*gradcheck)
      return cmd_gradcheck(gc_seed, gc_trials, gc_coords, gc_skip_model, out);
    if (*selftest)
      return cmd_selftest(st_seed, st_model, out);
  } catch (const std::exception &e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << "\n";
    return 1;
  }
  return 2;
}

} // namespace mcms
