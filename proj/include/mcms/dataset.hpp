#pragma once

#include "mcms/blur.hpp"
#include "mcms/image_io.hpp"
#include "mcms/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace mcms {

namespace fs = std::filesystem;

template <class T = float> struct ImagePair {
  Tensor<T> blurry;
  Tensor<T> sharp;
  std::string id;
};

struct ManifestEntry {
  std::string id;
  std::string blurry; // relative to the manifest directory
  std::string sharp;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  double noise_sigma = 0.0;
  std::vector<ManifestEntry> entries;
  fs::path root; // directory holding manifest.json; not serialized

  fs::path blurry_path(const ManifestEntry &e) const { return root / e.blurry; }
  fs::path sharp_path(const ManifestEntry &e) const { return root / e.sharp; }
};

struct BlurParams {
  double length = 7.0;
  std::optional<double> angle; // random per image when unset
  double noise_sigma = 0.01;
};

inline nlohmann::ordered_json manifest_to_json(const DatasetManifest &m) {
  nlohmann::ordered_json j;
  j["seed"] = m.seed;
  j["noise_sigma"] = m.noise_sigma;
  j["entries"] = nlohmann::ordered_json::array();
  for (const auto &e : m.entries)
    j["entries"].push_back(
        {{"id", e.id}, {"blurry", e.blurry}, {"sharp", e.sharp}});
  return j;
}

inline void write_manifest(const DatasetManifest &m, const fs::path &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot write " + path.string());
  out << manifest_to_json(m).dump(2) << "\n";
  if (!out)
    throw IoError("failed writing " + path.string());
}

inline DatasetManifest load_manifest(const fs::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception &e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
  DatasetManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.noise_sigma = j.at("noise_sigma").get<double>();
    for (const auto &e : j.at("entries"))
      m.entries.push_back({e.at("id").get<std::string>(),
                           e.at("blurry").get<std::string>(),
                           e.at("sharp").get<std::string>()});
  } catch (const nlohmann::json::exception &e) {
    throw IoError("manifest " + path.string() + " is missing fields: " +
                  e.what());
  }
  m.root = path.parent_path();
  std::set<std::string> ids;
  for (const auto &e : m.entries) {
    if (!ids.insert(e.id).second)
      throw IoError("manifest has duplicate id '" + e.id + "'");
    for (const fs::path &p : {m.blurry_path(e), m.sharp_path(e)})
      if (!fs::exists(p))
        throw IoError("manifest entry '" + e.id + "' points at missing file " +
                      p.string());
  }
  return m;
}

template <class T = float>
std::vector<ImagePair<T>> load_pairs(const DatasetManifest &m) {
  std::vector<ImagePair<T>> pairs(m.entries.size());
  parallel_for(m.entries.size(), [&](std::size_t i) {
    const auto &e = m.entries[i];
    pairs[i] = {load_png<T>(m.blurry_path(e)), load_png<T>(m.sharp_path(e)),
                e.id};
    if (pairs[i].blurry.shape() != pairs[i].sharp.shape())
      throw IoError("pair '" + e.id + "' has mismatched image sizes");
  });
  return pairs;
}

// Blurs every PNG in sharp_dir into out_dir/blurry and writes
// out_dir/manifest.json. Image i draws from stream seed ^ i.
inline DatasetManifest build_manifest(const fs::path &sharp_dir,
                                      const fs::path &out_dir,
                                      const BlurParams &params,
                                      std::uint64_t seed) {
  if (!fs::is_directory(sharp_dir))
    throw IoError("not a directory: " + sharp_dir.string());
  std::vector<fs::path> sources;
  for (const auto &de : fs::directory_iterator(sharp_dir))
    if (de.is_regular_file() && de.path().extension() == ".png")
      sources.push_back(de.path());
  std::sort(sources.begin(), sources.end());
  if (sources.empty())
    throw IoError("no PNG images in " + sharp_dir.string());

  std::error_code ec;
  fs::create_directories(out_dir / "blurry", ec);
  if (ec)
    throw IoError("cannot create " + (out_dir / "blurry").string() + ": " +
                  ec.message());

  DatasetManifest m;
  m.seed = seed;
  m.noise_sigma = params.noise_sigma;
  m.root = out_dir;
  m.entries.resize(sources.size());
  const fs::path abs_out = fs::absolute(out_dir);
  parallel_for(sources.size(), [&](std::size_t i) {
    std::mt19937_64 rng(seed ^ static_cast<std::uint64_t>(i));
    const double angle =
        params.angle ? *params.angle
                     : std::uniform_real_distribution<double>(0.0, 180.0)(rng);
    const std::uint64_t noise_seed = rng();
    const std::string id = sources[i].stem().string();
    const Tensor<float> sharp = load_png<float>(sources[i]);
    const Tensor<float> blurry =
        synthesize_blur(sharp, motion_kernel(params.length, angle),
                        params.noise_sigma, noise_seed);
    const fs::path rel_blurry = fs::path("blurry") / (id + ".png");
    save_png(out_dir / rel_blurry, blurry);
    m.entries[i] = {id, rel_blurry.generic_string(),
                    fs::relative(fs::absolute(sources[i]), abs_out)
                        .generic_string()};
  });
  std::set<std::string> ids;
  for (const auto &e : m.entries)
    if (!ids.insert(e.id).second)
      throw IoError("duplicate image id '" + e.id + "'");
  write_manifest(m, out_dir / "manifest.json");
  return m;
}

// Writes `count` procedural sharp images (size x size) into dir.
inline void generate_sharp_images(const fs::path &dir, std::size_t count,
                                  std::size_t size, std::uint64_t seed) {
  fs::create_directories(dir);
  parallel_for(count, [&](std::size_t i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%03zu.png", i);
    save_png(dir / name, procedural_image<float>(
                             size, size, seed * 1000003ULL + i));
  });
}

} // namespace mcms
