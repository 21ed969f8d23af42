#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "lldiff/data/manifest.hpp"
#include "lldiff/data/synth.hpp"
#include "lldiff/metrics.hpp"

namespace lldiff::data {

struct DatasetConfig {
  std::string corpus = "toy";  // "toy" or a directory of PNG files
  int num_scenes = 8;          // for a directory: at most this many files, 0 = all
  int height = 64;             // clean high-resolution size
  int width = 64;
  SynthParams params{};
  double val_fraction = 0.0;
  double test_fraction = 0.25;
  std::uint64_t seed = 0;

  int channels() const { return params.pattern == CfaPattern::rggb ? 3 : 1; }

  void validate() const {
    params.validate();
    require(corpus == "toy" || num_scenes >= 0, ErrorCode::config, "num_scenes must be non-negative");
    require(corpus != "toy" || num_scenes > 0, ErrorCode::config, "num_scenes must be positive");
    require(val_fraction >= 0 && test_fraction >= 0 && val_fraction + test_fraction <= 1.0, ErrorCode::config,
            "split fractions must be non-negative and sum to at most 1");
    const int unit = params.max_zoom() * (params.pattern == CfaPattern::rggb ? 2 : 1);
    require(height > 0 && width > 0 && height % unit == 0 && width % unit == 0, ErrorCode::config,
            "clean image size must be a positive multiple of " + std::to_string(unit));
  }
};

inline std::string scene_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%04d", index);
  return buf;
}

/// Leading scenes train, then validation, then test.
inline std::vector<std::string> assign_splits(int count, double val_fraction, double test_fraction) {
  const int n_test = static_cast<int>(std::lround(count * test_fraction));
  const int n_val = std::min(count - n_test, static_cast<int>(std::lround(count * val_fraction)));
  std::vector<std::string> out(static_cast<std::size_t>(count), "train");
  for (int i = count - n_test - n_val; i < count - n_test; ++i) out[static_cast<std::size_t>(i)] = "val";
  for (int i = count - n_test; i < count; ++i) out[static_cast<std::size_t>(i)] = "test";
  return out;
}

namespace detail {

/// Linear radiance from a user PNG: undo the display gamma, match the
/// channel count and centre-crop to the configured size.
inline ImagePlanes<double> corpus_image(const std::filesystem::path& path, const DatasetConfig& cfg) {
  ImagePlanes<double> img = io::read_png<double>(path);
  require(img.height() >= cfg.height && img.width() >= cfg.width, ErrorCode::invalid_argument,
          "corpus image " + path.string() + " is smaller than " + std::to_string(cfg.height) + "x" +
              std::to_string(cfg.width));
  if (img.channels() == 3 && cfg.channels() == 1) img = luma(img);
  if (img.channels() == 1 && cfg.channels() == 3) {
    ImagePlanes<double> rgb(Shape{1, 3, img.height(), img.width()});
    for (int c = 0; c < 3; ++c) std::copy(img.plane(0, 0).begin(), img.plane(0, 0).end(), rgb.plane(0, c).begin());
    img = std::move(rgb);
  }
  for (double& v : img.values()) v = std::pow(std::clamp(v, 0.0, 1.0), cfg.params.isp.gamma);
  const int y0 = (img.height() - cfg.height) / 2, x0 = (img.width() - cfg.width) / 2;
  ImagePlanes<double> out(Shape{1, img.channels(), cfg.height, cfg.width});
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x) out(0, c, y, x) = img(0, c, y0 + y, x0 + x);
  return out;
}

inline std::vector<std::filesystem::path> corpus_files(const DatasetConfig& cfg) {
  require(std::filesystem::is_directory(cfg.corpus), ErrorCode::io, "corpus directory " + cfg.corpus + " not found");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(cfg.corpus))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  require(!files.empty(), ErrorCode::invalid_argument, "corpus directory " + cfg.corpus + " has no PNG images");
  if (cfg.num_scenes > 0 && static_cast<int>(files.size()) > cfg.num_scenes)
    files.resize(static_cast<std::size_t>(cfg.num_scenes));
  return files;
}

inline Json describe(const DatasetConfig& cfg) {
  const auto& p = cfg.params;
  return Json{{"corpus", cfg.corpus},
              {"seed", cfg.seed},
              {"height", cfg.height},
              {"width", cfg.width},
              {"ev_levels", p.ev_levels},
              {"iso", p.iso},
              {"zooms", p.zooms},
              {"sigma_g", p.sensor.sigma_g},
              {"lambda_p", p.sensor.lambda_p},
              {"noise", p.sensor.noise},
              {"quantize", p.sensor.quantize},
              {"wb_gains", p.isp.wb_gains},
              {"gamma", p.isp.gamma},
              {"noise_model", "shot+read Gaussian proxy"}};
}

}  // namespace detail

/// Writes one scene's assets below root/scenes/<id>/ and returns its record.
inline SceneRecord write_scene(const SynthScene<double>& scene, const std::string& id, const std::string& split,
                               const std::filesystem::path& root, const io::RawCoding& coding) {
  const std::filesystem::path rel = std::filesystem::path("scenes") / id;
  std::filesystem::create_directories(root / rel);
  SceneRecord rec{id, split, {}, {}};
  for (const auto& ll : scene.low_light) {
    LowLightEntry e{ll.ev, ll.iso, "", "", ll.raw.height(), ll.raw.width()};
    const std::string stem = "ll_ev" + io::format_number(ll.ev) + "_iso" + std::to_string(ll.iso);
    e.raw_path = (rel / (stem + ".raw16")).generic_string();
    e.srgb_path = (rel / (stem + ".png")).generic_string();
    io::write_raw16(root / e.raw_path, ll.raw.data, coding);
    io::write_png(root / e.srgb_path, ll.srgb);
    rec.low_light.push_back(std::move(e));
  }
  for (const auto& gt : scene.ground_truth) {
    GroundTruthEntry g{gt.zoom, (rel / ("gt_x" + std::to_string(gt.zoom) + ".png")).generic_string(),
                       gt.srgb.height(), gt.srgb.width()};
    io::write_png(root / g.srgb_path, gt.srgb);
    rec.ground_truth.push_back(std::move(g));
  }
  return rec;
}

/// Synthesizes every scene and writes out_dir/manifest.json.
inline DatasetManifest synthesize_dataset(const DatasetConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  require(!ec && std::filesystem::is_directory(out_dir), ErrorCode::io,
          "cannot create output directory " + out_dir.string());

  std::vector<std::filesystem::path> files;
  if (cfg.corpus != "toy") files = detail::corpus_files(cfg);
  const int count = cfg.corpus == "toy" ? cfg.num_scenes : static_cast<int>(files.size());
  const auto splits = assign_splits(count, cfg.val_fraction, cfg.test_fraction);

  DatasetManifest m;
  m.pattern = cfg.params.pattern;
  m.channels = cfg.channels();
  m.coding = cfg.params.sensor.coding;
  m.low_light_per_scene = static_cast<int>(cfg.params.ev_levels.size());
  m.ground_truth_per_scene = static_cast<int>(cfg.params.zooms.size());
  m.synthesis = detail::describe(cfg);
  for (int i = 0; i < count; ++i) {
    const std::string id = scene_id(i);
    const ImagePlanes<double> clean =
        cfg.corpus == "toy" ? toy_image(cfg.seed, static_cast<std::uint64_t>(i), cfg.height, cfg.width, cfg.channels())
                            : detail::corpus_image(files[static_cast<std::size_t>(i)], cfg);
    Rng rng = scene_stream(cfg.seed, id);
    const auto scene = synth_scene(clean, cfg.params, rng);
    m.records.push_back(write_scene(scene, id, splits[static_cast<std::size_t>(i)], out_dir, m.coding));
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace lldiff::data
