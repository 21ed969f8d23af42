#pragma once

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "lldiff/io/config.hpp"
#include "lldiff/io/png.hpp"
#include "lldiff/io/raw16.hpp"
#include "lldiff/raw_condition.hpp"
#include "lldiff/trainer.hpp"

namespace lldiff::data {

using Json = nlohmann::json;

inline constexpr int kManifestVersion = 1;

struct LowLightEntry {
  double ev = 0;
  int iso = 0;
  std::string raw_path;   // relative to the manifest directory
  std::string srgb_path;
  int height = 0;
  int width = 0;
};

struct GroundTruthEntry {
  int zoom = 1;
  std::string srgb_path;
  int height = 0;
  int width = 0;
};

struct SceneRecord {
  std::string scene_id;
  std::string split;  // train | val | test
  std::vector<LowLightEntry> low_light;
  std::vector<GroundTruthEntry> ground_truth;

  const GroundTruthEntry& ground_truth_at(int zoom) const {
    for (const auto& g : ground_truth)
      if (g.zoom == zoom) return g;
    throw Error(ErrorCode::invalid_argument, "scene " + scene_id + " has no ground truth at zoom " + std::to_string(zoom));
  }
};

struct DatasetManifest {
  int format_version = kManifestVersion;
  CfaPattern pattern = CfaPattern::rggb;
  int channels = 3;  // sRGB channel count
  io::RawCoding coding{};
  int low_light_per_scene = 0;
  int ground_truth_per_scene = 0;
  std::vector<SceneRecord> records;
  Json synthesis = Json::object();  // parameters that produced the data

  std::vector<const SceneRecord*> split(const std::string& name) const {
    std::vector<const SceneRecord*> out;
    for (const auto& r : records)
      if (name == "all" || r.split == name) out.push_back(&r);
    return out;
  }

  void validate() const {
    require(format_version == kManifestVersion, ErrorCode::format,
            "manifest format_version " + std::to_string(format_version) + " unsupported (expected " +
                std::to_string(kManifestVersion) + ")");
    std::set<std::string> ids;
    for (const auto& r : records) {
      require(ids.insert(r.scene_id).second, ErrorCode::format, "duplicate scene id " + r.scene_id);
      require(r.split == "train" || r.split == "val" || r.split == "test", ErrorCode::format,
              "scene " + r.scene_id + " has unknown split '" + r.split + "'");
      require(static_cast<int>(r.low_light.size()) == low_light_per_scene &&
                  static_cast<int>(r.ground_truth.size()) == ground_truth_per_scene,
              ErrorCode::format, "scene " + r.scene_id + " entry counts disagree with the manifest header");
    }
  }
};

inline std::string to_string(CfaPattern p) { return p == CfaPattern::rggb ? "rggb" : "mono"; }

inline CfaPattern parse_cfa_pattern(const std::string& s) {
  if (s == "rggb") return CfaPattern::rggb;
  if (s == "mono") return CfaPattern::mono;
  throw Error(ErrorCode::config, "unknown CFA pattern '" + s + "' (expected rggb or mono)");
}

inline Json to_json(const DatasetManifest& m) {
  Json records = Json::array();
  for (const auto& r : m.records) {
    Json ll = Json::array(), gt = Json::array();
    for (const auto& e : r.low_light)
      ll.push_back({{"ev", e.ev}, {"iso", e.iso}, {"raw_path", e.raw_path}, {"srgb_path", e.srgb_path},
                    {"height", e.height}, {"width", e.width}});
    for (const auto& g : r.ground_truth)
      gt.push_back({{"zoom", g.zoom}, {"srgb_path", g.srgb_path}, {"height", g.height}, {"width", g.width}});
    records.push_back({{"scene_id", r.scene_id}, {"split", r.split}, {"low_light", ll}, {"ground_truth", gt}});
  }
  return Json{{"format_version", m.format_version},
              {"raw",
               {{"pattern", to_string(m.pattern)},
                {"bit_depth", m.coding.bit_depth},
                {"black_level", m.coding.black_level},
                {"white_level", m.coding.white_level},
                {"byte_order", "little"}}},
              {"channels", m.channels},
              {"low_light_per_scene", m.low_light_per_scene},
              {"ground_truth_per_scene", m.ground_truth_per_scene},
              {"records", records},
              {"synthesis", m.synthesis}};
}

inline DatasetManifest manifest_from_json(const Json& j) {
  try {
    DatasetManifest m;
    m.format_version = j.at("format_version").get<int>();
    require(m.format_version == kManifestVersion, ErrorCode::format,
            "manifest format_version " + std::to_string(m.format_version) + " unsupported");
    const auto& raw = j.at("raw");
    m.pattern = parse_cfa_pattern(raw.at("pattern").get<std::string>());
    m.coding = io::RawCoding{raw.at("bit_depth").get<int>(), raw.at("black_level").get<int>(),
                             raw.at("white_level").get<int>()};
    require(raw.at("byte_order").get<std::string>() == "little", ErrorCode::format, "Raw planes must be little-endian");
    m.channels = j.at("channels").get<int>();
    m.low_light_per_scene = j.at("low_light_per_scene").get<int>();
    m.ground_truth_per_scene = j.at("ground_truth_per_scene").get<int>();
    for (const auto& r : j.at("records")) {
      SceneRecord rec;
      rec.scene_id = r.at("scene_id").get<std::string>();
      rec.split = r.at("split").get<std::string>();
      for (const auto& e : r.at("low_light"))
        rec.low_light.push_back(LowLightEntry{e.at("ev").get<double>(), e.at("iso").get<int>(),
                                              e.at("raw_path").get<std::string>(), e.at("srgb_path").get<std::string>(),
                                              e.at("height").get<int>(), e.at("width").get<int>()});
      for (const auto& g : r.at("ground_truth"))
        rec.ground_truth.push_back(GroundTruthEntry{g.at("zoom").get<int>(), g.at("srgb_path").get<std::string>(),
                                                    g.at("height").get<int>(), g.at("width").get<int>()});
      m.records.push_back(std::move(rec));
    }
    if (j.contains("synthesis")) m.synthesis = j.at("synthesis");
    m.validate();
    return m;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::format, std::string("malformed manifest: ") + e.what());
  }
}

inline void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  m.validate();
  std::ofstream os(path, std::ios::trunc);
  os << to_json(m).dump(2) << '\n';
  require(static_cast<bool>(os), ErrorCode::io, "cannot write manifest " + path.string());
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), ErrorCode::io, "cannot open manifest " + path.string());
  Json j;
  try {
    is >> j;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::format, "manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  return manifest_from_json(j);
}

// ---------------------------------------------------------------------------
// Asset access; paths in the manifest are relative to `root`.

template <class T>
ImagePlanes<T> load_low_light_srgb(const std::filesystem::path& root, const LowLightEntry& e) {
  return io::read_png<T>(root / e.srgb_path);
}

template <class T>
RawFrame<T> load_raw(const std::filesystem::path& root, const DatasetManifest& m, const LowLightEntry& e) {
  return RawFrame<T>{io::read_raw16<T>(root / e.raw_path, e.height, e.width, m.coding), m.pattern};
}

template <class T>
ImagePlanes<T> load_ground_truth(const std::filesystem::path& root, const SceneRecord& r, int zoom) {
  return io::read_png<T>(root / r.ground_truth_at(zoom).srgb_path);
}

/// File stem shared by a low-light input and everything derived from it.
inline std::string entry_stem(const SceneRecord& r, const LowLightEntry& e) {
  return r.scene_id + "_ev" + io::format_number(e.ev) + "_iso" + std::to_string(e.iso);
}

/// Builds (target, condition) pairs from one split. For the sRGB path the
/// condition is the low-light sRGB resized to the target (identity pi); for
/// the Raw path it is the packed RGGB mosaic. Optional EV filter.
template <class T>
TrainingSet<T> load_training_set(const DatasetManifest& m, const std::filesystem::path& root, ConditionKind kind,
                                 int zoom = 1, const std::string& split = "train",
                                 const std::vector<double>& evs = {}) {
  TrainingSet<T> set;
  set.kind = kind;
  if (kind == ConditionKind::raw)
    require(m.pattern == CfaPattern::rggb, ErrorCode::config, "the Raw condition path needs an RGGB dataset");
  for (const SceneRecord* r : m.split(split)) {
    const ImagePlanes<T> target = load_ground_truth<T>(root, *r, zoom);
    for (const auto& e : r->low_light) {
      if (!evs.empty() && std::find(evs.begin(), evs.end(), e.ev) == evs.end()) continue;
      ImagePlanes<T> cond =
          kind == ConditionKind::raw
              ? pack_bayer(load_raw<T>(root, m, e))
              : pi_srgb(load_low_light_srgb<T>(root, e), target.height(), target.width(), m.channels).image;
      set.samples.push_back(TrainingSample<T>{target, std::move(cond)});
    }
  }
  require(!set.samples.empty(), ErrorCode::invalid_argument, "split '" + split + "' yields no training pairs");
  return set;
}

}  // namespace lldiff::data
