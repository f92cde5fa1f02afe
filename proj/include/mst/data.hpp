#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "mst/image_io.hpp"
#include "mst/pose.hpp"
#include "mst/tensor.hpp"

namespace mst {

/// Per-channel standardization applied after resizing: (x - mean) / std.
struct ImageStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};
};

struct SceneSample {
  /// Path relative to the manifest root, or an in-memory image.
  std::variant<std::filesystem::path, std::shared_ptr<const Image>> image;
  std::size_t scene_id = 0;
  Pose pose;  // orientation canonical
};

struct DatasetManifest {
  std::filesystem::path root;
  std::vector<std::string> scenes;  // index -> name, by first appearance
  std::vector<SceneSample> samples;
  ImageStats stats;
  std::vector<std::string> warnings;  // non-fatal ingestion notes

  std::size_t scene_count() const { return scenes.size(); }
};

/// Parses `image_path scene tx ty tz qw qx qy qz` lines; blank lines and
/// lines starting with '#' are skipped. When `check_files` is set, every
/// referenced image must exist under `root`.
DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& root, bool check_files);
/// Reads a manifest file; the root is its directory.
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Canonical text form; samples must reference files.
std::string format_manifest(const DatasetManifest& manifest);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Decodes (PPM or raw tensor), center-crops to square, resizes to
/// target_hw and standardizes. Result is [target_hw x target_hw x 3].
Tensor<float> load_image(const std::filesystem::path& path, std::size_t target_hw, const ImageStats& stats);
Tensor<float> load_image(const SceneSample& sample, const std::filesystem::path& root, std::size_t target_hw,
                         const ImageStats& stats);
Tensor<float> prepare_image(const Image& image, std::size_t target_hw, const ImageStats& stats);

/// Linear pose-to-pixel model of one synthetic scene:
/// image = map * [x; q] + offset, map is [pixels x 7] row-major.
struct SynthSceneMap {
  std::size_t hw = 0;
  std::vector<double> map;
  std::vector<double> offset;
};

SynthSceneMap synth_scene_map(std::uint64_t seed, std::size_t scene, std::size_t hw);
Pose synth_pose(std::uint64_t seed, std::size_t scene, std::size_t index);

/// Deterministic in-memory multi-scene dataset; scene names are "scene<k>".
DatasetManifest synth_dataset(std::uint64_t seed, std::size_t n_scenes, std::size_t per_scene, std::size_t hw);

/// Writes each inline image as `<scene>/<index>.mstr` and a `manifest.txt`
/// under `dir`; returns the manifest path.
std::filesystem::path write_dataset(const DatasetManifest& manifest, const std::filesystem::path& dir);

/// Shuffled sample order for one epoch, a pure function of its arguments.
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t epoch, std::size_t n);

}  // namespace mst
