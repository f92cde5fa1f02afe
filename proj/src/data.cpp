#include "mst/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mst/errors.hpp"
#include "mst/rng.hpp"

namespace mst {

namespace {

double parse_number(const std::string& field, std::size_t line) {
  double v = 0.0;
  const char* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw ParseError("invalid number '" + field + "'", line);
  }
  return v;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

constexpr std::uint64_t kSceneMapTag = 1;
constexpr std::uint64_t kPoseTag = 2;
constexpr std::uint64_t kEpochTag = 3;

}  // namespace

DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& root, bool check_files) {
  DatasetManifest m;
  m.root = root;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    if (!text.empty() && text.back() == '\r') text.pop_back();
    std::istringstream fields_in(text);
    std::vector<std::string> fields;
    for (std::string f; fields_in >> f;) fields.push_back(f);
    if (fields.empty() || fields.front().front() == '#') continue;
    if (fields.size() < 9) {
      throw ParseError("expected 9 fields (path scene tx ty tz qw qx qy qz), got " + std::to_string(fields.size()),
                       line_no);
    }
    if (fields.size() > 9) throw ParseError("unexpected trailing fields", line_no);

    SceneSample s;
    s.image = std::filesystem::path(fields[0]);
    const auto it = std::find(m.scenes.begin(), m.scenes.end(), fields[1]);
    s.scene_id = static_cast<std::size_t>(it - m.scenes.begin());
    if (it == m.scenes.end()) m.scenes.push_back(fields[1]);
    for (std::size_t i = 0; i < 3; ++i) s.pose.position[i] = parse_number(fields[2 + i], line_no);
    const Quaternion raw{parse_number(fields[5], line_no), parse_number(fields[6], line_no),
                         parse_number(fields[7], line_no), parse_number(fields[8], line_no)};
    const double n = raw.norm();
    if (!(n > 1e-12)) throw ParseError("degenerate (zero-norm) quaternion", line_no);
    if (std::abs(n - 1.0) > 1e-2) {
      m.warnings.push_back("line " + std::to_string(line_no) + ": quaternion norm " + format_number(n) +
                           " is not unit; normalized");
    }
    s.pose.orientation = canonical(raw);
    if (check_files && !std::filesystem::exists(root / fields[0])) {
      throw IoError("line " + std::to_string(line_no) + ": image not found: " + (root / fields[0]).string());
    }
    m.samples.push_back(std::move(s));
  }
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  return parse_manifest(in, path.parent_path(), true);
}

std::string format_manifest(const DatasetManifest& manifest) {
  std::string out;
  for (const auto& s : manifest.samples) {
    const auto* path = std::get_if<std::filesystem::path>(&s.image);
    if (path == nullptr) throw ContractError("format_manifest: sample has no file reference");
    const Quaternion& q = s.pose.orientation;
    out += path->generic_string() + ' ' + manifest.scenes.at(s.scene_id);
    for (double v : {s.pose.position[0], s.pose.position[1], s.pose.position[2], q.w, q.x, q.y, q.z}) {
      out += ' ' + format_number(v);
    }
    out += '\n';
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << format_manifest(manifest);
  if (!out) throw IoError("write failed for " + path.string());
}

Tensor<float> prepare_image(const Image& image, std::size_t target_hw, const ImageStats& stats) {
  if (image.channels != 3) throw IoError("expected a 3-channel image, got " + std::to_string(image.channels));
  const Image sized = resize_bilinear(center_crop_square(image), target_hw, target_hw);
  std::vector<float> px(sized.pixels.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    const std::size_t c = i % 3;
    px[i] = static_cast<float>((sized.pixels[i] - stats.mean[c]) / stats.stddev[c]);
  }
  return Tensor<float>({target_hw, target_hw, 3}, std::move(px));
}

Tensor<float> load_image(const std::filesystem::path& path, std::size_t target_hw, const ImageStats& stats) {
  const std::string ext = path.extension().string();
  if (ext == ".mstr") {
    RawTensor raw = read_raw_tensor(path);
    if (raw.shape.size() != 3) throw IoError(path.string() + ": raw image must be [h x w x 3]");
    return prepare_image(Image{raw.shape[0], raw.shape[1], raw.shape[2], std::move(raw.data)}, target_hw, stats);
  }
  if (ext == ".ppm" || ext == ".pnm") return prepare_image(read_pnm(path), target_hw, stats);
  throw IoError(path.string() + ": unsupported image format '" + ext + "' (use .ppm or .mstr)");
}

Tensor<float> load_image(const SceneSample& sample, const std::filesystem::path& root, std::size_t target_hw,
                         const ImageStats& stats) {
  if (const auto* path = std::get_if<std::filesystem::path>(&sample.image)) {
    return load_image(root / *path, target_hw, stats);
  }
  return prepare_image(*std::get<std::shared_ptr<const Image>>(sample.image), target_hw, stats);
}

SynthSceneMap synth_scene_map(std::uint64_t seed, std::size_t scene, std::size_t hw) {
  RngState rng = RngState{seed, 0}.fork({kSceneMapTag, scene});
  const std::size_t pixels = hw * hw * 3;
  SynthSceneMap m;
  m.hw = hw;
  m.map.resize(pixels * 7);
  for (double& w : m.map) w = 0.5 * rng.normal();
  m.offset.resize(pixels);
  for (double& o : m.offset) o = rng.normal();
  return m;
}

Pose synth_pose(std::uint64_t seed, std::size_t scene, std::size_t index) {
  RngState rng = RngState{seed, 0}.fork({kPoseTag, scene, index});
  Pose p;
  for (double& v : p.position) v = -2.0 + 4.0 * rng.uniform();
  Quaternion q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
  p.orientation = canonical(q);
  return p;
}

DatasetManifest synth_dataset(std::uint64_t seed, std::size_t n_scenes, std::size_t per_scene, std::size_t hw) {
  if (n_scenes == 0 || per_scene == 0 || hw == 0) throw ConfigError("synth_dataset: counts must be >= 1");
  DatasetManifest m;
  for (std::size_t s = 0; s < n_scenes; ++s) {
    m.scenes.push_back("scene" + std::to_string(s));
    const SynthSceneMap map = synth_scene_map(seed, s, hw);
    const std::size_t pixels = hw * hw * 3;
    for (std::size_t i = 0; i < per_scene; ++i) {
      const Pose pose = synth_pose(seed, s, i);
      const Quaternion& q = pose.orientation;
      const double v[7] = {pose.position[0], pose.position[1], pose.position[2], q.w, q.x, q.y, q.z};
      auto img = std::make_shared<Image>(Image{hw, hw, 3, std::vector<float>(pixels)});
      for (std::size_t p = 0; p < pixels; ++p) {
        double acc = map.offset[p];
        for (std::size_t c = 0; c < 7; ++c) acc += map.map[p * 7 + c] * v[c];
        img->pixels[p] = static_cast<float>(acc);
      }
      m.samples.push_back({std::shared_ptr<const Image>(std::move(img)), s, pose});
    }
  }
  return m;
}

std::filesystem::path write_dataset(const DatasetManifest& manifest, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  DatasetManifest out;
  out.root = dir;
  out.scenes = manifest.scenes;
  std::vector<std::size_t> per_scene(manifest.scenes.size(), 0);
  for (const auto& s : manifest.samples) {
    const auto* img = std::get_if<std::shared_ptr<const Image>>(&s.image);
    if (img == nullptr) throw ContractError("write_dataset: expects in-memory images");
    const std::string& scene = manifest.scenes.at(s.scene_id);
    const std::filesystem::path rel = std::filesystem::path(scene) / (std::to_string(per_scene[s.scene_id]++) + ".mstr");
    std::filesystem::create_directories(dir / scene);
    write_raw_tensor(dir / rel, {(*img)->height, (*img)->width, (*img)->channels}, (*img)->pixels);
    out.samples.push_back({rel, s.scene_id, s.pose});
  }
  const auto path = dir / "manifest.txt";
  write_manifest(path, out);
  return path;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  RngState rng = RngState{seed, 0}.fork({kEpochTag, epoch});
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_u64() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

}  // namespace mst
