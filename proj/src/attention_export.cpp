#include "mst/attention_export.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

#include "mst/errors.hpp"
#include "mst/image_io.hpp"

namespace mst {

std::vector<double> attention_heatmap(const Tensor<float>& attn, std::size_t h_a, std::size_t w_a, std::size_t out_hw) {
  if (attn.rank() != 3 || attn.dim(1) != h_a * w_a || attn.dim(2) != h_a * w_a) {
    throw ShapeError("attention_heatmap: attention " + shape_str(attn.shape()) + " does not match a " +
                     std::to_string(h_a) + "x" + std::to_string(w_a) + " map");
  }
  const std::size_t heads = attn.dim(0), s = h_a * w_a;
  const auto a = attn.data();
  Image map{h_a, w_a, 1, std::vector<float>(s, 0.0f)};
  std::vector<double> acc(s, 0.0);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t q = 0; q < s; ++q)
      for (std::size_t k = 0; k < s; ++k) acc[k] += a[(h * s + q) * s + k];
  for (std::size_t k = 0; k < s; ++k) map.pixels[k] = static_cast<float>(acc[k] / static_cast<double>(heads * s));

  const Image up = resize_bilinear(map, out_hw, out_hw);
  const auto [lo, hi] = std::minmax_element(up.pixels.begin(), up.pixels.end());
  const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
  std::vector<double> out(up.pixels.size(), 0.0);
  if (range > 0.0) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (static_cast<double>(up.pixels[i]) - *lo) / range;
  }
  return out;
}

std::vector<double> decoder_row_norms(const Tensor<float>& decoder_outputs) {
  if (decoder_outputs.rank() != 2) throw ShapeError("decoder_row_norms: expected [N x C]");
  const std::size_t n = decoder_outputs.dim(0), c = decoder_outputs.dim(1);
  const auto d = decoder_outputs.data();
  std::vector<double> norms(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += static_cast<double>(d[i * c + j]) * d[i * c + j];
    norms[i] = std::sqrt(acc);
  }
  return norms;
}

AttentionFiles export_attention(const ForwardOutput<float>& out, const ModelConfig& config, Branch branch,
                                const std::filesystem::path& target) {
  const bool pos = branch == Branch::position;
  const std::size_t side = pos ? config.map_x_side() : config.map_q_side();
  const auto heat = attention_heatmap(pos ? out.encoder_attn_x : out.encoder_attn_q, side, side, config.input_hw);
  std::vector<std::uint8_t> gray(heat.size());
  for (std::size_t i = 0; i < heat.size(); ++i) gray[i] = static_cast<std::uint8_t>(std::lround(heat[i] * 255.0));

  AttentionFiles files;
  files.heatmap = target;
  files.decoder_csv = target.parent_path() / (target.stem().string() + "_decoder.csv");
  write_pgm(files.heatmap, config.input_hw, config.input_hw, gray);

  std::ofstream csv(files.decoder_csv);
  if (!csv) throw IoError("cannot write " + files.decoder_csv.string());
  csv << "scene_id,l2_norm\n";
  const auto norms = decoder_row_norms(pos ? out.decoder_x : out.decoder_q);
  char line[64];
  for (std::size_t i = 0; i < norms.size(); ++i) {
    std::snprintf(line, sizeof line, "%zu,%.9g\n", i, norms[i]);
    csv << line;
  }
  if (!csv) throw IoError("write failed for " + files.decoder_csv.string());
  return files;
}

}  // namespace mst
