#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mst/tensor.hpp"

namespace mst {

/// Interleaved (HWC) float image.
struct Image {
  std::size_t height = 0, width = 0, channels = 0;
  std::vector<float> pixels;

  float at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
};

/// Binary PPM (P6) or PGM (P5); samples scaled to [0, 1] by maxval.
Image read_pnm(const std::filesystem::path& path);
/// 8-bit P6 from values in [0, 1] (clamped).
void write_ppm(const std::filesystem::path& path, const Image& image);
void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> gray);

/// Raw tensor file: "MSTR", u32 rank, u32 extents, f32 row-major data; all
/// little-endian.
struct RawTensor {
  Shape shape;
  std::vector<float> data;
};
RawTensor read_raw_tensor(const std::filesystem::path& path);
void write_raw_tensor(const std::filesystem::path& path, const Shape& shape, std::span<const float> data);

/// Largest centered square.
Image center_crop_square(const Image& image);
/// Half-pixel-centered bilinear resampling with edge clamping.
Image resize_bilinear(const Image& image, std::size_t out_height, std::size_t out_width);

}  // namespace mst
