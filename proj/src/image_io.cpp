#include "mst/image_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "mst/errors.hpp"

namespace mst {

namespace {

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& path, const std::string& header, std::span<const unsigned char> body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

// Reads the next whitespace-delimited header integer, skipping '#' comments.
std::size_t header_int(const std::vector<unsigned char>& buf, std::size_t& pos, const std::string& file) {
  while (pos < buf.size()) {
    if (buf[pos] == '#') {
      while (pos < buf.size() && buf[pos] != '\n') ++pos;
    } else if (std::isspace(buf[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::size_t value = 0;
  std::size_t digits = 0;
  while (pos < buf.size() && std::isdigit(buf[pos])) {
    value = value * 10 + static_cast<std::size_t>(buf[pos++] - '0');
    ++digits;
  }
  if (digits == 0) throw IoError(file + ": malformed PNM header");
  return value;
}

std::uint32_t load_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

void store_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

}  // namespace

Image read_pnm(const std::filesystem::path& path) {
  const auto buf = read_all(path);
  const std::string file = path.string();
  if (buf.size() < 2 || buf[0] != 'P' || (buf[1] != '6' && buf[1] != '5')) {
    throw IoError(file + ": unsupported image format (expected binary PPM/PGM)");
  }
  Image img;
  img.channels = buf[1] == '6' ? 3 : 1;
  std::size_t pos = 2;
  img.width = header_int(buf, pos, file);
  img.height = header_int(buf, pos, file);
  const std::size_t maxval = header_int(buf, pos, file);
  if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 65535) throw IoError(file + ": bad PNM header");
  ++pos;  // single whitespace before the raster
  const std::size_t bytes_per = maxval < 256 ? 1 : 2;
  const std::size_t samples = img.width * img.height * img.channels;
  if (buf.size() < pos + samples * bytes_per) throw IoError(file + ": truncated raster");
  img.pixels.resize(samples);
  const float inv = 1.0f / static_cast<float>(maxval);
  for (std::size_t i = 0; i < samples; ++i) {
    const std::size_t v = bytes_per == 1 ? buf[pos + i] : (std::size_t{buf[pos + 2 * i]} << 8 | buf[pos + 2 * i + 1]);
    img.pixels[i] = static_cast<float>(v) * inv;
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 3) throw IoError("write_ppm: image must have 3 channels");
  std::vector<unsigned char> body(image.pixels.size());
  for (std::size_t i = 0; i < body.size(); ++i)
    body[i] = static_cast<unsigned char>(std::lround(std::clamp(image.pixels[i], 0.0f, 1.0f) * 255.0f));
  write_all(path, "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n", body);
}

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> gray) {
  if (gray.size() != width * height) throw IoError("write_pgm: pixel count does not match extents");
  write_all(path, "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n", gray);
}

RawTensor read_raw_tensor(const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "raw tensor IO assumes a little-endian host");
  const auto buf = read_all(path);
  const std::string file = path.string();
  if (buf.size() < 8 || std::string(buf.begin(), buf.begin() + 4) != "MSTR") {
    throw IoError(file + ": not a raw tensor file (bad magic)");
  }
  const std::uint32_t rank = load_u32(buf.data() + 4);
  if (buf.size() < 8 + 4 * std::size_t{rank}) throw IoError(file + ": truncated header");
  RawTensor t;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t e = load_u32(buf.data() + 8 + 4 * i);
    if (e == 0) throw IoError(file + ": zero extent");
    t.shape.push_back(e);
  }
  const std::size_t offset = 8 + 4 * std::size_t{rank};
  const std::size_t n = shape_numel(t.shape);
  if (buf.size() != offset + 4 * n) throw IoError(file + ": data length does not match extents");
  t.data.resize(n);
  std::memcpy(t.data.data(), buf.data() + offset, 4 * n);
  return t;
}

void write_raw_tensor(const std::filesystem::path& path, const Shape& shape, std::span<const float> data) {
  if (shape_numel(shape) != data.size()) throw IoError("write_raw_tensor: data length does not match extents");
  std::string header = "MSTR";
  store_u32(header, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t e : shape) store_u32(header, static_cast<std::uint32_t>(e));
  write_all(path, header,
            std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(data.data()), data.size() * 4));
}

Image center_crop_square(const Image& image) {
  const std::size_t side = std::min(image.height, image.width);
  const std::size_t y0 = (image.height - side) / 2;
  const std::size_t x0 = (image.width - side) / 2;
  Image out{side, side, image.channels, {}};
  out.pixels.reserve(side * side * image.channels);
  for (std::size_t y = 0; y < side; ++y) {
    const auto row = image.pixels.begin() + static_cast<std::ptrdiff_t>(((y0 + y) * image.width + x0) * image.channels);
    out.pixels.insert(out.pixels.end(), row, row + static_cast<std::ptrdiff_t>(side * image.channels));
  }
  return out;
}

Image resize_bilinear(const Image& image, std::size_t out_height, std::size_t out_width) {
  Image out{out_height, out_width, image.channels, std::vector<float>(out_height * out_width * image.channels)};
  auto source = [](std::size_t dst, std::size_t in, std::size_t outn, std::size_t& lo, std::size_t& hi, double& frac) {
    double s = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) / static_cast<double>(outn) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    lo = static_cast<std::size_t>(std::floor(s));
    hi = std::min(lo + 1, in - 1);
    frac = s - static_cast<double>(lo);
  };
  for (std::size_t y = 0; y < out_height; ++y) {
    std::size_t y0, y1;
    double fy;
    source(y, image.height, out_height, y0, y1, fy);
    for (std::size_t x = 0; x < out_width; ++x) {
      std::size_t x0, x1;
      double fx;
      source(x, image.width, out_width, x0, x1, fx);
      for (std::size_t c = 0; c < image.channels; ++c) {
        const double top = image.at(y0, x0, c) * (1.0 - fx) + image.at(y0, x1, c) * fx;
        const double bottom = image.at(y1, x0, c) * (1.0 - fx) + image.at(y1, x1, c) * fx;
        out.pixels[(y * out_width + x) * image.channels + c] = static_cast<float>(top * (1.0 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

}  // namespace mst
