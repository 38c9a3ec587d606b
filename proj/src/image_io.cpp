#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "biqa/error.hpp"
#include "biqa/raster.hpp"

namespace biqa {
namespace {

std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) fail(ErrorCode::missing_file, "no such image: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint8_t quantize(float v) {
  const float c = std::isfinite(v) ? std::clamp(v, 0.0F, 1.0F) : 0.0F;
  return static_cast<std::uint8_t>(std::lround(c * 255.0F));
}

Raster from_interleaved(const unsigned char* px, int w, int h, int channels) {
  Raster r(w, h, channels);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        r.at(c, y, x) = static_cast<float>(px[(static_cast<std::size_t>(y) * w + x) * channels + c]) / 255.0F;
  return r;
}

std::vector<unsigned char> to_interleaved(const Raster& r) {
  std::vector<unsigned char> px(r.size());
  for (int y = 0; y < r.height(); ++y)
    for (int x = 0; x < r.width(); ++x)
      for (int c = 0; c < r.channels(); ++c)
        px[(static_cast<std::size_t>(y) * r.width() + x) * r.channels() + c] = quantize(r.at(c, y, x));
  return px;
}

Raster decode_png(const std::vector<unsigned char>& bytes, const std::string& name) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    fail(ErrorCode::corrupt_data, "corrupt PNG header in " + name + ": " + image.message);
  const int channels = (image.format & PNG_FORMAT_FLAG_COLOR) != 0 ? 3 : 1;
  image.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<unsigned char> px(PNG_IMAGE_SIZE(image));
  png_color background{0, 0, 0};
  if (!png_image_finish_read(&image, &background, px.data(), 0, nullptr)) {
    png_image_free(&image);
    fail(ErrorCode::corrupt_data, "corrupt PNG data in " + name + ": " + image.message);
  }
  return from_interleaved(px.data(), static_cast<int>(image.width), static_cast<int>(image.height), channels);
}

// Binary PGM (P5) / PPM (P6), maxval <= 255.
Raster decode_pnm(const std::vector<unsigned char>& bytes, const std::string& name) {
  const int channels = bytes[1] == '6' ? 3 : 1;
  std::size_t pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos]) != 0) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    long value = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos]) != 0) {
      value = value * 10 + (bytes[pos] - '0');
      any = true;
      ++pos;
      if (value > (1L << 24)) fail(ErrorCode::corrupt_data, "PNM header value too large in " + name);
    }
    if (!any) fail(ErrorCode::corrupt_data, "malformed PNM header in " + name);
    return value;
  };
  const long w = read_int();
  const long h = read_int();
  const long maxval = read_int();
  if (w <= 0 || h <= 0 || maxval <= 0) fail(ErrorCode::corrupt_data, "invalid PNM header in " + name);
  if (maxval > 255) fail(ErrorCode::unsupported_format, "only 8-bit PNM is supported: " + name);
  if (pos >= bytes.size() || std::isspace(bytes[pos]) == 0)
    fail(ErrorCode::corrupt_data, "malformed PNM header in " + name);
  ++pos;
  const auto need = static_cast<std::size_t>(w) * h * channels;
  if (bytes.size() - pos < need) fail(ErrorCode::corrupt_data, "truncated PNM data in " + name);
  Raster r = from_interleaved(bytes.data() + pos, static_cast<int>(w), static_cast<int>(h), channels);
  if (maxval != 255)
    for (auto& v : r.data()) v = std::min(1.0F, v * 255.0F / static_cast<float>(maxval));
  return r;
}

}  // namespace

Raster load_image(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  static constexpr std::array<unsigned char, 8> kPngMagic{0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (bytes.size() >= 8 && std::equal(kPngMagic.begin(), kPngMagic.end(), bytes.begin()))
    return decode_png(bytes, path.string());
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6'))
    return decode_pnm(bytes, path.string());
  fail(ErrorCode::unsupported_format, "unsupported image format: " + path.string());
}

void save_image(const Raster& r, const std::filesystem::path& path) {
  if (r.empty()) fail(ErrorCode::invalid_argument, "cannot save an empty raster");
  const auto parent = path.parent_path();
  std::error_code ec;
  if (!parent.empty() && !std::filesystem::is_directory(parent, ec))
    fail(ErrorCode::io, "directory does not exist: " + parent.string());
  const auto px = to_interleaved(r);
  if (path.extension() == ".png") {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(r.width());
    image.height = static_cast<png_uint_32>(r.height());
    image.format = r.channels() == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.c_str(), 0, px.data(), 0, nullptr))
      fail(ErrorCode::io, "cannot write " + path.string() + ": " + image.message);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << (r.channels() == 3 ? "P6" : "P5") << '\n' << r.width() << ' ' << r.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (!out) fail(ErrorCode::io, "write failed: " + path.string());
}

}  // namespace biqa
