#include "biqa/raster.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "biqa/error.hpp"

namespace biqa {

Raster::Raster(int width, int height, int channels, float fill)
    : Raster(width, height, channels,
             std::vector<float>(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0) *
                                    std::max(channels, 0),
                                fill)) {}

Raster::Raster(int width, int height, int channels, std::vector<float> data)
    : width_(width), height_(height), channels_(channels), data_(std::move(data)) {
  if (width <= 0 || height <= 0) fail(ErrorCode::invalid_argument, "raster dimensions must be positive");
  if (channels != 1 && channels != 3) fail(ErrorCode::invalid_argument, "raster must have 1 or 3 channels");
  if (data_.size() != static_cast<std::size_t>(width) * height * channels)
    fail(ErrorCode::shape_mismatch, "raster data length does not match dimensions");
}

std::span<float> Raster::plane(int c) noexcept {
  return std::span<float>(data_).subspan(static_cast<std::size_t>(c) * width_ * height_,
                                         static_cast<std::size_t>(width_) * height_);
}

std::span<const float> Raster::plane(int c) const noexcept {
  return std::span<const float>(data_).subspan(static_cast<std::size_t>(c) * width_ * height_,
                                               static_cast<std::size_t>(width_) * height_);
}

void Raster::clamp() {
  for (auto& v : data_) v = std::isfinite(v) ? std::clamp(v, 0.0F, 1.0F) : 0.0F;
}

Raster crop(const Raster& r, int x0, int y0, int w, int h) {
  if (w <= 0 || h <= 0 || w > r.width() || h > r.height())
    fail(ErrorCode::out_of_range, "crop " + std::to_string(w) + "x" + std::to_string(h) +
                                      " does not fit a " + std::to_string(r.width()) + "x" +
                                      std::to_string(r.height()) + " image");
  if (x0 < 0 || y0 < 0 || x0 + w > r.width() || y0 + h > r.height())
    fail(ErrorCode::out_of_range, "crop window outside image");
  Raster out(w, h, r.channels());
  for (int c = 0; c < r.channels(); ++c)
    for (int y = 0; y < h; ++y) {
      const float* src = &r.plane(c)[static_cast<std::size_t>(y0 + y) * r.width() + x0];
      std::copy(src, src + w, &out.at(c, y, 0));
    }
  return out;
}

Raster random_crop(const Raster& r, int w, int h, RngStream& rng) {
  if (w > r.width() || h > r.height()) return crop(r, 0, 0, w, h);  // raises the size error
  const auto x0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(r.width() - w + 1)));
  const auto y0 = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(r.height() - h + 1)));
  return crop(r, x0, y0, w, h);
}

Raster center_crop(const Raster& r, int w, int h) {
  if (w > r.width() || h > r.height()) return crop(r, 0, 0, w, h);
  return crop(r, (r.width() - w) / 2, (r.height() - h) / 2, w, h);
}

Raster flip_horizontal(const Raster& r) {
  Raster out(r.width(), r.height(), r.channels());
  for (int c = 0; c < r.channels(); ++c)
    for (int y = 0; y < r.height(); ++y)
      for (int x = 0; x < r.width(); ++x) out.at(c, y, x) = r.at(c, y, r.width() - 1 - x);
  return out;
}

Raster rotate_quarter(const Raster& r, int quarter_turns) {
  const int q = ((quarter_turns % 4) + 4) % 4;
  if (q == 0) return r;
  if (q == 2) {
    Raster out(r.width(), r.height(), r.channels());
    for (int c = 0; c < r.channels(); ++c)
      for (int y = 0; y < r.height(); ++y)
        for (int x = 0; x < r.width(); ++x)
          out.at(c, y, x) = r.at(c, r.height() - 1 - y, r.width() - 1 - x);
    return out;
  }
  Raster out(r.height(), r.width(), r.channels());
  for (int c = 0; c < r.channels(); ++c)
    for (int y = 0; y < out.height(); ++y)
      for (int x = 0; x < out.width(); ++x) {
        // counter-clockwise: out(y, x) = in(x, W-1-y); clockwise is the mirror
        out.at(c, y, x) = q == 1 ? r.at(c, x, r.width() - 1 - y) : r.at(c, r.height() - 1 - x, y);
      }
  return out;
}

AugmentChoice draw_augmentation(RngStream& rng) {
  AugmentChoice choice;
  choice.flip = rng.bernoulli(0.5);
  choice.quarter_turns = static_cast<int>(rng.uniform_int(4));
  return choice;
}

Raster apply_augmentation(const Raster& r, AugmentChoice choice) {
  Raster out = choice.flip ? flip_horizontal(r) : r;
  return rotate_quarter(out, choice.quarter_turns);
}

Raster augment(const Raster& r, RngStream& rng) { return apply_augmentation(r, draw_augmentation(rng)); }

}  // namespace biqa
