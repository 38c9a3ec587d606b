#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "biqa/rng.hpp"

namespace biqa {

/// Channel-major image with values in [0, 1]: data[(c * height + y) * width + x].
class Raster {
 public:
  Raster() = default;
  Raster(int width, int height, int channels, float fill = 0.0F);
  Raster(int width, int height, int channels, std::vector<float> data);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float& at(int c, int y, int x) noexcept { return data_[index(c, y, x)]; }
  float at(int c, int y, int x) const noexcept { return data_[index(c, y, x)]; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  std::span<float> plane(int c) noexcept;
  std::span<const float> plane(int c) const noexcept;

  /// Clamps every value into [0, 1] and maps non-finite values to 0.
  void clamp();

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  std::size_t index(int c, int y, int x) const noexcept {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

/// Reads 8-bit PNG (gray/RGB, alpha dropped) or binary PGM (P5) / PPM (P6).
Raster load_image(const std::filesystem::path& path);

/// Writes 8-bit PNG when the extension is .png, otherwise PGM/PPM by channel count.
void save_image(const Raster& r, const std::filesystem::path& path);

Raster crop(const Raster& r, int x0, int y0, int w, int h);
Raster random_crop(const Raster& r, int w, int h, RngStream& rng);
/// Centered window; odd margins put the extra pixel after the window.
Raster center_crop(const Raster& r, int w, int h);

Raster flip_horizontal(const Raster& r);
/// Counter-clockwise rotation by quarter_turns * 90 degrees.
Raster rotate_quarter(const Raster& r, int quarter_turns);

struct AugmentChoice {
  bool flip = false;
  int quarter_turns = 0;
};

AugmentChoice draw_augmentation(RngStream& rng);
Raster apply_augmentation(const Raster& r, AugmentChoice choice);
/// Random horizontal reflection (p = 1/2) and a rotation drawn uniformly
/// from {0, 90, 180, 270} degrees.
Raster augment(const Raster& r, RngStream& rng);

/// The only transforms the training pipeline applies to an input image.
enum class TrainingTransform { random_crop, horizontal_flip, right_angle_rotation };

inline constexpr TrainingTransform kTrainingTransforms[] = {
    TrainingTransform::random_crop,
    TrainingTransform::horizontal_flip,
    TrainingTransform::right_angle_rotation,
};

}  // namespace biqa
