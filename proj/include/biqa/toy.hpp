#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "biqa/distort.hpp"
#include "biqa/ensemble.hpp"
#include "biqa/manifest.hpp"
#include "biqa/raster.hpp"

namespace biqa::toy {

/// Procedural "pristine" RGB patch: smooth shading, a few solid shapes,
/// oriented gratings and fine texture. Values are 8-bit quantized so the
/// patch survives a PNG round trip unchanged.
Raster source_patch(int size, std::uint64_t seed);
std::vector<Raster> source_patches(int count, int size, std::uint64_t seed);

/// Families used by the toy corpus and toy quality set: Gaussian blur, block DCT,
/// white noise, impulse noise, ordered dithering.
const std::vector<int>& default_types();

/// Every (source, type, level) combination with dense labels
/// (type index * 5 + level - 1).
std::vector<LabeledImage> corpus(const std::vector<Raster>& sources, const std::vector<int>& types,
                                 std::uint64_t seed);

struct QualityOptions {
  int n_images = 200;
  int size = 40;
  std::vector<int> types = default_types();
  double mos_top = 0.9;    // level 1
  double mos_slope = 0.18;  // per level
  double noise_sd = 0.02;
  std::uint64_t seed = 0;
};

/// MOS = mos_top - mos_slope * (level - 1) + N(0, noise_sd), clipped to [0, 1].
/// Type and level cycle through the grid so every class is equally present.
std::vector<ScoredImage> quality_set(const QualityOptions& options);

/// Capture-like degradations of continuous severity s in [0, 1]: a chain of
/// blur, noise and darkening; MOS = 0.9 - 0.7 s + N(0, noise_sd).
std::vector<ScoredImage> natural_set(int n_images, int size, double noise_sd, std::uint64_t seed);

/// Writes the images as PNG plus manifest.csv ("path,score,variance,split")
/// and returns the manifest as loaded back from disk.
Manifest write_set(const std::vector<ScoredImage>& images, const std::filesystem::path& dir,
                   const std::string& dataset_id);

/// Writes sources as PNG files named source_0000.png, ...
void write_sources(const std::vector<Raster>& sources, const std::filesystem::path& dir);

}  // namespace biqa::toy
