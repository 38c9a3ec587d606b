#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "biqa/raster.hpp"
#include "biqa/rng.hpp"

namespace biqa {

inline constexpr int kDistortionTypes = 25;
inline constexpr int kDistortionLevels = 5;
inline constexpr int kDistortionClasses = kDistortionTypes * kDistortionLevels;

/// One (type, level) class of the synthetic corpus; label "<type>_<level>".
struct DistortionSpec {
  int type_id = 1;  // 1..25
  int level = 1;    // 1..5

  /// (type_id - 1) * 5 + (level - 1); bijective onto 0..124.
  int class_index() const;
  static DistortionSpec from_class_index(int index);

  friend bool operator==(const DistortionSpec&, const DistortionSpec&) = default;
};

std::string label(DistortionSpec spec);
DistortionSpec parse_label(std::string_view text);

enum class DistortionGroup { blur, color, compression, noise, luminance, spatial };

struct DistortionFamily {
  int type_id;
  std::string_view name;
  DistortionGroup group;
  std::string_view parameter;            // what the level table controls
  std::array<double, kDistortionLevels> levels;  // strictly monotone severity values
};

/// The 25 families in stable order (index i holds type_id i + 1).
const std::vector<DistortionFamily>& catalogue();

/// Distorts r; deterministic given (r, spec, rng). Requires at least 16x16.
Raster apply(const Raster& r, DistortionSpec spec, RngStream rng);

/// Deterministic textured 64x64 RGB image used for level-monotonicity checks.
Raster reference_image();

/// Root-mean-square per-pixel difference over all channels.
double per_pixel_rmse(const Raster& a, const Raster& b);

struct CorpusEntry {
  std::filesystem::path source;
  std::filesystem::path distorted;
  DistortionSpec spec;
  std::uint64_t seed = 0;
};

struct CorpusFailure {
  std::filesystem::path source;
  DistortionSpec spec;
  std::string message;
};

struct CorpusManifest {
  std::vector<CorpusEntry> entries;
  std::vector<CorpusFailure> failures;

  /// Number of distinct classes present.
  int class_count() const;
};

std::vector<DistortionSpec> full_sweep();

/// Seed used for one (source, class) pair of a sweep.
std::uint64_t corpus_seed(std::uint64_t base_seed, std::size_t source_index, int class_index);

/// Sorted list of loadable-looking images (.png/.ppm/.pgm) in a directory.
std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir);

/// Writes "<stem>_<label>.png" per (source, spec) plus out_dir/manifest.csv.
/// Per-entry failures are collected rather than aborting the sweep.
CorpusManifest generate_corpus(const std::filesystem::path& source_dir, const std::filesystem::path& out_dir,
                               const std::vector<DistortionSpec>& specs, std::uint64_t base_seed);

/// CSV "source,distorted,type_id,level,label,seed".
void write_corpus_manifest(const CorpusManifest& manifest, const std::filesystem::path& path);
CorpusManifest read_corpus_manifest(const std::filesystem::path& path);

}  // namespace biqa
