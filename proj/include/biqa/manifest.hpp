#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace biqa {

/// One scored image; mos is already on the 0-1 scale.
struct SampleRecord {
  std::string path;
  double mos = 0.0;
  std::optional<double> variance;
  std::optional<std::string> split;
};

struct Manifest {
  std::string dataset_id;
  std::vector<SampleRecord> records;

  std::size_t size() const noexcept { return records.size(); }
  bool empty() const noexcept { return records.empty(); }
  /// Raises unless every mos is in [0, 1] and paths are unique.
  void validate() const;
};

struct ScoreRange {
  double lo = 0.0;
  double hi = 1.0;
};

/// Reads CSV "path,score[,variance][,split]"; relative paths resolve against the
/// manifest directory. Scores must lie in the declared range and are mapped to
/// [0, 1] (inverted for DMOS-style sets where lower is better).
Manifest load_manifest(const std::filesystem::path& path, ScoreRange range = {}, bool invert = false);

/// Writes CSV "path,score,variance,split" with scores already normalized.
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

Manifest concatenate(const std::vector<Manifest>& parts, const std::string& dataset_id);

}  // namespace biqa
