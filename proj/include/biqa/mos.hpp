#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace biqa {

struct Rating {
  std::string image_id;
  std::string observer_id;
  double score = 0.0;  // [0, 1]
  std::string timestamp;

  friend bool operator==(const Rating&, const Rating&) = default;
};

/// Per-observer ratings. Images may be declared without ratings so that
/// aggregation can report them.
class RatingTable {
 public:
  /// Raises on a score outside [0, 1] or a second score for the same
  /// (image, observer) pair.
  void add(Rating rating);
  void declare_image(const std::string& image_id);

  const std::vector<Rating>& ratings() const noexcept { return ratings_; }
  std::size_t size() const noexcept { return ratings_.size(); }
  /// Sorted ids of every declared or rated image.
  std::vector<std::string> images() const;
  /// Sorted distinct observer ids.
  std::vector<std::string> observers() const;

 private:
  std::vector<Rating> ratings_;
  std::set<std::string> declared_;
  std::set<std::pair<std::string, std::string>> seen_;
};

struct MosRecord {
  std::string image_id;
  double mos = 0.0;
  double variance = 0.0;
  int n_raters = 0;
};

struct ScreeningOptions {
  double z_threshold = 3.0;
  double correlation_floor = 0.5;
  /// An observer is rejected when |z| > z_threshold on more than this share
  /// of the images they rated.
  double max_outlier_fraction = 0.2;
};

struct ScreeningResult {
  RatingTable table;
  std::vector<std::string> rejected;  // sorted
};

/// Whole-observer rejection: Pearson correlation with the leave-one-out mean
/// below the floor, or too many extreme per-image z-scores. Needs >= 3 observers.
ScreeningResult screen_outliers(const RatingTable& table, const ScreeningOptions& options = {});

/// One record per image in id order; mean score and (by default population)
/// variance.
std::vector<MosRecord> aggregate(const RatingTable& table, bool population_variance = true);

inline constexpr int kDefaultHistogramBins = 100;

/// Uniform bins over [0, 1]: bin 0 is [0, 1/b], bin k > 0 is (k/b, (k+1)/b].
std::vector<std::size_t> mos_histogram(const std::vector<MosRecord>& records, int bins = kDefaultHistogramBins);
std::size_t histogram_bin(double value, int bins);

/// CSV "image_id,observer_id,score,timestamp".
RatingTable read_ratings(const std::filesystem::path& path);
std::string format_ratings(const RatingTable& table);
void write_ratings(const RatingTable& table, const std::filesystem::path& path);

/// CSV "image_id,mos,variance,n_raters".
void write_mos(const std::vector<MosRecord>& records, const std::filesystem::path& path);
std::vector<MosRecord> read_mos(const std::filesystem::path& path);

/// CSV "bin_lo,bin_hi,count".
void write_histogram(const std::vector<std::size_t>& counts, const std::filesystem::path& path);

}  // namespace biqa
