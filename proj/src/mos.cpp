#include "biqa/mos.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "biqa/csv.hpp"
#include "biqa/error.hpp"

namespace biqa {

void RatingTable::add(Rating rating) {
  if (!(rating.score >= 0.0 && rating.score <= 1.0))
    fail(ErrorCode::out_of_range, "score " + csv::format_double(rating.score) + " for '" + rating.image_id +
                                      "' is outside [0, 1]");
  if (rating.image_id.empty() || rating.observer_id.empty())
    fail(ErrorCode::invalid_argument, "rating needs image and observer ids");
  if (!seen_.emplace(rating.image_id, rating.observer_id).second)
    fail(ErrorCode::invalid_argument,
         "observer '" + rating.observer_id + "' rated '" + rating.image_id + "' more than once");
  declared_.insert(rating.image_id);
  ratings_.push_back(std::move(rating));
}

void RatingTable::declare_image(const std::string& image_id) { declared_.insert(image_id); }

std::vector<std::string> RatingTable::images() const { return {declared_.begin(), declared_.end()}; }

std::vector<std::string> RatingTable::observers() const {
  std::set<std::string> out;
  for (const auto& r : ratings_) out.insert(r.observer_id);
  return {out.begin(), out.end()};
}

namespace {

// Pearson correlation, or NaN when either side is constant or n < 2.
double correlation_or_nan(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2) return std::nan("");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nan("");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

ScreeningResult screen_outliers(const RatingTable& table, const ScreeningOptions& options) {
  const auto observers = table.observers();
  if (observers.size() < 3)
    fail(ErrorCode::invalid_argument, "outlier screening needs at least 3 observers, got " +
                                          std::to_string(observers.size()));

  struct ImageStats {
    double sum = 0.0, sum_sq = 0.0;
    int n = 0;
  };
  std::map<std::string, ImageStats> per_image;
  for (const auto& r : table.ratings()) {
    auto& s = per_image[r.image_id];
    s.sum += r.score;
    s.sum_sq += r.score * r.score;
    ++s.n;
  }
  std::map<std::string, std::vector<const Rating*>> by_observer;
  for (const auto& r : table.ratings()) by_observer[r.observer_id].push_back(&r);

  ScreeningResult result;
  std::set<std::string> rejected;
  for (const auto& [observer, ratings] : by_observer) {
    std::vector<double> own, loo;
    int extreme = 0;
    for (const Rating* r : ratings) {
      const auto& s = per_image.at(r->image_id);
      const double mean = s.sum / s.n;
      const double var = std::max(0.0, s.sum_sq / s.n - mean * mean);
      const double sd = std::sqrt(var);
      const double z = sd > 1e-12 ? (r->score - mean) / sd : 0.0;
      if (std::abs(z) > options.z_threshold) ++extreme;
      if (s.n > 1) {
        own.push_back(r->score);
        loo.push_back((s.sum - r->score) / (s.n - 1));
      }
    }
    const double rho = correlation_or_nan(own, loo);
    const bool low_correlation = !std::isnan(rho) && rho < options.correlation_floor;
    const bool too_extreme =
        static_cast<double>(extreme) > options.max_outlier_fraction * static_cast<double>(ratings.size());
    if (low_correlation || too_extreme) rejected.insert(observer);
  }
  for (const auto& id : table.images()) result.table.declare_image(id);
  for (const auto& r : table.ratings())
    if (!rejected.contains(r.observer_id)) result.table.add(r);
  result.rejected.assign(rejected.begin(), rejected.end());
  return result;
}

std::vector<MosRecord> aggregate(const RatingTable& table, bool population_variance) {
  std::map<std::string, std::vector<double>> scores;
  for (const auto& id : table.images()) scores[id];
  for (const auto& r : table.ratings()) scores[r.image_id].push_back(r.score);
  std::vector<MosRecord> out;
  out.reserve(scores.size());
  for (auto& [id, v] : scores) {
    if (v.empty()) fail(ErrorCode::invalid_argument, "image '" + id + "' has no ratings");
    // sorted summation makes the result independent of observer order
    std::sort(v.begin(), v.end());
    const auto n = static_cast<double>(v.size());
    double sum = 0.0;
    for (double s : v) sum += s;
    const double mean = std::clamp(sum / n, v.front(), v.back());
    double ss = 0.0;
    for (double s : v) ss += (s - mean) * (s - mean);
    double variance = 0.0;
    if (population_variance)
      variance = ss / n;
    else if (v.size() > 1)
      variance = ss / (n - 1.0);
    out.push_back({id, mean, variance, static_cast<int>(v.size())});
  }
  return out;
}

std::size_t histogram_bin(double value, int bins) {
  if (bins < 1) fail(ErrorCode::invalid_argument, "bins must be at least 1");
  if (!(value >= 0.0 && value <= 1.0))
    fail(ErrorCode::out_of_range, "histogram value " + csv::format_double(value) + " is outside [0, 1]");
  if (value == 0.0) return 0;
  const double b = bins;
  auto k = static_cast<long long>(std::ceil(value * b)) - 1;
  // correct for rounding in value * b against the exact edges k / b
  if (k > 0 && value <= static_cast<double>(k) / b) --k;
  if (k + 1 < bins && value > static_cast<double>(k + 1) / b) ++k;
  return static_cast<std::size_t>(std::clamp<long long>(k, 0, bins - 1));
}

std::vector<std::size_t> mos_histogram(const std::vector<MosRecord>& records, int bins) {
  if (bins < 1) fail(ErrorCode::invalid_argument, "bins must be at least 1");
  std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
  for (const auto& r : records) ++counts[histogram_bin(r.mos, bins)];
  return counts;
}

RatingTable read_ratings(const std::filesystem::path& path) {
  const auto t = csv::read_file(path);
  const int ci = t.require("image_id"), co = t.require("observer_id"), cs = t.require("score");
  const int ct = t.column("timestamp");
  RatingTable table;
  for (const auto& row : t.rows) {
    Rating r;
    r.image_id = row.at(static_cast<std::size_t>(ci));
    r.observer_id = row.at(static_cast<std::size_t>(co));
    r.score = csv::parse_double(row.at(static_cast<std::size_t>(cs)));
    if (ct >= 0 && static_cast<std::size_t>(ct) < row.size()) r.timestamp = row[static_cast<std::size_t>(ct)];
    table.add(std::move(r));
  }
  return table;
}

std::string format_ratings(const RatingTable& table) {
  std::string out = "image_id,observer_id,score,timestamp\n";
  for (const auto& r : table.ratings())
    out += csv::format_row({r.image_id, r.observer_id, csv::format_double(r.score), r.timestamp}) + "\n";
  return out;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::io, "write failed for " + path.string());
}

}  // namespace

void write_ratings(const RatingTable& table, const std::filesystem::path& path) {
  write_text(path, format_ratings(table));
}

void write_mos(const std::vector<MosRecord>& records, const std::filesystem::path& path) {
  std::string out = "image_id,mos,variance,n_raters\n";
  for (const auto& r : records)
    out += csv::format_row({r.image_id, csv::format_double(r.mos), csv::format_double(r.variance),
                            std::to_string(r.n_raters)}) +
           "\n";
  write_text(path, out);
}

std::vector<MosRecord> read_mos(const std::filesystem::path& path) {
  const auto t = csv::read_file(path);
  const int ci = t.require("image_id"), cm = t.require("mos"), cv = t.require("variance"), cn = t.require("n_raters");
  std::vector<MosRecord> out;
  for (const auto& row : t.rows)
    out.push_back({row.at(static_cast<std::size_t>(ci)), csv::parse_double(row.at(static_cast<std::size_t>(cm))),
                   csv::parse_double(row.at(static_cast<std::size_t>(cv))),
                   static_cast<int>(csv::parse_int(row.at(static_cast<std::size_t>(cn))))});
  return out;
}

void write_histogram(const std::vector<std::size_t>& counts, const std::filesystem::path& path) {
  std::string out = "bin_lo,bin_hi,count\n";
  const double b = static_cast<double>(counts.size());
  for (std::size_t k = 0; k < counts.size(); ++k)
    out += csv::format_row({csv::format_double(static_cast<double>(k) / b),
                            csv::format_double(static_cast<double>(k + 1) / b), std::to_string(counts[k])}) +
           "\n";
  write_text(path, out);
}

}  // namespace biqa
