#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace biqa {

/// Predicted (y_P) and subjective (y_S) scores; equal lengths >= 2, finite.
struct ScorePair {
  std::vector<double> predicted;
  std::vector<double> subjective;

  void validate() const;
};

enum class RmseDenominator { n, n_minus_1 };

/// sqrt(sum (y_P - y_S)^2 / d); the default d = n - 1.
double rmse(const ScorePair& p, RmseDenominator denominator = RmseDenominator::n_minus_1);

double pearson(std::span<const double> x, std::span<const double> y);

/// Pearson linear correlation of predicted vs subjective.
double plcc(const ScorePair& p);

/// Fractional (average) ranks, 1-based.
std::vector<double> average_ranks(std::span<const double> v);

/// Pearson correlation of average ranks.
double srocc(const ScorePair& p);

/// 1 - 6 sum d^2 / (N (N^2 - 1)); only valid without ties.
double srocc_closed_form(const ScorePair& p);

struct PwrcParams {
  double t_min = 0.0;
  /// Upper integration bound; unset means the range of y_S.
  std::optional<double> t_max;
  int t_steps = 101;
  double importance_beta = 0.2;

  void validate() const;
};

struct PwrcResult {
  double value = 0.0;
  double t_min = 0.0;
  double t_max = 0.0;
  std::vector<std::pair<double, double>> curve;  // (T, S(T))
};

/// Perceptually weighted rank correlation: trapezoidal area under S(T), where
/// S(T) averages pairwise sign agreement (+1 / -1) over pairs whose subjective
/// gap reaches T, weighted by exp(max(y_S,i, y_S,j) / beta).
PwrcResult pwrc(const ScorePair& p, const PwrcParams& params = {});

/// Affine map of [src_lo, src_hi] onto [0, 1]; invert flips orientation.
std::vector<double> normalize_scores(std::span<const double> scores, double src_lo, double src_hi,
                                     bool invert = false);

struct MetricReport {
  double rmse = 0.0;
  double plcc = 0.0;
  double srocc = 0.0;
  double pwrc = 0.0;
  RmseDenominator rmse_denominator = RmseDenominator::n_minus_1;
  PwrcParams pwrc_params;  // t_max resolved
  std::vector<std::pair<double, double>> pwrc_curve;
};

MetricReport evaluate(const ScorePair& p, const PwrcParams& params = {},
                      RmseDenominator denominator = RmseDenominator::n_minus_1);

nlohmann::json to_json(const MetricReport& report);
/// CSV "T,S".
void write_pwrc_curve(const MetricReport& report, const std::filesystem::path& path);

}  // namespace biqa
