#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "biqa/ensemble.hpp"
#include "biqa/manifest.hpp"
#include "biqa/metrics.hpp"

namespace biqa {

/// Disjoint, exhaustive random split; the train side has round(f * n)
/// records. Both sides keep manifest order.
std::pair<Manifest, Manifest> split(const Manifest& manifest, double train_fraction, std::uint64_t seed);

/// Seed of repeat i under base_seed; shared by every ablation variant.
std::uint64_t split_seed(std::uint64_t base_seed, int index);

struct Residual {
  std::string image_id;
  double subjective = 0.0;  // y_S
  double predicted = 0.0;   // y_P
  double residual = 0.0;    // y_P - y_S
};

struct SplitReport {
  int index = 0;
  std::uint64_t seed = 0;
  MetricReport metrics;
  std::vector<Residual> residuals;
  TrainingLog log;
};

struct SplitFailure {
  int index = 0;
  std::uint64_t seed = 0;
  std::string code;
  std::string message;
};

struct MetricSummary {
  double median = 0.0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  std::vector<double> values;  // per completed split, in split order
};

struct ExperimentSummary {
  int repeats = 0;
  int completed = 0;
  std::map<std::string, MetricSummary> metrics;  // rmse, plcc, srocc, pwrc
  std::vector<SplitFailure> failures;
  nlohmann::json metadata;
};

struct ExperimentResult {
  ExperimentSummary summary;
  std::vector<SplitReport> splits;  // completed splits only
};

/// Trains on `train` and returns one prediction per `test` image. The log
/// pointer may be filled with the training curve.
using SplitPredictor = std::function<std::vector<double>(std::span<const ScoredImage> train,
                                                          std::span<const ScoredImage> test, std::uint64_t seed,
                                                          TrainingLog* log)>;

struct ExperimentOptions {
  int repeats = 10;
  double train_fraction = 0.8;
  std::uint64_t base_seed = 0;
  int threads = 1;
  TrainOptions train;
  net::LossSpec loss{net::LossKind::mse, 1.0};
  int eval_crops = kDefaultCrops;
  PwrcParams pwrc;
  /// Starting point for every split: a classifier is transferred, a regressor
  /// copied; unset trains from scratch.
  std::shared_ptr<const EnsembleModel> initial;
  AblationVariant variant = AblationVariant::full;
  bool retain_weights = true;
};

/// The ensemble pipeline: (ablate) -> transfer -> finetune -> crop-averaged
/// prediction, every random choice derived from the split seed.
SplitPredictor ensemble_predictor(const EnsembleConfig& config, const ExperimentOptions& options);

ExperimentResult run_experiment(const Manifest& manifest, const EnsembleConfig& config,
                                const ExperimentOptions& options);
/// Same protocol with images already in memory and a custom predictor.
ExperimentResult run_experiment(std::span<const ScoredImage> images, const SplitPredictor& predictor,
                                const ExperimentOptions& options, nlohmann::json metadata = {});

nlohmann::json to_json(const ExperimentSummary& summary);
nlohmann::json to_json(const SplitReport& report);

/// summary.json, splits.json, per-split training logs and residual files for
/// the first completed split.
void write_experiment(const ExperimentResult& result, const std::filesystem::path& out_dir);

struct BoxStats {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

/// Quartiles by linear interpolation (type 7).
BoxStats box_stats(std::span<const double> values);

/// (standard-normal quantile of (i - 0.5) / n, i-th smallest value).
std::vector<std::pair<double, double>> probability_plot(std::span<const double> values);

/// residuals.csv, boxplot.csv (one row per split), scatter.csv, probplot.csv.
void residual_report(std::span<const SplitReport> splits, std::size_t which, const std::filesystem::path& out_dir);

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p_greater = 0.0;  // one-sided, H1: mean > baseline
  double p_less = 0.0;     // one-sided, H1: mean < baseline
  int verdict = 0;
};

/// One-sample t-test against baseline. Each direction is tested at alpha / 2,
/// so the overall false-positive rate is alpha.
TTestResult t_test(std::span<const double> sample, double baseline, double alpha = 0.05);
int t_test_superiority(std::span<const double> sample, double baseline, double alpha = 0.05);

struct CrossDatasetResult {
  MetricReport metrics;
  std::vector<Residual> residuals;
  TrainingLog log;
};

/// Trains once on the concatenated training manifests and scores the whole
/// test manifest. Shared paths raise a leakage error.
CrossDatasetResult cross_dataset(const std::vector<Manifest>& train, const Manifest& test,
                                 const EnsembleConfig& config, const ExperimentOptions& options, std::uint64_t seed);

/// One experiment per variant with identical split seeds.
std::vector<std::pair<AblationVariant, ExperimentResult>> ablation_sweep(const Manifest& manifest,
                                                                        const EnsembleConfig& base_config,
                                                                        const std::vector<AblationVariant>& variants,
                                                                        const ExperimentOptions& options);

/// Crop-averaged predictions of a trained model on a manifest.
std::pair<ScorePair, std::vector<std::string>> predict_manifest(const EnsembleModel& model, const Manifest& manifest,
                                                                int n_crops, std::uint64_t seed);

}  // namespace biqa
