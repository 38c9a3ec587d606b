#include "biqa/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <thread>
#include <unordered_set>

#include "biqa/csv.hpp"
#include "biqa/error.hpp"
#include "biqa/stats.hpp"

namespace biqa {

namespace {

// true at positions assigned to the training side
std::vector<bool> split_mask(std::size_t n, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    fail(ErrorCode::invalid_argument, "train fraction must lie in (0, 1)");
  if (n < 2) fail(ErrorCode::degenerate, "splitting needs at least 2 records");
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (n_train < 1 || n_train >= n)
    fail(ErrorCode::degenerate, "fraction " + csv::format_double(train_fraction) + " of " + std::to_string(n) +
                                    " records leaves an empty side");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  RngStream rng(seed, 0x5917);
  rng.shuffle(perm.begin(), perm.end());
  std::vector<bool> mask(n, false);
  for (std::size_t i = 0; i < n_train; ++i) mask[perm[i]] = true;
  return mask;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::io, "cannot write " + path.string());
  out << text;
  if (!out) fail(ErrorCode::io, "write failed for " + path.string());
}

nlohmann::json train_options_json(const TrainOptions& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"base_lr", t.schedule.base_lr},
          {"drop_factor", t.schedule.drop_factor},
          {"drop_period", t.schedule.drop_period},
          {"adam_beta1", t.adam.beta1},
          {"adam_beta2", t.adam.beta2},
          {"adam_epsilon", t.adam.epsilon},
          {"augment", t.augment}};
}

const char* const kMetricNames[] = {"rmse", "plcc", "srocc", "pwrc"};

double metric_value(const MetricReport& r, const std::string& name) {
  if (name == "rmse") return r.rmse;
  if (name == "plcc") return r.plcc;
  if (name == "srocc") return r.srocc;
  return r.pwrc;
}

}  // namespace

std::pair<Manifest, Manifest> split(const Manifest& manifest, double train_fraction, std::uint64_t seed) {
  const auto mask = split_mask(manifest.size(), train_fraction, seed);
  std::pair<Manifest, Manifest> out;
  out.first.dataset_id = manifest.dataset_id + "/train";
  out.second.dataset_id = manifest.dataset_id + "/test";
  for (std::size_t i = 0; i < manifest.size(); ++i)
    (mask[i] ? out.first : out.second).records.push_back(manifest.records[i]);
  return out;
}

std::uint64_t split_seed(std::uint64_t base_seed, int index) {
  return mix_seed(base_seed, static_cast<std::uint64_t>(index));
}

SplitPredictor ensemble_predictor(const EnsembleConfig& config, const ExperimentOptions& options) {
  config.validate();
  return [config, options](std::span<const ScoredImage> train, std::span<const ScoredImage> test, std::uint64_t seed,
                           TrainingLog* log) {
    EnsembleModel model =
        options.initial ? *options.initial : EnsembleModel::build(config, seed, HeadKind::regressor);
    if (options.variant != AblationVariant::full)
      model = ablate(model, options.variant, options.retain_weights, mix_seed(seed, 0xAB1A));
    if (model.head_kind() == HeadKind::classifier) model = transfer_to_regressor(model, mix_seed(seed, 0x7EA5));
    TrainOptions to = options.train;
    auto forbidden = std::make_shared<std::unordered_set<std::string>>();
    for (const auto& s : test) forbidden->insert(s.id);
    to.forbidden_ids = forbidden;
    auto l = finetune(model, train, {}, options.loss, to, RngStream(seed, 1), "split");
    if (log) *log = std::move(l);
    const RngStream crops(seed, 2);
    std::vector<double> out(test.size());
    for (std::size_t j = 0; j < test.size(); ++j) {
      RngStream r = crops.derive(j);
      out[j] = predict_image(model, test[j].image, options.eval_crops, r);
    }
    return out;
  };
}

ExperimentResult run_experiment(std::span<const ScoredImage> images, const SplitPredictor& predictor,
                                const ExperimentOptions& options, nlohmann::json metadata) {
  if (options.repeats < 1) fail(ErrorCode::invalid_argument, "repeats must be at least 1");
  split_mask(images.size(), options.train_fraction, 0);  // validates sizes up front
  const int repeats = options.repeats;
  std::vector<std::optional<SplitReport>> reports(static_cast<std::size_t>(repeats));
  std::vector<std::optional<SplitFailure>> failures(static_cast<std::size_t>(repeats));
  std::exception_ptr fatal;
  std::mutex fatal_mutex;

  auto run_one = [&](int i) {
    const std::uint64_t seed = split_seed(options.base_seed, i);
    try {
      const auto mask = split_mask(images.size(), options.train_fraction, seed);
      std::vector<ScoredImage> train, test;
      for (std::size_t k = 0; k < images.size(); ++k) (mask[k] ? train : test).push_back(images[k]);
      SplitReport rep;
      rep.index = i;
      rep.seed = seed;
      const auto predicted = predictor(train, test, seed, &rep.log);
      if (predicted.size() != test.size())
        fail(ErrorCode::shape_mismatch, "predictor returned " + std::to_string(predicted.size()) + " scores for " +
                                            std::to_string(test.size()) + " images");
      ScorePair p;
      for (std::size_t k = 0; k < test.size(); ++k) {
        p.predicted.push_back(predicted[k]);
        p.subjective.push_back(test[k].mos);
        rep.residuals.push_back({test[k].id, test[k].mos, predicted[k], predicted[k] - test[k].mos});
      }
      rep.metrics = evaluate(p, options.pwrc);
      reports[static_cast<std::size_t>(i)] = std::move(rep);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::leakage) {
        std::lock_guard lock(fatal_mutex);
        if (!fatal) fatal = std::current_exception();
        return;
      }
      failures[static_cast<std::size_t>(i)] = SplitFailure{i, seed, to_string(e.code()), e.what()};
    } catch (const std::exception& e) {
      failures[static_cast<std::size_t>(i)] = SplitFailure{i, seed, "exception", e.what()};
    }
  };

  const int workers = std::clamp(options.threads, 1, repeats);
  if (workers == 1) {
    for (int i = 0; i < repeats; ++i) run_one(i);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (int i = next++; i < repeats; i = next++) run_one(i);
      });
    for (auto& t : pool) t.join();
  }
  if (fatal) std::rethrow_exception(fatal);

  ExperimentResult result;
  auto& s = result.summary;
  s.repeats = repeats;
  for (auto& r : reports)
    if (r) result.splits.push_back(std::move(*r));
  for (auto& f : failures)
    if (f) s.failures.push_back(std::move(*f));
  s.completed = static_cast<int>(result.splits.size());
  if (s.completed > 0)
    for (const std::string name : kMetricNames) {
      MetricSummary m;
      for (const auto& r : result.splits) m.values.push_back(metric_value(r.metrics, name));
      m.median = stats::median(m.values);
      m.mean = stats::mean(m.values);
      m.min = *std::min_element(m.values.begin(), m.values.end());
      m.max = *std::max_element(m.values.begin(), m.values.end());
      s.metrics[name] = std::move(m);
    }
  if (!metadata.is_object()) metadata = nlohmann::json::object();
  nlohmann::json seeds = nlohmann::json::array();
  for (int i = 0; i < repeats; ++i) seeds.push_back(split_seed(options.base_seed, i));
  metadata["repeats"] = repeats;
  metadata["train_fraction"] = options.train_fraction;
  metadata["base_seed"] = options.base_seed;
  metadata["split_seeds"] = seeds;
  metadata["threads"] = options.threads;
  metadata["n_images"] = images.size();
  s.metadata = std::move(metadata);
  return result;
}

namespace {

nlohmann::json ensemble_metadata(const Manifest& manifest, const EnsembleConfig& config,
                                 const ExperimentOptions& options) {
  nlohmann::json meta{{"dataset_id", manifest.dataset_id},
                      {"model", to_json(config)},
                      {"loss", net::to_string(options.loss.kind)},
                      {"huber_delta", options.loss.huber_delta},
                      {"train", train_options_json(options.train)},
                      {"eval_crops", options.eval_crops},
                      {"variant", to_string(options.variant)},
                      {"retain_weights", options.retain_weights}};
  nlohmann::json prov = nlohmann::json::array();
  if (options.initial)
    for (const auto& p : options.initial->provenance()) prov.push_back(p.kind + ":" + p.id);
  meta["initial"] = options.initial ? nlohmann::json(prov) : nlohmann::json("scratch");
  return meta;
}

}  // namespace

ExperimentResult run_experiment(const Manifest& manifest, const EnsembleConfig& config,
                                const ExperimentOptions& options) {
  const auto images = load_scored_images(manifest);
  return run_experiment(images, ensemble_predictor(config, options), options,
                        ensemble_metadata(manifest, config, options));
}

nlohmann::json to_json(const ExperimentSummary& s) {
  nlohmann::json metrics = nlohmann::json::object();
  for (const auto& [name, m] : s.metrics)
    metrics[name] = {{"median", m.median}, {"mean", m.mean}, {"min", m.min}, {"max", m.max}, {"values", m.values}};
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& f : s.failures)
    failures.push_back({{"index", f.index}, {"seed", f.seed}, {"code", f.code}, {"message", f.message}});
  return {{"repeats", s.repeats},
          {"completed", s.completed},
          {"failure_count", s.failures.size()},
          {"failures", failures},
          {"metrics", metrics},
          {"metadata", s.metadata}};
}

nlohmann::json to_json(const SplitReport& r) {
  nlohmann::json residuals = nlohmann::json::array();
  for (const auto& e : r.residuals)
    residuals.push_back({{"image_id", e.image_id}, {"y_s", e.subjective}, {"y_p", e.predicted}, {"residual", e.residual}});
  return {{"index", r.index}, {"seed", r.seed}, {"metrics", to_json(r.metrics)}, {"residuals", residuals}};
}

void write_experiment(const ExperimentResult& result, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorCode::io, "cannot create " + out_dir.string());
  write_text(out_dir / "summary.json", to_json(result.summary).dump(2) + "\n");
  nlohmann::json splits = nlohmann::json::array();
  for (const auto& r : result.splits) {
    splits.push_back(to_json(r));
    r.log.write_jsonl(out_dir / ("train_log_split" + std::to_string(r.index) + ".jsonl"));
  }
  write_text(out_dir / "splits.json", splits.dump(2) + "\n");
  if (!result.splits.empty()) residual_report(result.splits, 0, out_dir);
}

BoxStats box_stats(std::span<const double> values) {
  if (values.empty()) fail(ErrorCode::invalid_argument, "box statistics need at least one value");
  return {*std::min_element(values.begin(), values.end()), stats::quantile_type7(values, 0.25),
          stats::quantile_type7(values, 0.5), stats::quantile_type7(values, 0.75),
          *std::max_element(values.begin(), values.end())};
}

std::vector<std::pair<double, double>> probability_plot(std::span<const double> values) {
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = static_cast<double>(sorted.size());
  std::vector<std::pair<double, double>> out;
  out.reserve(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i)
    out.emplace_back(stats::normal_quantile((static_cast<double>(i) + 0.5) / n), sorted[i]);
  return out;
}

void residual_report(std::span<const SplitReport> splits, std::size_t which, const std::filesystem::path& out_dir) {
  if (which >= splits.size()) fail(ErrorCode::invalid_argument, "no such split for the residual report");
  const auto& chosen = splits[which];
  if (chosen.residuals.empty()) fail(ErrorCode::invalid_argument, "split has no residuals");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  using csv::format_double;

  std::string residuals = "index,image_id,y_s,y_p,residual\n", scatter = "y_s,residual\n";
  std::vector<double> values;
  for (std::size_t i = 0; i < chosen.residuals.size(); ++i) {
    const auto& r = chosen.residuals[i];
    residuals += csv::format_row({std::to_string(i), r.image_id, format_double(r.subjective),
                                  format_double(r.predicted), format_double(r.residual)}) +
                 "\n";
    scatter += format_double(r.subjective) + "," + format_double(r.residual) + "\n";
    values.push_back(r.residual);
  }
  std::string box = "split,seed,min,q1_type7,median,q3_type7,max\n";
  for (const auto& s : splits) {
    std::vector<double> v;
    for (const auto& r : s.residuals) v.push_back(r.residual);
    if (v.empty()) continue;
    const auto b = box_stats(v);
    box += csv::format_row({std::to_string(s.index), std::to_string(s.seed), format_double(b.min), format_double(b.q1),
                            format_double(b.median), format_double(b.q3), format_double(b.max)}) +
           "\n";
  }
  std::string prob = "normal_quantile,residual\n";
  for (const auto& [q, r] : probability_plot(values)) prob += format_double(q) + "," + format_double(r) + "\n";

  write_text(out_dir / "residuals.csv", residuals);
  write_text(out_dir / "boxplot.csv", box);
  write_text(out_dir / "scatter.csv", scatter);
  write_text(out_dir / "probplot.csv", prob);
}

TTestResult t_test(std::span<const double> sample, double baseline, double alpha) {
  if (sample.size() < 2) fail(ErrorCode::invalid_argument, "t-test needs at least 2 observations");
  if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorCode::invalid_argument, "alpha must lie in (0, 1)");
  const double var = stats::variance(sample, true);
  if (!(var > 0.0)) fail(ErrorCode::zero_variance, "t-test sample has zero variance");
  const auto n = static_cast<double>(sample.size());
  TTestResult r;
  r.df = n - 1.0;
  r.t = (stats::mean(sample) - baseline) * std::sqrt(n) / std::sqrt(var);
  r.p_less = stats::student_t_cdf(r.t, r.df);
  r.p_greater = stats::student_t_cdf(-r.t, r.df);
  if (r.p_greater < alpha / 2.0)
    r.verdict = 1;
  else if (r.p_less < alpha / 2.0)
    r.verdict = -1;
  return r;
}

int t_test_superiority(std::span<const double> sample, double baseline, double alpha) {
  return t_test(sample, baseline, alpha).verdict;
}

CrossDatasetResult cross_dataset(const std::vector<Manifest>& train, const Manifest& test,
                                 const EnsembleConfig& config, const ExperimentOptions& options, std::uint64_t seed) {
  if (train.empty()) fail(ErrorCode::invalid_argument, "no training manifests");
  if (test.empty()) fail(ErrorCode::invalid_argument, "empty test manifest");
  std::unordered_set<std::string> test_paths;
  for (const auto& r : test.records) test_paths.insert(r.path);
  for (const auto& m : train)
    for (const auto& r : m.records)
      if (test_paths.contains(r.path))
        fail(ErrorCode::leakage, "'" + r.path + "' appears in both training and test manifests");
  const auto combined = concatenate(train, "combined");
  test.validate();
  const auto train_images = load_scored_images(combined);
  const auto test_images = load_scored_images(test);
  CrossDatasetResult out;
  const auto predicted = ensemble_predictor(config, options)(train_images, test_images, seed, &out.log);
  ScorePair p;
  for (std::size_t k = 0; k < test_images.size(); ++k) {
    p.predicted.push_back(predicted[k]);
    p.subjective.push_back(test_images[k].mos);
    out.residuals.push_back({test_images[k].id, test_images[k].mos, predicted[k], predicted[k] - test_images[k].mos});
  }
  out.metrics = evaluate(p, options.pwrc);
  return out;
}

std::vector<std::pair<AblationVariant, ExperimentResult>> ablation_sweep(const Manifest& manifest,
                                                                        const EnsembleConfig& base_config,
                                                                        const std::vector<AblationVariant>& variants,
                                                                        const ExperimentOptions& options) {
  if (variants.empty()) fail(ErrorCode::invalid_argument, "ablation sweep needs at least one variant");
  const auto images = load_scored_images(manifest);
  std::vector<std::pair<AblationVariant, ExperimentResult>> out;
  for (auto v : variants) {
    ExperimentOptions o = options;
    o.variant = v;
    out.emplace_back(v, run_experiment(images, ensemble_predictor(base_config, o), o,
                                       ensemble_metadata(manifest, base_config, o)));
  }
  return out;
}

std::pair<ScorePair, std::vector<std::string>> predict_manifest(const EnsembleModel& model, const Manifest& manifest,
                                                                int n_crops, std::uint64_t seed) {
  const auto images = load_scored_images(manifest);
  const RngStream crops(seed, 2);
  std::pair<ScorePair, std::vector<std::string>> out;
  for (std::size_t j = 0; j < images.size(); ++j) {
    RngStream r = crops.derive(j);
    out.first.predicted.push_back(predict_image(model, images[j].image, n_crops, r));
    out.first.subjective.push_back(images[j].mos);
    out.second.push_back(images[j].id);
  }
  return out;
}

}  // namespace biqa
