#include <gtest/gtest.h>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <mutex>
#include <set>

#include "biqa/harness.hpp"
#include "biqa/stats.hpp"
#include "biqa/toy.hpp"
#include "test_util.hpp"

using namespace biqa;
namespace bt = biqa::testing;
namespace fs = std::filesystem;

namespace {

Manifest numbered(std::size_t n) {
  Manifest m;
  m.dataset_id = "numbered";
  for (std::size_t i = 0; i < n; ++i) m.records.push_back({"img" + std::to_string(i) + ".png", (i % 11) / 10.0, {}, {}});
  return m;
}

std::vector<ScoredImage> tiny_images(int n) {
  std::vector<ScoredImage> out;
  for (int i = 0; i < n; ++i) out.push_back({"im" + std::to_string(i), Raster(4, 4, 1, 0.5F), (i * 7 % 13) / 12.0});
  return out;
}

// Predicts the subjective score plus a deterministic seed-dependent wobble.
std::vector<double> noisy_oracle(std::span<const ScoredImage>, std::span<const ScoredImage> test, std::uint64_t seed,
                                 TrainingLog*) {
  RngStream rng(seed, 5);
  std::vector<double> out;
  for (const auto& t : test) out.push_back(t.mos + 0.1 * rng.normal());
  return out;
}

std::string read_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir));
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += f.string() + "\n" + bt::read_bytes(dir / f);
  return all;
}

}  // namespace

TEST(Manifest, LoadNormalizesDeclaredRange) {
  bt::TempDir dir;
  bt::write_bytes(dir / "tid.csv", "path,score\na.png,5.5\nb.png,1\nc.png,10\n");
  const auto m = load_manifest(dir / "tid.csv", {1, 10});
  ASSERT_EQ(m.size(), 3U);
  EXPECT_DOUBLE_EQ(m.records[0].mos, 0.5);
  EXPECT_EQ(m.records[1].mos, 0.0);
  EXPECT_EQ(m.records[2].mos, 1.0);
  EXPECT_EQ(fs::path(m.records[0].path), dir / "a.png");

  bt::write_bytes(dir / "koniq.csv", "path,score\na.png,1\nb.png,5\n");
  const auto k = load_manifest(dir / "koniq.csv", {1, 5});
  EXPECT_EQ(k.records[0].mos, 0.0);
  EXPECT_EQ(k.records[1].mos, 1.0);

  const auto inv = load_manifest(dir / "koniq.csv", {1, 5}, true);
  EXPECT_EQ(inv.records[0].mos, 1.0);

  bt::write_bytes(dir / "bad.csv", "path,score\na.png,12\n");
  EXPECT_BIQA_ERROR(load_manifest(dir / "bad.csv", {1, 10}), ErrorCode::out_of_range);
  bt::write_bytes(dir / "dup.csv", "path,score\na.png,2\na.png,3\n");
  EXPECT_BIQA_ERROR(load_manifest(dir / "dup.csv", {1, 10}), ErrorCode::invalid_argument);
  EXPECT_BIQA_ERROR(load_manifest(dir / "none.csv"), ErrorCode::missing_file);
}

TEST(Split, SizesFollowRoundedFraction) {
  const auto [train, test] = split(numbered(875), 0.8, 3);
  EXPECT_EQ(train.size(), 700U);
  EXPECT_EQ(test.size(), 175U);
  const auto [a, b] = split(numbered(10), 0.8, 3);
  EXPECT_EQ(a.size(), 8U);
  EXPECT_EQ(b.size(), 2U);
  EXPECT_BIQA_ERROR(split(numbered(1), 0.8, 3), ErrorCode::degenerate);
  EXPECT_BIQA_ERROR(split(numbered(2), 0.9, 3), ErrorCode::degenerate);
  EXPECT_BIQA_ERROR(split(numbered(10), 1.0, 3), ErrorCode::invalid_argument);
}

TEST(Split, DisjointExhaustiveDeterministic) {
  const auto m = numbered(57);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto [train, test] = split(m, 0.8, seed);
    std::set<std::string> a, b;
    for (const auto& r : train.records) a.insert(r.path);
    for (const auto& r : test.records) b.insert(r.path);
    for (const auto& p : b) EXPECT_EQ(a.count(p), 0U);
    EXPECT_EQ(a.size() + b.size(), m.size());
    const auto [train2, test2] = split(m, 0.8, seed);
    ASSERT_EQ(train2.size(), train.size());
    for (std::size_t i = 0; i < train.size(); ++i) EXPECT_EQ(train.records[i].path, train2.records[i].path);
  }
  EXPECT_NE(split(m, 0.8, 1).second.records[0].path + split(m, 0.8, 1).second.records[1].path,
            split(m, 0.8, 2).second.records[0].path + split(m, 0.8, 2).second.records[1].path);
}

TEST(Split, TestMembershipIsUniform) {
  // each record should land in the test side with probability 2/10
  const auto m = numbered(10);
  std::vector<int> hits(10, 0);
  constexpr int kTrials = 5000;
  for (int s = 0; s < kTrials; ++s)
    for (const auto& r : split(m, 0.8, static_cast<std::uint64_t>(s)).second.records)
      ++hits[static_cast<std::size_t>(std::stoi(r.path.substr(3)))];
  for (int h : hits) EXPECT_NEAR(h / static_cast<double>(kTrials), 0.2, 0.025);
}

TEST(Experiment, RecordsDisjointExhaustiveSplits) {
  const auto images = tiny_images(30);
  std::mutex mu;
  std::map<std::uint64_t, std::pair<std::set<std::string>, std::set<std::string>>> seen;
  SplitPredictor recorder = [&](std::span<const ScoredImage> train, std::span<const ScoredImage> test,
                                std::uint64_t seed, TrainingLog* log) {
    std::lock_guard lock(mu);
    auto& [a, b] = seen[seed];
    for (const auto& t : train) a.insert(t.id);
    for (const auto& t : test) b.insert(t.id);
    return noisy_oracle(train, test, seed, log);
  };
  ExperimentOptions o;
  o.repeats = 10;
  o.threads = 3;
  const auto result = run_experiment(images, recorder, o);
  EXPECT_EQ(result.summary.completed, 10);
  ASSERT_EQ(seen.size(), 10U);
  for (const auto& [seed, sides] : seen) {
    EXPECT_EQ(sides.first.size() + sides.second.size(), 30U);
    for (const auto& id : sides.second) EXPECT_EQ(sides.first.count(id), 0U);
  }
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(result.splits[static_cast<std::size_t>(i)].seed, split_seed(o.base_seed, i));
    EXPECT_EQ(result.splits[static_cast<std::size_t>(i)].residuals.size(), 6U);
  }
}

TEST(Experiment, SummaryMediansMatchSortOracle) {
  const auto images = tiny_images(40);
  for (int repeats : {1, 2, 7, 10}) {
    ExperimentOptions o;
    o.repeats = repeats;
    o.base_seed = 99;
    const auto result = run_experiment(images, noisy_oracle, o);
    for (const auto& [name, m] : result.summary.metrics) {
      auto v = m.values;
      ASSERT_EQ(v.size(), static_cast<std::size_t>(repeats));
      std::sort(v.begin(), v.end());
      const std::size_t n = v.size();
      const double oracle = n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
      EXPECT_EQ(m.median, oracle) << name;
      EXPECT_EQ(m.min, v.front());
      EXPECT_EQ(m.max, v.back());
      EXPECT_GE(m.median, m.min);
      EXPECT_LE(m.median, m.max);
    }
  }
}

TEST(Experiment, ConstantPredictorIsARecordedFailure) {
  const auto images = tiny_images(20);
  ExperimentOptions o;
  o.repeats = 4;
  const auto result = run_experiment(
      images, [](auto, auto test, auto, auto) { return std::vector<double>(test.size(), 0.5); }, o);
  EXPECT_EQ(result.summary.completed, 0);
  ASSERT_EQ(result.summary.failures.size(), 4U);
  EXPECT_EQ(result.summary.failures[0].code, "zero_variance");
  EXPECT_EQ(to_json(result.summary).at("failures").size(), 4U);
}

TEST(Experiment, LeakageIsFatal) {
  const auto images = tiny_images(20);
  ExperimentOptions o;
  o.repeats = 3;
  EXPECT_BIQA_ERROR(run_experiment(
                        images,
                        [](auto, auto, auto, auto) -> std::vector<double> {
                          fail(ErrorCode::leakage, "test image in training batch");
                        },
                        o),
                    ErrorCode::leakage);
}

TEST(Experiment, RerunsAreByteIdentical) {
  bt::TempDir dir;
  const auto images = tiny_images(25);
  ExperimentOptions o;
  o.repeats = 5;
  o.base_seed = 4;
  o.threads = 2;
  write_experiment(run_experiment(images, noisy_oracle, o), dir / "a");
  write_experiment(run_experiment(images, noisy_oracle, o), dir / "b");
  EXPECT_EQ(read_dir(dir / "a"), read_dir(dir / "b"));
  for (const char* f : {"summary.json", "splits.json", "residuals.csv", "boxplot.csv", "scatter.csv", "probplot.csv"})
    EXPECT_TRUE(fs::exists(dir / "a" / f)) << f;
}

TEST(Experiment, EnsemblePipelineIsDeterministicAndLeakFree) {
  bt::TempDir dir;
  toy::QualityOptions q;
  q.n_images = 20;
  q.size = 20;
  const auto manifest = toy::write_set(toy::quality_set(q), dir / "set", "toyq");
  auto config = EnsembleConfig::toy(16, 4);
  config.head_widths = {8, 4, 1};
  ExperimentOptions o;
  o.repeats = 3;
  o.base_seed = 11;
  o.train.epochs = 1;
  o.train.batch_size = 4;
  o.eval_crops = 2;
  const auto a = run_experiment(manifest, config, o);
  o.threads = 3;
  const auto b = run_experiment(manifest, config, o);
  EXPECT_EQ(a.summary.completed, 3);
  EXPECT_EQ(to_json(a.summary).dump(), to_json(b.summary).dump().replace(to_json(b.summary).dump().find("\"threads\":3"), 11, "\"threads\":1"));
  for (std::size_t i = 0; i < a.splits.size(); ++i) EXPECT_EQ(to_json(a.splits[i]).dump(), to_json(b.splits[i]).dump());
}

TEST(Residuals, BoxStatsAndProbabilityPlot) {
  const std::vector<double> zeros(5, 0.0);
  const auto z = box_stats(zeros);
  EXPECT_EQ(z.q1, 0.0);
  EXPECT_EQ(z.median, 0.0);
  EXPECT_EQ(z.q3, 0.0);
  for (const auto& [q, r] : probability_plot(zeros)) EXPECT_EQ(r, 0.0);

  const std::vector<double> three{1.0, -1.0, 0.0};
  const auto b = box_stats(three);
  EXPECT_EQ(b.median, 0.0);
  EXPECT_EQ(b.min, -1.0);
  EXPECT_EQ(b.max, 1.0);
  EXPECT_EQ(b.q1, -0.5);  // type-7 interpolation
  EXPECT_EQ(b.q3, 0.5);

  const boost::math::normal n;
  const auto pp = probability_plot(three);
  ASSERT_EQ(pp.size(), 3U);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(pp[i].first, boost::math::quantile(n, (i + 0.5) / 3.0), 1e-12);
    EXPECT_EQ(pp[i].second, static_cast<double>(i) - 1.0);
  }
}

TEST(Residuals, ReportFiles) {
  bt::TempDir dir;
  SplitReport s;
  s.index = 0;
  s.seed = 12;
  s.residuals = {{"a", 0.5, 0.4, -0.1}, {"b", 0.2, 0.3, 0.1}, {"c", 0.9, 0.9, 0.0}};
  const SplitReport reports[] = {s};
  residual_report(reports, 0, dir.path());
  const auto residuals = bt::read_bytes(dir / "residuals.csv");
  EXPECT_EQ(residuals.rfind("index,image_id,y_s,y_p,residual\n0,a,", 0), 0U);
  EXPECT_EQ(std::count(residuals.begin(), residuals.end(), '\n'), 4);
  EXPECT_EQ(bt::read_bytes(dir / "boxplot.csv").rfind("split,seed,min,q1_type7,median,q3_type7,max\n0,12,", 0), 0U);
  EXPECT_EQ(bt::read_bytes(dir / "scatter.csv").rfind("y_s,residual\n", 0), 0U);
  EXPECT_EQ(bt::read_bytes(dir / "probplot.csv").rfind("normal_quantile,residual\n", 0), 0U);
}

TEST(TTest, TextbookCase) {
  // ten values with mean 0.5 and sample sd 0.1
  std::vector<double> x{0.4, 0.6, 0.4, 0.6, 0.4, 0.6, 0.4, 0.6, 0.5, 0.5};
  const double sd = std::sqrt(stats::variance(x));
  for (double& v : x) v = 0.5 + (v - 0.5) * 0.1 / sd;
  const auto r = t_test(x, 0.45, 0.05);
  EXPECT_NEAR(r.t, 1.5811, 5e-5);
  EXPECT_NEAR(r.t, 0.05 * std::sqrt(10.0) / 0.1, 1e-12);
  EXPECT_EQ(r.df, 9.0);
  const double oracle = boost::math::cdf(boost::math::complement(boost::math::students_t(9.0), r.t));
  EXPECT_NEAR(r.p_greater, oracle, 1e-12);
  EXPECT_NEAR(r.p_greater, 0.074, 0.001);
  EXPECT_EQ(r.verdict, 0);
  EXPECT_EQ(t_test_superiority(x, 0.45, 0.05), 0);
}

TEST(TTest, ClearSuperiorityAndInferiority) {
  std::vector<double> x;
  RngStream rng(1, 1);
  for (int i = 0; i < 10; ++i) x.push_back(0.98 + 1e-4 * rng.normal());
  EXPECT_EQ(t_test_superiority(x, 0.90), 1);
  EXPECT_EQ(t_test_superiority(x, 0.99), -1);
}

TEST(TTest, ErrorPaths) {
  EXPECT_BIQA_ERROR(t_test(std::vector<double>{0.5}, 0.4), ErrorCode::invalid_argument);
  EXPECT_BIQA_ERROR(t_test(std::vector<double>{0.5, 0.5, 0.5}, 0.4), ErrorCode::zero_variance);
  EXPECT_BIQA_ERROR(t_test(std::vector<double>{0.5, 0.6}, 0.4, 1.5), ErrorCode::invalid_argument);
}

TEST(TTest, NullRejectionRateIsCalibrated) {
  RngStream rng(2024, 0);
  int rejections = 0;
  constexpr int kTrials = 1000;
  for (int t = 0; t < kTrials; ++t) {
    std::vector<double> x(30);
    for (double& v : x) v = 0.8 + 0.05 * rng.normal();
    rejections += t_test_superiority(x, 0.8, 0.05) != 0;
  }
  EXPECT_LE(rejections / static_cast<double>(kTrials), 0.05 + 0.02);
}

TEST(CrossDataset, OverlapIsLeakage) {
  bt::TempDir dir;
  toy::QualityOptions q;
  q.n_images = 6;
  q.size = 16;
  const auto m = toy::write_set(toy::quality_set(q), dir / "a", "a");
  auto config = EnsembleConfig::toy(16, 4);
  config.head_widths = {8, 4, 1};
  EXPECT_BIQA_ERROR(cross_dataset({m}, m, config, {}, 1), ErrorCode::leakage);
}

TEST(CrossDataset, ListOfOneMatchesSingleManifest) {
  bt::TempDir dir;
  toy::QualityOptions q;
  q.n_images = 10;
  q.size = 16;
  const auto train = toy::write_set(toy::quality_set(q), dir / "train", "train");
  const auto test = toy::write_set(toy::natural_set(6, 16, 0.02, 5), dir / "test", "test");
  auto config = EnsembleConfig::toy(16, 4);
  config.head_widths = {8, 4, 1};
  ExperimentOptions o;
  o.train.epochs = 1;
  o.train.batch_size = 4;
  o.eval_crops = 2;
  const auto single = cross_dataset(std::vector<Manifest>{train}, test, config, o, 3);
  Manifest renamed = train;
  renamed.dataset_id = "other";
  const auto again = cross_dataset(std::vector<Manifest>{renamed}, test, config, o, 3);
  EXPECT_EQ(to_json(single.metrics).dump(), to_json(again.metrics).dump());
  EXPECT_EQ(single.residuals.size(), 6U);
}

TEST(Ablation, EmptyVariantListIsAnError) {
  EXPECT_BIQA_ERROR(ablation_sweep(numbered(10), EnsembleConfig::toy(), {}, {}), ErrorCode::invalid_argument);
}

TEST(Ablation, VariantsShareSplitSeeds) {
  bt::TempDir dir;
  toy::QualityOptions q;
  q.n_images = 10;
  q.size = 16;
  const auto m = toy::write_set(toy::quality_set(q), dir / "set", "set");
  auto config = EnsembleConfig::toy(16, 4);
  config.head_widths = {8, 4, 1};
  ExperimentOptions o;
  o.repeats = 2;
  o.train.epochs = 1;
  o.train.batch_size = 4;
  o.eval_crops = 1;
  const auto results = ablation_sweep(m, config,
                                      {AblationVariant::full, AblationVariant::drop_branch_a,
                                       AblationVariant::drop_branch_b, AblationVariant::drop_head},
                                      o);
  ASSERT_EQ(results.size(), 4U);
  for (const auto& [variant, r] : results) {
    EXPECT_EQ(r.summary.metadata.at("split_seeds"), results[0].second.summary.metadata.at("split_seeds"))
        << to_string(variant);
    EXPECT_EQ(r.summary.metadata.at("variant"), to_string(variant));
  }
}
