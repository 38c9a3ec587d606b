#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "biqa/mos.hpp"
#include "biqa/rng.hpp"
#include "test_util.hpp"

using namespace biqa;
namespace bt = biqa::testing;

namespace {

std::string obs(int i) { return "obs" + std::to_string(100 + i); }
std::string img(int i) { return "img" + std::to_string(100 + i); }

// Observers rate around a per-image consensus with small noise; optionally one
// observer reports 1 - consensus.
RatingTable panel(int observers, int images, bool with_contrarian, std::uint64_t seed) {
  RngStream rng(seed, 0);
  std::vector<double> consensus(static_cast<std::size_t>(images));
  for (double& c : consensus) c = rng.uniform(0.1, 0.9);
  RatingTable t;
  for (int o = 0; o < observers; ++o)
    for (int i = 0; i < images; ++i) {
      const double c = consensus[static_cast<std::size_t>(i)];
      const bool contrarian = with_contrarian && o == observers - 1;
      const double s = contrarian ? 1.0 - c : std::clamp(c + 0.03 * rng.normal(), 0.0, 1.0);
      t.add({img(i), obs(o), s, ""});
    }
  return t;
}

}  // namespace

TEST(Mos, IdenticalObserversAreKept) {
  RatingTable t;
  for (int o = 0; o < 30; ++o)
    for (int i = 0; i < 12; ++i) t.add({img(i), obs(o), 0.05 + 0.07 * i, ""});
  const auto r = screen_outliers(t);
  EXPECT_TRUE(r.rejected.empty());
  EXPECT_EQ(r.table.size(), t.size());
}

TEST(Mos, AntiCorrelatedObserverIsRejected) {
  const auto t = panel(30, 40, true, 7);
  const auto r = screen_outliers(t);
  EXPECT_EQ(r.rejected, std::vector<std::string>{obs(29)});
  EXPECT_EQ(r.table.size(), 29U * 40U);
  EXPECT_EQ(r.table.observers().size(), 29U);
  // a second pass finds nothing left to reject
  EXPECT_TRUE(screen_outliers(r.table).rejected.empty());
}

TEST(Mos, ExtremeZScoresRejectAnObserver) {
  RatingTable t = panel(30, 20, false, 3);
  RatingTable noisy;
  for (const auto& r : t.ratings()) {
    Rating copy = r;
    // observer 5 is wildly off on half of the images but still rank-consistent
    const int image = std::stoi(r.image_id.substr(3)) - 100;
    if (r.observer_id == obs(5) && image % 2 == 0) copy.score = copy.score > 0.5 ? 0.0 : 1.0;
    noisy.add(copy);
  }
  const auto result = screen_outliers(noisy);
  EXPECT_NE(std::find(result.rejected.begin(), result.rejected.end(), obs(5)), result.rejected.end());
}

TEST(Mos, ScreeningNeedsThreeObservers) {
  EXPECT_BIQA_ERROR(screen_outliers(panel(2, 5, false, 1)), ErrorCode::invalid_argument);
}

TEST(Mos, RatingTableConstraints) {
  RatingTable t;
  t.add({"a", "o1", 0.5, ""});
  EXPECT_BIQA_ERROR(t.add({"a", "o1", 0.6, ""}), ErrorCode::invalid_argument);
  EXPECT_BIQA_ERROR(t.add({"a", "o2", 1.2, ""}), ErrorCode::out_of_range);
  EXPECT_BIQA_ERROR(t.add({"a", "o2", -0.1, ""}), ErrorCode::out_of_range);
  EXPECT_BIQA_ERROR(t.add({"", "o2", 0.1, ""}), ErrorCode::invalid_argument);
}

TEST(Mos, AggregateExamples) {
  RatingTable constant;
  for (int o = 0; o < 30; ++o) constant.add({"x", obs(o), 0.5, ""});
  const auto c = aggregate(constant);
  ASSERT_EQ(c.size(), 1U);
  EXPECT_EQ(c[0].mos, 0.5);
  EXPECT_EQ(c[0].variance, 0.0);
  EXPECT_EQ(c[0].n_raters, 30);

  RatingTable pair;
  pair.add({"y", "a", 0.0, ""});
  pair.add({"y", "b", 1.0, ""});
  const auto p = aggregate(pair);
  EXPECT_EQ(p[0].mos, 0.5);
  EXPECT_EQ(p[0].variance, 0.25);
  EXPECT_EQ(aggregate(pair, false)[0].variance, 0.5);

  RatingTable missing = pair;
  missing.declare_image("z");
  EXPECT_BIQA_ERROR(aggregate(missing), ErrorCode::invalid_argument);
}

TEST(Mos, ThirtyObserversExactMoments) {
  // scores k/32 are dyadic, so the hand-computed moments are exact in binary
  RatingTable t;
  std::vector<double> scores;
  for (int o = 0; o < 30; ++o) {
    const double s = (o % 17 + 3) / 32.0;
    scores.push_back(s);
    t.add({"img", obs(o), s, ""});
  }
  long double sum = 0;
  for (double s : scores) sum += s;
  const long double mean = sum / 30;
  long double ss = 0;
  for (double s : scores) ss += (s - mean) * (s - mean);
  const auto r = aggregate(t);
  EXPECT_EQ(r[0].mos, static_cast<double>(mean));
  EXPECT_EQ(r[0].variance, static_cast<double>(ss / 30));
  EXPECT_GE(r[0].mos, *std::min_element(scores.begin(), scores.end()));
  EXPECT_LE(r[0].mos, *std::max_element(scores.begin(), scores.end()));
}

TEST(Mos, AggregateIsPermutationInvariant) {
  const auto t = panel(30, 15, false, 9);
  auto ratings = t.ratings();
  RngStream rng(2, 2);
  rng.shuffle(ratings.begin(), ratings.end());
  RatingTable shuffled;
  for (const auto& r : ratings) shuffled.add(r);
  const auto a = aggregate(t), b = aggregate(shuffled);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image_id, b[i].image_id);
    EXPECT_EQ(a[i].mos, b[i].mos);
    EXPECT_EQ(a[i].variance, b[i].variance);
  }
}

TEST(Mos, HistogramBins) {
  const std::vector<MosRecord> three{{"a", 0.0}, {"b", 0.5}, {"c", 1.0}};
  EXPECT_EQ(mos_histogram(three, 2), (std::vector<std::size_t>{2, 1}));
  EXPECT_EQ(mos_histogram({}, 4), (std::vector<std::size_t>(4, 0)));
  EXPECT_EQ(mos_histogram(three).size(), 100U);
  EXPECT_BIQA_ERROR(mos_histogram(three, 0), ErrorCode::invalid_argument);
}

TEST(Mos, HistogramConservesCounts) {
  RngStream rng(12, 0);
  std::vector<MosRecord> records;
  for (int i = 0; i < 12000; ++i) records.push_back({img(i), rng.uniform()});
  records.push_back({"lo", 0.0});
  records.push_back({"hi", 1.0});
  for (int bins : {1, 7, 100, 333}) {
    const auto counts = mos_histogram(records, bins);
    EXPECT_EQ(std::accumulate(counts.begin(), counts.end(), std::size_t{0}), records.size());
  }
  for (int k = 0; k <= 100; ++k) EXPECT_LT(histogram_bin(k / 100.0, 100), 100U);
}

TEST(Mos, CsvRoundTrips) {
  bt::TempDir dir;
  const auto t = panel(4, 3, false, 5);
  write_ratings(t, dir / "ratings.csv");
  const auto back = read_ratings(dir / "ratings.csv");
  EXPECT_EQ(back.ratings(), t.ratings());
  EXPECT_EQ(bt::read_bytes(dir / "ratings.csv").rfind("image_id,observer_id,score,timestamp\n", 0), 0U);
  const auto records = aggregate(t);
  write_mos(records, dir / "mos.csv");
  EXPECT_EQ(bt::read_bytes(dir / "mos.csv").rfind("image_id,mos,variance,n_raters\n", 0), 0U);
  const auto mos = read_mos(dir / "mos.csv");
  ASSERT_EQ(mos.size(), records.size());
  for (std::size_t i = 0; i < mos.size(); ++i) {
    EXPECT_EQ(mos[i].mos, records[i].mos);
    EXPECT_EQ(mos[i].n_raters, records[i].n_raters);
  }
  write_histogram(mos_histogram(records, 4), dir / "hist.csv");
  EXPECT_EQ(bt::read_bytes(dir / "hist.csv").rfind("bin_lo,bin_hi,count\n", 0), 0U);
}
