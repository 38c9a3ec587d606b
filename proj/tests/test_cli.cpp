#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "biqa/toy.hpp"
#include "test_util.hpp"

using namespace biqa;
namespace bt = biqa::testing;
namespace fs = std::filesystem;

namespace {

int cli(const std::string& args) {
  const std::string cmd = std::string(BIQA_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

const char* kSmallModel = R"("model": {"input_size": 16, "width": 4, "head_widths": [8, 4, 1]})";

}  // namespace

TEST(Cli, UsageErrors) {
  bt::TempDir dir;
  EXPECT_EQ(cli(""), 1);
  EXPECT_EQ(cli("frobnicate"), 1);
  EXPECT_EQ(cli("mos " + q(dir / "missing.json")), 1);
  bt::write_bytes(dir / "bad.json", "{ not json");
  EXPECT_EQ(cli("mos " + q(dir / "bad.json")), 1);
  bt::write_bytes(dir / "empty.json", "{}");
  EXPECT_EQ(cli("mos " + q(dir / "empty.json")), 1);
  EXPECT_EQ(cli("mos --threads 0 " + q(dir / "empty.json")), 1);
  EXPECT_EQ(cli("--help"), 0);
}

TEST(Cli, DataErrors) {
  bt::TempDir dir;
  bt::write_bytes(dir / "c.json", R"({"ratings": "nowhere.csv"})");
  EXPECT_EQ(cli("mos " + q(dir / "c.json") + " --out " + q(dir / "o")), 2);
  bt::write_bytes(dir / "m.csv", "path,score\na.png,12\n");
  bt::write_bytes(dir / "e.json", R"({"checkpoint": "none.ckpt", "manifest": "m.csv"})");
  EXPECT_EQ(cli("evaluate " + q(dir / "e.json")), 2);
}

TEST(Cli, MosPipeline) {
  bt::TempDir dir;
  std::string csv = "image_id,observer_id,score,timestamp\n";
  for (int o = 0; o < 5; ++o)
    for (int i = 0; i < 4; ++i)
      csv += "img" + std::to_string(i) + ",o" + std::to_string(o) + "," + std::to_string(0.2 * i + 0.01 * o) + ",\n";
  bt::write_bytes(dir / "ratings.csv", csv);
  bt::write_bytes(dir / "c.json", R"({
    // comments are allowed
    "ratings": "ratings.csv", "bins": 10})");
  ASSERT_EQ(cli("mos " + q(dir / "c.json") + " --out " + q(dir / "out")), 0);
  const auto mos = bt::read_bytes(dir / "out" / "mos.csv");
  EXPECT_EQ(std::count(mos.begin(), mos.end(), '\n'), 5);
  const auto hist = bt::read_bytes(dir / "out" / "histogram.csv");
  EXPECT_EQ(std::count(hist.begin(), hist.end(), '\n'), 11);
  EXPECT_TRUE(fs::exists(dir / "out" / "mos_report.json"));
}

TEST(Cli, DistortCorpus) {
  bt::TempDir dir;
  toy::write_sources(toy::source_patches(2, 24, 1), dir / "src");
  bt::write_bytes(dir / "c.json", R"({"sources": "src", "classes": ["23_3", "11_5"]})");
  ASSERT_EQ(cli("distort " + q(dir / "c.json") + " --seed 3 --out " + q(dir / "out")), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "source_0000_23_3.png"));
  EXPECT_TRUE(fs::exists(dir / "out" / "manifest.csv"));
  bt::write_bytes(dir / "bad.json", R"({"sources": "src", "classes": ["26_1"]})");
  EXPECT_EQ(cli("distort " + q(dir / "bad.json") + " --out " + q(dir / "out2")), 2);
}

TEST(Cli, GradcheckPasses) {
  bt::TempDir dir;
  bt::write_bytes(dir / "c.json", std::string("{\"cases\": 3, ") + kSmallModel + "}");
  EXPECT_EQ(cli("gradcheck " + q(dir / "c.json") + " --out " + q(dir / "out")), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "gradcheck.json"));
}

TEST(Cli, ExperimentIsReproducibleByteForByte) {
  bt::TempDir dir;
  toy::QualityOptions qo;
  qo.n_images = 15;
  qo.size = 18;
  toy::write_set(toy::quality_set(qo), dir / "set", "toy");
  bt::write_bytes(dir / "c.json", std::string("{\"manifest\": \"set/manifest.csv\", \"repeats\": 2, \"crops\": 2, ") +
                                      "\"train\": {\"epochs\": 1, \"batch_size\": 4}, " + kSmallModel + "}");
  ASSERT_EQ(cli("experiment " + q(dir / "c.json") + " --seed 5 --threads 2 --out " + q(dir / "a")), 0);
  ASSERT_EQ(cli("experiment " + q(dir / "c.json") + " --seed 5 --threads 2 --out " + q(dir / "b")), 0);
  for (const char* f : {"summary.json", "splits.json", "residuals.csv", "boxplot.csv", "train_log_split0.jsonl"}) {
    ASSERT_TRUE(fs::exists(dir / "a" / f)) << f;
    EXPECT_EQ(bt::read_bytes(dir / "a" / f), bt::read_bytes(dir / "b" / f)) << f;
  }
}

TEST(Cli, AllSplitsFailingIsNumericFailure) {
  bt::TempDir dir;
  fs::create_directories(dir / "set");
  std::string manifest = "path,score\n";
  for (int i = 0; i < 6; ++i) {
    const auto name = "i" + std::to_string(i) + ".png";
    save_image(toy::source_patch(16, static_cast<std::uint64_t>(i)), dir / "set" / name);
    manifest += name + ",0.5\n";
  }
  bt::write_bytes(dir / "set" / "manifest.csv", manifest);
  bt::write_bytes(dir / "c.json", std::string("{\"manifest\": \"set/manifest.csv\", \"repeats\": 2, \"crops\": 1, ") +
                                      "\"train\": {\"epochs\": 1, \"batch_size\": 4}, " + kSmallModel + "}");
  EXPECT_EQ(cli("experiment " + q(dir / "c.json") + " --out " + q(dir / "out")), 3);
}

TEST(Cli, PretrainTransferFinetuneEvaluateChain) {
  bt::TempDir dir;
  toy::write_sources(toy::source_patches(2, 20, 1), dir / "src");
  bt::write_bytes(dir / "d.json", R"({"sources": "src", "types": [11, 13], "levels": [1, 5]})");
  ASSERT_EQ(cli("distort " + q(dir / "d.json") + " --out " + q(dir / "corpus")), 0);
  const std::string model = R"("model": {"input_size": 16, "width": 4, "head_widths": [8, 4, 1]})";
  bt::write_bytes(dir / "p.json", "{\"corpus\": \"corpus/manifest.csv\", \"train\": {\"epochs\": 1, \"batch_size\": 4}, " +
                                      model + "}");
  ASSERT_EQ(cli("pretrain " + q(dir / "p.json") + " --out " + q(dir / "pre")), 0);
  bt::write_bytes(dir / "t.json", R"({"checkpoint": "pre/model.ckpt"})");
  ASSERT_EQ(cli("transfer " + q(dir / "t.json") + " --out " + q(dir / "reg")), 0);
  EXPECT_EQ(cli("transfer " + q(dir / "t.json") + " --out " + q(dir / "reg")) == 0, true);
  bt::write_bytes(dir / "t2.json", R"({"checkpoint": "reg/model.ckpt"})");
  EXPECT_EQ(cli("transfer " + q(dir / "t2.json") + " --out " + q(dir / "reg2")), 2);
  toy::QualityOptions qo;
  qo.n_images = 8;
  qo.size = 18;
  toy::write_set(toy::quality_set(qo), dir / "set", "toy");
  bt::write_bytes(dir / "f.json", R"({"checkpoint": "reg/model.ckpt", "train_manifest": "set/manifest.csv",
                                      "validation_manifest": "set/manifest.csv", "train": {"epochs": 1, "batch_size": 4}})");
  ASSERT_EQ(cli("finetune " + q(dir / "f.json") + " --out " + q(dir / "ft")), 0);
  EXPECT_TRUE(fs::exists(dir / "ft" / "train_log.jsonl"));
  bt::write_bytes(dir / "e.json", R"({"checkpoint": "ft/model.ckpt", "manifest": "set/manifest.csv", "crops": 3})");
  ASSERT_EQ(cli("evaluate " + q(dir / "e.json") + " --out " + q(dir / "ev")), 0);
  EXPECT_TRUE(fs::exists(dir / "ev" / "metrics.json"));
  EXPECT_TRUE(fs::exists(dir / "ev" / "pwrc_curve.csv"));
}
