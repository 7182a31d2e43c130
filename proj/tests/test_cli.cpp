#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "json.hpp"
#include "rdr/cli.hpp"
#include "rdr/data.hpp"

using namespace rdr;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const std::vector<std::string> kTiny = {"--synthetic", "--synthetic-n", "8",   "--synthetic-eval-n", "4",
                                        "--image-size", "32",           "--encoder", "toy",          "--batch-size",
                                        "2",            "--epochs",     "2"};

std::vector<std::string> train_args(const fs::path& out, std::vector<std::string> extra = {}) {
  std::vector<std::string> a{"train"};
  a.insert(a.end(), kTiny.begin(), kTiny.end());
  a.insert(a.end(), {"--out", out.string()});
  a.insert(a.end(), extra.begin(), extra.end());
  return a;
}

class CliRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "rdr_cli";
    fs::remove_all(root_);
    fs::create_directories(root_);
    first_ = cli(train_args(root_ / "a"));
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static fs::path root_;
  static CliResult first_;
};

fs::path CliRun::root_;
CliResult CliRun::first_;

}  // namespace

TEST_F(CliRun, TrainWritesRunDirectory) {
  ASSERT_EQ(first_.code, kExitOk) << first_.err;
  for (const char* f : {"best.pt", "last.pt", "config.json", "train_log.jsonl", "metadata.json", "metrics.json",
                        "per_image.csv"}) {
    EXPECT_TRUE(fs::exists(root_ / "a" / f)) << f;
  }
  EXPECT_NE(first_.out.find("train: best epoch"), std::string::npos);
}

TEST_F(CliRun, SameSeedGivesByteIdenticalLog) {
  auto r = cli(train_args(root_ / "b"));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(slurp(root_ / "a" / "train_log.jsonl"), slurp(root_ / "b" / "train_log.jsonl"));
  auto c = cli(train_args(root_ / "c", {"--seed", "5"}));
  ASSERT_EQ(c.code, kExitOk) << c.err;
  EXPECT_NE(slurp(root_ / "a" / "train_log.jsonl"), slurp(root_ / "c" / "train_log.jsonl"));
}

TEST_F(CliRun, EvalWritesMetricsAndCsv) {
  auto r = cli({"eval", "--checkpoint", (root_ / "a" / "best.pt").string(), "--synthetic", "--synthetic-eval-n", "4",
                "--out", (root_ / "eval").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  auto m = nlohmann::json::parse(slurp(root_ / "eval" / "metrics.json"));
  for (const char* k : {"dice_od", "dice_oc", "miou_od", "miou_oc", "acc_od", "acc_oc", "delta"}) {
    EXPECT_TRUE(m.contains(k)) << k;
  }
  std::istringstream csv(slurp(root_ / "eval" / "per_image.csv"));
  std::string header, line;
  std::getline(csv, header);
  EXPECT_EQ(header, "id,dice_od,dice_oc,miou_od,miou_oc,miou_fgbg_od,miou_fgbg_oc,acc_od,acc_oc,delta");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 4);
}

TEST_F(CliRun, PredictWritesNestedMasks) {
  auto data = root_ / "synth";
  ASSERT_EQ(cli({"synth", "--out", data.string(), "--image-size", "32", "--synthetic-n", "3", "--synthetic-eval-n", "2"})
                .code,
            kExitOk);
  auto r = cli({"predict", "--checkpoint", (root_ / "a" / "best.pt").string(), "--input",
                (data / "target_eval" / "images").string(), "--out", (root_ / "pred").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  int masks = 0;
  for (const auto& e : fs::directory_iterator(root_ / "pred")) {
    if (e.path().string().find("_mask.png") == std::string::npos) continue;
    ++masks;
    auto gray = (read_image(e.path())[0] * 255.0).round().to(torch::kUInt8);
    auto is_level = (gray == 0) | (gray == 128) | (gray == 255);
    EXPECT_TRUE(is_level.all().item<bool>());
    auto label = decode_mask(gray);
    EXPECT_TRUE((label[1].to(torch::kInt) <= label[0].to(torch::kInt)).all().item<bool>());
  }
  EXPECT_EQ(masks, 2);
}

TEST_F(CliRun, InfoReportsToyCounts) {
  auto r = cli({"info", "--encoder", "toy", "--image-size", "64", "--json"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_LT(j["total"].get<int64_t>(), 1000000);
  EXPECT_LT(j["inference"].get<int64_t>(), j["training"].get<int64_t>());
  EXPECT_GT(j["discriminators"].get<int64_t>(), 0);
  auto text = cli({"info", "--checkpoint", (root_ / "a" / "best.pt").string()});
  ASSERT_EQ(text.code, kExitOk) << text.err;
  EXPECT_NE(text.out.find("inference"), std::string::npos);
}

TEST_F(CliRun, BoxplotAndEmbedding) {
  ASSERT_EQ(cli(train_args(root_ / "d", {"--mode", "no_adapt"})).code, kExitOk);
  auto r = cli({"plot", "boxplot", "--runs", (root_ / "a").string(), (root_ / "d").string(), "--labels", "full",
                "baseline", "--out", (root_ / "box").string()});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_TRUE(fs::exists(root_ / "box" / "boxplot.svg"));
  EXPECT_NE(r.out.find("rank-sum"), std::string::npos);
  auto e = cli({"plot", "embedding", "--checkpoint", (root_ / "a" / "best.pt").string(), "--synthetic", "--synthetic-n",
                "6", "--out", (root_ / "emb").string()});
  ASSERT_EQ(e.code, kExitOk) << e.err;
  EXPECT_TRUE(fs::exists(root_ / "emb" / "embedding.svg"));
  auto j = nlohmann::json::parse(slurp(root_ / "emb" / "embedding.json"));
  EXPECT_TRUE(j.contains("projection"));
}

TEST_F(CliRun, ResumeFromMaxSteps) {
  auto r = cli(train_args(root_ / "e", {"--max-steps", "3"}));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  auto m = nlohmann::json::parse(slurp(root_ / "e" / "metadata.json"));
  EXPECT_TRUE(m["stopped_early"].get<bool>());
  r = cli(train_args(root_ / "e", {"--resume", (root_ / "e" / "last.pt").string()}));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(slurp(root_ / "e" / "train_log.jsonl"), slurp(root_ / "a" / "train_log.jsonl"));
}

TEST(Cli, UpperBoundWithoutTargetLabelsFails) {
  const auto root = fs::temp_directory_path() / "rdr_cli_ub";
  fs::remove_all(root);
  ASSERT_EQ(cli({"synth", "--out", root.string(), "--image-size", "32", "--synthetic-n", "4", "--synthetic-eval-n", "0"})
                .code,
            kExitOk);
  fs::remove_all(root / "target" / "masks");
  auto r = cli({"train", "--source", (root / "source").string(), "--target", (root / "target").string(), "--mode",
                "upper_bound", "--encoder", "toy", "--image-size", "32", "--epochs", "1", "--out",
                (root / "run").string()});
  EXPECT_NE(r.code, kExitOk);
  EXPECT_NE(r.err.find("upper_bound"), std::string::npos) << r.err;
  fs::remove_all(root);
}

TEST(Cli, UserErrors) {
  auto missing = cli({"eval", "--checkpoint", "/nonexistent/best.pt", "--synthetic", "--out", "/tmp/rdr_cli_x"});
  EXPECT_EQ(missing.code, kExitUserError);
  EXPECT_NE(missing.err.find("checkpoint not found"), std::string::npos);
  EXPECT_NE(cli({"train", "--bogus-flag", "--out", "/tmp/rdr_cli_x"}).code, kExitOk);
  EXPECT_NE(cli({}).code, kExitOk);
  auto bad_size = cli({"info", "--image-size", "250"});
  EXPECT_EQ(bad_size.code, kExitUserError);
  EXPECT_NE(bad_size.err.find("image_size"), std::string::npos) << bad_size.err;
}

TEST(Cli, HelpPerCommand) {
  for (std::vector<std::string> cmd : {std::vector<std::string>{"train"}, {"eval"}, {"predict"}, {"synth"}, {"info"},
                                       {"plot", "boxplot"}, {"plot", "embedding"}}) {
    cmd.push_back("--help");
    auto r = cli(cmd);
    EXPECT_EQ(r.code, kExitOk) << cmd.front();
    EXPECT_NE(r.out.find("--"), std::string::npos) << cmd.front();
  }
}
