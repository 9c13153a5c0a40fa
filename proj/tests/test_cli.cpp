#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hrmedseg/cli.hpp"
#include "hrmedseg/data.hpp"
#include "hrmedseg/io.hpp"

namespace hrmedseg {
namespace {

namespace fs = std::filesystem;

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli_dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

bool contains(const std::string& text, const std::string& part) { return text.find(part) != std::string::npos; }

std::vector<std::string> tiny_flags(const fs::path& dir) {
  return {"--c1",          "8",   "--depth",          "3",   "--n_mbconv",   "1",
          "--attn_dim",    "8",   "--patch_size",     "8",   "--decoder_dim", "16",
          "--decoder_layers", "1", "--upsample_channels_1", "8", "--upsample_channels_2", "8",
          "--image_size",  "32",  "--samples",        "12",  "--batch_size", "4",
          "--epochs",      "2",   "--distill_epochs", "2",   "--checkpoint", (dir / "w.hrms").string(),
          "--metrics",     (dir / "m.csv").string()};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / ("hrmedseg_cli_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                                 "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name())) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

TEST(Cli, NoArgumentsIsAUsageError) {
  const auto r = run({});
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(contains(r.err, "analyze"));
}

TEST(Cli, UnknownSubcommandIsAUsageError) {
  const auto r = run({"launch"});
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(contains(r.err, "error"));
}

TEST(Cli, UnknownFlagIsAUsageError) {
  EXPECT_EQ(run({"--learning-rate", "1", "analyze"}).code, 2);
  EXPECT_EQ(run({"analyze", "--bogus"}).code, 2);
}

TEST(Cli, UnknownConfigKeyIsAUsageError) {
  TempDir dir;
  const auto cfg = dir.path() / "bad.cfg";
  std::ofstream(cfg) << "lr = 0.1\nlearning_rate = 3\n";
  const auto r = run({"--config", cfg.string(), "analyze"});
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(contains(r.err, "learning_rate"));
}

TEST(Cli, InvalidValueIsAUsageError) {
  EXPECT_EQ(run({"--lr", "-1", "analyze"}).code, 2);
  EXPECT_EQ(run({"--profile", "giant", "analyze"}).code, 2);
}

TEST(Cli, HelpExitsZero) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* sub : {"train", "distill", "infer", "eval", "analyze", "gradcheck", "selftest", "bench-attn"})
    EXPECT_TRUE(contains(r.out, sub)) << sub;
}

TEST(Cli, AnalyzePrintsParamsFlopsAndPeak) {
  const auto r = run({"--profile", "paper", "analyze", "--height", "1024", "--batch", "16"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* key : {"params", "flops", "peak", "u-shape"}) EXPECT_TRUE(contains(r.out, key)) << key;
}

TEST(Cli, AnalyzeCsvAndScaling) {
  const auto csv = run({"analyze", "--csv"});
  ASSERT_EQ(csv.code, 0);
  EXPECT_EQ(csv.out.substr(0, csv.out.find('\n')), "layer,params,flops,out_bytes");
  const auto scaling = run({"analyze", "--scaling", "64,128"});
  ASSERT_EQ(scaling.code, 0) << scaling.err;
  EXPECT_TRUE(contains(scaling.out, "128"));
}

TEST(Cli, AnalyzeRejectsIndivisibleInput) {
  EXPECT_NE(run({"analyze", "--height", "100"}).code, 0);
}

TEST(Cli, SelftestPasses) {
  const auto r = run({"selftest"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_TRUE(contains(r.out, "all checks passed"));
  EXPECT_FALSE(contains(r.out, "FAIL"));
}

TEST(Cli, GradcheckPasses) {
  const auto r = run({"gradcheck"});
  EXPECT_EQ(r.code, 0) << r.out;
}

TEST(Cli, BenchPrintsOneRowPerSize) {
  const auto r = run({"bench-attn", "--n-list", "16,32", "--dim", "4", "--value-dim", "4", "--min-seconds", "0.001"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "16"));
  EXPECT_TRUE(contains(r.out, "32"));
}

TEST(Cli, TrainEvalInferDistillEndToEnd) {
  TempDir dir;
  const auto flags = tiny_flags(dir.path());
  const auto train = run(concat(flags, {"train"}));
  ASSERT_EQ(train.code, 0) << train.err;
  EXPECT_TRUE(fs::exists(dir.path() / "w.hrms"));
  EXPECT_TRUE(fs::exists(dir.path() / "m.csv"));
  EXPECT_TRUE(contains(train.out, "best val dice"));

  const auto eval = run(concat(flags, {"eval", "--all"}));
  ASSERT_EQ(eval.code, 0) << eval.err;
  EXPECT_TRUE(contains(eval.out, "samples 12"));

  const auto image = dir.path() / "in.ppm";
  const auto data = gen_shapes_dataset(1, 32, 1, 0);
  write_image_ppm(data[0].image, 32, 32, image);
  const auto mask = dir.path() / "out.pgm";
  const auto infer = run(concat(flags, {"infer", "--image", image.string(), "--out", mask.string()}));
  ASSERT_EQ(infer.code, 0) << infer.err;
  EXPECT_EQ(read_mask_pgm(mask, 1).labels.size(), 32u * 32u);

  const auto distill = run(concat(flags, {"--init", (dir.path() / "w.hrms").string(), "distill"}));
  ASSERT_EQ(distill.code, 0) << distill.err;
  EXPECT_TRUE(contains(distill.out, "mse"));
}

TEST(Cli, EvalWithoutWeightsFails) {
  TempDir dir;
  auto flags = tiny_flags(dir.path());
  const auto r = run(concat(flags, {"eval", "--weights", (dir.path() / "missing.hrms").string()}));
  EXPECT_NE(r.code, 0);
}

}  // namespace
}  // namespace hrmedseg
