#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "a2snas/hsidata.hpp"
#include "a2snas/supernet.hpp"
#include "cli.hpp"

namespace fs = std::filesystem;
using a2snas::cli::cli_main;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("a2snas_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  std::string path(const std::string& rel) const { return (root_ / rel).string(); }

  void gen(const std::string& dir, const std::string& noise = "0.1") {
    const auto r = run({"gen", "--out", path(dir), "--classes", "3", "--bands", "8", "--size", "16", "--noise", noise,
                        "--seed", "7"});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  std::string config(const std::string& name, const std::string& extra = "") {
    const std::string text = R"({"seed": 3, "patch_size": 5, "stem_channels": 2, "search_epochs": 1,
      "retrain_epochs": 2, "batch_size": 8, "search_total": 48, "eval_train_per_class": 8,
      "eval_val_per_class": 4)" + extra + "}";
    std::ofstream(root_ / name) << text;
    return path(name);
  }

  fs::path root_;
};

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

}  // namespace

TEST_F(Cli, GenThenSearchWritesGenotypeNextToData) {
  gen("d");
  const auto r = run({"search", "--config", config("c"), "--data", path("d") + "/"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.out.empty());
  EXPECT_NE(r.err.find("search epoch 1/1"), std::string::npos);
  const auto g = a2snas::parse_genotype(slurp(root_ / "d.out" / "genotype"));
  EXPECT_EQ(g.choices.size(), 6u);
  EXPECT_EQ(g.fingerprint, (a2snas::Fingerprint{2, 5, 8, 3}));
  EXPECT_TRUE(fs::exists(root_ / "d.out" / "supernet" / "weights.bin"));
  const auto csv = slurp(root_ / "d.out" / "search_history.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2);
}

TEST_F(Cli, SameConfigTwiceGivesIdenticalFiles) {
  gen("d");
  const auto c = config("c");
  for (const char* out : {"o1", "o2"}) {
    for (const char* cmd : {"search", "train", "eval"}) {
      const auto r = run({cmd, "--config", c, "--data", path("d"), "--out", path(out)});
      ASSERT_EQ(r.code, 0) << cmd << ": " << r.err;
    }
  }
  const auto a = tree(root_ / "o1"), b = tree(root_ / "o2");
  ASSERT_EQ(a.size(), b.size());
  for (const auto& [name, bytes] : a) EXPECT_EQ(bytes, b.at(name)) << name;
  EXPECT_TRUE(a.contains("genotype"));
  EXPECT_TRUE(a.contains("compact/weights.bin"));
  EXPECT_TRUE(a.contains("report.txt"));
  // Re-running into an existing output directory reproduces it.
  ASSERT_EQ(run({"search", "--config", c, "--data", path("d"), "--out", path("o1")}).code, 0);
  EXPECT_EQ(slurp(root_ / "o1" / "supernet" / "weights.bin"), b.at("supernet/weights.bin"));
}

TEST_F(Cli, InputDirectoryIsNotModified) {
  gen("d");
  const auto before = tree(root_ / "d");
  const auto c = config("c");
  for (const char* cmd : {"search", "train", "eval", "map"}) {
    ASSERT_EQ(run({cmd, "--config", c, "--data", path("d")}).code, 0) << cmd;
  }
  EXPECT_EQ(tree(root_ / "d"), before);
}

TEST_F(Cli, FlagsOverrideConfigValues) {
  gen("d");
  const auto r = run({"search", "--config", config("c"), "--data", path("d"), "--search-epochs", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(root_ / "d.out" / "search_history.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST_F(Cli, ResumedSearchMatchesStraightRun) {
  gen("d");
  const auto c = config("c");
  ASSERT_EQ(run({"search", "--config", c, "--data", path("d"), "--out", path("straight"), "--search-epochs", "2"}).code,
            0);
  ASSERT_EQ(run({"search", "--config", c, "--data", path("d"), "--out", path("resumed"), "--search-epochs", "1"}).code,
            0);
  const auto r =
      run({"search", "--config", c, "--data", path("d"), "--out", path("resumed"), "--search-epochs", "2", "--resume"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("resuming search after epoch 1"), std::string::npos) << r.err;
  EXPECT_EQ(tree(root_ / "straight"), tree(root_ / "resumed"));
}

TEST_F(Cli, ResumedRetrainMatchesStraightRun) {
  gen("d");
  const auto c = config("c", R"(, "retrain_epochs": 4)");
  for (const char* out : {"straight", "resumed"}) {
    ASSERT_EQ(run({"search", "--config", c, "--data", path("d"), "--out", path(out)}).code, 0);
  }
  ASSERT_EQ(run({"train", "--config", c, "--data", path("d"), "--out", path("straight")}).code, 0);
  ASSERT_EQ(run({"train", "--config", c, "--data", path("d"), "--out", path("resumed"), "--retrain-epochs", "2"}).code,
            0);
  ASSERT_EQ(run({"train", "--config", c, "--data", path("d"), "--out", path("resumed"), "--resume"}).code, 0);
  EXPECT_EQ(tree(root_ / "straight"), tree(root_ / "resumed"));
}

TEST_F(Cli, EvalOfPerfectFitReportsHundred) {
  gen("d", "0");
  const auto c = config("c", R"(, "retrain_epochs": 25, "eval_train_per_class": 20, "eval_val_per_class": 10)");
  const a2snas::Genotype g{std::vector<a2snas::Choice>(6), {2, 5, 8, 3}};
  std::ofstream(root_ / "g") << a2snas::serialize_genotype(g);
  ASSERT_EQ(run({"train", "--config", c, "--data", path("d"), "--genotype", path("g")}).code, 0);
  const auto r = run({"eval", "--config", c, "--data", path("d"), "--split", "train"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.substr(0, r.out.find("per_class")), "oa: 100.00\naa: 100.00\nkappa: 100.00\n");
  EXPECT_EQ(slurp(root_ / "d.out" / "report.txt"), r.out);
  EXPECT_FALSE(slurp(root_ / "d.out" / "confusion.txt").empty());
}

TEST_F(Cli, MapLeavesUnlabeledPixelsBlack) {
  auto cube = a2snas::gen_synthetic({3, 8, 16, 16, 0.1}, 4);
  for (int c = 0; c < 16; ++c) cube.labels[static_cast<std::size_t>(c)] = 0;  // first row unlabeled
  a2snas::save_cube(cube, root_ / "d");
  const auto c = config("c");
  ASSERT_EQ(run({"search", "--config", c, "--data", path("d")}).code, 0);
  ASSERT_EQ(run({"train", "--config", c, "--data", path("d")}).code, 0);
  const auto r = run({"map", "--config", c, "--data", path("d"), "--output", path("m/map.ppm")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ppm = slurp(root_ / "m" / "map.ppm");
  const std::string header = "P6\n16 16\n255\n";
  ASSERT_EQ(ppm.size(), header.size() + 16 * 16 * 3);
  EXPECT_EQ(ppm.substr(0, header.size()), header);
  for (std::size_t i = 0; i < 16 * 3; ++i) EXPECT_EQ(ppm[header.size() + i], '\0');
  std::size_t lit = 0;
  for (std::size_t i = header.size() + 16 * 3; i < ppm.size(); i += 3) lit += ppm[i] || ppm[i + 1] || ppm[i + 2];
  EXPECT_EQ(lit, 15u * 16u);
}

TEST_F(Cli, UnknownFlagIsAUsageError) {
  gen("d");
  const auto r = run({"search", "--config", config("c"), "--data", path("d"), "--bogus", "1"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--bogus"), std::string::npos) << r.err;
}

TEST_F(Cli, MissingSeedNamesTheKey) {
  gen("d");
  const auto r = run({"search", "--data", path("d")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("missing config key 'seed'"), std::string::npos) << r.err;
}

TEST_F(Cli, MissingDataNamesTheKey) {
  const auto r = run({"search", "--seed", "1"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("missing config key 'data'"), std::string::npos) << r.err;
}

TEST_F(Cli, UnknownConfigKeyAndBadValuesAreUsageErrors) {
  gen("d");
  std::ofstream(root_ / "bad") << R"({"seed": 1, "lamda": 2})";
  auto r = run({"search", "--config", path("bad"), "--data", path("d")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("'lamda'"), std::string::npos) << r.err;
  r = run({"search", "--config", config("c"), "--data", path("d"), "--batch-size", "four"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("--batch-size"), std::string::npos) << r.err;
  r = run({"search", "--config", config("c"), "--data", path("d"), "--patch-size", "6"});
  EXPECT_EQ(r.code, 1);
  std::ofstream(root_ / "typed") << R"({"seed": "one"})";
  r = run({"search", "--config", path("typed"), "--data", path("d")});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("'seed'"), std::string::npos) << r.err;
}

TEST_F(Cli, MissingPathsAreUsageErrors) {
  EXPECT_EQ(run({"search", "--seed", "1", "--data", path("nowhere")}).code, 1);
  EXPECT_EQ(run({"search", "--config", path("nowhere.json"), "--data", path("d")}).code, 1);
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
}

TEST_F(Cli, CorruptDataIsADataError) {
  gen("d");
  std::ofstream(root_ / "d" / "cube.f32", std::ios::trunc) << "short";
  const auto r = run({"search", "--config", config("c"), "--data", path("d")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("cube.f32"), std::string::npos) << r.err;
  std::ofstream(root_ / "broken.json") << "{\"seed\": ";
  gen("e");
  EXPECT_EQ(run({"search", "--config", path("broken.json"), "--data", path("e")}).code, 2);
}

TEST_F(Cli, GenotypeForOtherConfigurationIsADataError) {
  gen("d");
  const auto c = config("c");
  ASSERT_EQ(run({"search", "--config", c, "--data", path("d")}).code, 0);
  const auto r = run({"train", "--config", c, "--data", path("d"), "--patch-size", "7"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("different configuration"), std::string::npos) << r.err;
}

TEST_F(Cli, HelpExitsCleanly) {
  const auto r = run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("search"), std::string::npos);
}
