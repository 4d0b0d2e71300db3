#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "a2snas/checkpoint.hpp"

using namespace a2snas;
namespace fs = std::filesystem;

namespace {

struct Problem {
  HsiCube cube;
  Splits splits;
  SupernetConfig net_cfg{2, 5, 6, 3};
  SearchConfig cfg;
};

Problem problem() {
  Problem p;
  p.cube = normalize_bands(gen_synthetic({3, 6, 12, 12, 0.1}, 5));
  SplitSpec spec;
  spec.train_per_class = 6;
  spec.val_per_class = 4;
  spec.seed = 5;
  p.splits = make_splits(p.cube, spec);
  p.cfg.batch_size = 8;
  p.cfg.seed = 5;
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("a2snas_ckpt_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }

  fs::path saved_supernet(const Problem& p, int epochs) {
    SearchSession s(p.net_cfg, p.cfg, p.cube, p.splits.train, p.splits.val);
    s.run(epochs);
    const auto dir = root_ / "search";
    save_checkpoint(dir, s.net(), s.state());
    return dir;
  }

  void expect_format_error(const fs::path& dir, const Problem& p, const std::string& needle) {
    try {
      load_checkpoint(dir, p.cfg, Fingerprint::of(p.net_cfg));
      ADD_FAILURE() << "expected FormatError containing '" << needle << "'";
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  }

  fs::path root_;
};

const char* kFiles[] = {"manifest", "genotype", "weights.bin", "optimizer.bin", "state.json"};

void expect_same_params(const Network& a, const Network& b) {
  ASSERT_EQ(a.params().size(), b.params().size());
  for (const auto& [name, p] : a.params()) {
    const auto& q = b.params().at(name).value;
    ASSERT_TRUE(std::equal(p.value.values().begin(), p.value.values().end(), q.values().begin())) << name;
  }
}

}  // namespace

TEST(TensorTable, EncodeDecodeRoundTrip) {
  std::map<std::string, Tensor<float>> t;
  t.emplace("b", Tensor<float>(Shape{2, 3}, {1, 2, 3, 4, 5, 6}));
  t.emplace("a", Tensor<float>(Shape{1}, {-0.5f}));
  const auto bytes = encode_tensors(t);
  EXPECT_EQ(std::string(bytes.data(), 8), "A2SNASW1");
  // Entries follow name order: "a" comes first.
  EXPECT_EQ(bytes[12], 'a');
  const auto back = decode_tensors(bytes, "t");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back.at("b").shape(), (Shape{2, 3}));
  EXPECT_EQ(back.at("b")[5], 6.0f);
  EXPECT_EQ(back.at("a")[0], -0.5f);
}

TEST(TensorTable, TruncationNamesTheOffset) {
  std::map<std::string, Tensor<float>> t;
  t.emplace("w", Tensor<float>(Shape{4}, {1, 2, 3, 4}));
  auto bytes = encode_tensors(t);
  bytes.resize(bytes.size() - 3);
  try {
    decode_tensors(bytes, "weights.bin");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated at byte 18"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("values"), std::string::npos) << e.what();
  }
}

TEST(TensorTable, RejectsBadMagicAndRank) {
  std::vector<char> bytes{'N', 'O', 'P', 'E', '0', '0', '0', '0'};
  EXPECT_THROW(decode_tensors(bytes, "x"), FormatError);
  std::map<std::string, Tensor<float>> t;
  t.emplace("w", Tensor<float>(Shape{1}, {1}));
  auto good = encode_tensors(t);
  good[13] = 9;  // rank byte
  EXPECT_THROW(decode_tensors(good, "x"), FormatError);
}

TEST_F(CheckpointTest, SaveLoadSaveIsByteIdentical) {
  const auto p = problem();
  const auto dir = saved_supernet(p, 2);
  const auto loaded = load_checkpoint(dir, p.cfg, Fingerprint::of(p.net_cfg));
  const auto again = root_ / "again";
  save_checkpoint(again, loaded.net, loaded.state);
  for (const char* f : kFiles) EXPECT_EQ(slurp(dir / f), slurp(again / f)) << f;
}

TEST_F(CheckpointTest, ManifestRecordsRunMetadata) {
  const auto p = problem();
  const auto dir = saved_supernet(p, 1);
  const auto text = slurp(dir / "manifest");
  for (const char* key : {"\"format\": \"a2snas-checkpoint\"", "\"version\": 1", "\"kind\": \"supernet\"",
                          "\"seed\": 5", "\"epoch\": 1", "\"best_val_oa\""}) {
    EXPECT_NE(text.find(key), std::string::npos) << key;
  }
}

TEST_F(CheckpointTest, ResumedSearchMatchesUninterruptedRun) {
  const auto p = problem();
  SearchSession straight(p.net_cfg, p.cfg, p.cube, p.splits.train, p.splits.val);
  straight.run(4);

  const auto dir = saved_supernet(p, 2);
  auto ck = load_checkpoint(dir, p.cfg, Fingerprint::of(p.net_cfg));
  SearchSession resumed(std::move(ck.net), std::move(ck.state), p.cfg, p.cube, p.splits.train, p.splits.val);
  resumed.run(4);

  EXPECT_EQ(resumed.state().history, straight.state().history);
  EXPECT_EQ(resumed.state().step, straight.state().step);
  EXPECT_EQ(resumed.genotype(), straight.genotype());
  expect_same_params(resumed.net(), straight.net());
}

TEST_F(CheckpointTest, ResumedRetrainMatchesUninterruptedRun) {
  const auto p = problem();
  const Genotype g{std::vector<Choice>(6, Choice{OuterOp::kSpatialPool, InnerOp::kK5D1}), Fingerprint::of(p.net_cfg)};
  CompactTrainer straight(g, p.net_cfg, p.cfg, p.cube, p.splits.train, p.splits.val);
  straight.run(5);

  CompactTrainer first(g, p.net_cfg, p.cfg, p.cube, p.splits.train, p.splits.val);
  first.run(3);
  save_checkpoint(root_ / "retrain", first.net(), first.state());
  auto ck = load_checkpoint(root_ / "retrain", p.cfg, Fingerprint::of(p.net_cfg));
  EXPECT_EQ(ck.net.kind(), NetKind::kCompact);
  EXPECT_EQ(*ck.net.genotype(), g);
  CompactTrainer resumed(std::move(ck.net), std::move(ck.state), p.cfg, p.cube, p.splits.train, p.splits.val);
  resumed.run(5);

  EXPECT_EQ(resumed.state().history, straight.state().history);
  expect_same_params(resumed.net(), straight.net());
}

TEST_F(CheckpointTest, WrongFingerprintIsRejected) {
  const auto p = problem();
  const auto dir = saved_supernet(p, 1);
  auto other = p.net_cfg;
  other.num_classes = 4;
  try {
    load_checkpoint(dir, p.cfg, Fingerprint::of(other));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("num_classes=3"), std::string::npos) << e.what();
  }
}

TEST_F(CheckpointTest, BadMagicIsRejected) {
  const auto p = problem();
  const auto dir = saved_supernet(p, 1);
  auto bytes = slurp(dir / "weights.bin");
  bytes[0] = 'X';
  spit(dir / "weights.bin", bytes);
  expect_format_error(dir, p, "bad magic");
}

TEST_F(CheckpointTest, UnsupportedVersionIsRejected) {
  const auto p = problem();
  const auto dir = saved_supernet(p, 1);
  auto text = slurp(dir / "manifest");
  text.replace(text.find("\"version\": 1"), 12, "\"version\": 2");
  spit(dir / "manifest", text);
  expect_format_error(dir, p, "version 2");
}

TEST_F(CheckpointTest, TruncatedWeightsAreRejected) {
  const auto p = problem();
  const auto dir = saved_supernet(p, 1);
  auto bytes = slurp(dir / "weights.bin");
  bytes.resize(bytes.size() / 2);
  spit(dir / "weights.bin", bytes);
  expect_format_error(dir, p, "truncated at byte");
}

TEST_F(CheckpointTest, RenamedParameterIsRejected) {
  const auto p = problem();
  const auto dir = saved_supernet(p, 1);
  const auto raw = slurp(dir / "weights.bin");
  auto table = decode_tensors(std::vector<char>(raw.begin(), raw.end()), "weights.bin");
  auto node = table.extract("head.bias");
  node.key() = "head.offset";
  table.insert(std::move(node));
  const auto bytes = encode_tensors(table);
  spit(dir / "weights.bin", std::string(bytes.begin(), bytes.end()));
  expect_format_error(dir, p, "missing parameter 'head.bias'");
}

TEST_F(CheckpointTest, ExtraParameterIsRejected) {
  const auto p = problem();
  const auto dir = saved_supernet(p, 1);
  const auto raw = slurp(dir / "weights.bin");
  auto table = decode_tensors(std::vector<char>(raw.begin(), raw.end()), "weights.bin");
  table.emplace("zz.extra", Tensor<float>(Shape{1}));
  const auto bytes = encode_tensors(table);
  spit(dir / "weights.bin", std::string(bytes.begin(), bytes.end()));
  expect_format_error(dir, p, "unexpected parameter 'zz.extra'");
}

TEST_F(CheckpointTest, MissingDirectoryIsRejected) {
  const auto p = problem();
  EXPECT_THROW(load_checkpoint(root_ / "nothing", p.cfg), FormatError);
}

TEST(HistoryCsv, HeaderAndPrecision) {
  EpochRecord r;
  r.epoch = 1;
  r.train_loss = 1.0 / 3.0;
  r.val_loss = 0.5;
  r.val_oa = 0.75;
  r.arch_probs.assign(42, 0.25);
  const auto csv = history_csv({r}, true);
  const auto header = csv.substr(0, csv.find('\n'));
  EXPECT_EQ(header.rfind("epoch,train_loss,val_loss,val_oa,b0_no_pool,b0_spectral_pool,b0_spatial_pool,b0_k3d1", 0), 0u);
  EXPECT_NE(header.find("b5_k5d2"), std::string::npos);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), 45);
  EXPECT_NE(csv.find("1,0.333333333,0.5,0.75,0.25"), std::string::npos);
  EXPECT_EQ(history_csv({r}, false), "epoch,train_loss,val_loss,val_oa\n1,0.333333333,0.5,0.75\n");
}
