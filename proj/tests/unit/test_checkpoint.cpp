#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "tempdir.hpp"
#include "wkd/checkpoint.hpp"
#include "wkd/error.hpp"

using namespace wkd;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Tensor, RoundTripRoundsToFloat) {
  wkd::testing::TempDir dir;
  Matrix m(2, 3);
  m << 1.0, -2.0, 0.1, 1e-3, 3.5, 7.0;
  write_tensor(m, dir / "t.tns");
  const Matrix r = read_tensor(dir / "t.tns");
  ASSERT_EQ(r.rows(), 2);
  ASSERT_EQ(r.cols(), 3);
  for (Eigen::Index i = 0; i < m.size(); ++i) EXPECT_EQ(r.data()[i], double(float(m.data()[i])));
  const auto bytes = slurp(dir / "t.tns");
  EXPECT_EQ(bytes.substr(0, 5), "TNSv1");
  EXPECT_EQ(bytes.size(), 5u + 4 + 8 + 24);
}

TEST(Tensor, RejectsCorruptFiles) {
  wkd::testing::TempDir dir;
  write_tensor(Matrix::Ones(2, 2), dir / "ok.tns");
  const auto bytes = slurp(dir / "ok.tns");
  std::ofstream(dir / "magic.tns", std::ios::binary) << "TNSv0" << bytes.substr(5);
  EXPECT_THROW(read_tensor(dir / "magic.tns"), DataError);
  std::ofstream(dir / "trunc.tns", std::ios::binary) << bytes.substr(0, bytes.size() - 2);
  EXPECT_THROW(read_tensor(dir / "trunc.tns"), DataError);
  auto rank = bytes;
  rank[5] = 3;
  std::ofstream(dir / "rank.tns", std::ios::binary) << rank;
  EXPECT_THROW(read_tensor(dir / "rank.tns"), DataError);
  auto inf = bytes;
  inf.replace(inf.size() - 4, 4, std::string("\x00\x00\x80\x7f", 4));
  std::ofstream(dir / "inf.tns", std::ios::binary) << inf;
  EXPECT_THROW(read_tensor(dir / "inf.tns"), DataError);
}

TEST(KeyValues, ParsesAndRejects) {
  const auto kv = parse_key_values("# c\n a = 1 \n\nb=x=y\n", "src");
  EXPECT_EQ(kv.at("a"), "1");
  EXPECT_EQ(kv.at("b"), "x=y");
  EXPECT_THROW(parse_key_values("novalue\n", "src"), DataError);
}

TEST(Checkpoint, RoundTripPreservesModelAndMeta) {
  wkd::testing::TempDir dir;
  auto cfg = wkd::testing::tiny_config(Architecture::combined, 3, 20, 7, {6, 5});
  TopicModel m(cfg, 11);
  // fill the norm buffers with something non-default
  const auto d = wkd::testing::small_data(10, 20, 4, 7);
  TrainConfig tc;
  tc.epochs = 2;
  tc.batch_size = 4;
  TrainingSet ts = d.data;
  ts.ctx = d.data.teacher_ctx;
  train_vae(m, ts, tc);

  CheckpointMeta meta{"T", 11, 12345, {{"dataset", "synthetic"}}};
  save_checkpoint(m, meta, dir / "ck");
  const auto ck = load_checkpoint(dir / "ck");
  EXPECT_EQ(ck.meta.model_tag, "T");
  EXPECT_EQ(ck.meta.seed, 11u);
  EXPECT_EQ(ck.meta.vocab_fingerprint, 12345u);
  EXPECT_EQ(ck.meta.extra.at("dataset"), "synthetic");
  EXPECT_EQ(ck.model.config().hash(), cfg.hash());
  const auto a = m.named_tensors(), b = ck.model.named_tensors();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_LT((a[i].second->cast<float>().cast<double>() - *b[i].second).cwiseAbs().maxCoeff(), 1e-300);
  }
  // saving the reloaded model again is a fixed point
  save_checkpoint(ck.model, ck.meta, dir / "ck2");
  EXPECT_EQ(load_checkpoint(dir / "ck2").model.checksum(), ck.model.checksum());
}

TEST(Checkpoint, DetectsTampering) {
  wkd::testing::TempDir dir;
  TopicModel m(wkd::testing::tiny_config(Architecture::zeroshot, 3, 20, 7), 1);
  save_checkpoint(m, {"S", 1, 2, {}}, dir / "ck");
  EXPECT_THROW(load_checkpoint(dir / "missing"), DataError);

  auto manifest = slurp(dir / "ck" / "manifest.txt");
  const auto pos = manifest.find("K=3");
  ASSERT_NE(pos, std::string::npos);
  std::ofstream(dir / "ck" / "manifest.txt", std::ios::binary) << manifest.substr(0, pos) << "K=4"
                                                                << manifest.substr(pos + 3);
  EXPECT_THROW(load_checkpoint(dir / "ck"), DataError);

  std::ofstream(dir / "ck" / "manifest.txt", std::ios::binary) << manifest;
  write_tensor(Matrix::Zero(2, 2), dir / "ck" / "beta.tns");
  EXPECT_THROW(load_checkpoint(dir / "ck"), DataError);
  std::filesystem::remove(dir / "ck" / "beta.tns");
  EXPECT_THROW(load_checkpoint(dir / "ck"), DataError);
}
