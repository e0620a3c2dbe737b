#include "igan/data.hpp"

#include "support.hpp"

#include <fstream>
#include <set>

using namespace igan;
using igan::testing::temp_dir;
using igan::testing::uniform;

namespace {

void put_be32(std::ofstream& f, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

void write_idx_images(const std::filesystem::path& p, int n, int h, int w, const std::vector<unsigned char>& px) {
  std::ofstream f(p, std::ios::binary);
  put_be32(f, 0x803);
  put_be32(f, static_cast<std::uint32_t>(n));
  put_be32(f, static_cast<std::uint32_t>(h));
  put_be32(f, static_cast<std::uint32_t>(w));
  f.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

void write_idx_labels(const std::filesystem::path& p, const std::vector<unsigned char>& y) {
  std::ofstream f(p, std::ios::binary);
  put_be32(f, 0x801);
  put_be32(f, static_cast<std::uint32_t>(y.size()));
  f.write(reinterpret_cast<const char*>(y.data()), static_cast<std::streamsize>(y.size()));
}

data::DatasetSpec small_spec() { return {"small", Shape{1, 4, 4}, 3}; }

data::AdversarialDataset make_adv(double eps) {
  data::AdversarialDataset ds;
  ds.spec = small_spec();
  ds.clean = data::make_synthetic(3, 6, ds.spec);
  const MatrixF noise = uniform<float>(6, 16, 4, -eps, eps);
  ds.adversarial = (ds.clean.images + noise).cwiseMax(0.0f).cwiseMin(1.0f);
  ds.attack_fingerprint = nlohmann::json{{"method", "pgd"}, {"epsilon", eps}}.dump();
  ds.source_model_id = "model";
  return ds;
}

}  // namespace

TEST(Idx, ImagesScaleToUnitInterval) {
  const auto dir = temp_dir("idx");
  write_idx_images(dir / "img", 2, 2, 2, {0, 255, 51, 102, 1, 2, 3, 4});
  int h = 0, w = 0;
  const MatrixF x = data::read_idx_images(dir / "img", &h, &w);
  EXPECT_EQ(h, 2);
  EXPECT_EQ(w, 2);
  ASSERT_EQ(x.rows(), 2);
  EXPECT_FLOAT_EQ(x(0, 1), 1.0f);
  EXPECT_FLOAT_EQ(x(0, 2), 0.2f);
  EXPECT_FLOAT_EQ(x(1, 3), 4.0f / 255.0f);
}

TEST(Idx, TruncatedFileReportsByteOffset) {
  const auto dir = temp_dir("idx_trunc");
  write_idx_images(dir / "img", 2, 2, 2, {1, 2, 3});
  try {
    data::read_idx_images(dir / "img");
    FAIL() << "expected CorruptFileError";
  } catch (const io::CorruptFileError& e) {
    EXPECT_EQ(e.offset, 16u);
    EXPECT_NE(std::string(e.what()).find("offset 16"), std::string::npos);
  }
}

TEST(Idx, WrongMagicIsRejected) {
  const auto dir = temp_dir("idx_magic");
  write_idx_labels(dir / "img", {1, 2});
  EXPECT_THROW(data::read_idx_images(dir / "img"), io::CorruptFileError);
}

TEST(LoadSplit, MissingFileNamesExpectedPath) {
  const auto dir = temp_dir("missing");
  try {
    data::load_split(data::DatasetSpec::mnist(), data::Split::test, dir);
    FAIL() << "expected MissingDataError";
  } catch (const io::MissingDataError& e) {
    EXPECT_NE(std::string(e.what()).find("t10k-images-idx3-ubyte"), std::string::npos);
  }
}

TEST(LoadSplit, ResizesTo32AndKeepsLabels) {
  const auto dir = temp_dir("split");
  std::vector<unsigned char> px(3 * 28 * 28, 0);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<unsigned char>(i % 256);
  write_idx_images(dir / "train-images-idx3-ubyte", 3, 28, 28, px);
  write_idx_labels(dir / "train-labels-idx1-ubyte", {7, 0, 9});
  const auto b = data::load_split(data::DatasetSpec::mnist(), data::Split::train, dir);
  EXPECT_EQ(b.images.rows(), 3);
  EXPECT_EQ(b.images.cols(), 32 * 32);
  EXPECT_EQ(b.labels, (std::vector<int>{7, 0, 9}));
  EXPECT_GE(b.images.minCoeff(), 0.0f);
  EXPECT_LE(b.images.maxCoeff(), 1.0f);
}

TEST(Resize, ConstantImageStaysConstant) {
  const MatrixF x = MatrixF::Constant(2, 28 * 28, 0.37f);
  const MatrixF y = data::resize_bilinear(x, Shape{1, 28, 28}, 32, 32);
  EXPECT_NEAR((y.array() - 0.37f).abs().maxCoeff(), 0.0f, 1e-6f);
}

TEST(Resize, MatchesHalfPixelOracle) {
  MatrixF x(1, 4);
  x << 0.0f, 1.0f, 0.5f, 0.25f;
  const MatrixF y = data::resize_bilinear(x, Shape{1, 2, 2}, 4, 4);
  // Output (y,x) samples source at ((i + 0.5)/2 − 0.5) clamped to [0, 1].
  auto src = [&](double sy, double sx) {
    sy = std::clamp(sy, 0.0, 1.0);
    sx = std::clamp(sx, 0.0, 1.0);
    const double top = x(0, 0) * (1 - sx) + x(0, 1) * sx;
    const double bot = x(0, 2) * (1 - sx) + x(0, 3) * sx;
    return top * (1 - sy) + bot * sy;
  };
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(y(0, i * 4 + j), src((i + 0.5) / 2 - 0.5, (j + 0.5) / 2 - 0.5), 1e-6);
}

TEST(Permutation, IsDeterministicBijection) {
  const auto a = data::permutation(100, 42);
  const auto b = data::permutation(100, 42);
  const auto c = data::permutation(100, 43);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 100u);
}

TEST(Batches, CoverEveryRowOnce) {
  const auto all = data::make_synthetic(1, 23, small_spec());
  const auto batches = data::make_batches(all, 5, 9);
  ASSERT_EQ(batches.size(), 5u);
  EXPECT_EQ(batches.back().size(), 3);
  double sum = 0;
  for (const auto& b : batches) sum += b.images.sum();
  EXPECT_NEAR(sum, all.images.sum(), 1e-2);
}

TEST(Synthetic, IsSeededAndValid) {
  const auto a = data::make_synthetic(5, 8, small_spec());
  const auto b = data::make_synthetic(5, 8, small_spec());
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NO_THROW(a.validate(small_spec()));
}

TEST(Batch, ValidateRejectsBadPixelsAndLabels) {
  auto b = data::make_synthetic(5, 4, small_spec());
  b.images(0, 0) = 1.5f;
  EXPECT_THROW(b.validate(small_spec()), std::invalid_argument);
  b = data::make_synthetic(5, 4, small_spec());
  b.labels[2] = 3;
  EXPECT_THROW(b.validate(small_spec()), std::invalid_argument);
  EXPECT_THROW(data::LabeledBatch{}.validate(small_spec()), std::invalid_argument);
}

TEST(DatasetSpec, JsonRoundTrip) {
  const auto s = data::DatasetSpec::mnist();
  const auto t = data::DatasetSpec::from_json(s.to_json());
  EXPECT_EQ(t.name, s.name);
  EXPECT_EQ(t.image_shape, s.image_shape);
  EXPECT_EQ(t.label_count, s.label_count);
}

TEST(AdversarialContainer, RoundTripIsExact) {
  const auto dir = temp_dir("adv");
  const auto ds = make_adv(0.1);
  data::save_adversarial(ds, dir / "d.bin");
  const auto back = data::load_adversarial(dir / "d.bin");
  EXPECT_EQ(back.clean.images, ds.clean.images);
  EXPECT_EQ(back.clean.labels, ds.clean.labels);
  EXPECT_EQ(back.adversarial, ds.adversarial);
  EXPECT_EQ(back.attack_fingerprint, ds.attack_fingerprint);
  EXPECT_EQ(back.source_model_id, ds.source_model_id);
}

TEST(AdversarialContainer, FlippedByteIsDetected) {
  const auto dir = temp_dir("adv_corrupt");
  data::save_adversarial(make_adv(0.1), dir / "d.bin");
  {
    std::fstream f(dir / "d.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-20, std::ios::end);
    char c = 0;
    f.read(&c, 1);
    f.seekp(-20, std::ios::end);
    c = static_cast<char>(c ^ 0x5a);
    f.write(&c, 1);
  }
  EXPECT_THROW(data::load_adversarial(dir / "d.bin"), io::CorruptFileError);
}

TEST(AdversarialContainer, EpsilonMismatchWarns) {
  const auto dir = temp_dir("adv_eps");
  data::save_adversarial(make_adv(0.1), dir / "d.bin");
  std::vector<std::string> warnings;
  data::load_adversarial(dir / "d.bin", 0.3, &warnings);
  ASSERT_EQ(warnings.size(), 1u);
  warnings.clear();
  data::load_adversarial(dir / "d.bin", 0.1, &warnings);
  EXPECT_TRUE(warnings.empty());
}

TEST(AdversarialContainer, OutOfBallSampleFailsValidation) {
  auto ds = make_adv(0.1);
  ds.clean.images(2, 3) = 0.5f;
  ds.adversarial(2, 3) = 0.75f;
  EXPECT_THROW(ds.validate(), std::invalid_argument);
}
