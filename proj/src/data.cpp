#include "igan/data.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>
#include <stdexcept>

namespace igan::data {

using nlohmann::json;

void DatasetSpec::validate() const {
  if (!image_shape.valid())
    throw std::invalid_argument("DatasetSpec " + name + ": image_shape components must be > 0");
  if (label_count < 2)
    throw std::invalid_argument("DatasetSpec " + name + ": label_count must be >= 2");
}

json DatasetSpec::to_json() const {
  return json{{"name", name},
              {"image_shape", {image_shape.channels, image_shape.height, image_shape.width}},
              {"value_range", {0.0, 1.0}},
              {"label_count", label_count}};
}

DatasetSpec DatasetSpec::from_json(const json& j) {
  DatasetSpec s;
  s.name = j.at("name").get<std::string>();
  const auto& shp = j.at("image_shape");
  s.image_shape = Shape{shp.at(0).get<int>(), shp.at(1).get<int>(), shp.at(2).get<int>()};
  s.label_count = j.at("label_count").get<int>();
  if (j.contains("value_range")) {
    const auto& vr = j.at("value_range");
    if (vr.at(0).get<double>() != 0.0 || vr.at(1).get<double>() != 1.0)
      throw std::invalid_argument("DatasetSpec " + s.name + ": value_range must be [0,1]");
  }
  s.validate();
  return s;
}

DatasetSpec DatasetSpec::mnist() { return DatasetSpec{"mnist", Shape{1, 32, 32}, 10}; }

void LabeledBatch::validate(const DatasetSpec& spec) const {
  if (images.rows() < 1) throw std::invalid_argument("LabeledBatch: empty batch");
  if (images.cols() != spec.image_shape.size())
    throw std::invalid_argument("LabeledBatch: sample size " + std::to_string(images.cols()) +
                                " does not match " + spec.image_shape.str());
  if (static_cast<Eigen::Index>(labels.size()) != images.rows())
    throw std::invalid_argument("LabeledBatch: label count does not match image count");
  if (images.minCoeff() < 0.0f || images.maxCoeff() > 1.0f)
    throw std::invalid_argument("LabeledBatch: pixel outside [0,1]");
  for (int l : labels)
    if (l < 0 || l >= spec.label_count)
      throw std::invalid_argument("LabeledBatch: label " + std::to_string(l) + " out of range");
}

LabeledBatch LabeledBatch::slice(Eigen::Index begin, Eigen::Index end) const {
  LabeledBatch out;
  out.images = images.middleRows(begin, end - begin);
  out.labels.assign(labels.begin() + begin, labels.begin() + end);
  return out;
}

LabeledBatch LabeledBatch::gather(std::span<const std::size_t> rows) const {
  LabeledBatch out;
  out.images.resize(static_cast<Eigen::Index>(rows.size()), images.cols());
  out.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.images.row(static_cast<Eigen::Index>(i)) = images.row(static_cast<Eigen::Index>(rows[i]));
    out.labels[i] = labels[rows[i]];
  }
  return out;
}

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

MatrixF resize_bilinear(const MatrixF& images, Shape from, int out_h, int out_w) {
  require_cols(images.cols(), from, "resize_bilinear");
  const Shape to{from.channels, out_h, out_w};
  MatrixF out(images.rows(), to.size());
  const double sy = static_cast<double>(from.height) / out_h;
  const double sx = static_cast<double>(from.width) / out_w;

  struct Tap {
    int i0, i1;
    float w1;
  };
  auto taps = [](int n_out, int n_in, double scale) {
    std::vector<Tap> t(static_cast<std::size_t>(n_out));
    for (int o = 0; o < n_out; ++o) {
      double src = (o + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
      const int i0 = static_cast<int>(std::floor(src));
      const int i1 = std::min(i0 + 1, n_in - 1);
      t[static_cast<std::size_t>(o)] = {i0, i1, static_cast<float>(src - i0)};
    }
    return t;
  };
  const auto ty = taps(out_h, from.height, sy);
  const auto tx = taps(out_w, from.width, sx);

  for (Eigen::Index n = 0; n < images.rows(); ++n)
    for (int c = 0; c < from.channels; ++c) {
      const float* src = images.row(n).data() + c * from.plane();
      float* dst = out.row(n).data() + c * to.plane();
      for (int y = 0; y < out_h; ++y) {
        const Tap& a = ty[static_cast<std::size_t>(y)];
        for (int x = 0; x < out_w; ++x) {
          const Tap& b = tx[static_cast<std::size_t>(x)];
          const float top = src[a.i0 * from.width + b.i0] * (1 - b.w1) + src[a.i0 * from.width + b.i1] * b.w1;
          const float bot = src[a.i1 * from.width + b.i0] * (1 - b.w1) + src[a.i1 * from.width + b.i1] * b.w1;
          dst[y * out_w + x] = std::clamp(top * (1 - a.w1) + bot * a.w1, 0.0f, 1.0f);
        }
      }
    }
  return out;
}

namespace {

std::uint32_t read_be32(io::BinaryReader& r) {
  unsigned char b[4];
  r.bytes(b, 4);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | b[3];
}

std::filesystem::path idx_file(const std::filesystem::path& root, Split split, bool images) {
  const std::string prefix = split == Split::train ? "train" : "t10k";
  return root / (prefix + (images ? "-images-idx3-ubyte" : "-labels-idx1-ubyte"));
}

}  // namespace

MatrixF read_idx_images(const std::filesystem::path& file, int* rows_out, int* cols_out) {
  io::BinaryReader r(file);
  if (read_be32(r) != 0x00000803) r.fail("not an IDX3 u8 image file");
  const auto count = read_be32(r);
  const auto rows = read_be32(r);
  const auto cols = read_be32(r);
  if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096) r.fail("implausible image dimensions");
  const std::size_t per = std::size_t(rows) * cols;
  std::vector<unsigned char> raw(per);
  MatrixF out(count, static_cast<Eigen::Index>(per));
  for (std::uint32_t n = 0; n < count; ++n) {
    r.bytes(raw.data(), per);
    for (std::size_t i = 0; i < per; ++i) out(n, static_cast<Eigen::Index>(i)) = raw[i] / 255.0f;
  }
  if (rows_out) *rows_out = static_cast<int>(rows);
  if (cols_out) *cols_out = static_cast<int>(cols);
  return out;
}

std::vector<int> read_idx_labels(const std::filesystem::path& file) {
  io::BinaryReader r(file);
  if (read_be32(r) != 0x00000801) r.fail("not an IDX1 u8 label file");
  const auto count = read_be32(r);
  std::vector<unsigned char> raw(count);
  r.bytes(raw.data(), count);
  return {raw.begin(), raw.end()};
}

LabeledBatch load_split(const DatasetSpec& spec, Split split, const std::filesystem::path& root) {
  spec.validate();
  const auto img_path = idx_file(root, split, true);
  const auto lbl_path = idx_file(root, split, false);
  if (!std::filesystem::exists(img_path)) throw io::MissingDataError(img_path);
  if (!std::filesystem::exists(lbl_path)) throw io::MissingDataError(lbl_path);
  int h = 0, w = 0;
  MatrixF raw = read_idx_images(img_path, &h, &w);
  LabeledBatch out;
  out.labels = read_idx_labels(lbl_path);
  if (static_cast<Eigen::Index>(out.labels.size()) != raw.rows())
    throw io::IoError("image/label count mismatch between " + img_path.string() + " and " +
                      lbl_path.string());
  const Shape src{1, h, w};
  if (spec.image_shape.channels != 1)
    throw std::invalid_argument("IDX inputs are single-channel; spec " + spec.name + " is not");
  out.images = (src == spec.image_shape)
                   ? std::move(raw)
                   : resize_bilinear(raw, src, spec.image_shape.height, spec.image_shape.width);
  out.validate(spec);
  return out;
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

std::vector<LabeledBatch> make_batches(const LabeledBatch& all, int batch_size,
                                       std::optional<std::uint64_t> shuffle_seed) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  std::vector<LabeledBatch> out;
  const auto n = static_cast<std::size_t>(all.size());
  std::vector<std::size_t> order;
  if (shuffle_seed) {
    order = permutation(n, *shuffle_seed);
  } else {
    order.resize(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
  }
  for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(batch_size)) {
    const std::size_t e = std::min(n, b + static_cast<std::size_t>(batch_size));
    out.push_back(all.gather(std::span<const std::size_t>(order.data() + b, e - b)));
  }
  return out;
}

std::vector<LabeledBatch> load_dataset(const DatasetSpec& spec, Split split, int batch_size,
                                       const std::filesystem::path& root,
                                       std::optional<std::uint64_t> shuffle_seed) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  return make_batches(load_split(spec, split, root), batch_size, shuffle_seed);
}

LabeledBatch make_synthetic(std::uint64_t seed, int n, const DatasetSpec& spec) {
  if (n <= 0) throw std::invalid_argument("make_synthetic: n must be positive");
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> pix(0.0f, 1.0f);
  std::uniform_int_distribution<int> lab(0, spec.label_count - 1);
  LabeledBatch out;
  out.images.resize(n, spec.image_shape.size());
  out.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < out.images.cols(); ++j) out.images(i, j) = pix(rng);
    out.labels[static_cast<std::size_t>(i)] = lab(rng);
  }
  return out;
}

double AdversarialDataset::epsilon() const {
  const auto j = json::parse(attack_fingerprint);
  return j.at("epsilon").get<double>();
}

void AdversarialDataset::validate() const {
  clean.validate(spec);
  if (adversarial.rows() != clean.images.rows() || adversarial.cols() != clean.images.cols())
    throw std::invalid_argument("AdversarialDataset: clean/adversarial counts differ");
  if (adversarial.minCoeff() < 0.0f || adversarial.maxCoeff() > 1.0f)
    throw std::invalid_argument("AdversarialDataset: adversarial pixel outside [0,1]");
  const double eps = epsilon();
  const double dist = (adversarial - clean.images).cwiseAbs().maxCoeff();
  if (dist > eps + 1e-6)
    throw std::invalid_argument("AdversarialDataset: perturbation " + std::to_string(dist) +
                                " exceeds epsilon " + std::to_string(eps));
}

namespace {
constexpr char kMagic[9] = "IGANDSET";
}

void save_adversarial(const AdversarialDataset& ds, const std::filesystem::path& path) {
  ds.validate();
  const json header{{"spec", ds.spec.to_json()},
                    {"count", ds.clean.size()},
                    {"attack_fingerprint", ds.attack_fingerprint},
                    {"source_model_id", ds.source_model_id},
                    {"resize", "bilinear, half-pixel centres (align_corners=false), border clamp"}};
  io::BinaryWriter w;
  w.bytes(kMagic, 8);
  w.u32(kDatasetFormatVersion);
  w.str(header.dump());
  const std::vector<std::int32_t> labels(ds.clean.labels.begin(), ds.clean.labels.end());
  w.f32({ds.clean.images.data(), static_cast<std::size_t>(ds.clean.images.size())});
  w.i32(labels);
  w.f32({ds.adversarial.data(), static_cast<std::size_t>(ds.adversarial.size())});
  std::uint64_t h = fnv1a(ds.clean.images.data(), ds.clean.images.size() * sizeof(float));
  h = fnv1a(labels.data(), labels.size() * sizeof(std::int32_t), h);
  h = fnv1a(ds.adversarial.data(), ds.adversarial.size() * sizeof(float), h);
  w.u64(h);
  w.commit(path);
}

AdversarialDataset load_adversarial(const std::filesystem::path& path,
                                    std::optional<double> epsilon_in_force,
                                    std::vector<std::string>* warnings) {
  io::BinaryReader r(path);
  r.expect_magic(kMagic);
  const auto version = r.u32();
  if (version != kDatasetFormatVersion)
    throw io::VersionError("dataset container " + path.string() + " has format version " +
                           std::to_string(version) + ", this build reads version " +
                           std::to_string(kDatasetFormatVersion));
  const auto header_off = r.offset();
  json header;
  try {
    header = json::parse(r.str());
  } catch (const json::parse_error& e) {
    throw io::CorruptFileError(path, header_off, std::string("header: ") + e.what());
  }
  AdversarialDataset ds;
  ds.spec = DatasetSpec::from_json(header.at("spec"));
  const auto count = header.at("count").get<Eigen::Index>();
  ds.attack_fingerprint = header.at("attack_fingerprint").get<std::string>();
  ds.source_model_id = header.at("source_model_id").get<std::string>();
  const Eigen::Index d = ds.spec.image_shape.size();
  ds.clean.images.resize(count, d);
  ds.adversarial.resize(count, d);
  std::vector<std::int32_t> labels(static_cast<std::size_t>(count));
  r.f32({ds.clean.images.data(), static_cast<std::size_t>(ds.clean.images.size())});
  r.i32(labels);
  r.f32({ds.adversarial.data(), static_cast<std::size_t>(ds.adversarial.size())});
  std::uint64_t h = fnv1a(ds.clean.images.data(), ds.clean.images.size() * sizeof(float));
  h = fnv1a(labels.data(), labels.size() * sizeof(std::int32_t), h);
  h = fnv1a(ds.adversarial.data(), ds.adversarial.size() * sizeof(float), h);
  const auto check_off = r.offset();
  if (r.u64() != h) throw io::CorruptFileError(path, check_off, "payload checksum mismatch");
  if (!r.at_end()) r.fail("trailing bytes after payload");
  ds.clean.labels.assign(labels.begin(), labels.end());
  ds.validate();

  if (epsilon_in_force && std::abs(*epsilon_in_force - ds.epsilon()) > 1e-12) {
    const std::string msg = "warning: " + path.string() + " was generated with epsilon=" +
                            std::to_string(ds.epsilon()) + " but the run is configured with epsilon=" +
                            std::to_string(*epsilon_in_force);
    if (warnings)
      warnings->push_back(msg);
    else
      std::cerr << msg << '\n';
  }
  return ds;
}

}  // namespace igan::data
