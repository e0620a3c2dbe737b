#pragma once

#include "igan/io.hpp"
#include "igan/tensor.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace igan::data {

/// Image domain of a dataset. Pixel values always live in [0,1].
struct DatasetSpec {
  std::string name;
  Shape image_shape;
  int label_count = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static DatasetSpec from_json(const nlohmann::json& j);

  /// MNIST resized to 32×32, one channel, ten digits.
  static DatasetSpec mnist();
};

/// Images (one flattened CHW sample per row) with integer labels.
struct LabeledBatch {
  MatrixF images;
  std::vector<int> labels;

  Eigen::Index size() const { return images.rows(); }
  bool empty() const { return images.rows() == 0; }

  /// Throws std::invalid_argument on empty batches, out-of-range pixels or
  /// labels, or a shape that does not match the spec.
  void validate(const DatasetSpec& spec) const;

  LabeledBatch slice(Eigen::Index begin, Eigen::Index end) const;
  LabeledBatch gather(std::span<const std::size_t> rows) const;
  LabeledBatch take(Eigen::Index n) const { return slice(0, std::min(n, size())); }
};

enum class Split { train, test };

std::string to_string(Split s);

/// Resizes every row of `images` from `from` to out_h×out_w with bilinear
/// interpolation using half-pixel centres (align_corners = false): output
/// pixel (y, x) samples the source at ((y + 0.5)·H/out_h − 0.5, ...), with
/// coordinates clamped to the source border.
MatrixF resize_bilinear(const MatrixF& images, Shape from, int out_h, int out_w);

/// Parses an IDX3 image file (u8 pixels) into rows scaled to [0,1].
MatrixF read_idx_images(const std::filesystem::path& file, int* rows_out = nullptr,
                        int* cols_out = nullptr);
std::vector<int> read_idx_labels(const std::filesystem::path& file);

/// Loads a full split from raw IDX files under `root`. MNIST images are scaled
/// to [0,1] and resized 28×28 → spec.image_shape.
LabeledBatch load_split(const DatasetSpec& spec, Split split, const std::filesystem::path& root);

/// Cuts `all` into batches of `batch_size` (last batch may be short). With a
/// seed the sample order is a seeded Fisher–Yates permutation.
std::vector<LabeledBatch> make_batches(const LabeledBatch& all, int batch_size,
                                       std::optional<std::uint64_t> shuffle_seed = std::nullopt);

std::vector<LabeledBatch> load_dataset(const DatasetSpec& spec, Split split, int batch_size,
                                       const std::filesystem::path& root,
                                       std::optional<std::uint64_t> shuffle_seed = std::nullopt);

/// Seeded Fisher–Yates permutation of [0, n).
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed);

/// Uniform pixels in [0,1] and uniform labels, fully determined by `seed`.
LabeledBatch make_synthetic(std::uint64_t seed, int n, const DatasetSpec& spec);

/// Clean samples paired with their attacked counterparts.
struct AdversarialDataset {
  DatasetSpec spec;
  LabeledBatch clean;
  MatrixF adversarial;
  std::string attack_fingerprint;  // serialized attack configuration (JSON)
  std::string source_model_id;

  /// ε recorded in the fingerprint.
  double epsilon() const;

  /// Counts match, pixels in [0,1], and ‖x* − x‖∞ ≤ ε + 1e-6 for every sample.
  void validate() const;
};

/// Container layout (little-endian):
///   "IGANDSET" magic, u32 format version, u32-prefixed JSON header,
///   f32 clean images, i32 labels, f32 adversarial images, u64 FNV-1a of payload.
inline constexpr std::uint32_t kDatasetFormatVersion = 1;

void save_adversarial(const AdversarialDataset& ds, const std::filesystem::path& path);

/// Loads and validates a container. When `epsilon_in_force` is given and
/// differs from the fingerprint's ε, a warning is appended to `warnings`
/// (or printed to stderr when `warnings` is null).
AdversarialDataset load_adversarial(const std::filesystem::path& path,
                                    std::optional<double> epsilon_in_force = std::nullopt,
                                    std::vector<std::string>* warnings = nullptr);

}  // namespace igan::data
