#pragma once

#include "igan/data.hpp"
#include "igan/interpretgan.hpp"
#include "igan/models/classifier.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace igan::diagnostics {

/// Acc_i per tap, ordered by network depth.
struct LayerAccuracyProfile {
  std::vector<std::string> taps;
  std::vector<double> accuracy;
  std::string dataset_fingerprint;
  std::string model_id;
  std::vector<std::string> unit_ids;
  long samples = 0;
};

/// Vul_1 = 1 − Acc_1, Vul_i = Acc_{i−1} − Acc_i.
struct VulnerabilityReport {
  std::vector<std::string> taps;
  std::vector<double> vulnerability;
  std::vector<bool> highlighted;  // Vul_i ≥ threshold
  std::vector<bool> negative;     // Vul_i < 0 (approximation noise)
  double threshold = 0.01;

  double total() const;
};

struct PoolDriftReport {
  std::vector<std::string> sites;
  std::vector<double> fraction;  // changed argmax windows / windows
  std::vector<long> windows;
};

/// Off-diagonal, row-normalized counts of (ground truth, prediction) over
/// misclassified samples.
struct ConfusionProfile {
  Eigen::MatrixXd matrix;
  std::vector<long> misclassified;  // per ground-truth label
  std::vector<bool> empty_row;      // rows without misclassifications
  long samples = 0;

  int label_count() const { return static_cast<int>(matrix.rows()); }
  int modal_target(int truth) const;
  /// Largest share in the row divided by the uniform share 1/(K − 1).
  double concentration(int truth) const;
};

class MissingUnitError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Maps a batch of inputs to explanations x̂ (classifier input shape).
using ExplainFn = std::function<MatrixF(const MatrixF&)>;

ExplainFn make_explainer(const interpretgan::InterpretGanUnit<float>& unit, const models::Classifier<float>& model);

/// Acc_i = mean over D* of [argmax f(x̂_i) = y] for each tap in `taps`
/// (default: every tap of the model).
LayerAccuracyProfile explanation_accuracy(const models::Classifier<float>& model,
                                          const std::map<std::string, ExplainFn>& units,
                                          const data::AdversarialDataset& adversarial,
                                          std::vector<std::string> taps = {}, int batch_size = 250);

VulnerabilityReport vulnerability_from_acc(const LayerAccuracyProfile& profile, double threshold = 0.01);

/// Fraction of positions whose index differs between two argmax maps.
double index_drift(const Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& a,
                   const Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& b);

PoolDriftReport pool_index_drift(const models::Classifier<float>& model, const MatrixF& clean,
                                 const MatrixF& adversarial, int batch_size = 250);

ConfusionProfile misclassification_distribution(const models::Classifier<float>& model,
                                                const data::AdversarialDataset& adversarial,
                                                int batch_size = 250);
/// Same, from predictions directly.
ConfusionProfile confusion_from_predictions(std::span<const int> truth, std::span<const int> predicted,
                                            int label_count);

/// CSV: header "metric,<taps…>", then "Acc" and (when given) "Vul" rows, 4 decimals.
void write_profile_csv(const LayerAccuracyProfile& profile, const VulnerabilityReport* vul,
                       const std::filesystem::path& path);
void write_drift_csv(const PoolDriftReport& drift, const std::filesystem::path& path);
/// Header row of predicted labels, then K rows of K values.
void write_confusion_csv(const ConfusionProfile& confusion, const std::filesystem::path& path);

/// Parsed CSV: header cells and numeric rows keyed by their first cell.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::string> row_labels;
  std::vector<std::vector<double>> rows;
};
CsvTable read_csv(const std::filesystem::path& path, bool label_column = true);

}  // namespace igan::diagnostics
