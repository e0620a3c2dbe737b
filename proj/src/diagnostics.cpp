#include "igan/diagnostics.hpp"

#include "igan/io.hpp"

#include <cstdio>
#include <sstream>

namespace igan::diagnostics {

double VulnerabilityReport::total() const {
  double s = 0;
  for (double v : vulnerability) s += v;
  return s;
}

int ConfusionProfile::modal_target(int truth) const {
  Eigen::Index best = 0;
  matrix.row(truth).maxCoeff(&best);
  return static_cast<int>(best);
}

double ConfusionProfile::concentration(int truth) const {
  if (label_count() < 2) return 0;
  return matrix.row(truth).maxCoeff() * static_cast<double>(label_count() - 1);
}

ExplainFn make_explainer(const interpretgan::InterpretGanUnit<float>& unit, const models::Classifier<float>& model) {
  unit.check_model(model);
  return [&unit, &model](const MatrixF& x) { return unit.explain(model, x); };
}

LayerAccuracyProfile explanation_accuracy(const models::Classifier<float>& model,
                                          const std::map<std::string, ExplainFn>& units,
                                          const data::AdversarialDataset& adversarial,
                                          std::vector<std::string> taps, int batch_size) {
  const auto& labels = adversarial.clean.labels;
  const MatrixF& xs = adversarial.adversarial;
  if (xs.rows() == 0) throw std::invalid_argument("explanation_accuracy: empty adversarial dataset");
  if (static_cast<Eigen::Index>(labels.size()) != xs.rows())
    throw ShapeError("explanation_accuracy: label count does not match adversarial images");
  if (taps.empty()) taps = model.taps();
  std::vector<std::string> missing;
  for (const auto& t : taps) {
    model.tap_boundary(t);
    if (!units.count(t)) missing.push_back(t);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& t : missing) list += (list.empty() ? "" : ", ") + t;
    throw MissingUnitError("explanation_accuracy: no explanation unit for tap(s): " + list);
  }
  LayerAccuracyProfile p;
  p.taps = taps;
  p.dataset_fingerprint = adversarial.attack_fingerprint;
  p.model_id = adversarial.source_model_id;
  p.samples = static_cast<long>(xs.rows());
  for (const auto& t : taps) {
    const auto& fn = units.at(t);
    long correct = 0;
    for (Eigen::Index i = 0; i < xs.rows(); i += batch_size) {
      const Eigen::Index n = std::min<Eigen::Index>(batch_size, xs.rows() - i);
      const auto pred = model.predict(fn(xs.middleRows(i, n)));
      for (Eigen::Index k = 0; k < n; ++k) correct += pred[static_cast<std::size_t>(k)] == labels[static_cast<std::size_t>(i + k)];
    }
    p.accuracy.push_back(static_cast<double>(correct) / static_cast<double>(xs.rows()));
    p.unit_ids.push_back(t);
  }
  return p;
}

VulnerabilityReport vulnerability_from_acc(const LayerAccuracyProfile& profile, double threshold) {
  if (profile.accuracy.empty()) throw std::invalid_argument("vulnerability_from_acc: empty profile");
  if (profile.taps.size() != profile.accuracy.size())
    throw std::invalid_argument("vulnerability_from_acc: tap and accuracy counts differ");
  VulnerabilityReport r;
  r.taps = profile.taps;
  r.threshold = threshold;
  double prev = 1.0;
  for (double acc : profile.accuracy) {
    const double v = prev - acc;
    r.vulnerability.push_back(v);
    r.highlighted.push_back(v >= threshold);
    r.negative.push_back(v < 0);
    prev = acc;
  }
  return r;
}

double index_drift(const Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& a,
                   const Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("index_drift: shapes differ");
  if (a.size() == 0) return 0.0;
  return static_cast<double>((a.array() != b.array()).count()) / static_cast<double>(a.size());
}

PoolDriftReport pool_index_drift(const models::Classifier<float>& model, const MatrixF& clean,
                                 const MatrixF& adversarial, int batch_size) {
  if (clean.rows() != adversarial.rows() || clean.cols() != adversarial.cols())
    throw ShapeError("pool_index_drift: clean and adversarial arrays differ in shape");
  PoolDriftReport r;
  const auto& layers = model.spec().layers;
  std::vector<std::string> sites = model.pool_sites();
  std::size_t k = 0;
  for (const auto& l : layers) {
    if (l.type != models::LayerType::pool) continue;
    if (l.pool == nn::PoolKind::max) r.sites.push_back(sites[k]);
    ++k;
  }
  if (r.sites.empty())
    throw models::UnsupportedSiteError("pool_index_drift: model " + model.spec().name + " has no max-pooling sites");
  for (const auto& site : r.sites) {
    long changed = 0, total = 0;
    for (Eigen::Index i = 0; i < clean.rows(); i += batch_size) {
      const Eigen::Index n = std::min<Eigen::Index>(batch_size, clean.rows() - i);
      const auto a = model.pool_argmax_indices(clean.middleRows(i, n), site);
      const auto b = model.pool_argmax_indices(adversarial.middleRows(i, n), site);
      changed += static_cast<long>((a.array() != b.array()).count());
      total += static_cast<long>(a.size());
    }
    r.fraction.push_back(total ? static_cast<double>(changed) / static_cast<double>(total) : 0.0);
    r.windows.push_back(total);
  }
  return r;
}

ConfusionProfile confusion_from_predictions(std::span<const int> truth, std::span<const int> predicted,
                                            int label_count) {
  if (truth.size() != predicted.size()) throw ShapeError("confusion: truth and prediction counts differ");
  ConfusionProfile c;
  const auto k = static_cast<Eigen::Index>(label_count);
  c.matrix = Eigen::MatrixXd::Zero(k, k);
  c.misclassified.assign(static_cast<std::size_t>(label_count), 0);
  c.samples = static_cast<long>(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= label_count || predicted[i] < 0 || predicted[i] >= label_count)
      throw std::out_of_range("confusion: label out of range");
    if (truth[i] == predicted[i]) continue;
    c.matrix(truth[i], predicted[i]) += 1;
    ++c.misclassified[static_cast<std::size_t>(truth[i])];
  }
  for (Eigen::Index t = 0; t < k; ++t) {
    const long m = c.misclassified[static_cast<std::size_t>(t)];
    c.empty_row.push_back(m == 0);
    if (m > 0) c.matrix.row(t) /= static_cast<double>(m);
  }
  return c;
}

ConfusionProfile misclassification_distribution(const models::Classifier<float>& model,
                                                const data::AdversarialDataset& adversarial, int batch_size) {
  const MatrixF& xs = adversarial.adversarial;
  if (xs.rows() == 0) throw std::invalid_argument("misclassification_distribution: empty adversarial dataset");
  std::vector<int> pred;
  pred.reserve(static_cast<std::size_t>(xs.rows()));
  for (Eigen::Index i = 0; i < xs.rows(); i += batch_size) {
    const Eigen::Index n = std::min<Eigen::Index>(batch_size, xs.rows() - i);
    const auto p = model.predict(xs.middleRows(i, n));
    pred.insert(pred.end(), p.begin(), p.end());
  }
  return confusion_from_predictions(adversarial.clean.labels, pred, model.label_count());
}

namespace {

std::string fmt4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string join_row(const std::string& label, const std::vector<double>& values) {
  std::string s = label;
  for (double v : values) s += "," + fmt4(v);
  return s + "\n";
}

}  // namespace

void write_profile_csv(const LayerAccuracyProfile& profile, const VulnerabilityReport* vul,
                       const std::filesystem::path& path) {
  if (profile.taps.size() != profile.accuracy.size())
    throw std::invalid_argument("write_profile_csv: tap and accuracy counts differ");
  std::string out = "metric";
  for (const auto& t : profile.taps) out += "," + t;
  out += "\n" + join_row("Acc", profile.accuracy);
  if (vul) {
    if (vul->taps != profile.taps) throw std::invalid_argument("write_profile_csv: profile and report taps differ");
    out += join_row("Vul", vul->vulnerability);
  }
  io::write_text_atomic(path, out);
}

void write_drift_csv(const PoolDriftReport& drift, const std::filesystem::path& path) {
  std::string out = "metric";
  for (const auto& s : drift.sites) out += "," + s;
  out += "\n" + join_row("changed_fraction", drift.fraction);
  out += "windows";
  for (long w : drift.windows) out += "," + std::to_string(w);
  out += "\n";
  io::write_text_atomic(path, out);
}

void write_confusion_csv(const ConfusionProfile& confusion, const std::filesystem::path& path) {
  std::string out;
  for (int j = 0; j < confusion.label_count(); ++j) out += (j ? "," : "") + std::to_string(j);
  out += "\n";
  for (int i = 0; i < confusion.label_count(); ++i) {
    for (int j = 0; j < confusion.label_count(); ++j) out += (j ? "," : "") + fmt4(confusion.matrix(i, j));
    out += "\n";
  }
  io::write_text_atomic(path, out);
}

CsvTable read_csv(const std::filesystem::path& path, bool label_column) {
  std::istringstream in(io::read_text(path));
  CsvTable t;
  std::string line;
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::stringstream ss(s);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    return cells;
  };
  if (!std::getline(in, line)) throw io::IoError("empty CSV " + path.string());
  t.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    std::size_t start = 0;
    if (label_column) {
      t.row_labels.push_back(cells.at(0));
      start = 1;
    }
    std::vector<double> row;
    for (std::size_t i = start; i < cells.size(); ++i) row.push_back(std::stod(cells[i]));
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace igan::diagnostics
