#include "igan/diagnostics.hpp"

#include "support.hpp"

#include <fstream>

using namespace igan;
using namespace igan::diagnostics;
using igan::testing::temp_dir;
using igan::testing::tiny_spec;
using igan::testing::uniform;

namespace {

using IndexMap = Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

const std::vector<std::string> kMnistTaps{"Conv1", "Conv2", "Conv3", "Conv4", "FC1", "FC2", "FC3"};

LayerAccuracyProfile profile(std::vector<double> acc) {
  LayerAccuracyProfile p;
  p.taps = kMnistTaps;
  p.accuracy = std::move(acc);
  return p;
}

data::AdversarialDataset tiny_adversarial(const models::Classifier<float>& model, int n) {
  data::AdversarialDataset ds;
  ds.spec = data::DatasetSpec{"tiny", Shape{1, 8, 8}, 4};
  ds.clean = data::make_synthetic(5, n, ds.spec);
  ds.adversarial = (ds.clean.images + uniform<float>(n, 64, 6, -0.1, 0.1)).cwiseMax(0.0f).cwiseMin(1.0f);
  ds.attack_fingerprint = "{}";
  ds.source_model_id = model.spec().hash();
  return ds;
}

double accuracy(const models::Classifier<float>& model, const MatrixF& x, const std::vector<int>& y) {
  const auto pred = model.predict(x);
  long ok = 0;
  for (std::size_t i = 0; i < y.size(); ++i) ok += pred[i] == y[i];
  return static_cast<double>(ok) / static_cast<double>(y.size());
}

std::vector<std::string> lines(const std::filesystem::path& p) {
  std::ifstream f(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(f, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Vulnerability, NaturallyTrainedRowFromAccuracies) {
  const auto r = vulnerability_from_acc(profile({0.526, 0.263, 0.216, 0.099, 0.043, 0.030, 0.035}));
  const std::vector<double> expected{0.474, 0.263, 0.047, 0.117, 0.056, 0.013, -0.005};
  ASSERT_EQ(r.vulnerability.size(), expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(r.vulnerability[i], expected[i], 1e-9) << r.taps[i];
  EXPECT_NEAR(r.total(), 0.965, 1e-9);
  EXPECT_EQ(r.negative, (std::vector<bool>{false, false, false, false, false, false, true}));
}

TEST(Vulnerability, AdversariallyTrainedRowAndHighlights) {
  const auto r = vulnerability_from_acc(profile({0.951, 0.940, 0.939, 0.926, 0.901, 0.900, 0.895}));
  const std::vector<double> expected{0.049, 0.011, 0.001, 0.013, 0.025, 0.001, 0.005};
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_NEAR(r.vulnerability[i], expected[i], 1e-9) << r.taps[i];
  EXPECT_NEAR(r.total(), 0.105, 1e-9);
  EXPECT_EQ(r.highlighted, (std::vector<bool>{true, true, false, true, true, false, false}));
  EXPECT_EQ(std::count(r.negative.begin(), r.negative.end(), true), 0);
}

TEST(Vulnerability, SumTelescopesToOneMinusLastAccuracy) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> acc(7);
    for (auto& a : acc) a = d(rng);
    EXPECT_NEAR(vulnerability_from_acc(profile(acc)).total(), 1 - acc.back(), 1e-12);
  }
  EXPECT_THROW(vulnerability_from_acc(LayerAccuracyProfile{}), std::invalid_argument);
}

TEST(ExplanationAccuracy, IdentityUnitsReproduceRobustAccuracy) {
  const models::Classifier<float> model(tiny_spec(), 4);
  const auto ds = tiny_adversarial(model, 40);
  std::map<std::string, ExplainFn> units;
  for (const auto& t : model.taps()) units[t] = [](const MatrixF& x) { return x; };
  const auto p = explanation_accuracy(model, units, ds, {}, 7);
  const double robust = accuracy(model, ds.adversarial, ds.clean.labels);
  ASSERT_EQ(p.taps, model.taps());
  for (double a : p.accuracy) EXPECT_DOUBLE_EQ(a, robust);
  EXPECT_EQ(p.samples, 40);
  const auto r = vulnerability_from_acc(p);
  EXPECT_NEAR(r.vulnerability[0], 1 - robust, 1e-12);
  for (std::size_t i = 1; i < r.vulnerability.size(); ++i) EXPECT_EQ(r.vulnerability[i], 0.0);
}

TEST(ExplanationAccuracy, ConstantExplanationGivesLabelFrequency) {
  const models::Classifier<float> model(tiny_spec(), 4);
  const auto ds = tiny_adversarial(model, 30);
  const MatrixF fixed = uniform<float>(1, 64, 9);
  const int cls = model.predict(fixed)[0];
  const std::map<std::string, ExplainFn> units{
      {"FC1", [&](const MatrixF& x) { return MatrixF(fixed.replicate(x.rows(), 1)); }}};
  const auto p = explanation_accuracy(model, units, ds, {"FC1"});
  const auto hits = std::count(ds.clean.labels.begin(), ds.clean.labels.end(), cls);
  EXPECT_DOUBLE_EQ(p.accuracy[0], static_cast<double>(hits) / 30.0);
}

TEST(ExplanationAccuracy, MissingUnitsAreNamed) {
  const models::Classifier<float> model(tiny_spec(), 4);
  const auto ds = tiny_adversarial(model, 4);
  const std::map<std::string, ExplainFn> units{{"Conv1", [](const MatrixF& x) { return x; }}};
  try {
    explanation_accuracy(model, units, ds);
    FAIL() << "expected MissingUnitError";
  } catch (const MissingUnitError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("Conv3"), std::string::npos);
    EXPECT_NE(msg.find("FC2"), std::string::npos);
    EXPECT_EQ(msg.find("Conv1"), std::string::npos);
  }
  EXPECT_THROW(explanation_accuracy(model, units, ds, {"Bogus"}), models::UnknownTapError);
}

TEST(ExplanationAccuracy, TrainedUnitPlugsIn) {
  const models::Classifier<float> model(tiny_spec(), 4);
  interpretgan::GanTrainConfig cfg;
  cfg.latent_dim = 4;
  cfg.channels = {2, 2};
  cfg.progressive = false;
  cfg.flat_epochs = 1;
  cfg.batch_size = 8;
  auto unit = interpretgan::build_unit(model, "Conv4", cfg);
  const auto ds = tiny_adversarial(model, 8);
  interpretgan::train_unit(unit, model, ds.clean);
  const auto p = explanation_accuracy(model, {{"Conv4", make_explainer(unit, model)}}, ds, {"Conv4"});
  EXPECT_GE(p.accuracy[0], 0.0);
  EXPECT_LE(p.accuracy[0], 1.0);
}

TEST(PoolDrift, HandBuiltMapsAndIdentity) {
  IndexMap a(2, 2), b(2, 2);
  a << 0, 1, 2, 3;
  b << 0, 1, 3, 2;
  EXPECT_DOUBLE_EQ(index_drift(a, b), 0.5);
  EXPECT_DOUBLE_EQ(index_drift(a, a), 0.0);
  EXPECT_THROW(index_drift(a, IndexMap(1, 4)), ShapeError);
}

TEST(PoolDrift, SitesMatchDirectArgmaxComparison) {
  const models::Classifier<float> model(tiny_spec(), 4);
  const MatrixF clean = uniform<float>(9, 64, 1);
  const MatrixF adv = (clean + uniform<float>(9, 64, 2, -0.2, 0.2)).cwiseMax(0.0f).cwiseMin(1.0f);
  const auto r = pool_index_drift(model, clean, adv, 4);
  ASSERT_EQ(r.sites, model.pool_sites());
  EXPECT_EQ(r.windows, (std::vector<long>{9 * 3 * 4 * 4, 9 * 4 * 2 * 2}));
  for (std::size_t s = 0; s < r.sites.size(); ++s)
    EXPECT_DOUBLE_EQ(r.fraction[s], index_drift(model.pool_argmax_indices(clean, r.sites[s]),
                                                model.pool_argmax_indices(adv, r.sites[s])));
  for (double f : pool_index_drift(model, clean, clean).fraction) EXPECT_EQ(f, 0.0);
  const models::Classifier<float> avg(tiny_spec(nn::PoolKind::avg), 4);
  EXPECT_THROW(pool_index_drift(avg, clean, adv), models::UnsupportedSiteError);
}

TEST(Confusion, RowsAreNormalisedOffDiagonalCounts) {
  const std::vector<int> truth{0, 0, 0, 1, 1, 2, 0};
  const std::vector<int> pred{1, 1, 2, 1, 0, 2, 0};
  const auto c = confusion_from_predictions(truth, pred, 3);
  EXPECT_NEAR(c.matrix(0, 1), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(c.matrix(0, 2), 1.0 / 3.0, 1e-12);
  EXPECT_EQ(c.matrix(1, 0), 1.0);
  EXPECT_EQ(c.matrix.diagonal().cwiseAbs().sum(), 0.0);
  EXPECT_EQ(c.misclassified, (std::vector<long>{3, 1, 0}));
  EXPECT_EQ(c.empty_row, (std::vector<bool>{false, false, true}));
  EXPECT_EQ(c.matrix.row(2).sum(), 0.0);
  EXPECT_EQ(c.modal_target(0), 1);
  EXPECT_NEAR(c.concentration(0), 4.0 / 3.0, 1e-12);
  EXPECT_EQ(c.samples, 7);
  EXPECT_THROW(confusion_from_predictions(truth, std::vector<int>{0}, 3), ShapeError);
  EXPECT_THROW(confusion_from_predictions(std::vector<int>{3}, std::vector<int>{0}, 3), std::out_of_range);
}

TEST(Confusion, ModelDistributionMatchesPredictions) {
  const models::Classifier<float> model(tiny_spec(), 4);
  const auto ds = tiny_adversarial(model, 25);
  const auto c = misclassification_distribution(model, ds, 6);
  const auto ref = confusion_from_predictions(ds.clean.labels, model.predict(ds.adversarial), 4);
  EXPECT_EQ(c.matrix, ref.matrix);
  for (int t = 0; t < 4; ++t)
    if (!c.empty_row[static_cast<std::size_t>(t)]) EXPECT_NEAR(c.matrix.row(t).sum(), 1.0, 1e-12);
}

TEST(Csv, ProfileRoundTripsAtFourDecimals) {
  const auto dir = temp_dir("csv");
  const auto p = profile({0.526, 0.263, 0.216, 0.099, 0.043, 0.030, 0.035});
  const auto r = vulnerability_from_acc(p);
  write_profile_csv(p, &r, dir / "profile.csv");
  const auto l = lines(dir / "profile.csv");
  ASSERT_EQ(l.size(), 3u);
  EXPECT_EQ(l[0], "metric,Conv1,Conv2,Conv3,Conv4,FC1,FC2,FC3");
  EXPECT_EQ(l[2], "Vul,0.4740,0.2630,0.0470,0.1170,0.0560,0.0130,-0.0050");
  const auto t = read_csv(dir / "profile.csv");
  EXPECT_EQ(t.row_labels, (std::vector<std::string>{"Acc", "Vul"}));
  for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(t.rows[0][i], p.accuracy[i], 5e-5);
  auto shorter = p;
  shorter.taps.pop_back();
  shorter.accuracy.pop_back();
  EXPECT_THROW(write_profile_csv(shorter, &r, dir / "bad.csv"), std::invalid_argument);
  EXPECT_THROW(write_profile_csv(profile({0.5}), nullptr, dir / "bad.csv"), std::invalid_argument);
}

TEST(Csv, DriftAndConfusionShapes) {
  const auto dir = temp_dir("csv_shapes");
  PoolDriftReport d{{"Pool1", "Pool2"}, {0.409, 0.181}, {100, 50}};
  write_drift_csv(d, dir / "drift.csv");
  const auto t = read_csv(dir / "drift.csv");
  EXPECT_EQ(t.header, (std::vector<std::string>{"metric", "Pool1", "Pool2"}));
  EXPECT_EQ(t.rows[0], (std::vector<double>{0.409, 0.181}));
  EXPECT_EQ(t.rows[1], (std::vector<double>{100, 50}));

  const auto c = confusion_from_predictions(std::vector<int>{0, 1, 3}, std::vector<int>{2, 1, 0}, 4);
  write_confusion_csv(c, dir / "confusion.csv");
  const auto m = read_csv(dir / "confusion.csv", false);
  EXPECT_EQ(m.header, (std::vector<std::string>{"0", "1", "2", "3"}));
  ASSERT_EQ(m.rows.size(), 4u);
  for (const auto& row : m.rows) EXPECT_EQ(row.size(), 4u);
  EXPECT_EQ(m.rows[0][2], 1.0);
  EXPECT_EQ(m.rows[3][0], 1.0);
}
