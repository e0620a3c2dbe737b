#include "igan/interpretgan.hpp"

#include "support.hpp"

using namespace igan;
using namespace igan::interpretgan;
using igan::testing::central_difference;
using igan::testing::linear_spec;
using igan::testing::relative_close;
using igan::testing::temp_dir;
using igan::testing::tiny_spec;
using igan::testing::uniform;

namespace {

GanTrainConfig tiny_config() {
  GanTrainConfig c;
  c.latent_dim = 6;
  c.channels = {4, 3};
  c.scale_epochs = {1, 1};
  c.flat_epochs = 1;
  c.batch_size = 4;
  c.seed = 17;
  return c;
}

template <typename S>
void expect_same_parameters(const InterpretGanUnit<S>& a, const InterpretGanUnit<S>& b) {
  const auto pa = a.all_parameters();
  const auto pb = b.all_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
}

data::LabeledBatch tiny_data(std::uint64_t seed, int n) {
  return data::make_synthetic(seed, n, data::DatasetSpec{"tiny", Shape{1, 8, 8}, 4});
}

// FD check of Σ out ⊙ R through `eval` against the analytic gradients on a
// sample of every parameter tensor.
void check_parameters(const std::vector<nn::Parameter<double>*>& params, const std::function<double()>& eval,
                      int per_tensor = 3) {
  std::mt19937_64 rng(3);
  for (auto* p : params) {
    for (int k = 0; k < per_tensor; ++k) {
      const auto i = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(p->value.size()));
      EXPECT_TRUE(relative_close(p->grad.data()[i], central_difference(eval, p->value.data() + i)))
          << p->name << "[" << i << "]";
    }
  }
}

}  // namespace

TEST(Compression, StagesFollowTapResolution) {
  const models::Classifier<float> model(models::ArchitectureSpec::mnist(), 0);
  const std::map<std::string, std::vector<int>> expected{
      {"Conv1", {64, 128, 256}}, {"Conv2", {64, 128}}, {"Conv3", {128, 256}}, {"Conv4", {}},
      {"FC1", {}},               {"FC2", {}},          {"FC3", {}}};
  for (const auto& [tap, stages] : expected) {
    const CompressionNet<float> c(model.tap_shape(tap), 256);
    EXPECT_EQ(c.conv_stages(), stages) << tap;
    EXPECT_EQ(c.output_dim(), 256);
    EXPECT_EQ(c.network().output_shape(), (Shape{256, 1, 1}));
  }
  EXPECT_EQ(CompressionNet<float>(model.tap_shape("Conv2"), 256).describe(),
            "3x3 Conv 64 -> AvgPool -> 3x3 Conv 128 -> AvgPool -> FC 256");
}

TEST(Generator, OutputIsImageInUnitInterval) {
  Generator<float> g(256, Shape{1, 32, 32}, {64, 64, 32, 16});
  std::mt19937_64 rng(1);
  g.initialize(rng);
  ASSERT_EQ(g.scales(), 4);
  const MatrixF z = uniform<float>(3, 256, 2, -3, 3);
  for (int s = 0; s < 4; ++s) {
    for (float alpha : {0.3f, 1.0f}) {
      const MatrixF out = g.forward(z, s, alpha);
      const int side = 4 << s;
      EXPECT_EQ(out.cols(), side * side);
      EXPECT_GE(out.minCoeff(), 0.0f);
      EXPECT_LE(out.maxCoeff(), 1.0f);
    }
  }
  EXPECT_EQ(g.output_shape(3), (Shape{1, 32, 32}));
  EXPECT_THROW(Generator<float>(8, Shape{1, 32, 32}, {4, 4}), std::invalid_argument);
}

TEST(Generator, GradientsMatchFiniteDifferences) {
  Generator<double> g(5, Shape{1, 16, 16}, {3, 2, 2});
  std::mt19937_64 rng(4);
  g.initialize(rng);
  MatrixD z = uniform<double>(2, 5, 8, -1, 1);
  for (auto [scale, alpha] : {std::pair{0, 1.0}, std::pair{1, 0.4}, std::pair{2, 1.0}}) {
    const Eigen::Index side = 4 << scale;
    const MatrixD r = uniform<double>(2, side * side, 9, -1, 1);
    auto eval = [&] { return g.forward(z, scale, alpha).cwiseProduct(r).sum(); };
    for (auto* p : g.parameters()) p->grad.setZero();
    typename Generator<double>::Pass pass;
    MatrixD out;
    g.forward(z, scale, alpha, pass, out);
    const MatrixD dz = g.backward(pass, r);
    for (Eigen::Index i = 0; i < z.size(); ++i)
      EXPECT_TRUE(relative_close(dz.data()[i], central_difference(eval, z.data() + i))) << "scale " << scale;
    check_parameters(g.parameters(), eval, 2);
  }
}

TEST(Discriminator, GradientsMatchFiniteDifferences) {
  Discriminator<double> d(Shape{1, 16, 16}, {3, 2, 2});
  std::mt19937_64 rng(5);
  d.initialize(rng);
  for (auto [scale, alpha] : {std::pair{0, 1.0}, std::pair{1, 0.6}, std::pair{2, 1.0}}) {
    const Eigen::Index side = 4 << scale;
    MatrixD x = uniform<double>(2, side * side, 10);
    const MatrixD r = uniform<double>(2, 1, 11, -1, 1);
    auto eval = [&] { return d.forward(x, scale, alpha).cwiseProduct(r).sum(); };
    for (auto* p : d.parameters()) p->grad.setZero();
    typename Discriminator<double>::Pass pass;
    d.forward(x, scale, alpha, pass);
    const MatrixD gx = d.input_gradient(pass, r);
    for (const auto* p : std::as_const(d).parameters()) EXPECT_EQ(p->grad.cwiseAbs().sum(), 0.0);
    const MatrixD gx2 = d.backward(pass, r);
    EXPECT_EQ(gx, gx2);
    for (Eigen::Index i = 0; i < x.size(); i += 5)
      EXPECT_TRUE(relative_close(gx.data()[i], central_difference(eval, x.data() + i))) << "scale " << scale;
    check_parameters(d.parameters(), eval, 2);
  }
}

TEST(GanTerms, HalfProbabilityGivesLogTwoValues) {
  const MatrixD zero = MatrixD::Zero(4, 1);
  const auto ns = gan_value_terms<double>(zero, zero, GeneratorLoss::non_saturating);
  EXPECT_NEAR(ns.discriminator, -2 * std::log(0.5), 1e-12);
  EXPECT_NEAR(ns.generator, std::log(2.0), 1e-12);
  const auto mm = gan_value_terms<double>(zero, zero, GeneratorLoss::minimax);
  EXPECT_NEAR(mm.generator, std::log(0.5), 1e-12);
}

TEST(GanTerms, GradientsMatchFiniteDifferences) {
  MatrixD real = uniform<double>(3, 1, 1, -3, 3);
  MatrixD fake = uniform<double>(4, 1, 2, -3, 3);
  for (auto kind : {GeneratorLoss::non_saturating, GeneratorLoss::minimax}) {
    const auto t = gan_value_terms<double>(real, fake, kind);
    auto d_loss = [&] { return gan_value_terms<double>(real, fake, kind).discriminator; };
    auto g_loss = [&] { return gan_value_terms<double>(real, fake, kind).generator; };
    for (Eigen::Index i = 0; i < real.size(); ++i)
      EXPECT_TRUE(relative_close(t.d_grad_real(i), central_difference(d_loss, real.data() + i)));
    for (Eigen::Index i = 0; i < fake.size(); ++i) {
      EXPECT_TRUE(relative_close(t.d_grad_fake(i), central_difference(d_loss, fake.data() + i)));
      EXPECT_TRUE(relative_close(t.g_grad_fake(i), central_difference(g_loss, fake.data() + i)));
    }
  }
}

TEST(GanTerms, FlooredEntriesHaveZeroGradient) {
  const MatrixD real = MatrixD::Constant(1, 1, -100);
  const MatrixD fake = MatrixD::Constant(1, 1, -100);
  const auto t = gan_value_terms<double>(real, fake, GeneratorLoss::non_saturating, 1e-12);
  EXPECT_NEAR(t.generator, -std::log(1e-12), 1e-9);
  EXPECT_EQ(t.g_grad_fake(0, 0), 0.0);
  EXPECT_EQ(t.d_grad_real(0, 0), 0.0);
  EXPECT_TRUE(std::isfinite(t.discriminator));
}

TEST(Interpretability, UniformAndConfidentOracles) {
  models::Classifier<double> model(linear_spec(Shape{1, 4, 4}, 10), 1);
  auto& w = *model.network().parameters()[0];
  const MatrixD x = uniform<double>(3, 16, 2);
  const std::vector<int> y{1, 4, 7};
  w.value.setZero();
  EXPECT_NEAR(interpretability_loss<double>(model, x, y), std::log(10.0), 1e-12);
  // Bias of 50 on the target class makes f(x̂) one-hot in double precision.
  auto& b = *model.network().parameters()[1];
  b.value.setZero();
  b.value(0, 3) = 50;
  EXPECT_NEAR(interpretability_loss<double>(model, x, std::vector<int>{3, 3, 3}), 0.0, 1e-12);
}

TEST(Interpretability, BatchValueIsPerSampleMeanAndGradientIsExact) {
  const auto model = models::Classifier<float>(tiny_spec(), 2).cast<double>();
  MatrixD x = uniform<double>(4, 64, 3);
  const std::vector<int> y{0, 3, 1, 2};
  double mean = 0;
  for (int i = 0; i < 4; ++i)
    mean += interpretability_loss<double>(model, MatrixD(x.row(i)), std::vector<int>{y[static_cast<std::size_t>(i)]});
  MatrixD g;
  EXPECT_NEAR(interpretability_loss<double>(model, x, y, &g), mean / 4, 1e-12);
  auto f = [&] { return interpretability_loss<double>(model, x, y); };
  for (Eigen::Index i = 0; i < x.size(); i += 9)
    EXPECT_TRUE(relative_close(g.data()[i], central_difference(f, x.data() + i)));
  MatrixD onehot = MatrixD::Zero(4, 4);
  for (int i = 0; i < 4; ++i) onehot(i, y[static_cast<std::size_t>(i)]) = 1;
  MatrixD gs;
  EXPECT_NEAR(interpretability_loss<double>(model, x, onehot, &gs), mean / 4, 1e-12);
  EXPECT_LT((gs - g).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Unit, SameSeedGivesSameInitialisationAndTapsDiffer) {
  const models::Classifier<float> model(tiny_spec(), 1);
  const auto a = build_unit(model, "Conv3", tiny_config());
  const auto b = build_unit(model, "Conv3", tiny_config());
  expect_same_parameters(a, b);
  const auto c = build_unit(model, "FC1", tiny_config());
  EXPECT_NE(a.generator().parameters()[0]->value, c.generator().parameters()[0]->value);
  EXPECT_EQ(a.state().scale, 0);
  auto flat = tiny_config();
  flat.progressive = false;
  EXPECT_EQ(build_unit(model, "Conv3", flat).state().scale, 1);
  EXPECT_THROW(build_unit(model, "Nope", tiny_config()), models::UnknownTapError);
}

TEST(Unit, UntrainedUnitRefusesToExplain) {
  const models::Classifier<float> model(tiny_spec(), 1);
  auto unit = build_unit(model, "Conv4", tiny_config());
  const MatrixF x = uniform<float>(2, 64, 1);
  EXPECT_THROW(unit.explain(model, x), UntrainedUnitError);
  unit.state().trained = true;
  const MatrixF e = unit.explain(model, x);
  EXPECT_EQ(e.rows(), 2);
  EXPECT_EQ(e.cols(), 64);
  EXPECT_GE(e.minCoeff(), 0.0f);
  EXPECT_LE(e.maxCoeff(), 1.0f);
  const models::Classifier<float> other(tiny_spec(nn::PoolKind::avg), 1);
  EXPECT_THROW(unit.explain(other, x), models::SpecMismatchError);
}

TEST(Objective, GradientMatchesFiniteDifferencesAtEveryScale) {
  const auto model = models::Classifier<float>(tiny_spec(), 5).cast<double>();
  auto cfg = tiny_config();
  cfg.lambda = 0.7;
  for (bool soft : {false, true}) {
    cfg.soft_targets = soft;
    auto unit = build_unit(model, "Conv4", cfg);
    const MatrixD x = uniform<double>(3, 64, 6);
    const MatrixD latent = model.forward_to("Conv4", x);
    const auto targets = batch_targets(model, x);
    for (auto [scale, alpha] : {std::pair{0, 1.0}, std::pair{1, 0.5}, std::pair{1, 1.0}}) {
      unit.state().scale = scale;
      unit.state().alpha = alpha;
      for (auto* p : unit.all_parameters()) p->grad.setZero();
      const auto obj = generator_objective(unit, model, latent, targets, true);
      EXPECT_NEAR(obj.total, obj.gan + 0.7 * obj.interpretability, 1e-12);
      EXPECT_EQ(obj.x_hat.cols(), 64);
      auto eval = [&] { return generator_objective(unit, model, latent, targets, false).total; };
      check_parameters(unit.generator_parameters(), eval, 2);
      for (const auto* p : std::as_const(unit).discriminator().parameters())
        EXPECT_EQ(p->grad.cwiseAbs().sum(), 0.0);
    }
  }
}

TEST(Objective, ZeroLambdaIgnoresLayersAfterTheTap) {
  const models::Classifier<float> model(tiny_spec(), 5);
  models::Classifier<float> perturbed = model;
  perturbed.network().parameters().back()->value.array() += 3.0f;
  ASSERT_NE(model.checksum(), perturbed.checksum());
  auto cfg = tiny_config();
  cfg.lambda = 0;
  auto a = build_unit(model, "FC1", cfg);
  auto b = build_unit(perturbed, "FC1", cfg);
  UnitTrainer<float> ta(a, model);
  UnitTrainer<float> tb(b, perturbed);
  const MatrixF x = uniform<float>(4, 64, 7);
  for (int k = 0; k < 3; ++k) {
    const auto sa = ta.step(x);
    const auto sb = tb.step(x);
    EXPECT_EQ(sa.discriminator_loss, sb.discriminator_loss);
    EXPECT_EQ(sa.generator_loss, sb.generator_loss);
    EXPECT_TRUE(std::isnan(sa.interpretability));
  }
  expect_same_parameters(a, b);
}

TEST(Training, LeavesClassifierUntouchedAndIsDeterministic) {
  const models::Classifier<float> model(tiny_spec(), 2);
  const auto before = model.checksum();
  const auto train = tiny_data(1, 10);
  const auto held = tiny_data(2, 6);
  auto a = build_unit(model, "Conv3", tiny_config());
  auto b = build_unit(model, "Conv3", tiny_config());
  std::vector<GanEpochRecord> seen;
  const auto h = train_unit(a, model, train, &held, [&](const GanEpochRecord& r) { seen.push_back(r); });
  train_unit(b, model, train);
  EXPECT_EQ(model.checksum(), before);
  expect_same_parameters(a, b);
  ASSERT_EQ(h.epochs.size(), 2u);
  EXPECT_EQ(seen.size(), 2u);
  EXPECT_EQ(h.epochs[0].scale, 0);
  EXPECT_EQ(h.epochs[1].scale, 1);
  EXPECT_DOUBLE_EQ(h.epochs[1].alpha_end, 1.0);
  EXPECT_GE(h.epochs[1].heldout_agreement, 0.0);
  EXPECT_LE(h.epochs[1].heldout_agreement, 1.0);
  EXPECT_TRUE(a.state().trained);
  EXPECT_EQ(a.state().steps, 6);
  EXPECT_EQ(a.state().epochs, 2);
  const double rate = agreement_rate(a, model, held);
  EXPECT_DOUBLE_EQ(rate, h.epochs[1].heldout_agreement);
}

TEST(Training, FadeInRampsOverHalfThePhase) {
  const models::Classifier<float> model(tiny_spec(), 2);
  auto cfg = tiny_config();
  cfg.scale_epochs = {0, 4};
  auto unit = build_unit(model, "FC1", cfg);
  // 8 samples at batch 4: 2 steps per epoch, 8 in the phase, fade over 4.
  const auto h = train_unit(unit, model, tiny_data(3, 8));
  ASSERT_EQ(h.epochs.size(), 4u);
  EXPECT_DOUBLE_EQ(h.epochs[0].alpha_end, 0.5);
  EXPECT_DOUBLE_EQ(h.epochs[1].alpha_end, 1.0);
}

TEST(Training, CollapsedDiscriminatorRaisesDivergence) {
  const models::Classifier<float> model(tiny_spec(), 2);
  auto cfg = tiny_config();
  cfg.divergence_floor = 1e6;
  cfg.divergence_window = 2;
  auto unit = build_unit(model, "FC1", cfg);
  try {
    train_unit(unit, model, tiny_data(1, 12));
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("2 consecutive steps"), std::string::npos);
  }
  EXPECT_FALSE(unit.state().trained);
}

TEST(Training, MismatchedScheduleIsRejected) {
  const models::Classifier<float> model(tiny_spec(), 2);
  auto cfg = tiny_config();
  cfg.scale_epochs = {1, 1, 1};
  auto unit = build_unit(model, "FC1", cfg);
  EXPECT_THROW(train_unit(unit, model, tiny_data(1, 4)), std::invalid_argument);
}

TEST(Checkpoint, RoundTripAndSpecMismatch) {
  const models::Classifier<float> model(tiny_spec(), 2);
  auto cfg = tiny_config();
  cfg.progressive = false;
  auto unit = build_unit(model, "Conv2", cfg);
  train_unit(unit, model, tiny_data(4, 8));
  const auto dir = temp_dir("unit");
  save_unit(unit, dir / "u.bin");
  const auto back = load_unit(dir / "u.bin", model);
  expect_same_parameters(unit, back);
  EXPECT_EQ(back.tap(), "Conv2");
  EXPECT_EQ(back.state().steps, unit.state().steps);
  EXPECT_TRUE(back.state().trained);
  EXPECT_EQ(back.config().to_json(), unit.config().to_json());
  const MatrixF x = uniform<float>(2, 64, 3);
  EXPECT_EQ(back.explain(model, x), unit.explain(model, x));
  const models::Classifier<float> other(tiny_spec(nn::PoolKind::avg), 2);
  EXPECT_THROW(load_unit(dir / "u.bin", other), models::SpecMismatchError);
}

TEST(Config, DefaultsJsonAndValidation) {
  GanTrainConfig c;
  EXPECT_EQ(c.total_epochs(), 30);
  c.generator_loss = GeneratorLoss::minimax;
  EXPECT_EQ(GanTrainConfig::from_json(c.to_json()).to_json(), c.to_json());
  c.lambda = -1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(GanTrainConfig::from_json(nlohmann::json{{"generator_loss", "wgan"}}), std::invalid_argument);
  EXPECT_THROW(GanTrainConfig::from_json(nlohmann::json{{"log_floor", 0.0}}), std::invalid_argument);
}
