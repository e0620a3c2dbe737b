#include "igan/attribution.hpp"

#include "support.hpp"

using namespace igan;
using igan::testing::linear_spec;
using igan::testing::tiny_spec;
using igan::testing::uniform;

namespace {

struct LinearCase {
  models::Classifier<double> model{linear_spec(Shape{1, 4, 4}, 3), 9};
  MatrixD x = uniform<double>(2, 16, 4);
  std::vector<int> y{2, 0};

  LinearCase() { model.network().parameters()[1]->value = uniform<double>(1, 3, 5, -1, 1); }
  const MatrixD& w() const { return std::as_const(model).network().parameters()[0]->value; }
  // Row i of W selected by label i.
  MatrixD rows() const {
    MatrixD r(2, 16);
    for (int i = 0; i < 2; ++i) r.row(i) = w().row(y[static_cast<std::size_t>(i)]);
    return r;
  }
};

}  // namespace

TEST(Attribution, LinearModelClosedForms) {
  LinearCase c;
  const MatrixD wy = c.rows();
  EXPECT_LT((attribution::saliency(c.model, c.x, c.y).values - wy.cwiseAbs()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((attribution::input_x_gradient(c.model, c.x, c.y).values - c.x.cwiseProduct(wy)).cwiseAbs().maxCoeff(),
            1e-12);
  const auto ig = attribution::integrated_gradients(c.model, c.x, c.y, 3);
  EXPECT_LT((ig.values - c.x.cwiseProduct(wy)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(ig.method, "integrated_gradients");
  EXPECT_EQ(ig.labels, c.y);
}

TEST(Attribution, IntegratedGradientsUsesBaseline) {
  LinearCase c;
  const MatrixD base = MatrixD::Constant(2, 16, 0.25);
  const auto ig = attribution::integrated_gradients(c.model, c.x, base, c.y, 2);
  EXPECT_LT((ig.values - (c.x - base).cwiseProduct(c.rows())).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Attribution, ConstantModelGivesZeroMaps) {
  LinearCase c;
  c.model.network().parameters()[0]->value.setZero();
  EXPECT_EQ(attribution::saliency(c.model, c.x, c.y).values.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(attribution::input_x_gradient(c.model, c.x, c.y).values.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(attribution::integrated_gradients(c.model, c.x, c.y).values.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(attribution::occlusion(c.model, c.x, c.y).values.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Occlusion, SinglePixelWindowsMatchLinearOracle) {
  LinearCase c;
  // Drop from zeroing pixel j alone is w_yj · (x_j − fill).
  const auto m = attribution::occlusion(c.model, c.x, c.y, 1, 1, 0.5);
  EXPECT_LT((m.values - (c.x.array() - 0.5).matrix().cwiseProduct(c.rows())).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Occlusion, DisjointWindowsSpreadPatchDrop) {
  LinearCase c;
  const auto m = attribution::occlusion(c.model, c.x, c.y, 2, 2);
  const MatrixD contrib = c.x.cwiseProduct(c.rows());
  for (int i = 0; i < 2; ++i)
    for (int py = 0; py < 4; ++py)
      for (int px = 0; px < 4; ++px) {
        const int oy = py / 2 * 2, ox = px / 2 * 2;
        double patch = 0;
        for (int y = oy; y < oy + 2; ++y)
          for (int x = ox; x < ox + 2; ++x) patch += contrib(i, y * 4 + x);
        EXPECT_NEAR(m.values(i, py * 4 + px), patch, 1e-12);
      }
}

TEST(Occlusion, CoverageCountsOverlappingWindows) {
  const auto cov = attribution::occlusion_coverage(Shape{1, 8, 8}, 4, 2);
  EXPECT_EQ(cov.sum(), 9 * 16);
  EXPECT_EQ(cov(0), 1);
  EXPECT_EQ(cov(2 * 8 + 2), 4);
  EXPECT_EQ(cov(3 * 8 + 0), 2);
  EXPECT_EQ(cov(7 * 8 + 7), 1);
  EXPECT_EQ(attribution::occlusion_coverage(Shape{1, 32, 32}, 4, 2).minCoeff(), 1);
  // With stride 3 on width 8 the origins are 0 and 3; column 7 stays uncovered.
  EXPECT_EQ(attribution::window_origins(8, 4, 3), (std::vector<int>{0, 3}));
  EXPECT_EQ(attribution::occlusion_coverage(Shape{1, 8, 8}, 4, 3)(7), 0);
}

TEST(Attribution, IntegratedGradientsIsCompleteOnCnn) {
  const auto model = models::Classifier<float>(tiny_spec(), 6).cast<double>();
  const MatrixD x = uniform<double>(3, 64, 8);
  const std::vector<int> y{0, 1, 3};
  const auto ig = attribution::integrated_gradients(model, x, y, 256);
  const MatrixD z = model.logits(x);
  const MatrixD z0 = model.logits(MatrixD::Zero(3, 64));
  for (int i = 0; i < 3; ++i) {
    const double gap = z(i, y[static_cast<std::size_t>(i)]) - z0(i, y[static_cast<std::size_t>(i)]);
    EXPECT_NEAR(ig.values.row(i).sum(), gap, 0.01 * std::abs(gap) + 1e-9) << "sample " << i;
  }
}

TEST(Attribution, WorksInSinglePrecision) {
  const models::Classifier<float> model(tiny_spec(), 6);
  const MatrixF x = uniform<float>(2, 64, 8);
  const std::vector<int> y{1, 2};
  EXPECT_EQ(attribution::saliency(model, x, y).values.cols(), 64);
  EXPECT_EQ(attribution::occlusion(model, x, y).values.rows(), 2);
}

TEST(Attribution, InvalidArgumentsAreRejected) {
  LinearCase c;
  EXPECT_THROW(attribution::integrated_gradients(c.model, c.x, c.y, 0), std::invalid_argument);
  EXPECT_THROW(attribution::integrated_gradients(c.model, c.x, MatrixD(MatrixD::Zero(1, 16)), c.y), ShapeError);
  EXPECT_THROW(attribution::saliency(c.model, c.x, std::vector<int>{0}), ShapeError);
  EXPECT_THROW(attribution::saliency(c.model, c.x, std::vector<int>{0, 3}), std::out_of_range);
  EXPECT_THROW(attribution::occlusion(c.model, c.x, c.y, 5, 1), std::invalid_argument);
  EXPECT_THROW(attribution::occlusion(c.model, c.x, c.y, 2, 0), std::invalid_argument);
}
