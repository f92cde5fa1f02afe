#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "mst/errors.hpp"
#include "mst/grad_check.hpp"
#include "mst/loss.hpp"
#include "test_util.hpp"

namespace mst {
namespace {

using Td = Tensor<double>;

Td leaf(std::vector<double> v) {
  const std::size_t n = v.size();
  return Td::leaf({n}, std::move(v));
}

TEST(PositionLoss, Examples) {
  EXPECT_EQ(position_loss(Td({3}, {1, 2, 3}), Td({3}, {1, 2, 3})).item(), 0.0);
  EXPECT_DOUBLE_EQ(position_loss(Td({3}, {1, 2, 2}), Td({3}, {0, 0, 0})).item(), 3.0);
}

TEST(PositionLoss, GradientIsUnitResidual) {
  const auto x_hat = leaf({1.0, -0.5, 2.0});
  const Td x0({3}, {0.2, 0.3, -1.0});
  position_loss(x_hat, x0).backward();
  const double n = std::sqrt(0.8 * 0.8 + 0.8 * 0.8 + 3.0 * 3.0);
  const double expected[3] = {0.8 / n, -0.8 / n, 3.0 / n};
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(x_hat.grad()[i], expected[i], 1e-12);
  std::vector<Parameter<double>> params{{"x_hat", x_hat}};
  EXPECT_LT(grad_check([&] { return position_loss(x_hat, x0); }, params).max_rel_error, 1e-6);
}

TEST(OrientationLoss, Examples) {
  const Td q0({4}, {0.5, 0.5, 0.5, 0.5});
  EXPECT_NEAR(orientation_loss(Td({4}, {2.5, 2.5, 2.5, 2.5}), q0).item(), 0.0, 1e-12);
  EXPECT_NEAR(orientation_loss(Td({4}, {0, 1, 0, 0}), Td({4}, {1, 0, 0, 0})).item(), std::numbers::sqrt2, 1e-12);
  EXPECT_THROW(orientation_loss(Td({4}, {0, 0, 0, 1e-9}), q0), DegenerateOrientationError);
}

TEST(OrientationLoss, GradientAndScaleInvariance) {
  for (std::uint64_t seed : {1, 2, 3, 4}) {
    const auto r = test::random_tensor<double>({4}, seed);
    const auto q_hat = leaf({r.data().begin(), r.data().end()});
    const Td q0({4}, {0.6, 0.0, 0.8, 0.0});
    std::vector<Parameter<double>> params{{"q_hat", q_hat}};
    EXPECT_LT(grad_check([&] { return orientation_loss(q_hat, q0); }, params).max_rel_error, 1e-5);
    for (double k : {0.1, 3.0, 250.0}) {
      EXPECT_NEAR(orientation_loss(scale(q_hat, k), q0).item(), orientation_loss(q_hat, q0).item(), 1e-12);
    }
  }
}

TEST(PoseLoss, Examples) {
  const auto zero = LossParams<double>::make(0, 0);
  EXPECT_EQ(pose_loss(Td::scalar(0), Td::scalar(0), zero).item(), 0.0);

  const auto p = LossParams<double>::make(0, -3);
  const double expected = 1.0 + 0.1 * std::exp(3.0) - 3.0;
  const double value = pose_loss(Td::scalar(1.0), Td::scalar(0.1), p).item();
  EXPECT_NEAR(value, expected, 1e-12);
  EXPECT_NEAR(value, 0.0085537, 1e-7);
}

TEST(PoseLoss, ScaleGradientVanishesAtUnitLoss) {
  const auto p = LossParams<double>::make(0, 0);
  pose_loss(Td::scalar(1.0), Td::scalar(0.5), p).backward();
  EXPECT_EQ(p.s_x.grad()[0], 0.0);
  EXPECT_NEAR(p.s_q.grad()[0], 0.5, 1e-15);
}

TEST(PoseLoss, StationaryPointAtLogLoss) {
  for (double l_x : {0.05, 0.7, 3.0, 40.0}) {
    const auto p = LossParams<double>::make(std::log(l_x), 0);
    pose_loss(Td::scalar(l_x), Td::scalar(1.0), p).backward();
    EXPECT_NEAR(p.s_x.grad()[0], 0.0, 1e-12);
    auto f = [&](double s) { return l_x * std::exp(-s) + s; };
    const double h = 1e-5, s = std::log(l_x);
    EXPECT_NEAR((f(s + h) - f(s - h)) / (2 * h), 0.0, 1e-8);
    EXPECT_LT(f(s), f(s + 0.1));
    EXPECT_LT(f(s), f(s - 0.1));
  }
}

TEST(PoseLoss, LinearInComponentLosses) {
  const auto p = LossParams<double>::make(0.3, -1.2);
  auto f = [&](double lx, double lq) { return pose_loss(Td::scalar(lx), Td::scalar(lq), p).item(); };
  const double base = f(0, 0);
  EXPECT_NEAR(f(2.0, 0.5) - base, 2.0 * (f(1, 0) - base) + 0.5 * (f(0, 1) - base), 1e-12);
  EXPECT_NEAR(f(4.0, 0) - base, 4.0 * (f(1, 0) - base), 1e-12);
}

TEST(PoseLoss, GradientsReachAllInputs) {
  const auto lx = Td::leaf({}, {0.7});
  const auto lq = Td::leaf({}, {0.2});
  auto p = LossParams<double>::make(0.4, -2.0);
  std::vector<Parameter<double>> params = p.parameters();
  params.push_back({"lx", lx});
  params.push_back({"lq", lq});
  EXPECT_EQ(p.parameters()[0].name, "loss.s_x");
  EXPECT_EQ(p.parameters()[1].name, "loss.s_q");
  EXPECT_LT(grad_check([&] { return pose_loss(lx, lq, p); }, params).max_rel_error, 1e-6);
}

TEST(NllScene, Examples) {
  const double l4 = -std::log(4.0);
  EXPECT_NEAR(nll_scene(Td({4}, {l4, l4, l4, l4}), 2).item(), std::log(4.0), 1e-12);
  EXPECT_NEAR(nll_scene(Td({4}, {l4, l4, l4, l4}), 2).item(), 1.3863, 1e-4);
  EXPECT_EQ(nll_scene(Td({3}, {-5, 0, -7}), 1).item(), 0.0);
  EXPECT_THROW(nll_scene(Td({3}, {-5, 0, -7}), 3), ContractError);
}

TEST(NllScene, GradientThroughClassifier) {
  const auto x_out = test::random_tensor<double>({3, 8}, 1);
  const auto q_out = test::random_tensor<double>({3, 8}, 2);
  const auto w = test::random_tensor<double>({16, 1}, 3, 0.5);
  LinearParams<double> fc{Td::leaf({16, 1}, {w.data().begin(), w.data().end()}), Td::leaf({1}, {0.1})};
  std::vector<Parameter<double>> params{{"w", fc.weight}};
  EXPECT_LT(grad_check([&] { return nll_scene(classify_scene(x_out, q_out, fc), 1); }, params).max_rel_error, 1e-5);
}

ForwardOutput<double> fake_output(std::vector<double> x, std::vector<double> q, std::vector<double> logprobs) {
  ForwardOutput<double> out;
  out.x_hat = Td({3}, std::move(x));
  out.q_hat = Td({4}, std::move(q));
  const std::size_t n = logprobs.size();
  out.scene_logprobs = Td({n}, std::move(logprobs));
  return out;
}

TEST(MultisceneLoss, Examples) {
  Pose target;
  target.position = {1, 2, 3};
  target.orientation = {0.6, 0, 0.8, 0};
  const auto p = LossParams<double>::make(0, 0);
  EXPECT_NEAR(multiscene_loss(fake_output({1, 2, 3}, {0.6, 0, 0.8, 0}, {-1e9, 0.0}), target, 1, p).item(), 0.0, 1e-12);
  const double l4 = -std::log(4.0);
  EXPECT_NEAR(multiscene_loss(fake_output({1, 2, 3}, {3, 0, 4, 0}, {l4, l4, l4, l4}), target, 0, p).item(),
              1.3863, 1e-4);
}

TEST(MultisceneLoss, TargetOrientationIsSignCanonicalized) {
  Pose target;
  target.orientation = {-0.6, 0, -0.8, 0};
  const auto p = LossParams<double>::make(0, 0);
  EXPECT_NEAR(multiscene_loss(fake_output({0, 0, 0}, {0.6, 0, 0.8, 0}, {0.0}), target, 0, p).item(), 0.0, 1e-12);
}

TEST(MultisceneLoss, ComposesComponents) {
  Pose target;
  target.position = {0.5, -1, 2};
  target.orientation = canonical({0.3, -0.2, 0.9, 0.1});
  const auto p = LossParams<double>::make(0.2, -3);
  const auto out = fake_output({0.1, 0.2, 0.3}, {1, 0.5, -0.2, 0.3}, {-0.2, -2.0, -3.0});
  const double lx = position_loss(out.x_hat, position_tensor<double>(target)).item();
  const double lq = orientation_loss(out.q_hat, orientation_tensor<double>(target)).item();
  const double expected = lx * std::exp(-0.2) + 0.2 + lq * std::exp(3.0) - 3.0 + 2.0;
  EXPECT_NEAR(multiscene_loss(out, target, 1, p).item(), expected, 1e-12);
}

}  // namespace
}  // namespace mst
