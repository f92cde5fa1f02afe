#include <gtest/gtest.h>

#include <cmath>

#include "mst/errors.hpp"
#include "mst/grad_check.hpp"
#include "mst/ops.hpp"
#include "mst/tensor.hpp"
#include "test_util.hpp"

namespace mst {
namespace {

TEST(Tensor, ConstructionChecksExtents) {
  Tensor<float> t({2, 3}, std::vector<float>(6, 1.0f));
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), ShapeError);
  EXPECT_THROW(Tensor<float>({2, 0}, {}), ShapeError);
}

TEST(Tensor, ScalarAndIndexing) {
  const auto s = Tensor<double>::scalar(4.5);
  EXPECT_EQ(s.rank(), 0u);
  EXPECT_EQ(s.item(), 4.5);
  const Tensor<double> m({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(m.at({1, 0}), 3.0);
  EXPECT_THROW(m.at({2, 0}), ShapeError);
  EXPECT_THROW(m.at({0}), ShapeError);
  EXPECT_THROW(m.item(), ContractError);
}

TEST(Tensor, ConstantsHaveNoNodeTrackedResultsHaveOne) {
  const Tensor<double> a({2}, {1, 2});
  const Tensor<double> b({2}, {3, 4});
  EXPECT_FALSE(add(a, b).has_node());
  EXPECT_FALSE(add(a, b).requires_grad());

  const auto p = Tensor<double>::leaf({2}, {1, 2});
  EXPECT_FALSE(p.has_node());
  const auto c = add(p, b);
  EXPECT_TRUE(c.has_node());
  EXPECT_STREQ(c.op_name(), "add");
}

TEST(Tensor, NoGradGuardSuppressesGraph) {
  const auto p = Tensor<double>::leaf({2}, {1, 2});
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    EXPECT_FALSE(mul(p, p).has_node());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(mul(p, p).has_node());
}

TEST(Backward, SumGivesOnes) {
  const auto p = Tensor<double>::leaf({3}, {0.5, -1, 2});
  sum(p).backward();
  for (double g : p.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwiceInput) {
  const auto p = Tensor<double>::leaf({3}, {0.5, -1, 2});
  sum(mul(p, p)).backward();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(p.grad()[i], 2 * p.data()[i]);
}

TEST(Backward, RepeatedCallsAccumulateIntoLeaves) {
  auto p = Tensor<double>::leaf({2}, {1, 3});
  const auto root = sum(mul(p, p));
  root.backward();
  root.backward();
  EXPECT_DOUBLE_EQ(p.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(p.grad()[1], 12.0);
  p.zero_grad();
  root.backward();
  EXPECT_DOUBLE_EQ(p.grad()[1], 6.0);
}

TEST(Backward, RejectsNonScalarOrUntrackedRoot) {
  const auto p = Tensor<double>::leaf({2}, {1, 3});
  EXPECT_THROW(mul(p, p).backward(), ContractError);
  EXPECT_THROW(Tensor<double>::scalar(1.0).backward(), ContractError);
}

TEST(Backward, DiamondAccumulatesAllPaths) {
  // f = sum(e*e + e*p) with e = exp(p/2): df/dp = e^2 + e + e*p/2.
  const auto p = Tensor<double>::leaf({4}, {-1.0, 0.0, 0.5, 2.0});
  const auto e = exp(scale(p, 0.5));
  sum(add(mul(e, e), mul(e, p))).backward();
  for (std::size_t i = 0; i < 4; ++i) {
    const double x = p.data()[i];
    const double ei = std::exp(0.5 * x);
    EXPECT_NEAR(p.grad()[i], ei * ei + ei + 0.5 * ei * x, 1e-12);
  }

  std::vector<Parameter<double>> params{{"p", p}};
  const auto r = grad_check([&] { const auto ee = exp(scale(p, 0.5)); return sum(add(mul(ee, ee), mul(ee, p))); },
                            params);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Backward, VisitsEachNodeOnce) {
  // A node reached by 3 paths must run its backward exactly once.
  const auto p = Tensor<double>::leaf({1}, {2.0});
  int calls = 0;
  auto shared = make_result<double>("probe", {1}, {p.data()[0]}, {p}, [&calls](const TensorImpl<double>& out) {
    ++calls;
    (void)out;
  });
  auto shared_ref = shared;
  const auto root = sum(add(add(shared, shared), mul(shared, shared_ref)));
  root.backward();
  EXPECT_EQ(calls, 1);
}

TEST(Backward, DetachCutsGraph) {
  const auto p = Tensor<double>::leaf({2}, {1, 2});
  const auto d = mul(p, p).detach();
  EXPECT_FALSE(d.has_node());
  EXPECT_FALSE(d.requires_grad());
  EXPECT_EQ(d.data()[1], 4.0);
}

TEST(Backward, GradientShapeMatchesValue) {
  const auto w = Tensor<double>::leaf({3, 2}, {1, 2, 3, 4, 5, 6});
  const auto x = test::random_tensor<double>({4, 3}, 3);
  sum(matmul(x, w)).backward();
  EXPECT_EQ(w.grad().size(), w.numel());
}

}  // namespace
}  // namespace mst
