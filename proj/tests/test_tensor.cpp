#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "patchformer/errors.hpp"
#include "patchformer/ops.hpp"
#include "patchformer/rng.hpp"
#include "test_util.hpp"

using namespace patchformer;
using patchformer::test::random_tensor;
using patchformer::test::to_vector;

TEST(Tensor, ConstructionAndAccess) {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.at({1, 2}), 6.0);
  EXPECT_FALSE(t.requires_grad());
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_THROW(t.item(), DimensionError);
  EXPECT_EQ(Tensor::scalar(4.5).item(), 4.5);
}

TEST(Tensor, DetachCopiesValuesWithoutHistory) {
  Tensor w({2}, {1, 2}, true);
  Tensor d = square(w).detach();
  EXPECT_FALSE(d.requires_grad());
  EXPECT_EQ(to_vector(d), (std::vector<double>{1, 4}));
  EXPECT_FALSE(d.same_storage(w));
}

TEST(Autodiff, SumGivesOnes) {
  Tensor w({3}, {0.5, -1, 2}, true);
  sum(w).backward();
  EXPECT_EQ(to_vector(Tensor({3}, std::vector<double>(w.grad().begin(), w.grad().end()))),
            (std::vector<double>{1, 1, 1}));
}

TEST(Autodiff, SumOfSquares) {
  Tensor w({2}, {1, 2}, true);
  sum(square(w)).backward();
  EXPECT_EQ(w.grad()[0], 2.0);
  EXPECT_EQ(w.grad()[1], 4.0);
}

TEST(Autodiff, DetachedTensorGetsNoGrad) {
  Tensor w({2}, {1, 2}, true);
  Tensor c({2}, {3, 4});
  sum(mul(w, c)).backward();
  EXPECT_FALSE(c.has_grad());
  EXPECT_TRUE(w.has_grad());
  Tensor d = w.detach();
  Tensor w2({2}, {1, 1}, true);
  sum(mul(d, w2)).backward();
  EXPECT_FALSE(d.has_grad());
}

TEST(Autodiff, NonScalarLossThrows) {
  Tensor w({2}, {1, 2}, true);
  EXPECT_THROW(square(w).backward(), DimensionError);
}

TEST(Autodiff, RepeatedBackwardAccumulates) {
  Tensor w({2}, {1, 2}, true);
  Tensor loss = sum(square(w));
  loss.backward();
  loss.backward();
  EXPECT_EQ(w.grad()[0], 4.0);
  EXPECT_EQ(w.grad()[1], 8.0);
  w.zero_grad();
  EXPECT_FALSE(w.has_grad());
}

TEST(Autodiff, ThreeOpChainMatchesHandDerivative) {
  // loss = sum(3 * x^2 + x) => d/dx = 6x + 1; every step is exact in binary.
  Tensor x({3}, {0.5, -2, 4}, true);
  Tensor loss = sum(add(scale(square(x), 3.0), x));
  loss.backward();
  EXPECT_EQ(loss.item(), 3 * (0.25 + 4 + 16) + (0.5 - 2 + 4));
  EXPECT_EQ(x.grad()[0], 4.0);
  EXPECT_EQ(x.grad()[1], -11.0);
  EXPECT_EQ(x.grad()[2], 25.0);
}

TEST(Autodiff, SharedSubexpressionAccumulatesBothPaths) {
  Tensor x({1}, {3}, true);
  Tensor y = square(x);
  sum(mul(y, y)).backward();  // x^4 -> 4x^3
  EXPECT_DOUBLE_EQ(x.grad()[0], 108.0);
}

TEST(Autodiff, NoGradGuardStopsHistory) {
  Tensor w({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    Tensor y = square(w);
    EXPECT_FALSE(y.requires_grad());
    EXPECT_FALSE(grad_mode_enabled());
  }
  EXPECT_TRUE(grad_mode_enabled());
  EXPECT_TRUE(square(w).requires_grad());
}

TEST(Softmax, Examples) {
  auto half = softmax_lastdim(Tensor({2}, {0, 0}));
  EXPECT_EQ(to_vector(half), (std::vector<double>{0.5, 0.5}));
  // e^0 / (e^0 + e^ln3) = 1/4
  auto q = softmax_lastdim(Tensor({2}, {0, std::log(3.0)}));
  EXPECT_NEAR(q.values()[0], 0.25, 1e-15);
  EXPECT_NEAR(q.values()[1], 0.75, 1e-15);
  auto big = softmax_lastdim(Tensor({2}, {1000, 1000}));
  EXPECT_EQ(to_vector(big), (std::vector<double>{0.5, 0.5}));
  EXPECT_THROW(softmax_lastdim(Tensor({2, 0})), DimensionError);
}

TEST(Softmax, RowsSumToOneAndShiftInvariant) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t rows = 1 + rng.below(6);
    const std::size_t n = 1 + rng.below(20);
    Tensor x = random_tensor(rng, {rows, n}, -30, 30);
    const double c = rng.uniform(-100, 100);
    Tensor y = softmax_lastdim(x);
    Tensor ys = softmax_lastdim(add_scalar(x, c));
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double v = y.values()[r * n + j];
        EXPECT_GE(v, 0.0);
        total += v;
        EXPECT_NEAR(v, ys.values()[r * n + j], 1e-12);
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(Relu, ExamplesAndSlopes) {
  EXPECT_EQ(to_vector(relu(Tensor({3}, {-1, 0, 2}))), (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(to_vector(relu(Tensor({2}, {-3, -0.5}))), (std::vector<double>{0, 0}));
  Tensor x({3}, {2, -2, 0}, true);
  sum(relu(x)).backward();
  EXPECT_EQ(x.grad()[0], 1.0);
  EXPECT_EQ(x.grad()[1], 0.0);
  EXPECT_EQ(x.grad()[2], 0.0);
}

TEST(MeanVar, Examples) {
  const std::size_t all[] = {0};
  auto m = mean_var(Tensor({4}, {1, 2, 3, 4}), all);
  EXPECT_EQ(m.mean.item(), 2.5);
  EXPECT_EQ(m.var.item(), 1.25);
  auto c = mean_var(Tensor({3}, {7, 7, 7}), all);
  EXPECT_EQ(c.var.item(), 0.0);
  auto s = mean_var(Tensor({1}, {-4}), all);
  EXPECT_EQ(s.mean.item(), -4.0);
  EXPECT_EQ(s.var.item(), 0.0);
  EXPECT_THROW(mean_var(Tensor({2}, {1, 2}), std::span<const std::size_t>()), DimensionError);
  const std::size_t dup[] = {0, 0};
  EXPECT_THROW(mean_var(Tensor({2}, {1, 2}), dup), DimensionError);
}

TEST(MeanVar, KeepsReducedAxes) {
  Tensor x({2, 3, 4});
  const std::size_t axes[] = {1, 2};
  auto m = mean_var(x, axes);
  EXPECT_EQ(m.mean.shape(), (Shape{2, 1, 1}));
  EXPECT_EQ(m.var.shape(), (Shape{2, 1, 1}));
}

TEST(Matmul, MatchesNaiveProduct) {
  Rng rng(3);
  Tensor a = random_tensor(rng, {2, 3, 4});
  Tensor b = random_tensor(rng, {4, 5});
  Tensor c = matmul(a, b);
  ASSERT_EQ(c.shape(), (Shape{2, 3, 5}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 4; ++k) s += a.at({n, i, k}) * b.at({k, j});
        EXPECT_NEAR(c.at({n, i, j}), s, 1e-14);
      }
  Tensor bb = random_tensor(rng, {2, 4, 5});
  Tensor d = matmul(a, bb);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 4; ++k) s += a.at({n, i, k}) * bb.at({n, k, j});
        EXPECT_NEAR(d.at({n, i, j}), s, 1e-14);
      }
}

TEST(Matmul, ShapeMismatchNamesShapes) {
  try {
    matmul(Tensor({3, 2}), Tensor({3, 2}));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("(3, 2)"), std::string::npos);
  }
  EXPECT_THROW(matmul(Tensor({2, 3, 4}), Tensor({3, 4, 5})), DimensionError);
}

TEST(ShapeOps, ReshapeAndFlattenPreserveOrder) {
  std::vector<double> v(24);
  std::iota(v.begin(), v.end(), 0.0);
  Tensor x({2, 3, 4}, v);
  EXPECT_EQ(to_vector(reshape(x, {4, 6})), v);
  EXPECT_EQ(flatten(x).shape(), (Shape{24}));
  EXPECT_EQ(flatten(x, 1).shape(), (Shape{2, 12}));
  EXPECT_EQ(to_vector(flatten(x, 1)), v);
  EXPECT_EQ(to_vector(reshape(flatten(x, 1), {2, 3, 4})), v);
  EXPECT_THROW(reshape(x, {5, 5}), DimensionError);
}

TEST(ShapeOps, TransposeSwapsLastAxes) {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor t = transpose(x);
  EXPECT_EQ(t.shape(), (Shape{3, 2}));
  EXPECT_EQ(to_vector(t), (std::vector<double>{1, 4, 2, 5, 3, 6}));
}

TEST(ShapeOps, ConcatAndSlice) {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 1}, {5, 6});
  const Tensor parts[] = {a, b};
  Tensor c = concat(parts, 1);
  EXPECT_EQ(c.shape(), (Shape{2, 3}));
  EXPECT_EQ(to_vector(c), (std::vector<double>{1, 2, 5, 3, 4, 6}));
  EXPECT_EQ(to_vector(slice(c, 1, 1, 3)), (std::vector<double>{2, 5, 4, 6}));
  EXPECT_EQ(to_vector(slice(c, 0, 1, 2)), (std::vector<double>{3, 4, 6}));
  EXPECT_THROW(slice(c, 1, 2, 4), DimensionError);
  const Tensor bad[] = {a, Tensor({3, 1})};
  EXPECT_THROW(concat(bad, 1), DimensionError);
}

TEST(ShapeOps, GatherLast) {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  const std::size_t idx[] = {2, 0, 2};
  EXPECT_EQ(to_vector(gather_last(x, idx)), (std::vector<double>{3, 1, 3, 6, 4, 6}));
}

TEST(Broadcast, VectorAddAlongLastAxis) {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({3}, {10, 20, 30});
  EXPECT_EQ(to_vector(add(x, b)), (std::vector<double>{11, 22, 33, 14, 25, 36}));
  Tensor col({2, 1}, {100, 200});
  EXPECT_EQ(to_vector(add(x, col)), (std::vector<double>{101, 102, 103, 204, 205, 206}));
  EXPECT_THROW(add(x, Tensor({2})), DimensionError);
}

TEST(Dropout, IdentityWhenInactive) {
  Rng rng(1);
  Tensor x = random_tensor(rng, {4, 5});
  EXPECT_TRUE((Dropout{0.0, true, &rng}(x).same_storage(x)));
  EXPECT_TRUE((Dropout{0.7, false, nullptr}(x).same_storage(x)));
}

TEST(Dropout, TrainingMaskIsInverted) {
  Rng rng(2);
  Tensor x({1000}, 1.0);
  Tensor y = Dropout{0.25, true, &rng}(x);
  std::size_t zeros = 0;
  for (double v : y.values()) {
    if (v == 0.0) {
      ++zeros;
    } else {
      EXPECT_DOUBLE_EQ(v, 1.0 / 0.75);
    }
  }
  EXPECT_GT(zeros, 180u);
  EXPECT_LT(zeros, 320u);
}

TEST(Dropout, SeededAndValidated) {
  Rng a(5), b(5);
  Tensor x({50}, 1.0);
  EXPECT_EQ(to_vector(Dropout{0.5, true, &a}(x)), to_vector(Dropout{0.5, true, &b}(x)));
  EXPECT_THROW((Dropout{1.0, true, &a}(x)), ConfigError);
  EXPECT_THROW((Dropout{-0.1, true, &a}(x)), ConfigError);
  EXPECT_THROW((Dropout{0.5, true, nullptr}(x)), ConfigError);
}
