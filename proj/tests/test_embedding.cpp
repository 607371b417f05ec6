#include <gtest/gtest.h>

#include <cmath>

#include "patchformer/embedding.hpp"
#include "patchformer/errors.hpp"
#include "patchformer/gradcheck.hpp"
#include "patchformer/ops.hpp"
#include "test_util.hpp"

using namespace patchformer;
using patchformer::test::random_values;

namespace {

PatchConfig cfg_of(std::size_t p, std::size_t s, std::size_t d = 4, std::size_t zmax = 64) {
  PatchConfig c;
  c.patch_len = p;
  c.stride = s;
  c.d_model = d;
  c.max_patches = zmax;
  return c;
}

// Brute force: slide a window of P over the series extended by S copies of
// its last value and count every window that fits.
std::vector<std::vector<double>> sliding_oracle(const std::vector<double>& x, std::size_t p, std::size_t s) {
  std::vector<double> ext = x;
  for (std::size_t i = 0; i < s; ++i) ext.push_back(x.back());
  std::vector<std::vector<double>> rows;
  for (std::size_t start = 0; start + p <= ext.size(); start += s) {
    rows.emplace_back(ext.begin() + static_cast<std::ptrdiff_t>(start),
                      ext.begin() + static_cast<std::ptrdiff_t>(start + p));
  }
  return rows;
}

}  // namespace

TEST(PatchCount, WorkedExamples) {
  EXPECT_EQ(compute_patch_count(96, cfg_of(16, 8)), 12u);
  EXPECT_EQ(compute_patch_count(336, cfg_of(16, 8)), 42u);
  EXPECT_EQ(compute_patch_count(16, cfg_of(16, 8)), 2u);
  EXPECT_EQ(compute_patch_count(10, cfg_of(4, 2)), 5u);
  // (I - P) not a multiple of S rounds down.
  EXPECT_EQ(compute_patch_count(11, cfg_of(4, 2)), 5u);
}

TEST(PatchCount, MatchesSlidingWindowOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t p = 1 + rng.below(12);
    const std::size_t s = 1 + rng.below(p);
    const std::size_t len = p + rng.below(60);
    const auto x = random_values(rng, len);
    const auto rows = sliding_oracle(x, p, s);
    const PatchConfig c = cfg_of(p, s);
    ASSERT_EQ(compute_patch_count(len, c), rows.size()) << "I=" << len << " P=" << p << " S=" << s;
    const PatchGrid grid = patch_series(x, c);
    ASSERT_EQ(grid.rows, rows.size());
    for (std::size_t z = 0; z < grid.rows; ++z) {
      const auto r = grid.row(z);
      ASSERT_EQ(std::vector<double>(r.begin(), r.end()), rows[z]);
    }
    const auto idx = patch_source_indices(len, c);
    ASSERT_EQ(idx.size(), grid.values.size());
    for (std::size_t i = 0; i < idx.size(); ++i) ASSERT_EQ(x[idx[i]], grid.values[i]);
  }
}

TEST(PatchCount, Errors) {
  EXPECT_THROW(compute_patch_count(3, cfg_of(4, 2)), DataError);
  EXPECT_THROW(compute_patch_count(10, cfg_of(4, 5)), ConfigError);
  EXPECT_THROW(compute_patch_count(10, cfg_of(4, 0)), ConfigError);
  EXPECT_THROW(compute_patch_count(10, cfg_of(0, 0)), ConfigError);
}

TEST(PadSeries, Examples) {
  const std::vector<double> x = {1, 2, 3};
  EXPECT_EQ(pad_series(x, 2), (std::vector<double>{1, 2, 3, 3, 3}));
  EXPECT_EQ(pad_series(x, 0), x);
  EXPECT_THROW(pad_series(std::vector<double>{}, 2), DataError);
}

TEST(PatchSeries, WorkedExample) {
  std::vector<double> x(10);
  for (int i = 0; i < 10; ++i) x[i] = i + 1;
  const PatchGrid g = patch_series(x, cfg_of(4, 2));
  ASSERT_EQ(g.rows, 5u);
  const std::vector<std::vector<double>> want = {
      {1, 2, 3, 4}, {3, 4, 5, 6}, {5, 6, 7, 8}, {7, 8, 9, 10}, {9, 10, 10, 10}};
  for (std::size_t z = 0; z < 5; ++z) {
    const auto r = g.row(z);
    EXPECT_EQ(std::vector<double>(r.begin(), r.end()), want[z]) << "row " << z;
  }
}

TEST(PatchEmbed, ZeroWeightsGivePositions) {
  const PatchConfig c = cfg_of(16, 8, 512, 12);
  ParameterStore store(3);
  const auto params = make_embedding_params(store, c, "emb");
  Tensor w = params.value_weight;
  for (double& v : w.mutable_values()) v = 0.0;
  Rng rng(1);
  const auto x = random_values(rng, 96);
  const Tensor out = patch_embed(x, params, c);
  ASSERT_EQ(out.shape(), (Shape{12, 512}));
  const auto pos = params.pos_embed.values();
  for (std::size_t i = 0; i < out.numel(); ++i) ASSERT_EQ(out.values()[i], pos[i]);
}

TEST(PatchEmbed, ZeroSeriesGivesPositions) {
  const PatchConfig c = cfg_of(4, 2, 6, 10);
  ParameterStore store(5);
  const auto params = make_embedding_params(store, c, "emb");
  const std::vector<double> x(10, 0.0);
  const Tensor out = patch_embed(x, params, c);
  ASSERT_EQ(out.shape(), (Shape{5, 6}));
  for (std::size_t i = 0; i < out.numel(); ++i) EXPECT_EQ(out.values()[i], params.pos_embed.values()[i]);
}

TEST(PatchEmbed, AffineInSeries) {
  // e(a x + b y) - pos == a (e(x) - pos) + b (e(y) - pos)
  const PatchConfig c = cfg_of(4, 2, 5, 8);
  ParameterStore store(6);
  const auto params = make_embedding_params(store, c, "emb");
  Rng rng(2);
  const auto x = random_values(rng, 12);
  const auto y = random_values(rng, 12);
  std::vector<double> comb(12);
  for (int i = 0; i < 12; ++i) comb[i] = 2.0 * x[i] - 0.5 * y[i];
  const Tensor ex = patch_embed(x, params, c), ey = patch_embed(y, params, c), ec = patch_embed(comb, params, c);
  const auto pos = params.pos_embed.values();
  for (std::size_t i = 0; i < ec.numel(); ++i) {
    const double lhs = ec.values()[i] - pos[i];
    const double rhs = 2.0 * (ex.values()[i] - pos[i]) - 0.5 * (ey.values()[i] - pos[i]);
    EXPECT_NEAR(lhs, rhs, 1e-12);
  }
}

TEST(PatchEmbed, BatchedMatchesSingle) {
  const PatchConfig c = cfg_of(6, 3, 4, 16);
  ParameterStore store(7);
  const auto params = make_embedding_params(store, c, "emb");
  Rng rng(3);
  const auto a = random_values(rng, 30), b = random_values(rng, 30);
  std::vector<double> both = a;
  both.insert(both.end(), b.begin(), b.end());
  const Tensor batched = patch_embed(Tensor({2, 30}, both), params, c);
  const Tensor ea = patch_embed(a, params, c), eb = patch_embed(b, params, c);
  ASSERT_EQ(batched.shape(), (Shape{2, ea.dim(0), 4}));
  for (std::size_t i = 0; i < ea.numel(); ++i) {
    EXPECT_EQ(batched.values()[i], ea.values()[i]);
    EXPECT_EQ(batched.values()[ea.numel() + i], eb.values()[i]);
  }
}

TEST(PatchEmbed, CapacityAndLengthErrors) {
  const PatchConfig c = cfg_of(16, 8, 4, 11);
  ParameterStore store(0);
  const auto params = make_embedding_params(store, c, "emb");
  EXPECT_THROW(patch_embed(std::vector<double>(96, 1.0), params, c), CapacityError);
  EXPECT_THROW(patch_embed(std::vector<double>(8, 1.0), params, c), DataError);
  EXPECT_NO_THROW(patch_embed(std::vector<double>(88, 1.0), params, c));
}

TEST(PatchEmbed, GradientsThroughWeightsAndInput) {
  const PatchConfig c = cfg_of(4, 2, 3, 8);
  ParameterStore store(8);
  const auto params = make_embedding_params(store, c, "emb");
  Rng rng(4);
  Tensor x = store.add("x", Tensor({2, 11}, random_values(rng, 22)));
  const Tensor r({2, 5, 3}, random_values(rng, 30));
  auto report = finite_diff_check([&] { return sum(mul(square(patch_embed(x, params, c)), r)); }, store, 1e-6, 1e-5);
  EXPECT_TRUE(report.passed());
}
