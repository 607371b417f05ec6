#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "patchformer/errors.hpp"
#include "patchformer/training.hpp"
#include "test_util.hpp"

using namespace patchformer;
using patchformer::test::random_tensor;
using patchformer::test::random_values;

namespace {

ModelConfig tiny_config(std::size_t channels = 1) {
  ModelConfig c;
  c.seq_len = 16;
  c.pred_len = 8;
  c.channels = channels;
  c.patch_len = 4;
  c.stride = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.dropout = 0.0;
  c.seed = 1;
  return c;
}

TimeSeriesTable wave_table(std::size_t t, std::size_t c, double noise = 0.0, std::uint64_t seed = 0) {
  Rng rng(seed);
  TimeSeriesTable table;
  table.values = Matrix(t, c);
  for (std::size_t i = 0; i < t; ++i) {
    table.timestamps.push_back(std::to_string(i));
    for (std::size_t j = 0; j < c; ++j) {
      table.values(i, j) = std::sin(0.4 * i + j) + noise * rng.normal();
    }
  }
  for (std::size_t j = 0; j < c; ++j) table.channel_names.push_back("c" + std::to_string(j));
  return table;
}

DataSplits splits_of(const TimeSeriesTable& t) {
  DataSplits s;
  s.train = t.rows_range(0, t.length() * 7 / 10);
  s.val = t.rows_range(t.length() * 7 / 10, t.length());
  s.test = s.val;
  return s;
}

// Scalar Adam written out directly for one parameter entry.
struct ScalarAdam {
  double m = 0.0, v = 0.0;
  int t = 0;
  double step(double theta, double g, double lr) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    return theta - lr * mh / (std::sqrt(vh) + 1e-8);
  }
};

}  // namespace

TEST(Loss, MseAndMaeExamples) {
  const Tensor pred({2, 2}, {1, 2, 3, 4}), target({2, 2}, {0, 0, 3, 6});
  // squared errors 1, 4, 0, 4 -> 2.25; absolute 1, 2, 0, 2 -> 1.25
  EXPECT_DOUBLE_EQ(mse_loss(pred, target).item(), 2.25);
  EXPECT_DOUBLE_EQ(mae_metric(pred, target), 1.25);
  const Tensor p2({2}, {1, 4}), t2({2}, {3, 5});
  EXPECT_DOUBLE_EQ(mse_loss(p2, t2).item(), 2.5);
  EXPECT_DOUBLE_EQ(mae_metric(p2, t2), 1.5);
  EXPECT_THROW(mse_loss(pred, Tensor({4})), DimensionError);
}

TEST(Loss, MseGradientIsTwoDiffOverN) {
  Rng rng(1);
  Tensor pred = random_tensor(rng, {3, 4}, -1, 1, true);
  const Tensor target = random_tensor(rng, {3, 4});
  mse_loss(pred, target).backward();
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_NEAR(pred.grad()[i], 2.0 * (pred.values()[i] - target.values()[i]) / 12.0, 1e-15);
  }
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterStore store(0);
  Tensor w = store.add("w", Tensor({2}, {1.0, 1.0}));
  w.mutable_grad()[0] = 3.0;
  w.mutable_grad()[1] = -0.02;
  AdamState adam(0.1);
  adam_step(store, adam);
  EXPECT_NEAR(w.values()[0], 0.9, 1e-8);
  EXPECT_NEAR(w.values()[1], 1.1, 1e-6);
  EXPECT_FALSE(w.has_grad());
  EXPECT_EQ(adam.step, 1u);
}

TEST(Adam, MatchesScalarOracleOverManySteps) {
  ParameterStore store(0);
  Rng rng(2);
  Tensor w = store.add("w", random_tensor(rng, {5}));
  Tensor b = store.add("b", random_tensor(rng, {2}));
  std::vector<double> theta = test::to_vector(w), beta = test::to_vector(b);
  std::vector<ScalarAdam> ow(5), ob(2);
  AdamState adam(0.01);
  for (int step = 0; step < 100; ++step) {
    const auto gw = random_values(rng, 5, -2, 2), gb = random_values(rng, 2, -2, 2);
    std::copy(gw.begin(), gw.end(), w.mutable_grad().begin());
    std::copy(gb.begin(), gb.end(), b.mutable_grad().begin());
    adam_step(store, adam);
    for (int i = 0; i < 5; ++i) theta[i] = ow[i].step(theta[i], gw[i], 0.01);
    for (int i = 0; i < 2; ++i) beta[i] = ob[i].step(beta[i], gb[i], 0.01);
  }
  for (int i = 0; i < 5; ++i) EXPECT_NEAR(w.values()[i], theta[i], 1e-12);
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(b.values()[i], beta[i], 1e-12);
}

TEST(Adam, ZeroGradientAndZeroRateLeaveParameters) {
  ParameterStore store(0);
  Rng rng(3);
  Tensor w = store.add("w", random_tensor(rng, {4}));
  const auto before = test::to_vector(w);
  w.mutable_grad();  // allocated, all zeros
  AdamState adam(0.5);
  adam_step(store, adam);
  EXPECT_EQ(test::to_vector(w), before);

  AdamState frozen(0.0);
  for (int i = 0; i < 3; ++i) {
    for (double& g : w.mutable_grad()) g = 7.0;
    adam_step(store, frozen);
  }
  EXPECT_EQ(test::to_vector(w), before);
}

TEST(Adam, MissingGradientIsAnError) {
  ParameterStore store(0);
  store.add("w", Tensor({2}, 1.0));
  AdamState adam;
  EXPECT_THROW(adam_step(store, adam), TrainingError);
}

TEST(Batch, RowLayoutIsWindowMajor) {
  const auto t = wave_table(40, 2);
  const std::size_t origins[] = {3, 10};
  auto [x, y] = make_batch(t, origins, 16, 8);
  ASSERT_EQ(x.shape(), (Shape{4, 16}));
  ASSERT_EQ(y.shape(), (Shape{4, 8}));
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 2; ++c) {
      for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(x.at({b * 2 + c, i}), t.values(origins[b] + i, c));
      for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(y.at({b * 2 + c, i}), t.values(origins[b] + 16 + i, c));
    }
  const std::size_t late[] = {20};
  EXPECT_THROW(make_batch(t, late, 16, 8), DataError);
}

TEST(Evaluate, PerfectAndRepeatLastPredictors) {
  const auto t = wave_table(50, 2);
  // Oracle predictor: look the target up by matching the input window.
  const Predictor oracle = [&](const Tensor& x) {
    const std::size_t n = x.dim(0);
    Tensor out({n, 8});
    auto o = out.mutable_values();
    for (std::size_t r = 0; r < n; ++r) {
      const std::size_t c = r % 2;
      for (std::size_t origin = 0; origin + 24 <= 50; ++origin) {
        bool match = true;
        for (std::size_t i = 0; i < 16 && match; ++i) match = x.at({r, i}) == t.values(origin + i, c);
        if (!match) continue;
        for (std::size_t k = 0; k < 8; ++k) o[r * 8 + k] = t.values(origin + 16 + k, c);
        break;
      }
    }
    return out;
  };
  const auto perfect = evaluate(oracle, t, 16, 8);
  EXPECT_EQ(perfect.mse, 0.0);
  EXPECT_EQ(perfect.mae, 0.0);
  EXPECT_EQ(perfect.n, 27u * 8 * 2);

  TimeSeriesTable flat = t;
  for (double& v : flat.values.data) v = 3.25;
  const auto rl = evaluate(repeat_last_predictor(8), flat, 16, 8);
  EXPECT_EQ(rl.mse, 0.0);
  EXPECT_EQ(rl.mae, 0.0);
}

TEST(Evaluate, RepeatLastMatchesHandComputation) {
  const auto t = wave_table(30, 1);
  double sq = 0.0, ab = 0.0;
  std::size_t n = 0;
  for (std::size_t o = 0; o + 20 <= 30; ++o) {
    const double last = t.values(o + 9, 0);
    for (std::size_t k = 0; k < 10; ++k) {
      const double d = last - t.values(o + 10 + k, 0);
      sq += d * d;
      ab += std::abs(d);
      ++n;
    }
  }
  const auto r = evaluate(repeat_last_predictor(10), t, 10, 10);
  EXPECT_NEAR(r.mse, sq / n, 1e-12);
  EXPECT_NEAR(r.mae, ab / n, 1e-12);
  ASSERT_EQ(r.horizon_mse.size(), 10u);
  EXPECT_NEAR(std::accumulate(r.horizon_mse.begin(), r.horizon_mse.end(), 0.0) / 10, r.mse, 1e-12);
  EXPECT_TRUE(r.consistent());
  EXPECT_LE(r.mae * r.mae, r.mse + 1e-15);
}

TEST(Evaluate, UnscaleUsesRawUnits) {
  const auto raw = wave_table(30, 2);
  TimeSeriesTable shifted = raw;
  for (std::size_t i = 0; i < 30; ++i) shifted.values(i, 1) = raw.values(i, 1) * 5 + 100;
  const Scaler s = Scaler::fit(shifted);
  const auto scaled = s.apply(shifted);
  EvalOptions opt;
  opt.unscale = &s;
  const auto direct = evaluate(repeat_last_predictor(4), shifted, 8, 4);
  const auto via_scale = evaluate(repeat_last_predictor(4), scaled, 8, 4, opt);
  EXPECT_NEAR(via_scale.mse, direct.mse, 1e-9);
  EXPECT_NEAR(via_scale.mae, direct.mae, 1e-9);
}

TEST(Evaluate, OrderIndependentAndBatchIndependent) {
  const PatchformerModel m(tiny_config(2));
  const auto t = wave_table(60, 2, 0.1);
  const auto base = evaluate(m, t);
  const std::size_t count = window_count(60, 16, 8);
  EvalOptions opt;
  opt.order.resize(count);
  std::iota(opt.order.begin(), opt.order.end(), 0);
  Rng rng(4);
  rng.shuffle(std::span<std::size_t>(opt.order));
  opt.batch_windows = 5;
  const auto shuffled = evaluate(m, t, opt);
  EXPECT_NEAR(shuffled.mse, base.mse, 1e-12);
  EXPECT_NEAR(shuffled.mae, base.mae, 1e-12);
  EXPECT_TRUE(base.consistent());
  opt.order.pop_back();
  EXPECT_THROW(evaluate(m, t, opt), ConfigError);
}

TEST(Evaluate, AverageReports) {
  MetricReport a, b;
  a.mse = 1.0, a.mae = 0.5, a.n = 4;
  b.mse = 3.0, b.mae = 1.5, b.n = 4;
  const MetricReport reports[] = {a, b};
  const auto avg = average_reports(reports);
  EXPECT_EQ(avg.mse, 2.0);
  EXPECT_EQ(avg.mae, 1.0);
  EXPECT_THROW(average_reports({}), ConfigError);
}

TEST(Modes, ChannelSets) {
  const auto t = wave_table(10, 3);
  const std::string targets[] = {"c2", "c0"};
  using Sets = std::vector<std::vector<std::string>>;
  EXPECT_EQ(mode_channel_sets(t, Mode::multivariate, {}), (Sets{{"c0", "c1", "c2"}}));
  EXPECT_EQ(mode_channel_sets(t, Mode::univariate, targets), (Sets{{"c2"}}));
  EXPECT_EQ(mode_channel_sets(t, Mode::all_at_once, targets), (Sets{{"c2", "c0"}}));
  EXPECT_EQ(mode_channel_sets(t, Mode::average, targets), (Sets{{"c2"}, {"c0"}}));
  const std::string unknown[] = {"zz"};
  EXPECT_THROW(mode_channel_sets(t, Mode::average, unknown), ConfigError);
  EXPECT_THROW(mode_channel_sets(t, Mode::all_at_once, {}), ConfigError);
  EXPECT_EQ(parse_mode("S"), Mode::univariate);
  EXPECT_EQ(parse_mode("all-at-once"), Mode::all_at_once);
  EXPECT_EQ(to_string(parse_mode("average")), "average");
  EXPECT_THROW(parse_mode("mixed"), ConfigError);
}

TEST(Train, OverfitsSmallSeries) {
  ModelConfig c = tiny_config(1);
  PatchformerModel m(c);
  TrainConfig tc;
  tc.epochs = 40;
  tc.batch_size = 8;
  tc.lr = 3e-3;
  const auto result = train(m, splits_of(wave_table(120, 1)), tc);
  ASSERT_EQ(result.epochs.size(), 40u);
  EXPECT_LT(result.epochs.back().train_mse, 0.2 * result.initial_train_mse)
      << "initial " << result.initial_train_mse << " final " << result.epochs.back().train_mse;
  // 60 train windows in batches of 8: 8 steps per epoch, last one partial.
  EXPECT_EQ(result.step_losses.size(), 40u * 8);
  EXPECT_GE(result.best_epoch, 1u);
  EXPECT_EQ(result.best_val_mse, result.epochs[result.best_epoch - 1].val_mse);
}

TEST(Train, SameSeedIsBitwiseReproducible) {
  ModelConfig c = tiny_config(2);
  c.dropout = 0.1;
  const auto data = splits_of(wave_table(100, 2, 0.05));
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 4;
  tc.lr = 1e-3;
  tc.seed = 9;
  auto run = [&](std::uint64_t train_seed) {
    PatchformerModel m(c);
    TrainConfig cfg = tc;
    cfg.seed = train_seed;
    auto r = train(m, data, cfg);
    return std::make_pair(r, m.parameters().snapshot());
  };
  const auto [r1, p1] = run(9);
  const auto [r2, p2] = run(9);
  EXPECT_EQ(r1.epochs, r2.epochs);
  EXPECT_EQ(r1.step_losses, r2.step_losses);
  EXPECT_EQ(p1, p2);
  const auto [r3, p3] = run(10);
  EXPECT_NE(r1.step_losses, r3.step_losses);
}

TEST(Train, EpochCallbackAndValidation) {
  PatchformerModel m(tiny_config(1));
  TrainConfig tc;
  tc.epochs = 2;
  std::vector<EpochRecord> seen;
  const auto r = train(m, splits_of(wave_table(100, 1)), tc, [&](const EpochRecord& e) { seen.push_back(e); });
  EXPECT_EQ(seen, r.epochs);
  EXPECT_EQ(seen[1].epoch, 2u);
  tc.batch_size = 0;
  EXPECT_THROW(train(m, splits_of(wave_table(100, 1)), tc), ConfigError);
  tc.batch_size = 4;
  EXPECT_THROW(train(m, splits_of(wave_table(30, 1)), tc), DataError);
}

TEST(Train, NonFiniteLossNamesEpochAndBatch) {
  PatchformerModel m(tiny_config(1));
  auto data = splits_of(wave_table(100, 1));
  data.train.values(5, 0) = std::numeric_limits<double>::infinity();
  TrainConfig tc;
  tc.epochs = 1;
  tc.record_initial_loss = false;
  try {
    train(m, data, tc);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos);
  }
}
