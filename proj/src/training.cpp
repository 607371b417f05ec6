#include "patchformer/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "patchformer/errors.hpp"
#include "patchformer/ops.hpp"
#include "patchformer/rng.hpp"

namespace patchformer {

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mse_loss shape mismatch: " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
  }
  return mean(square(sub(pred, target)));
}

double mae_metric(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mae shape mismatch: " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
  }
  const auto p = pred.values();
  const auto t = target.values();
  if (p.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - t[i]);
  return s / static_cast<double>(p.size());
}

void adam_step(ParameterStore& params, AdamState& state) {
  const auto& entries = params.entries();
  if (state.m.empty()) {
    for (const auto& e : entries) {
      state.m.emplace_back(e.tensor.numel(), 0.0);
      state.v.emplace_back(e.tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != entries.size()) throw TrainingError("optimizer state does not match the parameter store");
  for (const auto& e : entries) {
    if (!e.tensor.has_grad()) throw TrainingError("parameter '" + e.name + "' has no gradient");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor p = entries[i].tensor;
    const auto g = p.grad();
    auto theta = p.mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != theta.size()) throw TrainingError("optimizer state size mismatch for '" + entries[i].name + "'");
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double m_hat = m[j] / c1;
      const double v_hat = v[j] / c2;
      theta[j] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
  params.zero_grads();
}

bool MetricReport::consistent() const {
  if (n == 0) return false;
  if (!(mse >= 0.0) || !(mae >= 0.0)) return false;
  return mae * mae <= mse * (1.0 + 1e-12) + 1e-300;
}

MetricReport average_reports(std::span<const MetricReport> reports) {
  if (reports.empty()) throw ConfigError("cannot average zero reports");
  MetricReport out;
  for (const auto& r : reports) {
    out.mse += r.mse;
    out.mae += r.mae;
    out.n += r.n;
  }
  out.mse /= static_cast<double>(reports.size());
  out.mae /= static_cast<double>(reports.size());
  return out;
}

Predictor model_predictor(const PatchformerModel& model) {
  return [&model](const Tensor& x) { return model.forward_sequences(x); };
}

Predictor repeat_last_predictor(std::size_t pred_len) {
  return [pred_len](const Tensor& x) {
    const std::size_t n = x.dim(0);
    const std::size_t i_len = x.dim(1);
    const auto in = x.values();
    std::vector<double> out(n * pred_len);
    for (std::size_t r = 0; r < n; ++r) {
      std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(r * pred_len), pred_len, in[r * i_len + i_len - 1]);
    }
    return Tensor({n, pred_len}, std::move(out));
  };
}

std::pair<Tensor, Tensor> make_batch(const TimeSeriesTable& table, std::span<const std::size_t> origins,
                                     std::size_t seq_len, std::size_t pred_len) {
  const std::size_t c_len = table.channels();
  const std::size_t rows = origins.size() * c_len;
  std::vector<double> x(rows * seq_len);
  std::vector<double> y(rows * pred_len);
  for (std::size_t b = 0; b < origins.size(); ++b) {
    const std::size_t t0 = origins[b];
    if (t0 + seq_len + pred_len > table.length()) {
      throw DataError("window at " + std::to_string(t0) + " runs past the end of the split");
    }
    for (std::size_t c = 0; c < c_len; ++c) {
      const std::size_t r = b * c_len + c;
      for (std::size_t i = 0; i < seq_len; ++i) x[r * seq_len + i] = table.values(t0 + i, c);
      for (std::size_t o = 0; o < pred_len; ++o) y[r * pred_len + o] = table.values(t0 + seq_len + o, c);
    }
  }
  return {Tensor({rows, seq_len}, std::move(x)), Tensor({rows, pred_len}, std::move(y))};
}

MetricReport evaluate(const Predictor& predictor, const TimeSeriesTable& split, std::size_t seq_len,
                      std::size_t pred_len, const EvalOptions& options) {
  const std::size_t count = window_count(split.length(), seq_len, pred_len);
  if (count == 0) {
    throw DataError("split of length " + std::to_string(split.length()) + " holds no window of " +
                    std::to_string(seq_len + pred_len) + " rows");
  }
  const std::size_t c_len = split.channels();
  if (options.unscale && options.unscale->mean.size() < c_len) {
    throw ConfigError("scaler covers fewer channels than the split");
  }
  std::vector<std::size_t> order = options.order;
  if (order.empty()) {
    order.resize(count);
    std::iota(order.begin(), order.end(), 0);
  } else if (order.size() != count) {
    throw ConfigError("evaluation order must list every window exactly once");
  }
  const std::size_t batch = std::max<std::size_t>(1, options.batch_windows);

  // Per-window sums, combined afterwards in window-index order so the result
  // does not depend on visiting order or batch size.
  std::vector<double> sq(count * pred_len, 0.0);
  std::vector<double> ab(count * pred_len, 0.0);
  std::vector<bool> seen(count, false);

  NoGradGuard no_grad;
  for (std::size_t start = 0; start < count; start += batch) {
    const std::size_t end = std::min(count, start + batch);
    std::span<const std::size_t> origins(order.data() + start, end - start);
    for (std::size_t w : origins) {
      if (w >= count || seen[w]) throw ConfigError("evaluation order must list every window exactly once");
      seen[w] = true;
    }
    auto [x, y] = make_batch(split, origins, seq_len, pred_len);
    const Tensor pred = predictor(x);
    if (pred.shape() != y.shape()) {
      throw DimensionError("predictor returned " + to_string(pred.shape()) + ", expected " + to_string(y.shape()));
    }
    const auto p = pred.values();
    const auto t = y.values();
    for (std::size_t b = 0; b < origins.size(); ++b) {
      const std::size_t w = origins[b];
      for (std::size_t c = 0; c < c_len; ++c) {
        const std::size_t r = b * c_len + c;
        const double scale = options.unscale ? options.unscale->std[c] : 1.0;
        for (std::size_t o = 0; o < pred_len; ++o) {
          // The mean shift cancels in the difference.
          const double d = (p[r * pred_len + o] - t[r * pred_len + o]) * scale;
          sq[w * pred_len + o] += d * d;
          ab[w * pred_len + o] += std::abs(d);
        }
      }
    }
  }

  MetricReport report;
  report.n = count * pred_len * c_len;
  report.horizon_mse.assign(pred_len, 0.0);
  report.horizon_mae.assign(pred_len, 0.0);
  double total_sq = 0.0;
  double total_ab = 0.0;
  for (std::size_t w = 0; w < count; ++w) {
    for (std::size_t o = 0; o < pred_len; ++o) {
      total_sq += sq[w * pred_len + o];
      total_ab += ab[w * pred_len + o];
      report.horizon_mse[o] += sq[w * pred_len + o];
      report.horizon_mae[o] += ab[w * pred_len + o];
    }
  }
  const double per_step = static_cast<double>(count * c_len);
  for (std::size_t o = 0; o < pred_len; ++o) {
    report.horizon_mse[o] /= per_step;
    report.horizon_mae[o] /= per_step;
  }
  report.mse = total_sq / static_cast<double>(report.n);
  report.mae = total_ab / static_cast<double>(report.n);
  if (!std::isfinite(report.mse) || !std::isfinite(report.mae)) {
    throw NumericalError("evaluation produced a non-finite metric");
  }
  return report;
}

MetricReport evaluate(const PatchformerModel& model, const TimeSeriesTable& split, const EvalOptions& options) {
  return evaluate(model_predictor(model), split, model.config().seq_len, model.config().pred_len, options);
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::multivariate: return "multivariate";
    case Mode::univariate: return "univariate";
    case Mode::all_at_once: return "all_at_once";
    case Mode::average: return "average";
  }
  return "?";
}

Mode parse_mode(const std::string& text) {
  if (text == "multivariate" || text == "M") return Mode::multivariate;
  if (text == "univariate" || text == "S") return Mode::univariate;
  if (text == "all_at_once" || text == "all-at-once") return Mode::all_at_once;
  if (text == "average") return Mode::average;
  throw ConfigError("unknown mode '" + text + "' (expected multivariate, univariate, all_at_once or average)");
}

std::vector<std::vector<std::string>> mode_channel_sets(const TimeSeriesTable& table, Mode mode,
                                                        std::span<const std::string> targets) {
  for (const auto& t : targets) table.channel_index(t);
  switch (mode) {
    case Mode::multivariate:
      return {table.channel_names};
    case Mode::univariate: {
      std::string target = targets.empty() ? table.target_channel : targets.front();
      if (target.empty()) target = table.channel_names.back();
      table.channel_index(target);
      return {{target}};
    }
    case Mode::all_at_once:
    case Mode::average: {
      if (targets.empty()) throw ConfigError("mode " + to_string(mode) + " needs at least one target channel");
      std::vector<std::string> uniq;
      for (const auto& t : targets) {
        if (std::find(uniq.begin(), uniq.end(), t) != uniq.end()) {
          throw ConfigError("target channel '" + t + "' listed twice");
        }
        uniq.push_back(t);
      }
      if (mode == Mode::all_at_once) return {uniq};
      std::vector<std::vector<std::string>> out;
      for (const auto& t : uniq) out.push_back({t});
      return out;
    }
  }
  return {};
}

TrainResult train(PatchformerModel& model, const DataSplits& scaled, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  const ModelConfig& mc = model.config();
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw ConfigError("learning rate must be a finite non-negative number");
  if (scaled.train.channels() != scaled.val.channels()) throw DataError("train and validation channels differ");

  const std::size_t count = window_count(scaled.train.length(), mc.seq_len, mc.pred_len);
  if (count == 0) {
    throw DataError("training split of length " + std::to_string(scaled.train.length()) + " holds no window of " +
                    std::to_string(mc.seq_len + mc.pred_len) + " rows");
  }

  EvalOptions eval_opts;
  eval_opts.batch_windows = cfg.eval_batch_windows;

  TrainResult result;
  if (cfg.record_initial_loss) {
    const MetricReport init = evaluate(model, scaled.train, eval_opts);
    result.initial_train_mse = init.mse;
    result.initial_train_mae = init.mae;
  }

  ParameterStore& store = model.parameters();
  store.zero_grads();
  AdamState adam(cfg.lr);
  const Rng root(cfg.seed);
  Rng shuffle_rng = root.fork(1);
  Rng dropout_rng = root.fork(2);
  const Dropout dropout{mc.dropout, true, &dropout_rng};

  std::vector<std::size_t> origins(count);
  result.best_val_mse = std::numeric_limits<double>::infinity();
  result.best_params = store.snapshot();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(origins.begin(), origins.end(), 0);
    shuffle_rng.shuffle(std::span<std::size_t>(origins));

    double sum_sq = 0.0;
    double sum_ab = 0.0;
    std::size_t entries = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < count; start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(count, start + cfg.batch_size);
      auto [x, y] = make_batch(scaled.train, std::span<const std::size_t>(origins.data() + start, end - start),
                               mc.seq_len, mc.pred_len);
      const Tensor pred = model.forward_sequences(x, dropout);
      const Tensor loss = mse_loss(pred, y);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch_index));
      }
      loss.backward();
      adam_step(store, adam);
      result.step_losses.push_back(value);
      sum_sq += value * static_cast<double>(y.numel());
      sum_ab += mae_metric(pred, y) * static_cast<double>(y.numel());
      entries += y.numel();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mse = sum_sq / static_cast<double>(entries);
    rec.train_mae = sum_ab / static_cast<double>(entries);
    const MetricReport val = evaluate(model, scaled.val, eval_opts);
    rec.val_mse = val.mse;
    rec.val_mae = val.mae;
    if (val.mse < result.best_val_mse) {
      result.best_val_mse = val.mse;
      result.best_epoch = epoch;
      result.best_params = store.snapshot();
    }
    result.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (cfg.epochs == 0) result.best_val_mse = evaluate(model, scaled.val, eval_opts).mse;
  return result;
}

}  // namespace patchformer
