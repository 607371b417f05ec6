#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "patchformer/data.hpp"
#include "patchformer/model.hpp"
#include "patchformer/parameter_store.hpp"

namespace patchformer {

// Mean of squared differences over every entry; differentiable.
Tensor mse_loss(const Tensor& pred, const Tensor& target);
// Mean absolute difference; evaluation only.
double mae_metric(const Tensor& pred, const Tensor& target);

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;

  explicit AdamState(double learning_rate = 1e-4) : lr(learning_rate) {}
};

// One bias-corrected Adam update of every parameter, then clears the grads.
// A parameter without a gradient is a TrainingError.
void adam_step(ParameterStore& params, AdamState& state);

struct MetricReport {
  double mse = 0.0;
  double mae = 0.0;
  std::size_t n = 0;                // window * step * channel count
  std::vector<double> horizon_mse;  // per prediction step
  std::vector<double> horizon_mae;

  // n > 0, non-negative metrics, mae^2 <= mse (up to rounding).
  bool consistent() const;
  bool operator==(const MetricReport&) const = default;
};

// Arithmetic mean of mse and mae across reports (the "average" protocol).
MetricReport average_reports(std::span<const MetricReport> reports);

// Maps (N, I) scaled sequences to (N, O) forecasts.
using Predictor = std::function<Tensor(const Tensor&)>;

Predictor model_predictor(const PatchformerModel& model);
// Emits the final observed value for every horizon step.
Predictor repeat_last_predictor(std::size_t pred_len);

struct EvalOptions {
  std::size_t batch_windows = 64;
  // When set, predictions and targets are mapped back to raw units
  // (column c uses scaler channel c) before scoring.
  const Scaler* unscale = nullptr;
  // Visit windows in this order instead of chronologically.
  std::vector<std::size_t> order;
};

// Scores every stride-1 window of the split. Each window's contribution is
// summed in window-index order regardless of `order`.
MetricReport evaluate(const Predictor& predictor, const TimeSeriesTable& split, std::size_t seq_len,
                      std::size_t pred_len, const EvalOptions& options = {});
MetricReport evaluate(const PatchformerModel& model, const TimeSeriesTable& split, const EvalOptions& options = {});

// Channel-selection protocols.
enum class Mode {
  multivariate,  // every channel of the table
  univariate,    // a single target channel
  all_at_once,   // one model over a named channel subset
  average,       // one single-channel model per named channel, metrics averaged
};

std::string to_string(Mode mode);
Mode parse_mode(const std::string& text);

// Channel sets that each need their own model under `mode`. Univariate uses
// targets[0] or the table's target channel; unknown names are ConfigErrors.
std::vector<std::vector<std::string>> mode_channel_sets(const TimeSeriesTable& table, Mode mode,
                                                        std::span<const std::string> targets);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  std::size_t eval_batch_windows = 64;
  // Evaluate the untrained model on the train split first.
  bool record_initial_loss = true;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mse = 0.0;  // mean over the epoch's batches, training mode
  double train_mae = 0.0;
  double val_mse = 0.0;
  double val_mae = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct TrainResult {
  double initial_train_mse = 0.0;  // evaluation mode, before the first step
  double initial_train_mae = 0.0;
  std::vector<EpochRecord> epochs;
  std::vector<double> step_losses;
  std::size_t best_epoch = 0;
  double best_val_mse = 0.0;
  ParameterStore::Snapshot best_params;
};

// Seeded shuffle per epoch, last partial batch kept, loss over the O
// forecast steps only. A non-finite loss aborts with NumericalError naming
// the epoch and batch.
TrainResult train(PatchformerModel& model, const DataSplits& scaled, const TrainConfig& cfg,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

// (B * C, I) inputs and (B * C, O) targets for the given window origins;
// row b * C + c holds channel c of window b.
std::pair<Tensor, Tensor> make_batch(const TimeSeriesTable& table, std::span<const std::size_t> origins,
                                     std::size_t seq_len, std::size_t pred_len);

}  // namespace patchformer
