#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "patchformer/tensor.hpp"

namespace patchformer {

// Dense row-major matrix of reals.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return std::span<const double>(data).subspan(r * cols, cols); }
  std::vector<double> column(std::size_t c) const;
  // Rows [begin, end).
  Matrix rows_range(std::size_t begin, std::size_t end) const;
  Tensor to_tensor() const;

  bool operator==(const Matrix&) const = default;
};

// T timestamped observations of C named channels.
struct TimeSeriesTable {
  std::vector<std::string> timestamps;
  std::vector<std::string> channel_names;
  Matrix values;  // (T, C)
  std::string target_channel;

  std::size_t length() const { return values.rows; }
  std::size_t channels() const { return values.cols; }
  std::size_t channel_index(const std::string& name) const;  // ConfigError if absent
  TimeSeriesTable rows_range(std::size_t begin, std::size_t end) const;

  bool operator==(const TimeSeriesTable&) const = default;
};

// Seconds since the epoch for "YYYY-MM-DD", "YYYY-MM-DD HH:MM[:SS]" (space or
// 'T' separator), or a plain integer index. nullopt if unparseable.
std::optional<std::int64_t> parse_timestamp(const std::string& text);
// Inverse of parse_timestamp for the calendar forms, "YYYY-MM-DD HH:MM:SS".
std::string format_timestamp(std::int64_t seconds);

struct CsvSchema {
  std::string date_column = "date";
  std::string target_channel;  // optional; must exist when set
};

// First column timestamps, remaining columns numeric. Missing cells,
// non-numeric cells, and non-increasing timestamps are DataErrors naming the
// offending line and column.
TimeSeriesTable load_csv(const std::string& path, const CsvSchema& schema = {});
void write_csv(const std::string& path, const TimeSeriesTable& table);
std::string format_real(double v);  // shortest text that parses back to v

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct DataSplits {
  TimeSeriesTable train;
  TimeSeriesTable val;
  TimeSeriesTable test;
};

// Contiguous, ordered, non-overlapping segments with boundaries at
// floor(T * cumulative ratio). Each segment must hold at least min_len rows.
DataSplits chronological_split(const TimeSeriesTable& table, const SplitRatios& ratios, std::size_t min_len);

// Per-channel z-score with population standard deviation floored at 1e-8.
struct Scaler {
  std::vector<double> mean;
  std::vector<double> std;

  static constexpr double kStdFloor = 1e-8;

  static Scaler fit(const TimeSeriesTable& train);
  TimeSeriesTable apply(const TimeSeriesTable& table) const;
  TimeSeriesTable invert(const TimeSeriesTable& table) const;
  // Matrix forms with an explicit column -> scaler channel map.
  Matrix apply(const Matrix& values, std::span<const std::size_t> channels) const;
  Matrix invert(const Matrix& values, std::span<const std::size_t> channels) const;

  bool operator==(const Scaler&) const = default;
};

struct WindowSample {
  Matrix enc_input;  // (I, C)
  Matrix dec_known;  // (label_len, C): last label_len rows of enc_input
  Matrix target;     // (O, C): rows following enc_input
  std::size_t origin = 0;
};

std::size_t window_count(std::size_t table_len, std::size_t seq_len, std::size_t pred_len);
// One window per start t = 0 .. T - I - O, stride 1.
std::vector<WindowSample> make_windows(const TimeSeriesTable& table, std::size_t seq_len, std::size_t pred_len);
WindowSample make_window(const TimeSeriesTable& table, std::size_t origin, std::size_t seq_len, std::size_t pred_len);

// (label_len + O, C): the known half followed by O zero rows.
Matrix build_decoder_input(const WindowSample& sample, std::size_t pred_len);
// Tensor form used by the model: (N, I) -> (N, floor(I/2) + O), differentiable.
Tensor build_decoder_input(const Tensor& enc, std::size_t pred_len);

// Restricts a table to the named channels, in the given order.
TimeSeriesTable select_channels(const TimeSeriesTable& table, std::span<const std::string> names);

struct SyntheticSpec {
  std::size_t channels = 19;
  std::size_t length = 49415;
  std::uint64_t seed = 0;
  double noise_std = 0.1;
  double daily_amplitude = 1.0;
  double weekly_amplitude = 0.4;
  double trend_slope = 2e-5;  // per step
  double ghg_electricity = 0.6;
  double ghg_gas = 0.3;
  double building_coupling = 0.5;  // weight of the campus channel in building channels
  std::string start = "2015-07-24 00:00:00";
  std::int64_t interval_seconds = 3600;

  // Keys match the field names; unknown keys are a ConfigError.
  static SyntheticSpec from_key_values(const std::map<std::string, std::string>& kv);
  static SyntheticSpec from_file(const std::string& path);
  void validate() const;
};

// Deterministic draw of each channel's composition from the spec seed.
struct ChannelComponents {
  std::string name;
  double level = 0.0;
  double daily_amplitude = 0.0;
  double daily_phase = 0.0;
  double weekly_amplitude = 0.0;
  double weekly_phase = 0.0;
  double trend = 0.0;
  double noise_std = 0.0;
  bool clip_at_zero = false;  // renewables: no negative generation
};

std::vector<std::string> synthetic_channel_names(std::size_t channels);
std::vector<ChannelComponents> synthetic_components(const SyntheticSpec& spec);
// Named multi-energy channels (electricity, gas, heat, renewables, ghg, then
// per-building variants). ghg = ghg_electricity * electricity +
// ghg_gas * gas + its own noise.
TimeSeriesTable generate_synthetic_multienergy(const SyntheticSpec& spec);

// Flat "key = value" file; '#' starts a comment.
std::map<std::string, std::string> read_key_values(const std::string& path);

}  // namespace patchformer
