#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "patchformer/data.hpp"
#include "patchformer/model.hpp"
#include "patchformer/training.hpp"

namespace patchformer::cli {

// Resolved settings shared by every subcommand. Field names double as flag
// names and config-file keys.
struct RunConfig {
  std::string data;        // CSV path; empty means synthetic data
  std::string synth_spec;  // key=value spec file for the generator
  std::size_t synth_channels = 19;
  std::size_t synth_length = 49415;
  std::uint64_t synth_seed = 0;
  std::string target;                // univariate target channel
  std::vector<std::string> targets;  // all_at_once / average channel subset

  std::size_t seq_len = 96;
  std::size_t pred_len = 96;
  std::size_t patch_len = 16;
  std::size_t stride = 8;
  std::size_t d_model = 512;
  std::size_t n_heads = 16;
  std::size_t d_k = 0;
  std::size_t d_v = 0;
  std::size_t e_layers = 2;
  std::size_t d_layers = 1;
  std::size_t d_ff = 2048;
  double dropout = 0.1;
  std::string norm_scope = "global";

  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double lr = 1e-4;
  std::uint64_t seed = 0;
  std::string mode = "multivariate";
  std::string output_dir = "runs";

  ModelConfig model_config(std::size_t channels) const;
  TrainConfig train_config() const;
  std::string dataset_name() const;
};

// Table loaded from `data` or generated from the synthetic settings.
TimeSeriesTable load_dataset(const RunConfig& cfg);

// Channel subset split chronologically and scaled with train statistics.
struct PreparedData {
  std::vector<std::string> channels;
  Scaler scaler;
  DataSplits scaled;
};
PreparedData prepare_data(const TimeSeriesTable& table, const std::vector<std::string>& channels,
                          std::size_t seq_len, std::size_t pred_len);

// Entry point; returns the process exit code (0 ok, 1 usage/config, 2 data,
// 3 numerical failure).
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace patchformer::cli
