#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "patchformer/attention.hpp"
#include "patchformer/embedding.hpp"
#include "patchformer/ops.hpp"
#include "patchformer/parameter_store.hpp"

namespace patchformer {

// Which entries share one mean and standard deviation in layer_norm.
enum class NormScope {
  global,   // all Z * D entries of a sequence (default)
  per_row,  // each patch row separately over D
};

std::string to_string(NormScope scope);
NormScope parse_norm_scope(const std::string& text);

struct LayerNormParams {
  Tensor gamma;  // (D)
  Tensor beta;   // (D)
  double epsilon = 1e-5;
  NormScope scope = NormScope::global;
};

struct FeedForwardParams {
  Tensor w1;  // (D, d_ff)
  Tensor b1;  // (d_ff)
  Tensor w2;  // (d_ff, D)
  Tensor b2;  // (D)
};

struct EncoderLayerParams {
  AttentionParams self_attn;
  LayerNormParams norm1;
  LayerNormParams norm2;
  FeedForwardParams ffn;
};

struct DecoderLayerParams {
  AttentionParams self_attn;
  AttentionParams cross_attn;
  LayerNormParams norm1;
  LayerNormParams norm2;
  LayerNormParams norm3;
  FeedForwardParams ffn;
};

LayerNormParams make_layer_norm_params(ParameterStore& store, std::size_t d_model, const std::string& prefix,
                                       double epsilon = 1e-5, NormScope scope = NormScope::global);
FeedForwardParams make_feed_forward_params(ParameterStore& store, std::size_t d_model, std::size_t d_ff,
                                           const std::string& prefix);

// gamma * (x - mu) / (sigma + eps) + beta with population statistics.
// x is (..., Z, D); the global scope reduces over the last two axes.
Tensor layer_norm(const Tensor& x, const LayerNormParams& params);

// relu(x W1 + b1) W2 + b2
Tensor feed_forward(const Tensor& x, const FeedForwardParams& params);

// Post-norm residual blocks. Dropout is applied to each attention and
// feed-forward output before its residual addition.
Tensor encoder_layer(const Tensor& x, const EncoderLayerParams& params, const Dropout& dropout = {});
Tensor decoder_layer(const Tensor& x, const Tensor& enc_out, const DecoderLayerParams& params,
                     const Dropout& dropout = {});

struct ModelConfig {
  std::size_t seq_len = 96;    // I
  std::size_t pred_len = 96;   // O
  std::size_t channels = 1;    // C
  std::size_t patch_len = 16;  // P
  std::size_t stride = 8;      // S
  std::size_t d_model = 512;   // D
  std::size_t n_heads = 16;    // H
  std::size_t d_k = 0;         // 0: d_model / n_heads
  std::size_t d_v = 0;         // 0: d_model
  std::size_t e_layers = 2;    // N
  std::size_t d_layers = 1;    // M
  std::size_t d_ff = 2048;
  std::size_t max_patches = 0;  // 0: enough for encoder and decoder inputs
  double dropout = 0.1;
  double norm_epsilon = 1e-5;
  NormScope norm_scope = NormScope::global;
  std::uint64_t seed = 0;

  std::size_t label_len() const { return seq_len / 2; }
  std::size_t decoder_len() const { return label_len() + pred_len; }
  std::size_t encoder_patches() const;
  std::size_t decoder_patches() const;
  PatchConfig patch() const;
  AttentionConfig attention() const;

  // Throws ConfigError describing the first invalid field.
  void validate() const;

  // Flat text record of every field; from_record(record()) round-trips.
  std::map<std::string, std::string> record() const;
  static ModelConfig from_record(const std::map<std::string, std::string>& record);

  bool operator==(const ModelConfig&) const = default;
};

class PatchformerModel {
 public:
  explicit PatchformerModel(const ModelConfig& config);

  PatchformerModel(PatchformerModel&&) = default;
  PatchformerModel& operator=(PatchformerModel&&) = default;

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  const EmbeddingParams& embedding() const { return embedding_; }
  const std::vector<EncoderLayerParams>& encoder() const { return encoder_; }
  const std::vector<DecoderLayerParams>& decoder() const { return decoder_; }
  const Tensor& head() const { return head_; }

  // Evaluation-mode forecast of one multivariate window, (I, C) -> (O, C).
  // Every channel runs through the network on its own with shared weights.
  Tensor forward(const Tensor& x_enc) const;

  // Batched univariate sequences, (N, I) -> (N, O). Pass a training-mode
  // Dropout to enable dropout.
  Tensor forward_sequences(const Tensor& x, const Dropout& dropout = {}) const;

  // Decoder output before the head, (N, Z_de, D); exposed for inspection.
  Tensor decode(const Tensor& x, const Dropout& dropout = {}) const;

 private:
  ModelConfig config_;
  ParameterStore store_;
  EmbeddingParams embedding_;
  std::vector<EncoderLayerParams> encoder_;
  std::vector<DecoderLayerParams> decoder_;
  Tensor head_;  // (Z_de * D, O)
};

}  // namespace patchformer
