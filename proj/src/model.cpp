#include "patchformer/model.hpp"

#include <array>
#include <charconv>

#include "patchformer/data.hpp"
#include "patchformer/errors.hpp"

namespace patchformer {

std::string to_string(NormScope scope) { return scope == NormScope::global ? "global" : "per_row"; }

NormScope parse_norm_scope(const std::string& text) {
  if (text == "global") return NormScope::global;
  if (text == "per_row") return NormScope::per_row;
  throw ConfigError("unknown norm scope '" + text + "' (expected global or per_row)");
}

LayerNormParams make_layer_norm_params(ParameterStore& store, std::size_t d_model, const std::string& prefix,
                                       double epsilon, NormScope scope) {
  if (!(epsilon > 0.0)) throw ConfigError("layer norm epsilon must be positive");
  LayerNormParams p;
  p.gamma = store.add(prefix + ".gamma", {d_model}, Init::ones());
  p.beta = store.add(prefix + ".beta", {d_model}, Init::zeros());
  p.epsilon = epsilon;
  p.scope = scope;
  return p;
}

FeedForwardParams make_feed_forward_params(ParameterStore& store, std::size_t d_model, std::size_t d_ff,
                                           const std::string& prefix) {
  if (d_ff < 1) throw ConfigError("d_ff must be at least 1");
  FeedForwardParams p;
  p.w1 = store.add(prefix + ".w1", {d_model, d_ff}, Init::fan_in(d_model));
  p.b1 = store.add(prefix + ".b1", {d_ff}, Init::zeros());
  p.w2 = store.add(prefix + ".w2", {d_ff, d_model}, Init::fan_in(d_ff));
  p.b2 = store.add(prefix + ".b2", {d_model}, Init::zeros());
  return p;
}

Tensor layer_norm(const Tensor& x, const LayerNormParams& params) {
  const std::size_t r = x.rank();
  if (r < 2) throw DimensionError("layer_norm expects (..., Z, D), got " + to_string(x.shape()));
  const std::array<std::size_t, 2> both{r - 2, r - 1};
  const std::array<std::size_t, 1> last{r - 1};
  Moments m = params.scope == NormScope::global ? mean_var(x, both) : mean_var(x, last);
  Tensor normalized = div(sub(x, m.mean), add_scalar(sqrt(m.var), params.epsilon));
  return add(mul(normalized, params.gamma), params.beta);
}

Tensor feed_forward(const Tensor& x, const FeedForwardParams& params) {
  Tensor hidden = relu(add(matmul(x, params.w1), params.b1));
  return add(matmul(hidden, params.w2), params.b2);
}

Tensor encoder_layer(const Tensor& x, const EncoderLayerParams& params, const Dropout& dropout) {
  Tensor h1 = layer_norm(add(dropout(multi_head_attention(x, x, params.self_attn, dropout)), x), params.norm1);
  return layer_norm(add(dropout(feed_forward(h1, params.ffn)), h1), params.norm2);
}

Tensor decoder_layer(const Tensor& x, const Tensor& enc_out, const DecoderLayerParams& params,
                     const Dropout& dropout) {
  if (x.shape().back() != enc_out.shape().back()) {
    throw DimensionError("decoder width " + to_string(x.shape()) + " differs from encoder output " +
                         to_string(enc_out.shape()));
  }
  Tensor h1 = layer_norm(add(dropout(multi_head_attention(x, x, params.self_attn, dropout)), x), params.norm1);
  Tensor h2 =
      layer_norm(add(dropout(multi_head_attention(h1, enc_out, params.cross_attn, dropout)), h1), params.norm2);
  return layer_norm(add(dropout(feed_forward(h2, params.ffn)), h2), params.norm3);
}

std::size_t ModelConfig::encoder_patches() const { return compute_patch_count(seq_len, patch()); }

std::size_t ModelConfig::decoder_patches() const { return compute_patch_count(decoder_len(), patch()); }

PatchConfig ModelConfig::patch() const {
  PatchConfig p;
  p.patch_len = patch_len;
  p.stride = stride;
  p.d_model = d_model;
  p.max_patches = max_patches;
  if (p.max_patches == 0 && seq_len >= patch_len && decoder_len() >= patch_len) {
    p.max_patches = std::max(compute_patch_count(seq_len, p), compute_patch_count(decoder_len(), p));
  }
  return p;
}

AttentionConfig ModelConfig::attention() const {
  AttentionConfig a;
  a.n_heads = n_heads;
  a.d_model = d_model;
  a.d_k = d_k;
  a.d_v = d_v;
  return a.resolved();
}

void ModelConfig::validate() const {
  if (seq_len < 1) throw ConfigError("seq_len must be at least 1");
  if (pred_len < 1) throw ConfigError("pred_len must be at least 1");
  if (channels < 1) throw ConfigError("channels must be at least 1");
  if (e_layers < 1) throw ConfigError("e_layers must be at least 1");
  if (d_layers < 1) throw ConfigError("d_layers must be at least 1");
  if (d_ff < 1) throw ConfigError("d_ff must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (!(norm_epsilon > 0.0)) throw ConfigError("norm_epsilon must be positive");
  PatchConfig p = patch();
  p.validate();
  if (seq_len < patch_len) {
    throw ConfigError("seq_len (" + std::to_string(seq_len) + ") must be at least patch_len (" +
                      std::to_string(patch_len) + ")");
  }
  if (decoder_len() < patch_len) {
    throw ConfigError("seq_len / 2 + pred_len (" + std::to_string(decoder_len()) + ") must be at least patch_len (" +
                      std::to_string(patch_len) + ")");
  }
  if (max_patches != 0 && max_patches < std::max(encoder_patches(), decoder_patches())) {
    throw ConfigError("max_patches (" + std::to_string(max_patches) + ") is smaller than the " +
                      std::to_string(std::max(encoder_patches(), decoder_patches())) + " patches required");
  }
  attention();
}

namespace {

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

template <typename T>
T parse_number(const std::map<std::string, std::string>& record, const std::string& key, T fallback) {
  auto it = record.find(key);
  if (it == record.end()) return fallback;
  T value{};
  const std::string& s = it->second;
  auto res = std::from_chars(s.data(), s.data() + s.size(), value);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("invalid value '" + s + "' for model field '" + key + "'");
  }
  return value;
}

}  // namespace

std::map<std::string, std::string> ModelConfig::record() const {
  return {
      {"seq_len", std::to_string(seq_len)},
      {"pred_len", std::to_string(pred_len)},
      {"channels", std::to_string(channels)},
      {"patch_len", std::to_string(patch_len)},
      {"stride", std::to_string(stride)},
      {"d_model", std::to_string(d_model)},
      {"n_heads", std::to_string(n_heads)},
      {"d_k", std::to_string(d_k)},
      {"d_v", std::to_string(d_v)},
      {"e_layers", std::to_string(e_layers)},
      {"d_layers", std::to_string(d_layers)},
      {"d_ff", std::to_string(d_ff)},
      {"max_patches", std::to_string(max_patches)},
      {"dropout", format_double(dropout)},
      {"norm_epsilon", format_double(norm_epsilon)},
      {"norm_scope", to_string(norm_scope)},
      {"seed", std::to_string(seed)},
      {"label_len", std::to_string(label_len())},
  };
}

ModelConfig ModelConfig::from_record(const std::map<std::string, std::string>& record) {
  ModelConfig c;
  c.seq_len = parse_number(record, "seq_len", c.seq_len);
  c.pred_len = parse_number(record, "pred_len", c.pred_len);
  c.channels = parse_number(record, "channels", c.channels);
  c.patch_len = parse_number(record, "patch_len", c.patch_len);
  c.stride = parse_number(record, "stride", c.stride);
  c.d_model = parse_number(record, "d_model", c.d_model);
  c.n_heads = parse_number(record, "n_heads", c.n_heads);
  c.d_k = parse_number(record, "d_k", c.d_k);
  c.d_v = parse_number(record, "d_v", c.d_v);
  c.e_layers = parse_number(record, "e_layers", c.e_layers);
  c.d_layers = parse_number(record, "d_layers", c.d_layers);
  c.d_ff = parse_number(record, "d_ff", c.d_ff);
  c.max_patches = parse_number(record, "max_patches", c.max_patches);
  c.dropout = parse_number(record, "dropout", c.dropout);
  c.norm_epsilon = parse_number(record, "norm_epsilon", c.norm_epsilon);
  c.seed = parse_number(record, "seed", c.seed);
  if (auto it = record.find("norm_scope"); it != record.end()) c.norm_scope = parse_norm_scope(it->second);
  return c;
}

PatchformerModel::PatchformerModel(const ModelConfig& config) : config_(config), store_(config.seed) {
  config_.validate();
  const PatchConfig patch = config_.patch();
  const AttentionConfig attn = config_.attention();
  const std::size_t d = config_.d_model;

  embedding_ = make_embedding_params(store_, patch, "embed");
  for (std::size_t l = 0; l < config_.e_layers; ++l) {
    const std::string p = "encoder." + std::to_string(l);
    EncoderLayerParams layer;
    layer.self_attn = make_attention_params(store_, attn, p + ".self_attn");
    layer.norm1 = make_layer_norm_params(store_, d, p + ".norm1", config_.norm_epsilon, config_.norm_scope);
    layer.ffn = make_feed_forward_params(store_, d, config_.d_ff, p + ".ffn");
    layer.norm2 = make_layer_norm_params(store_, d, p + ".norm2", config_.norm_epsilon, config_.norm_scope);
    encoder_.push_back(std::move(layer));
  }
  for (std::size_t l = 0; l < config_.d_layers; ++l) {
    const std::string p = "decoder." + std::to_string(l);
    DecoderLayerParams layer;
    layer.self_attn = make_attention_params(store_, attn, p + ".self_attn");
    layer.norm1 = make_layer_norm_params(store_, d, p + ".norm1", config_.norm_epsilon, config_.norm_scope);
    layer.cross_attn = make_attention_params(store_, attn, p + ".cross_attn");
    layer.norm2 = make_layer_norm_params(store_, d, p + ".norm2", config_.norm_epsilon, config_.norm_scope);
    layer.ffn = make_feed_forward_params(store_, d, config_.d_ff, p + ".ffn");
    layer.norm3 = make_layer_norm_params(store_, d, p + ".norm3", config_.norm_epsilon, config_.norm_scope);
    decoder_.push_back(std::move(layer));
  }
  const std::size_t flat = config_.decoder_patches() * d;
  head_ = store_.add("head.w_y", {flat, config_.pred_len}, Init::fan_in(flat));
}

Tensor PatchformerModel::decode(const Tensor& x, const Dropout& dropout) const {
  if (x.rank() != 2 || x.dim(1) != config_.seq_len) {
    throw ConfigError("model expects (N, " + std::to_string(config_.seq_len) + ") sequences, got " +
                      to_string(x.shape()));
  }
  const PatchConfig patch = config_.patch();
  Tensor enc = dropout(patch_embed(x, embedding_, patch));
  for (const auto& layer : encoder_) enc = encoder_layer(enc, layer, dropout);

  Tensor dec = dropout(patch_embed(build_decoder_input(x, config_.pred_len), embedding_, patch));
  for (const auto& layer : decoder_) dec = decoder_layer(dec, enc, layer, dropout);
  return dec;
}

Tensor PatchformerModel::forward_sequences(const Tensor& x, const Dropout& dropout) const {
  return matmul(flatten(decode(x, dropout), 1), head_);
}

Tensor PatchformerModel::forward(const Tensor& x_enc) const {
  if (x_enc.rank() != 2 || x_enc.dim(0) != config_.seq_len || x_enc.dim(1) != config_.channels) {
    throw ConfigError("forward expects input of shape (" + std::to_string(config_.seq_len) + ", " +
                      std::to_string(config_.channels) + "), got " + to_string(x_enc.shape()));
  }
  Tensor series = transpose(x_enc);  // (C, I)
  std::vector<Tensor> columns;
  columns.reserve(config_.channels);
  for (std::size_t c = 0; c < config_.channels; ++c) {
    columns.push_back(forward_sequences(slice(series, 0, c, c + 1)));  // (1, O)
  }
  return transpose(concat(columns, 0));
}

}  // namespace patchformer
