#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "patchformer/ops.hpp"
#include "patchformer/parameter_store.hpp"

namespace patchformer {

struct AttentionConfig {
  std::size_t n_heads = 16;
  std::size_t d_model = 512;
  std::size_t d_k = 0;  // 0: d_model / n_heads
  std::size_t d_v = 0;  // 0: d_model

  // Copy with defaults filled in; throws ConfigError on invalid values.
  AttentionConfig resolved() const;
};

struct AttentionHead {
  Tensor w_q;  // (D, d_k)
  Tensor w_k;  // (D, d_k)
  Tensor w_v;  // (D, d_v)
};

struct AttentionParams {
  std::vector<AttentionHead> heads;
  Tensor w_o;  // (H * d_v, D)
};

AttentionParams make_attention_params(ParameterStore& store, const AttentionConfig& cfg, const std::string& prefix);

// softmax(Q K^T / sqrt(d_k)) V without masking. Accepts matching leading
// batch axes: Q (..., Zq, d_k), K (..., Zk, d_k), V (..., Zk, d_v).
// When `weights` is non-null it receives the post-softmax matrix.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Dropout& dropout = {},
                            Tensor* weights = nullptr);

// Per-head attention of x_q against x_kv, heads concatenated on the feature
// axis and projected by W_O. Self-attention passes the same tensor twice.
Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const AttentionParams& params,
                            const Dropout& dropout = {}, std::vector<Tensor>* weights = nullptr);

}  // namespace patchformer
