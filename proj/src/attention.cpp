#include "patchformer/attention.hpp"

#include <cmath>

#include "patchformer/errors.hpp"

namespace patchformer {

AttentionConfig AttentionConfig::resolved() const {
  if (n_heads < 1) throw ConfigError("n_heads must be at least 1");
  if (d_model < 1) throw ConfigError("d_model must be at least 1");
  AttentionConfig out = *this;
  if (out.d_k == 0) {
    if (d_model % n_heads != 0) {
      throw ConfigError("d_k defaults to d_model / n_heads, but n_heads (" + std::to_string(n_heads) +
                        ") does not divide d_model (" + std::to_string(d_model) + ")");
    }
    out.d_k = d_model / n_heads;
  }
  if (out.d_v == 0) out.d_v = d_model;
  return out;
}

AttentionParams make_attention_params(ParameterStore& store, const AttentionConfig& cfg, const std::string& prefix) {
  const AttentionConfig c = cfg.resolved();
  AttentionParams params;
  for (std::size_t h = 0; h < c.n_heads; ++h) {
    const std::string head = prefix + ".head" + std::to_string(h);
    AttentionHead p;
    p.w_q = store.add(head + ".w_q", {c.d_model, c.d_k}, Init::fan_in(c.d_model));
    p.w_k = store.add(head + ".w_k", {c.d_model, c.d_k}, Init::fan_in(c.d_model));
    p.w_v = store.add(head + ".w_v", {c.d_model, c.d_v}, Init::fan_in(c.d_model));
    params.heads.push_back(std::move(p));
  }
  params.w_o = store.add(prefix + ".w_o", {c.n_heads * c.d_v, c.d_model}, Init::fan_in(c.n_heads * c.d_v));
  return params;
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Dropout& dropout,
                            Tensor* weights) {
  if (q.rank() < 2 || k.rank() != q.rank() || v.rank() != q.rank()) {
    throw DimensionError("attention rank mismatch: Q " + to_string(q.shape()) + ", K " + to_string(k.shape()) +
                         ", V " + to_string(v.shape()));
  }
  const std::size_t r = q.rank();
  if (q.dim(r - 1) != k.dim(r - 1)) {
    throw DimensionError("attention: Q width " + to_string(q.shape()) + " differs from K width " + to_string(k.shape()));
  }
  if (k.dim(r - 2) != v.dim(r - 2)) {
    throw DimensionError("attention: K rows " + to_string(k.shape()) + " differ from V rows " + to_string(v.shape()));
  }
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(q.dim(r - 1)));
  Tensor attn = softmax_lastdim(scale(matmul(q, transpose(k)), inv_scale));
  if (weights != nullptr) *weights = attn;
  return matmul(dropout(attn), v);
}

Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const AttentionParams& params,
                            const Dropout& dropout, std::vector<Tensor>* weights) {
  if (params.heads.empty()) throw ConfigError("attention block has no heads");
  const std::size_t d_model = params.heads.front().w_q.dim(0);
  if (x_q.shape().back() != d_model || x_kv.shape().back() != d_model) {
    throw DimensionError("multi-head attention expects width " + std::to_string(d_model) + ", got " +
                         to_string(x_q.shape()) + " and " + to_string(x_kv.shape()));
  }
  std::vector<Tensor> outputs;
  outputs.reserve(params.heads.size());
  if (weights != nullptr) weights->clear();
  for (const AttentionHead& head : params.heads) {
    Tensor w;
    outputs.push_back(scaled_dot_attention(matmul(x_q, head.w_q), matmul(x_kv, head.w_k), matmul(x_kv, head.w_v),
                                           dropout, weights != nullptr ? &w : nullptr));
    if (weights != nullptr) weights->push_back(std::move(w));
  }
  Tensor joined = outputs.size() == 1 ? outputs.front() : concat(outputs, x_q.rank() - 1);
  return matmul(joined, params.w_o);
}

}  // namespace patchformer
