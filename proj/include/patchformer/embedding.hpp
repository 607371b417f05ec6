#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "patchformer/parameter_store.hpp"
#include "patchformer/tensor.hpp"

namespace patchformer {

struct PatchConfig {
  std::size_t patch_len = 16;
  std::size_t stride = 8;
  std::size_t d_model = 512;
  std::size_t max_patches = 0;  // rows of the positional table

  // Throws ConfigError unless 1 <= stride <= patch_len and d_model >= 1.
  void validate() const;
};

// One patch per row, Z rows of patch_len values.
struct PatchGrid {
  std::size_t rows = 0;
  std::size_t patch_len = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t z) const {
    return std::span<const double>(values).subspan(z * patch_len, patch_len);
  }
};

// Z = floor((I - P) / S) + 2. The final patch is built from padding with the
// last observed value.
std::size_t compute_patch_count(std::size_t series_len, const PatchConfig& cfg);

std::vector<double> pad_series(std::span<const double> x, std::size_t pad_count);

// Pads with `stride` copies of the last value, then cuts rows
// x[z*S, z*S + P) for z < Z. The padded length is exactly (Z - 1) * S + P
// when (I - P) is a multiple of S and longer otherwise; the tail beyond the
// last full window is never read.
PatchGrid patch_series(std::span<const double> x, const PatchConfig& cfg);

// Source positions (into the unpadded series) read by each patch element,
// row-major over (Z, P). Padding positions map to I - 1.
std::vector<std::size_t> patch_source_indices(std::size_t series_len, const PatchConfig& cfg);

struct EmbeddingParams {
  Tensor value_weight;  // (P, D)
  Tensor pos_embed;     // (Z_max, D)
};

EmbeddingParams make_embedding_params(ParameterStore& store, const PatchConfig& cfg, const std::string& prefix);

// Single series -> (Z, D): patches * W_value + pos_embed[0:Z].
Tensor patch_embed(std::span<const double> x, const EmbeddingParams& params, const PatchConfig& cfg);

// Batched, differentiable in x as well: x (N, I) -> (N, Z, D).
Tensor patch_embed(const Tensor& x, const EmbeddingParams& params, const PatchConfig& cfg);

}  // namespace patchformer
