#include "patchformer/embedding.hpp"

#include "patchformer/errors.hpp"
#include "patchformer/ops.hpp"

namespace patchformer {

void PatchConfig::validate() const {
  if (patch_len < 1) throw ConfigError("patch_len must be at least 1");
  if (stride < 1) throw ConfigError("stride must be at least 1");
  if (stride > patch_len) {
    throw ConfigError("stride (" + std::to_string(stride) + ") must not exceed patch_len (" +
                      std::to_string(patch_len) + ")");
  }
  if (d_model < 1) throw ConfigError("d_model must be at least 1");
}

std::size_t compute_patch_count(std::size_t series_len, const PatchConfig& cfg) {
  cfg.validate();
  if (series_len < cfg.patch_len) {
    throw DataError("series of length " + std::to_string(series_len) + " is shorter than patch_len " +
                    std::to_string(cfg.patch_len));
  }
  return (series_len - cfg.patch_len) / cfg.stride + 2;
}

std::vector<double> pad_series(std::span<const double> x, std::size_t pad_count) {
  if (x.empty()) throw DataError("cannot pad an empty series");
  std::vector<double> out(x.begin(), x.end());
  out.insert(out.end(), pad_count, x.back());
  return out;
}

std::vector<std::size_t> patch_source_indices(std::size_t series_len, const PatchConfig& cfg) {
  const std::size_t count = compute_patch_count(series_len, cfg);
  std::vector<std::size_t> idx;
  idx.reserve(count * cfg.patch_len);
  for (std::size_t z = 0; z < count; ++z) {
    for (std::size_t p = 0; p < cfg.patch_len; ++p) {
      idx.push_back(std::min(z * cfg.stride + p, series_len - 1));
    }
  }
  return idx;
}

PatchGrid patch_series(std::span<const double> x, const PatchConfig& cfg) {
  const std::size_t count = compute_patch_count(x.size(), cfg);
  const std::vector<double> padded = pad_series(x, cfg.stride);
  PatchGrid grid;
  grid.rows = count;
  grid.patch_len = cfg.patch_len;
  grid.values.reserve(count * cfg.patch_len);
  for (std::size_t z = 0; z < count; ++z) {
    const std::size_t start = z * cfg.stride;
    grid.values.insert(grid.values.end(), padded.begin() + static_cast<std::ptrdiff_t>(start),
                       padded.begin() + static_cast<std::ptrdiff_t>(start + cfg.patch_len));
  }
  return grid;
}

EmbeddingParams make_embedding_params(ParameterStore& store, const PatchConfig& cfg, const std::string& prefix) {
  cfg.validate();
  if (cfg.max_patches < 1) throw ConfigError("max_patches must be at least 1");
  EmbeddingParams params;
  params.value_weight = store.add(prefix + ".value", {cfg.patch_len, cfg.d_model}, Init::fan_in(cfg.patch_len));
  params.pos_embed = store.add(prefix + ".pos", {cfg.max_patches, cfg.d_model}, Init::uniform(-0.02, 0.02));
  return params;
}

namespace {

Tensor add_positions(const Tensor& values, const EmbeddingParams& params, std::size_t count) {
  const std::size_t available = params.pos_embed.dim(0);
  if (count > available) {
    throw CapacityError("positional table holds " + std::to_string(available) + " patches but " +
                        std::to_string(count) + " are required");
  }
  return add(values, slice(params.pos_embed, 0, 0, count));
}

}  // namespace

Tensor patch_embed(std::span<const double> x, const EmbeddingParams& params, const PatchConfig& cfg) {
  PatchGrid grid = patch_series(x, cfg);
  Tensor patches({grid.rows, grid.patch_len}, std::move(grid.values));
  return add_positions(matmul(patches, params.value_weight), params, grid.rows);
}

Tensor patch_embed(const Tensor& x, const EmbeddingParams& params, const PatchConfig& cfg) {
  if (x.rank() != 2) throw DimensionError("patch_embed expects (N, I) input, got " + to_string(x.shape()));
  const std::size_t n = x.dim(0);
  const std::size_t len = x.dim(1);
  const std::size_t count = compute_patch_count(len, cfg);
  const std::vector<std::size_t> idx = patch_source_indices(len, cfg);
  Tensor patches = reshape(gather_last(x, idx), {n, count, cfg.patch_len});
  return add_positions(matmul(patches, params.value_weight), params, count);
}

}  // namespace patchformer
