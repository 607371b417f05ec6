#include "patchformer/parameter_store.hpp"

#include <cmath>

#include "patchformer/errors.hpp"

namespace patchformer {

Init Init::fan_in(std::size_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return uniform(-bound, bound);
}

ParameterStore::ParameterStore(std::uint64_t seed) : seed_(seed), rng_(seed) {}

const Tensor& ParameterStore::add(const std::string& name, Shape shape, Init init) {
  std::vector<double> values(element_count(shape));
  switch (init.kind) {
    case Init::Kind::zeros:
      break;
    case Init::Kind::ones:
      std::fill(values.begin(), values.end(), 1.0);
      break;
    case Init::Kind::uniform:
      for (double& v : values) v = rng_.uniform(init.lo, init.hi);
      break;
  }
  return add(name, Tensor(std::move(shape), std::move(values), true));
}

const Tensor& ParameterStore::add(const std::string& name, Tensor tensor) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  tensor.set_requires_grad(true);
  index_.emplace(name, entries_.size());
  entries_.push_back({name, std::move(tensor)});
  return entries_.back().tensor;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second].tensor;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second].tensor;
}

std::size_t ParameterStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

void ParameterStore::zero_grads() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

ParameterStore::Snapshot ParameterStore::snapshot() const {
  Snapshot out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.emplace_back(e.tensor.values().begin(), e.tensor.values().end());
  return out;
}

void ParameterStore::restore(const Snapshot& values) {
  if (values.size() != entries_.size()) throw ConfigError("snapshot does not match parameter store");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto dst = entries_[i].tensor.mutable_values();
    if (values[i].size() != dst.size()) {
      throw ConfigError("snapshot size mismatch for '" + entries_[i].name + "'");
    }
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

}  // namespace patchformer
