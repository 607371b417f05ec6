#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "patchformer/rng.hpp"
#include "patchformer/tensor.hpp"

namespace patchformer {

struct Init {
  enum class Kind { zeros, ones, uniform };
  Kind kind = Kind::zeros;
  double lo = 0.0;
  double hi = 0.0;

  static Init zeros() { return {}; }
  static Init ones() { return {Kind::ones}; }
  static Init uniform(double lo, double hi) { return {Kind::uniform, lo, hi}; }
  // uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
  static Init fan_in(std::size_t fan_in);
};

// Named trainable tensors in insertion order. Initial values come from a
// generator seeded once at construction, so building the same sequence of
// parameters from the same seed reproduces every value bit for bit.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  explicit ParameterStore(std::uint64_t seed = 0);

  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) = default;
  ParameterStore& operator=(ParameterStore&&) = default;

  const Tensor& add(const std::string& name, Shape shape, Init init);
  // Adopts an existing tensor (marked trainable) under the given name.
  const Tensor& add(const std::string& name, Tensor tensor);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  std::uint64_t seed() const { return seed_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const;
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>::const_iterator begin() const { return entries_.begin(); }
  std::vector<Entry>::const_iterator end() const { return entries_.end(); }

  // Drops every gradient buffer.
  void zero_grads();

  using Snapshot = std::vector<std::vector<double>>;
  Snapshot snapshot() const;
  void restore(const Snapshot& values);

 private:
  std::uint64_t seed_;
  Rng rng_;
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace patchformer
