#pragma once

#include <functional>
#include <string>
#include <vector>

#include "patchformer/parameter_store.hpp"

namespace patchformer {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;  // at worst_index
  double numeric = 0.0;   // at worst_index
  bool passed = true;
};

struct GradCheckReport {
  double eps = 0.0;
  double tol = 0.0;
  std::vector<GradCheckEntry> entries;  // one per parameter, store order

  bool passed() const;
  double max_rel_error() const;
  std::vector<std::string> failures() const;
};

// |a - b| / max(1e-8, |a| + |b|)
double gradient_relative_error(double analytic, double numeric);

// Compares backward() gradients of the scalar f against central differences
// (f(p + eps) - f(p - eps)) / (2 eps) for every element of every parameter.
// f must rebuild its graph from the current parameter values on each call.
// Throws DeterminismError if two unperturbed evaluations disagree.
GradCheckReport finite_diff_check(const std::function<Tensor()>& f, ParameterStore& params, double eps, double tol);

}  // namespace patchformer
