#include "patchformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "patchformer/errors.hpp"

namespace patchformer {

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.passed; });
}

double GradCheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
  return worst;
}

std::vector<std::string> GradCheckReport::failures() const {
  std::vector<std::string> names;
  for (const auto& e : entries) {
    if (!e.passed) names.push_back(e.name);
  }
  return names;
}

double gradient_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

GradCheckReport finite_diff_check(const std::function<Tensor()>& f, ParameterStore& params, double eps, double tol) {
  if (!(eps > 0.0)) throw ConfigError("finite_diff_check: eps must be positive");

  params.zero_grads();
  Tensor loss = f();
  if (loss.numel() != 1) throw DimensionError("finite_diff_check: f must return a scalar, got " + to_string(loss.shape()));
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& e : params) {
    if (e.tensor.has_grad()) {
      analytic.emplace_back(e.tensor.grad().begin(), e.tensor.grad().end());
    } else {
      analytic.emplace_back(e.tensor.numel(), 0.0);
    }
  }
  params.zero_grads();

  auto evaluate = [&]() {
    NoGradGuard guard;
    return f().item();
  };
  const double base_a = evaluate();
  const double base_b = evaluate();
  if (base_a != base_b || base_a != loss.item()) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "finite_diff_check: f is not deterministic (" << loss.item() << ", " << base_a << ", " << base_b << ")";
    throw DeterminismError(msg.str());
  }

  GradCheckReport report;
  report.eps = eps;
  report.tol = tol;
  std::size_t p = 0;
  for (const auto& entry : params.entries()) {
    Tensor tensor = entry.tensor;
    auto values = tensor.mutable_values();
    GradCheckEntry result;
    result.name = entry.name;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double original = values[i];
      values[i] = original + eps;
      const double up = evaluate();
      values[i] = original - eps;
      const double down = evaluate();
      values[i] = original;
      const double numeric = (up - down) / (2.0 * eps);
      double err = gradient_relative_error(analytic[p][i], numeric);
      if (std::isnan(err)) err = std::numeric_limits<double>::infinity();
      if (i == 0 || err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_index = i;
        result.analytic = analytic[p][i];
        result.numeric = numeric;
      }
    }
    result.passed = result.max_rel_error <= tol;
    report.entries.push_back(std::move(result));
    ++p;
  }
  return report;
}

}  // namespace patchformer
