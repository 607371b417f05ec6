#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "patchformer/tensor.hpp"

namespace patchformer {

class Rng;

// Elementwise arithmetic with numpy-style broadcasting (shapes aligned on the
// right, size-1 or missing axes stretch). Gradients are summed back onto the
// broadcast operand's shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor relu(const Tensor& a);
// Gradient at exactly zero is taken as zero (the input was constant).
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// a: (..., m, k). b: (k, n) shared across the leading axes of a, or
// (..., k, n) with exactly the same leading axes as a.
Tensor matmul(const Tensor& a, const Tensor& b);
// Swaps the last two axes.
Tensor transpose(const Tensor& a);

Tensor softmax_lastdim(const Tensor& a);

struct Moments {
  Tensor mean;
  Tensor var;
};
// Population mean and variance over the given axes. Reduced axes are kept
// with size 1 so the results broadcast against the input.
Moments mean_var(const Tensor& a, std::span<const std::size_t> axes);

Tensor reshape(const Tensor& a, Shape shape);
// Collapses every axis from `start_axis` onward into one.
Tensor flatten(const Tensor& a, std::size_t start_axis = 0);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
// Half-open range [begin, end) along `axis`.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
// out[..., j] = a[..., indices[j]]; repeated indices accumulate in backward.
Tensor gather_last(const Tensor& a, std::span<const std::size_t> indices);

// Inverted dropout. Identity when not training or when p == 0.
struct Dropout {
  double p = 0.0;
  bool training = false;
  Rng* rng = nullptr;

  Tensor operator()(const Tensor& a) const;
  bool active() const { return training && p > 0.0; }
};

}  // namespace patchformer
