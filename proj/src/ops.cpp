#include "patchformer/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "patchformer/errors.hpp"
#include "patchformer/rng.hpp"

namespace patchformer {

namespace {

using detail::Node;
using detail::NodePtr;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

// Wraps a freshly computed value into a tensor, attaching history when any
// input participates in gradient computation.
Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::initializer_list<const Tensor*> inputs, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (grad_mode_enabled()) {
    bool any = false;
    for (const Tensor* t : inputs) any = any || t->requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const Tensor* t : inputs) node->parents.push_back(t->node());
      node->backward = std::move(backward);
    }
  }
  return Tensor::from_node(std::move(node));
}

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i > 1; --i) strides[i - 2] = strides[i - 1] * shape[i - 1];
  return strides;
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::size_t> stride_a;
  std::vector<std::size_t> stride_b;
};

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  std::size_t rank = std::max(a.size(), b.size());
  BroadcastPlan plan;
  plan.out.assign(rank, 1);
  plan.stride_a.assign(rank, 0);
  plan.stride_b.assign(rank, 0);
  auto sa = contiguous_strides(a);
  auto sb = contiguous_strides(b);
  for (std::size_t i = 0; i < rank; ++i) {
    std::size_t offset_a = rank - a.size();
    std::size_t offset_b = rank - b.size();
    std::size_t da = i >= offset_a ? a[i - offset_a] : 1;
    std::size_t db = i >= offset_b ? b[i - offset_b] : 1;
    if (da != db && da != 1 && db != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " +
                           to_string(b));
    }
    plan.out[i] = std::max(da, db);
    if (i >= offset_a && da != 1) plan.stride_a[i] = sa[i - offset_a];
    if (i >= offset_b && db != 1) plan.stride_b[i] = sb[i - offset_b];
  }
  return plan;
}

// Calls f(out_index, a_index, b_index) for every output element in row-major order.
template <typename F>
void for_each_broadcast(const BroadcastPlan& plan, F&& f) {
  const std::size_t rank = plan.out.size();
  if (rank == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t total = element_count(plan.out);
  if (total == 0) return;
  const std::size_t inner = plan.out.back();
  const std::size_t inner_a = plan.stride_a.back();
  const std::size_t inner_b = plan.stride_b.back();
  std::vector<std::size_t> index(rank - 1, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t io = 0; io < total; io += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(io + j, ia + j * inner_a, ib + j * inner_b);
    for (std::size_t d = rank - 1; d-- > 0;) {
      ++index[d];
      ia += plan.stride_a[d];
      ib += plan.stride_b[d];
      if (index[d] < plan.out[d]) break;
      ia -= plan.stride_a[d] * plan.out[d];
      ib -= plan.stride_b[d] * plan.out[d];
      index[d] = 0;
    }
  }
}

// Shared implementation for the four broadcasting arithmetic operations.
// da/db return the partial derivative of the result w.r.t. each operand.
template <typename Fwd, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, DA da, DB db) {
  const auto& x = a.values();
  const auto& y = b.values();
  if (a.shape() == b.shape()) {
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i], y[i]);
    NodePtr na = a.node(), nb = b.node();
    return make_result(a.shape(), std::move(out), op, {&a, &b}, [na, nb, da, db](Node& self) {
      const auto& g = self.grad;
      if (na->requires_grad) {
        auto& ga = na->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(na->data[i], nb->data[i]);
      }
      if (nb->requires_grad) {
        auto& gb = nb->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * db(na->data[i], nb->data[i]);
      }
    });
  }
  BroadcastPlan plan = plan_broadcast(a.shape(), b.shape(), op);
  std::vector<double> out(element_count(plan.out));
  for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) { out[io] = fwd(x[ia], y[ib]); });
  NodePtr na = a.node(), nb = b.node();
  Shape out_shape = plan.out;
  return make_result(std::move(out_shape), std::move(out), op, {&a, &b},
                     [na, nb, da, db, plan = std::move(plan)](Node& self) {
                       const auto& g = self.grad;
                       const auto& xs = na->data;
                       const auto& ys = nb->data;
                       if (na->requires_grad) {
                         auto& ga = na->grad_buffer();
                         for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) {
                           ga[ia] += g[io] * da(xs[ia], ys[ib]);
                         });
                       }
                       if (nb->requires_grad) {
                         auto& gb = nb->grad_buffer();
                         for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) {
                           gb[ib] += g[io] * db(xs[ia], ys[ib]);
                         });
                       }
                     });
}

// Elementwise unary op; dfdx receives (input, output).
template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, const char* op, Fwd fwd, Deriv dfdx) {
  const auto& x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  NodePtr na = a.node();
  return make_result(a.shape(), std::move(out), op, {&a}, [na, dfdx](Node& self) {
    auto& ga = na->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * dfdx(na->data[i], self.data[i]);
  });
}

void check_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                         to_string(shape));
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(
      a, "scale", [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(
      a, "add_scalar", [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sqrt(const Tensor& a) {
  return unary(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double, double y) { return y > 0.0 ? 0.5 / y : 0.0; });
}

Tensor square(const Tensor& a) {
  return unary(
      a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.values()) total += v;
  NodePtr na = a.node();
  return make_result(Shape{}, {total}, "sum", {&a}, [na](Node& self) {
    auto& ga = na->grad_buffer();
    const double g = self.grad[0];
    for (double& v : ga) v += g;
  });
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto mismatch = [&]() {
    return DimensionError("matmul shape mismatch: " + to_string(sa) + " x " + to_string(sb));
  };
  if (sa.size() < 2 || sb.size() < 2) throw mismatch();
  const std::size_t k = sa.back();
  if (sb[sb.size() - 2] != k) throw mismatch();
  const std::size_t n = sb.back();
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(n);
  NodePtr na = a.node(), nb = b.node();

  if (sb.size() == 2) {
    // Weight shared across every leading axis: one GEMM over all rows.
    const std::size_t rows = a.numel() / std::max<std::size_t>(k, 1);
    std::vector<double> out(rows * n);
    MutMap(out.data(), rows, n).noalias() = ConstMap(a.values().data(), rows, k) * ConstMap(b.values().data(), k, n);
    return make_result(std::move(out_shape), std::move(out), "matmul", {&a, &b}, [na, nb, rows, k, n](Node& self) {
      ConstMap g(self.grad.data(), rows, n);
      if (na->requires_grad) {
        MutMap(na->grad_buffer().data(), rows, k).noalias() += g * ConstMap(nb->data.data(), k, n).transpose();
      }
      if (nb->requires_grad) {
        MutMap gb(nb->grad_buffer().data(), k, n);
        const double fault = matmul_grad_fault();
        if (fault == 1.0) {
          gb.noalias() += ConstMap(na->data.data(), rows, k).transpose() * g;
        } else {
          gb.noalias() += fault * (ConstMap(na->data.data(), rows, k).transpose() * g);
        }
      }
    });
  }

  if (sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin())) throw mismatch();
  const std::size_t m = sa[sa.size() - 2];
  const std::size_t batch = element_count(Shape(sa.begin(), sa.end() - 2));
  std::vector<double> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    MutMap(out.data() + i * m * n, m, n).noalias() =
        ConstMap(a.values().data() + i * m * k, m, k) * ConstMap(b.values().data() + i * k * n, k, n);
  }
  return make_result(std::move(out_shape), std::move(out), "bmm", {&a, &b}, [na, nb, batch, m, k, n](Node& self) {
    const double fault = matmul_grad_fault();
    for (std::size_t i = 0; i < batch; ++i) {
      ConstMap g(self.grad.data() + i * m * n, m, n);
      if (na->requires_grad) {
        MutMap(na->grad_buffer().data() + i * m * k, m, k).noalias() +=
            g * ConstMap(nb->data.data() + i * k * n, k, n).transpose();
      }
      if (nb->requires_grad) {
        MutMap(nb->grad_buffer().data() + i * k * n, k, n).noalias() +=
            fault * (ConstMap(na->data.data() + i * m * k, m, k).transpose() * g);
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  const Shape& s = a.shape();
  if (s.size() < 2) throw DimensionError("transpose needs rank >= 2, got " + to_string(s));
  const std::size_t r = s[s.size() - 2], c = s.back();
  const std::size_t batch = a.numel() / std::max<std::size_t>(r * c, 1);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  const auto& x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t b = 0; b < batch; ++b) {
    const double* src = x.data() + b * r * c;
    double* dst = out.data() + b * r * c;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dst[j * r + i] = src[i * c + j];
  }
  NodePtr na = a.node();
  return make_result(std::move(out_shape), std::move(out), "transpose", {&a}, [na, batch, r, c](Node& self) {
    auto& ga = na->grad_buffer();
    for (std::size_t b = 0; b < batch; ++b) {
      const double* g = self.grad.data() + b * r * c;
      double* dst = ga.data() + b * r * c;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) dst[i * c + j] += g[j * r + i];
    }
  });
}

Tensor softmax_lastdim(const Tensor& a) {
  const Shape& s = a.shape();
  if (s.empty() || s.back() == 0) throw DimensionError("softmax over an empty last dimension: " + to_string(s));
  const std::size_t n = s.back();
  const std::size_t rows = a.numel() / n;
  const auto& x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data() + r * n;
    double* y = out.data() + r * n;
    const double top = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(in[j] - top);
      total += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= total;
  }
  NodePtr na = a.node();
  return make_result(s, std::move(out), "softmax", {&a}, [na, rows, n](Node& self) {
    auto& ga = na->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.data.data() + r * n;
      const double* g = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += y[j] * (g[j] - dot);
    }
  });
}

Moments mean_var(const Tensor& a, std::span<const std::size_t> axes) {
  const Shape& s = a.shape();
  if (axes.empty()) throw DimensionError("mean_var: empty reduction axis set");
  Shape stat_shape = s;
  std::vector<bool> seen(s.size(), false);
  std::size_t count = 1;
  for (std::size_t axis : axes) {
    check_axis(s, axis, "mean_var");
    if (seen[axis]) throw DimensionError("mean_var: axis " + std::to_string(axis) + " repeated");
    seen[axis] = true;
    count *= s[axis];
    stat_shape[axis] = 1;
  }
  if (count == 0) throw DimensionError("mean_var: reduction over an empty axis in " + to_string(s));

  BroadcastPlan plan = plan_broadcast(s, stat_shape, "mean_var");
  const auto& x = a.values();
  const std::size_t groups = element_count(stat_shape);
  std::vector<double> mu(groups, 0.0), var(groups, 0.0);
  for_each_broadcast(plan, [&](std::size_t, std::size_t ia, std::size_t ig) { mu[ig] += x[ia]; });
  for (double& m : mu) m /= static_cast<double>(count);
  for_each_broadcast(plan, [&](std::size_t, std::size_t ia, std::size_t ig) {
    const double d = x[ia] - mu[ig];
    var[ig] += d * d;
  });
  for (double& v : var) v /= static_cast<double>(count);

  NodePtr na = a.node();
  const double inv = 1.0 / static_cast<double>(count);
  Tensor mean_t = make_result(stat_shape, mu, "mean_var.mean", {&a}, [na, plan, inv](Node& self) {
    auto& ga = na->grad_buffer();
    for_each_broadcast(plan, [&](std::size_t, std::size_t ia, std::size_t ig) { ga[ia] += self.grad[ig] * inv; });
  });
  // d var / d x_i = 2 (x_i - mu) / n; the dependence through mu sums to zero.
  Tensor var_t = make_result(stat_shape, std::move(var), "mean_var.var", {&a},
                             [na, plan, inv, mu = std::move(mu)](Node& self) {
                               auto& ga = na->grad_buffer();
                               for_each_broadcast(plan, [&](std::size_t, std::size_t ia, std::size_t ig) {
                                 ga[ia] += self.grad[ig] * 2.0 * (na->data[ia] - mu[ig]) * inv;
                               });
                             });
  return {std::move(mean_t), std::move(var_t)};
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (element_count(shape) != a.numel()) {
    throw DimensionError("reshape " + to_string(a.shape()) + " -> " + to_string(shape) + " changes element count");
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  NodePtr na = a.node();
  return make_result(std::move(shape), std::move(out), "reshape", {&a}, [na](Node& self) {
    auto& ga = na->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

Tensor flatten(const Tensor& a, std::size_t start_axis) {
  const Shape& s = a.shape();
  if (start_axis > s.size()) check_axis(s, start_axis, "flatten");
  Shape out(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(start_axis));
  out.push_back(element_count(Shape(s.begin() + static_cast<std::ptrdiff_t>(start_axis), s.end())));
  return reshape(a, std::move(out));
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  check_axis(first, axis, "concat");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) throw DimensionError("concat: " + to_string(s) + " incompatible with " + to_string(first));
    out_shape[axis] += s[axis];
  }
  const std::size_t outer = element_count(Shape(first.begin(), first.begin() + static_cast<std::ptrdiff_t>(axis)));
  const std::size_t tail = element_count(Shape(first.begin() + static_cast<std::ptrdiff_t>(axis) + 1, first.end()));
  const std::size_t out_row = out_shape[axis] * tail;
  std::vector<double> out(outer * out_row);
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t w = p.dim(axis) * tail;
    const auto& x = p.values();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(x.data() + o * w, w, out.data() + o * out_row + offset);
    widths.push_back(w);
    offset += w;
  }
  std::vector<NodePtr> nodes;
  for (const Tensor& p : parts) nodes.push_back(p.node());

  auto node = std::make_shared<Node>();
  node->shape = std::move(out_shape);
  node->data = std::move(out);
  node->op = "concat";
  bool any = false;
  for (const Tensor& p : parts) any = any || p.requires_grad();
  if (grad_mode_enabled() && any) {
    node->requires_grad = true;
    node->parents = nodes;
    node->backward = [nodes, widths, outer, out_row](Node& self) {
      std::size_t off = 0;
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        const std::size_t w = widths[i];
        if (nodes[i]->requires_grad) {
          auto& g = nodes[i]->grad_buffer();
          for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < w; ++j) g[o * w + j] += self.grad[o * out_row + off + j];
        }
        off += w;
      }
    };
  }
  return Tensor::from_node(std::move(node));
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  check_axis(s, axis, "slice");
  if (begin > end || end > s[axis]) {
    throw DimensionError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for axis " +
                         std::to_string(axis) + " of " + to_string(s));
  }
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t outer = element_count(Shape(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(axis)));
  const std::size_t tail = element_count(Shape(s.begin() + static_cast<std::ptrdiff_t>(axis) + 1, s.end()));
  const std::size_t in_row = s[axis] * tail;
  const std::size_t w = (end - begin) * tail;
  const std::size_t off = begin * tail;
  const auto& x = a.values();
  std::vector<double> out(outer * w);
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(x.data() + o * in_row + off, w, out.data() + o * w);
  NodePtr na = a.node();
  return make_result(std::move(out_shape), std::move(out), "slice", {&a}, [na, outer, in_row, w, off](Node& self) {
    auto& ga = na->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < w; ++j) ga[o * in_row + off + j] += self.grad[o * w + j];
  });
}

Tensor gather_last(const Tensor& a, std::span<const std::size_t> indices) {
  const Shape& s = a.shape();
  if (s.empty()) throw DimensionError("gather_last on a scalar");
  const std::size_t n = s.back();
  for (std::size_t i : indices) {
    if (i >= n) throw DimensionError("gather_last: index " + std::to_string(i) + " out of range for " + to_string(s));
  }
  const std::size_t rows = n == 0 ? 0 : a.numel() / n;
  const std::size_t m = indices.size();
  Shape out_shape = s;
  out_shape.back() = m;
  const auto& x = a.values();
  std::vector<double> out(rows * m);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] = x[r * n + indices[j]];
  NodePtr na = a.node();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return make_result(std::move(out_shape), std::move(out), "gather", {&a}, [na, rows, n, m, idx](Node& self) {
    auto& ga = na->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < m; ++j) ga[r * n + idx[j]] += self.grad[r * m + j];
  });
}

Tensor Dropout::operator()(const Tensor& a) const {
  if (training && (p >= 1.0 || p < 0.0)) {
    throw ConfigError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (!active()) return a;
  if (rng == nullptr) throw ConfigError("training-mode dropout needs a random generator");
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(a.numel());
  for (double& m : mask) m = rng->bernoulli(p) ? 0.0 : keep_scale;
  const auto& x = a.values();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * mask[i];
  NodePtr na = a.node();
  return make_result(a.shape(), std::move(out), "dropout", {&a}, [na, mask = std::move(mask)](Node& self) {
    auto& ga = na->grad_buffer();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * mask[i];
  });
}

}  // namespace patchformer
