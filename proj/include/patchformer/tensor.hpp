#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace patchformer {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the computation graph. Leaves have no backward function.
struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  // Returns the grad buffer, allocating it zero-filled on first use.
  std::vector<double>& grad_buffer();
};

}  // namespace detail

// Reference-semantics handle to a graph node, in the style of the usual
// define-by-run tensor libraries: copying a Tensor aliases the same storage.
// Use detach() for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  // Direct write access. Only meaningful on leaves (parameters, inputs);
  // mutating an interior node does not re-run the graph.
  std::span<double> mutable_values();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Fresh leaf with a copy of the values and no history.
  Tensor detach() const;
  bool all_finite() const;

  // Reverse-mode sweep from a scalar. Leaf grads accumulate across calls;
  // interior grads are recomputed each call.
  void backward() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }
  const char* op_name() const;

  // Graph construction hook used by the operation implementations.
  static Tensor from_node(detail::NodePtr node) { return Tensor(std::move(node)); }
  const detail::NodePtr& node() const { return node_; }

 private:
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
  detail::NodePtr node_;
};

// While a NoGradGuard is alive on this thread, operations record no history.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_mode_enabled();

// Debug fault injection for exercising gradient checkers. When set, the
// matmul backward rule scales the right-operand gradient by the factor.
// Thread-local; 1.0 means no fault.
void set_matmul_grad_fault(double factor);
double matmul_grad_fault();

}  // namespace patchformer
