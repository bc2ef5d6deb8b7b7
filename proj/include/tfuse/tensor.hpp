#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tfuse {

using Shape = std::vector<std::size_t>;

/// Thrown when operand extents are incompatible with an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node& self)>;

// One vertex of the reverse-mode tape. Leaves have no parents and no
// backward function; interior nodes keep their parents alive until the
// graph root is released.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  BackwardFn backward;

  std::span<double> grad_buffer();
  bool is_leaf() const { return parents.empty(); }
};

}  // namespace detail

/// Dense row-major 64-bit tensor with optional participation in the
/// reverse-mode tape. Copies share the underlying node (handle semantics);
/// use clone() or detach() for an independent value.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Writable view of a leaf's values. Mutating an interior node would
  // invalidate the tape, so this is rejected for non-leaves.
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// Reverse pass from a single-element tensor. Interior gradients are
  /// recomputed from scratch; leaf gradients accumulate.
  void backward() const;

  /// Same values, no tape attachment.
  Tensor detach() const;
  /// Independent leaf copy, keeping requires_grad.
  Tensor clone() const;

  const detail::NodePtr& node() const { return node_; }
  static Tensor from_node(detail::NodePtr node);

 private:
  explicit Tensor(detail::NodePtr node) : node_(std::move(node)) {}
  detail::NodePtr node_;
};

namespace detail {

/// Builds the result node of an op. The node only records parents and the
/// backward closure when at least one input requires a gradient.
Tensor make_result(Shape shape, std::vector<double> value, std::initializer_list<Tensor> inputs,
                   BackwardFn backward);
Tensor make_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                   BackwardFn backward);

}  // namespace detail

/// A trainable tensor with a model-unique name.
struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Ordered collection of named parameters; insertion order is the
/// serialization and update order.
class ParameterSet {
 public:
  Tensor add(std::string name, Tensor tensor);
  void append(const ParameterSet& other);

  std::size_t size() const { return params_.size(); }
  bool contains(const std::string& name) const;
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;

  std::vector<Parameter>& items() { return params_; }
  const std::vector<Parameter>& items() const { return params_; }
  /// Handles in insertion order (a copy, safe to iterate on a temporary set).
  std::vector<Tensor> tensors() const;

  void zero_grad();
  std::size_t total_elements() const;

 private:
  std::vector<Parameter> params_;
};

}  // namespace tfuse
