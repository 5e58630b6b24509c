#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#ifndef D3DESK_SCALAR
#define D3DESK_SCALAR double
#endif

namespace d3desk::ad {

using Scalar = D3DESK_SCALAR;
using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

[[noreturn]] void shape_error(const char* op, const std::string& detail);

// Thread-local switch: while disabled, ops produce plain value tensors with
// no graph edges (inference mode).
bool grad_enabled();

struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense tensor node in a reverse-mode computation graph. Tensors are cheap
// handles sharing a Node; ops append children whose backward_fn scatters the
// incoming gradient into the parents' grad buffers.
class Tensor {
 public:
  struct Node {
    Shape shape;
    std::vector<Scalar> values;
    std::vector<Scalar> grad;  // sized lazily, always matches values
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<Tensor> parents;
    std::function<void(Node&)> backward_fn;
  };

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Scalar> values, bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return shape_numel(node_->shape); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool rg) { node_->requires_grad = rg; }
  const char* op() const { return node_->op; }

  std::vector<Scalar>& v() { return node_->values; }
  const std::vector<Scalar>& v() const { return node_->values; }

  // Gradient buffer, allocated (zeroed) on first access.
  std::vector<Scalar>& g();
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad();

  Scalar item() const;

  // Reverse pass from this node, which must hold a single element. Each
  // reachable node is visited exactly once.
  void backward();

  // Value-only copy sharing no graph edges.
  Tensor detach() const;

  std::shared_ptr<Node>& node() { return node_; }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Helper used by every op: constructs the output node and wires parents.
Tensor make_op_output(const char* op, Shape shape, std::vector<Scalar> values,
                      std::vector<Tensor> parents,
                      std::function<void(Tensor::Node&)> backward_fn);

}  // namespace d3desk::ad
