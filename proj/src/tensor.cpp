#include "d3desk/tensor.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace d3desk::ad {

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = prev_; }

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

void shape_error(const char* op, const std::string& detail) {
  throw std::invalid_argument(std::string("tensor op '") + op + "': " + detail);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->values.assign(static_cast<size_t>(shape_numel(shape)), Scalar(0));
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& x : t.v()) x = value;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<Scalar> values, bool requires_grad) {
  if (static_cast<int64_t>(values.size()) != shape_numel(shape))
    shape_error("from", "value count " + std::to_string(values.size()) +
                            " does not match shape " + shape_str(shape));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

std::vector<Scalar>& Tensor::g() {
  if (node_->grad.empty()) node_->grad.assign(node_->values.size(), Scalar(0));
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) node_->grad.assign(node_->values.size(), Scalar(0));
}

Scalar Tensor::item() const {
  if (numel() != 1)
    shape_error("item", "expected a single element, got shape " + shape_str(shape()));
  return node_->values[0];
}

Tensor Tensor::detach() const {
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->values = node_->values;
  n->requires_grad = false;
  return Tensor(std::move(n));
}

void Tensor::backward() {
  if (numel() != 1)
    shape_error("backward", "root must be scalar, got shape " + shape_str(shape()));
  if (!node_->requires_grad) return;

  // Iterative post-order over the graph; each node appears once.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* n;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({node_.get(), 0});
  visited.insert(node_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.n->parents.size()) {
      Node* p = f.n->parents[f.next_parent++].node().get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  g()[0] = Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward_fn) continue;
    // Make sure parents that need gradients have buffers before scatter.
    for (auto& p : n->parents)
      if (p.requires_grad()) p.g();
    n->backward_fn(*n);
  }
}

Tensor make_op_output(const char* op, Shape shape, std::vector<Scalar> values,
                      std::vector<Tensor> parents,
                      std::function<void(Tensor::Node&)> backward_fn) {
  auto n = std::make_shared<Tensor::Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  n->op = op;
  if (grad_enabled()) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    if (rg) {
      n->requires_grad = true;
      n->parents = std::move(parents);
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Tensor(std::move(n));
}

}  // namespace d3desk::ad
