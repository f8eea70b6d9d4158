#include "dpanet/numerics/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "dpanet/error.hpp"

namespace dpanet::numerics {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  for (auto extent : shape) {
    if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return from_data(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from_data({}, {value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::size(int axis) const {
  const int rank = static_cast<int>(dim());
  const int a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank) throw PreconditionError("axis out of range");
  return node_->shape[static_cast<std::size_t>(a)];
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  if (!node_->is_leaf()) throw PreconditionError("mutable_data() on a non-leaf tensor");
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != dim()) throw DimensionError("index rank mismatch for " + shape_str(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= node_->shape[axis]) throw DimensionError("index out of range for " + shape_str(shape()));
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool flag) {
  if (!node_->is_leaf()) throw PreconditionError("requires_grad can only be set on leaves");
  node_->requires_grad = flag;
}

template <typename T>
std::vector<T> Tensor<T>::grad() const {
  if (node_->grad.empty()) return std::vector<T>(numel(), T(0));
  return node_->grad;
}

template <typename T>
std::span<T> Tensor<T>::mutable_grad() {
  return node_->ensure_grad();
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) {
    throw DimensionError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  }
  using NodePtr = detail::Node<T>*;
  std::vector<NodePtr> order;
  std::unordered_set<NodePtr> visited;
  // Iterative post-order DFS; parents precede children in `order`.
  std::vector<std::pair<NodePtr, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodePtr parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // Intermediate gradients are allocated lazily by the first contribution.
  for (auto* node : order) {
    if (!node->is_leaf()) node->grad.clear();
  }
  node_->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (node->is_leaf() || node->grad.empty()) continue;
    node->backward(*node);
    std::vector<T>().swap(node->grad);
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from_data(node_->shape, node_->data, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone(bool requires_grad) const {
  return from_data(node_->shape, node_->data, requires_grad);
}

namespace {

template <typename T, typename Range>
Tensor<T> make_result_impl(Shape shape, std::vector<T> data, const Range& inputs, const char* op,
                           std::function<void(detail::Node<T>&)> backward) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->op = op;
  if (grad_enabled()) {
    bool any = false;
    for (const auto* input : inputs) any = any || input->requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto* input : inputs) node->parents.push_back(input->node());
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(node));
}

}  // namespace

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data,
                      std::initializer_list<const Tensor<T>*> inputs, const char* op,
                      std::function<void(detail::Node<T>&)> backward) {
  return make_result_impl<T>(std::move(shape), std::move(data), inputs, op, std::move(backward));
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
                      const char* op, std::function<void(detail::Node<T>&)> backward) {
  std::vector<const Tensor<T>*> ptrs;
  ptrs.reserve(inputs.size());
  for (const auto& t : inputs) ptrs.push_back(&t);
  return make_result_impl<T>(std::move(shape), std::move(data), ptrs, op, std::move(backward));
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> make_result(Shape, std::vector<float>, std::initializer_list<const Tensor<float>*>,
                                   const char*, std::function<void(detail::Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, std::initializer_list<const Tensor<double>*>,
                                    const char*, std::function<void(detail::Node<double>&)>);
template Tensor<float> make_result(Shape, std::vector<float>, const std::vector<Tensor<float>>&,
                                   const char*, std::function<void(detail::Node<float>&)>);
template Tensor<double> make_result(Shape, std::vector<double>, const std::vector<Tensor<double>>&,
                                    const char*, std::function<void(detail::Node<double>&)>);

}  // namespace dpanet::numerics
