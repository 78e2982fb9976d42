#include "cavm/tensor.hpp"

#include <atomic>
#include <sstream>

#include "cavm/errors.hpp"

namespace cavm {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
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

namespace detail {

std::uint64_t next_node_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

} // namespace detail

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values, bool requires_grad) {
    if (numel(shape) != values.size()) {
        throw ShapeError("tensor: shape " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
    }
    node_ = std::make_shared<detail::Node<T>>();
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

template <typename T>
detail::Node<T>& Tensor<T>::node() const {
    if (!node_) throw Error("tensor: use of an undefined tensor");
    return *node_;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
    return node().shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) {
        throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(s));
    }
    return s[axis];
}

template <typename T>
std::span<T> Tensor<T>::mutable_values() {
    auto& n = node();
    if (!n.leaf) throw AutodiffError(std::string("tensor: cannot mutate the output of op '") + n.op + "'");
    return n.value;
}

template <typename T>
T Tensor<T>::item() const {
    if (size() != 1) throw ShapeError("tensor: item() on shape " + shape_str(shape()));
    return node().value[0];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool flag) {
    auto& n = node();
    if (!n.leaf) throw AutodiffError("tensor: requires_grad can only be set on leaves");
    n.requires_grad = flag;
}

template <typename T>
void Tensor<T>::zero_grad() {
    auto& n = node();
    std::fill(n.grad.begin(), n.grad.end(), T(0));
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return Tensor(shape(), node().value, false);
}

template class Tensor<float>;
template class Tensor<double>;

} // namespace cavm
