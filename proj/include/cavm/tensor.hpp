#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cavm {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

std::uint64_t next_node_id();

// One vertex of the define-by-run graph. Non-leaf nodes keep their inputs and a
// closure that pushes `grad` into the inputs' grad buffers.
template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    bool leaf = true;
    bool consumed = false;
    std::uint64_t id = next_node_id();
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
};

} // namespace detail

/// Dense row-major tensor with optional gradient tracking.
///
/// A Tensor is a shared handle: copies alias the same storage and graph node.
template <typename T>
class Tensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Tensor() = default;
    Tensor(Shape shape, std::vector<T> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);
    static Tensor from_node(NodePtr node);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const { return node().value.size(); }

    std::span<const T> values() const { return node().value; }
    /// Writable view of a leaf's storage. Mutating a leaf that feeds a live
    /// graph invalidates that graph's backward pass.
    std::span<T> mutable_values();
    T item() const;
    T operator[](std::size_t flat) const { return node().value[flat]; }

    bool requires_grad() const { return node().requires_grad; }
    void set_requires_grad(bool flag);
    bool is_leaf() const { return node().leaf; }
    std::uint64_t id() const { return node().id; }
    const char* op_name() const { return node().op; }

    /// Accumulated gradient of a leaf; empty until a backward pass reaches it.
    std::span<const T> grad() const { return node().grad; }
    void zero_grad();

    /// Fresh leaf holding a copy of the values, disconnected from any graph.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    const NodePtr& node_ptr() const noexcept { return node_; }

private:
    detail::Node<T>& node() const;

    NodePtr node_;
};

/// Element-type conversion (float <-> double); produces a leaf.
template <typename To, typename From>
Tensor<To> convert(const Tensor<From>& t, bool requires_grad = false) {
    std::vector<To> out(t.values().begin(), t.values().end());
    return Tensor<To>(t.shape(), std::move(out), requires_grad);
}

extern template class Tensor<float>;
extern template class Tensor<double>;

} // namespace cavm
