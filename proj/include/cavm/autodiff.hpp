#pragma once

#include <cstdint>
#include <functional>
#include <unordered_map>
#include <vector>

#include "cavm/tensor.hpp"

namespace cavm {

/// Whether new ops record themselves on the graph (per thread).
bool grad_enabled();

/// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Leaf gradients produced by one backward pass, keyed by tensor id.
template <typename T>
class Gradients {
public:
    void set(std::uint64_t id, std::vector<T> grad) { grads_[id] = std::move(grad); }
    bool contains(const Tensor<T>& t) const { return grads_.count(t.id()) != 0; }
    /// Gradient for `t`, or zeros when the loss does not reach it.
    std::vector<T> of(const Tensor<T>& t) const;
    std::size_t size() const { return grads_.size(); }

private:
    std::unordered_map<std::uint64_t, std::vector<T>> grads_;
};

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate into each
/// leaf's grad buffer (call zero_grad between steps) and are also returned.
/// The graph is released afterwards; a second call on the same loss throws.
template <typename T>
Gradients<T> backward(const Tensor<T>& loss);

using ScalarFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

/// Max over all input coordinates of |analytic - numeric| / max(|analytic|,
/// |numeric|, 1e-3 * largest analytic magnitude), the numeric gradient taken
/// from a fourth-order central difference with step `eps`. Returns +inf on any
/// non-finite comparison. Inputs are perturbed in place and restored.
double grad_check(const ScalarFn& fn, const std::vector<Tensor<double>>& inputs, double eps = 1e-3);

} // namespace cavm
