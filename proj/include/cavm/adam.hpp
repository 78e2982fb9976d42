#pragma once

#include <cstdint>
#include <vector>

#include "cavm/tensor.hpp"

namespace cavm {

struct AdamSettings {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
};

template <typename T>
struct AdamState {
    AdamSettings settings;
    std::vector<std::vector<T>> first_moment;
    std::vector<std::vector<T>> second_moment;
    std::uint64_t step_count = 0;
};

/// Adam with bias correction over a fixed list of parameter tensors.
template <typename T>
class Adam {
public:
    Adam(std::vector<Tensor<T>> params, AdamSettings settings);

    /// Updates every parameter from its accumulated grad buffer (a parameter
    /// with no grad buffer is treated as having zero gradient).
    void step();
    /// Same update with explicit gradients, one per parameter in order.
    void step(const std::vector<std::vector<T>>& grads);
    void zero_grad();

    const std::vector<Tensor<T>>& params() const { return params_; }
    const AdamState<T>& state() const { return state_; }
    AdamState<T>& state() { return state_; }

private:
    std::vector<Tensor<T>> params_;
    AdamState<T> state_;
};

extern template class Adam<float>;
extern template class Adam<double>;

} // namespace cavm
