#include "cavm/adam.hpp"

#include <cmath>

#include "cavm/errors.hpp"

namespace cavm {

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamSettings settings) : params_(std::move(params)) {
    state_.settings = settings;
    for (const auto& p : params_) {
        if (!p.is_leaf()) throw AutodiffError("adam: parameters must be leaf tensors");
        state_.first_moment.emplace_back(p.size(), T(0));
        state_.second_moment.emplace_back(p.size(), T(0));
    }
}

template <typename T>
void Adam<T>::step() {
    std::vector<std::vector<T>> grads;
    grads.reserve(params_.size());
    for (const auto& p : params_) {
        auto g = p.grad();
        if (g.empty()) grads.emplace_back(p.size(), T(0));
        else grads.emplace_back(g.begin(), g.end());
    }
    step(grads);
}

template <typename T>
void Adam<T>::step(const std::vector<std::vector<T>>& grads) {
    if (grads.size() != params_.size())
        throw ShapeError("adam: got " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params_.size()) + " parameters");
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (grads[i].size() != params_[i].size() || state_.first_moment[i].size() != params_[i].size())
            throw ShapeError("adam: gradient/state size mismatch for parameter " + std::to_string(i) + " of shape " +
                             shape_str(params_[i].shape()));
    }
    const AdamSettings& s = state_.settings;
    ++state_.step_count;
    const double t = static_cast<double>(state_.step_count);
    const double bc1 = 1.0 - std::pow(s.beta1, t);
    const double bc2 = 1.0 - std::pow(s.beta2, t);
    const T b1 = static_cast<T>(s.beta1), b2 = static_cast<T>(s.beta2);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto w = params_[i].mutable_values();
        auto& m = state_.first_moment[i];
        auto& v = state_.second_moment[i];
        const auto& g = grads[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = b1 * m[j] + (T(1) - b1) * g[j];
            v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
            const double m_hat = static_cast<double>(m[j]) / bc1;
            const double v_hat = static_cast<double>(v[j]) / bc2;
            w[j] = static_cast<T>(static_cast<double>(w[j]) - s.learning_rate * m_hat / (std::sqrt(v_hat) + s.eps));
        }
    }
}

template <typename T>
void Adam<T>::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

template class Adam<float>;
template class Adam<double>;

} // namespace cavm
