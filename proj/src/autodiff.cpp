#include "cavm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "cavm/errors.hpp"

namespace cavm {
namespace {
thread_local bool g_grad_enabled = true;
} // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
std::vector<T> Gradients<T>::of(const Tensor<T>& t) const {
    auto it = grads_.find(t.id());
    if (it == grads_.end()) return std::vector<T>(t.size(), T(0));
    return it->second;
}

template <typename T>
Gradients<T> backward(const Tensor<T>& loss) {
    using Node = detail::Node<T>;
    if (!loss.defined()) throw AutodiffError("backward: undefined loss");
    if (loss.size() != 1) throw AutodiffError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    Node* root = loss.node_ptr().get();
    if (root->consumed) throw AutodiffError("backward: graph already consumed; run the forward pass again");

    Gradients<T> result;
    if (!root->requires_grad) return result;

    // Iterative post-order DFS gives a topological order with each node once.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    if (root->leaf) {
        if (root->grad.empty()) root->grad.assign(1, T(0));
        root->grad[0] += T(1);
    } else {
        root->grad.assign(1, T(1));
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->leaf || node->grad.empty() || !node->backward) continue;
        node->backward(*node);
    }
    for (Node* node : order) {
        if (node->leaf) {
            result.set(node->id, node->grad);
        } else {
            node->grad.clear();
            node->grad.shrink_to_fit();
            node->backward = nullptr;
            node->inputs.clear();
            node->consumed = true;
        }
    }
    root->consumed = true;
    return result;
}

double grad_check(const ScalarFn& fn, const std::vector<Tensor<double>>& inputs, double eps) {
    std::vector<Tensor<double>> args = inputs;
    for (auto& t : args) {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    const Tensor<double> loss = fn(args);
    const Gradients<double> grads = backward(loss);

    std::vector<std::vector<double>> analytic;
    double scale = 0.0;
    for (const auto& t : args) {
        analytic.push_back(grads.of(t));
        for (double g : analytic.back()) scale = std::max(scale, std::abs(g));
    }

    NoGradGuard no_grad;
    double worst = 0.0;
    for (std::size_t a = 0; a < args.size(); ++a) {
        auto values = args[a].mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double original = values[i];
            auto at = [&](double offset) {
                values[i] = original + offset;
                return fn(args).item();
            };
            const double numeric = (8.0 * (at(eps) - at(-eps)) - (at(2.0 * eps) - at(-2.0 * eps))) / (12.0 * eps);
            values[i] = original;
            const double g = analytic[a][i];
            if (!std::isfinite(numeric) || !std::isfinite(g)) return std::numeric_limits<double>::infinity();
            const double denom = std::max({std::abs(g), std::abs(numeric), 1e-3 * scale, 1e-12});
            worst = std::max(worst, std::abs(g - numeric) / denom);
        }
        args[a].zero_grad();
    }
    return worst;
}

template class Gradients<float>;
template class Gradients<double>;
template Gradients<float> backward<float>(const Tensor<float>&);
template Gradients<double> backward<double>(const Tensor<double>&);

} // namespace cavm
