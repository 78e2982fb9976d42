#include "cavm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>

#include "cavm/autodiff.hpp"
#include "cavm/errors.hpp"
#include "cavm/kernels.hpp"

namespace cavm::ops {
namespace {

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
using BackwardFn = std::function<void(detail::Node<T>&)>;

[[noreturn]] void shape_fail(const char* op, const std::string& what) {
    throw ShapeError(std::string(op) + ": " + what);
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
    shape_fail(op, "incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

template <typename T>
void check_finite(const std::vector<T>& values, const char* op) {
    for (T v : values) {
        if (!std::isfinite(v)) throw NumericFault(std::string(op) + ": non-finite output");
    }
}

// Wraps a freshly computed value in a node; the graph edge is only kept when
// recording is enabled and some input requires gradients.
template <typename T>
Tensor<T> record(const char* op, Shape shape, std::vector<T> value,
                 std::vector<NodePtr<T>> inputs, BackwardFn<T> backward) {
    check_finite(value, op);
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    const bool track = grad_enabled() &&
                       std::any_of(inputs.begin(), inputs.end(), [](const NodePtr<T>& n) { return n->requires_grad; });
    if (track) {
        node->leaf = false;
        node->requires_grad = true;
        node->inputs = std::move(inputs);
        node->backward = std::move(backward);
    }
    return Tensor<T>::from_node(std::move(node));
}

// Gradient buffer of an input, allocated on first use; null when the input
// does not take gradients.
template <typename T>
T* grad_buffer(detail::Node<T>& n) {
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
    return n.grad.data();
}

// Flat input offsets for every output element of a broadcast.
struct BroadcastPlan {
    Shape out;
    bool same = true;
    std::vector<std::uint32_t> ia;
    std::vector<std::uint32_t> ib;
};

std::vector<std::uint32_t> broadcast_offsets(const Shape& in, const Shape& out) {
    const std::size_t r = out.size();
    const std::size_t offset = r - in.size();
    std::vector<std::size_t> stride(r, 0);
    std::size_t s = 1;
    for (std::size_t k = in.size(); k-- > 0;) {
        if (in[k] != 1) stride[k + offset] = s;
        s *= in[k];
    }
    const std::size_t n = numel(out);
    std::vector<std::uint32_t> idx(n);
    std::vector<std::size_t> counter(r, 0);
    std::size_t cur = 0;
    for (std::size_t i = 0; i < n; ++i) {
        idx[i] = static_cast<std::uint32_t>(cur);
        for (std::size_t k = r; k-- > 0;) {
            ++counter[k];
            cur += stride[k];
            if (counter[k] < out[k]) break;
            cur -= stride[k] * counter[k];
            counter[k] = 0;
        }
    }
    return idx;
}

std::shared_ptr<const BroadcastPlan> make_plan(const Shape& a, const Shape& b, const char* op) {
    auto plan = std::make_shared<BroadcastPlan>();
    plan->out = broadcast_shapes(a, b, op);
    plan->same = (a == plan->out && b == plan->out);
    if (!plan->same) {
        plan->ia = broadcast_offsets(a, plan->out);
        plan->ib = broadcast_offsets(b, plan->out);
    }
    return plan;
}

// Elementwise binary op: f(a,b) forward; da(a,b) and db(a,b) are the partials.
template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary(const char* op, const Tensor<T>& a, const Tensor<T>& b, F f, DA da, DB db) {
    auto plan = make_plan(a.shape(), b.shape(), op);
    const std::size_t n = numel(plan->out);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<T> out(n);
    if (plan->same) {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
    } else {
        for (std::size_t i = 0; i < n; ++i) out[i] = f(av[plan->ia[i]], bv[plan->ib[i]]);
    }
    return record<T>(op, plan->out, std::move(out), {a.node_ptr(), b.node_ptr()},
                     [plan, da, db](detail::Node<T>& self) {
                         auto& an = *self.inputs[0];
                         auto& bn = *self.inputs[1];
                         T* ga = grad_buffer(an);
                         T* gb = grad_buffer(bn);
                         const std::size_t n = self.value.size();
                         for (std::size_t i = 0; i < n; ++i) {
                             const std::size_t ia = plan->same ? i : plan->ia[i];
                             const std::size_t ib = plan->same ? i : plan->ib[i];
                             const T g = self.grad[i];
                             if (ga) ga[ia] += g * da(an.value[ia], bn.value[ib]);
                             if (gb) gb[ib] += g * db(an.value[ia], bn.value[ib]);
                         }
                     });
}

// Elementwise unary op with derivative expressed through input x and output y.
template <typename T, typename F, typename D>
Tensor<T> unary(const char* op, const Tensor<T>& a, F f, D d) {
    const auto av = a.values();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
    return record<T>(op, a.shape(), std::move(out), {a.node_ptr()}, [d](detail::Node<T>& self) {
        auto& an = *self.inputs[0];
        T* ga = grad_buffer(an);
        if (!ga) return;
        for (std::size_t i = 0; i < self.value.size(); ++i) ga[i] += self.grad[i] * d(an.value[i], self.value[i]);
    });
}

template <typename T>
T sigmoid_scalar(T x) {
    if (x >= 0) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

void check_rank(const char* op, const Shape& s, std::size_t rank) {
    if (s.size() != rank) shape_fail(op, "expected rank " + std::to_string(rank) + ", got shape " + shape_str(s));
}

} // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t k = 0; k < r; ++k) {
        const std::size_t da = k < r - a.size() ? 1 : a[k - (r - a.size())];
        const std::size_t db = k < r - b.size() ? 1 : b[k - (r - b.size())];
        if (da != db && da != 1 && db != 1) shape_fail(op, a, b);
        out[k] = std::max(da, db);
        if (da == 0 || db == 0) out[k] = 0;
    }
    return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary<T>("add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
                     [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary<T>("sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
                     [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary<T>("mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
                     [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary<T>("div", a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
                     [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    return unary<T>("add_scalar", a, [s](T x) { return x + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
    return unary<T>("scale", a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
    return scale(a, T(-1));
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& a, const Shape& shape) {
    auto plan = make_plan(a.shape(), shape, "broadcast_to");
    if (plan->out != shape) shape_fail("broadcast_to", a.shape(), shape);
    const auto av = a.values();
    std::vector<T> out(numel(shape));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[plan->same ? i : plan->ia[i]];
    return record<T>("broadcast_to", shape, std::move(out), {a.node_ptr()}, [plan](detail::Node<T>& self) {
        T* ga = grad_buffer(*self.inputs[0]);
        if (!ga) return;
        for (std::size_t i = 0; i < self.value.size(); ++i) ga[plan->same ? i : plan->ia[i]] += self.grad[i];
    });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) shape_fail("matmul", sa, sb);
    const std::size_t m = sa[0], k = sa[1], n = sb[1];
    std::vector<T> out(m * n);
    kernels::matmul<T>(a.values(), b.values(), out, m, k, n);
    return record<T>("matmul", {m, n}, std::move(out), {a.node_ptr(), b.node_ptr()},
                     [m, k, n](detail::Node<T>& self) {
                         auto& an = *self.inputs[0];
                         auto& bn = *self.inputs[1];
                         if (T* ga = grad_buffer(an)) {
                             // dA = dC * B^T
                             std::vector<T> bt(k * n);
                             for (std::size_t p = 0; p < k; ++p)
                                 for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = bn.value[p * n + j];
                             std::vector<T> tmp(m * k);
                             kernels::matmul<T>(self.grad, bt, tmp, m, n, k);
                             for (std::size_t i = 0; i < tmp.size(); ++i) ga[i] += tmp[i];
                         }
                         if (T* gb = grad_buffer(bn)) {
                             // dB = A^T * dC
                             std::vector<T> at(m * k);
                             for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t p = 0; p < k; ++p) at[p * m + i] = an.value[i * k + p];
                             std::vector<T> tmp(k * n);
                             kernels::matmul<T>(at, self.grad, tmp, k, m, n);
                             for (std::size_t i = 0; i < tmp.size(); ++i) gb[i] += tmp[i];
                         }
                     });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    if (numel(shape) != a.size()) shape_fail("reshape", a.shape(), shape);
    std::vector<T> out(a.values().begin(), a.values().end());
    return record<T>("reshape", std::move(shape), std::move(out), {a.node_ptr()}, [](detail::Node<T>& self) {
        T* ga = grad_buffer(*self.inputs[0]);
        if (!ga) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
    check_rank("transpose", a.shape(), 2);
    const std::size_t r = a.dim(0), c = a.dim(1);
    const auto av = a.values();
    std::vector<T> out(r * c);
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
    return record<T>("transpose", {c, r}, std::move(out), {a.node_ptr()}, [r, c](detail::Node<T>& self) {
        T* ga = grad_buffer(*self.inputs[0]);
        if (!ga) return;
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += self.grad[j * r + i];
    });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) shape_fail("concat", "no operands");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) shape_fail("concat", "axis " + std::to_string(axis) + " out of range for " + shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size()) shape_fail("concat", first, s);
        for (std::size_t k = 0; k < s.size(); ++k)
            if (k != axis && s[k] != first[k]) shape_fail("concat", first, s);
        out_shape[axis] += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t k = 0; k < axis; ++k) outer *= first[k];
    for (std::size_t k = axis + 1; k < first.size(); ++k) inner *= first[k];
    const std::size_t row = out_shape[axis] * inner;

    std::vector<T> out(numel(out_shape));
    std::vector<std::size_t> widths;
    std::vector<NodePtr<T>> inputs;
    std::size_t col = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.shape()[axis] * inner;
        const auto pv = p.values();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * w), w, out.begin() + static_cast<std::ptrdiff_t>(o * row + col));
        widths.push_back(w);
        inputs.push_back(p.node_ptr());
        col += w;
    }
    return record<T>("concat", std::move(out_shape), std::move(out), std::move(inputs),
                     [widths, outer, row](detail::Node<T>& self) {
                         std::size_t col = 0;
                         for (std::size_t i = 0; i < widths.size(); ++i) {
                             const std::size_t w = widths[i];
                             if (T* g = grad_buffer(*self.inputs[i])) {
                                 for (std::size_t o = 0; o < outer; ++o)
                                     for (std::size_t j = 0; j < w; ++j) g[o * w + j] += self.grad[o * row + col + j];
                             }
                             col += w;
                         }
                     });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const Shape& s = a.shape();
    if (axis >= s.size() || begin > end || end > s[axis]) {
        shape_fail("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                                std::to_string(axis) + " of " + shape_str(s));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t k = 0; k < axis; ++k) outer *= s[k];
    for (std::size_t k = axis + 1; k < s.size(); ++k) inner *= s[k];
    Shape out_shape = s;
    out_shape[axis] = end - begin;
    const std::size_t src_row = s[axis] * inner;
    const std::size_t w = (end - begin) * inner;
    const std::size_t off = begin * inner;
    const auto av = a.values();
    std::vector<T> out(outer * w);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(o * src_row + off), w, out.begin() + static_cast<std::ptrdiff_t>(o * w));
    return record<T>("slice", std::move(out_shape), std::move(out), {a.node_ptr()},
                     [outer, w, src_row, off](detail::Node<T>& self) {
                         T* ga = grad_buffer(*self.inputs[0]);
                         if (!ga) return;
                         for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t j = 0; j < w; ++j) ga[o * src_row + off + j] += self.grad[o * w + j];
                     });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    return unary<T>("exp", a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
    return unary<T>("log", a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
    return unary<T>("sqrt", a, [](T x) { return std::sqrt(x); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> pow(const Tensor<T>& a, T exponent) {
    return unary<T>("pow", a, [exponent](T x) { return std::pow(x, exponent); },
                    [exponent](T x, T) { return exponent * std::pow(x, exponent - T(1)); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
    return unary<T>("abs", a, [](T x) { return std::abs(x); },
                    [](T x, T) { return x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = 0;
    for (T v : a.values()) acc += v;
    return record<T>("sum", {}, {acc}, {a.node_ptr()}, [](detail::Node<T>& self) {
        auto& an = *self.inputs[0];
        T* ga = grad_buffer(an);
        if (!ga) return;
        for (std::size_t i = 0; i < an.value.size(); ++i) ga[i] += self.grad[0];
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    if (a.size() == 0) shape_fail("mean", "empty tensor");
    return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Tensor<T> sum_last(const Tensor<T>& a) {
    const Shape& s = a.shape();
    if (s.empty()) shape_fail("sum_last", "rank-0 tensor");
    const std::size_t len = s.back();
    const std::size_t rows = len ? a.size() / len : 0;
    Shape out_shape = s;
    out_shape.back() = 1;
    const auto av = a.values();
    std::vector<T> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        T acc = 0;
        for (std::size_t j = 0; j < len; ++j) acc += av[r * len + j];
        out[r] = acc;
    }
    return record<T>("sum_last", std::move(out_shape), std::move(out), {a.node_ptr()}, [len](detail::Node<T>& self) {
        T* ga = grad_buffer(*self.inputs[0]);
        if (!ga) return;
        for (std::size_t r = 0; r < self.value.size(); ++r)
            for (std::size_t j = 0; j < len; ++j) ga[r * len + j] += self.grad[r];
    });
}

template <typename T>
Tensor<T> mean_last(const Tensor<T>& a) {
    return scale(sum_last(a), T(1) / static_cast<T>(a.shape().back()));
}

template <typename T>
Tensor<T> softmax_masked(const Tensor<T>& a, const Tensor<T>& mask) {
    const Shape& s = a.shape();
    if (s.empty()) shape_fail("softmax_masked", "rank-0 tensor");
    const std::size_t len = s.back();
    const bool has_mask = mask.defined();
    std::size_t mask_rows = 0;
    if (has_mask) {
        const Shape& ms = mask.shape();
        if (ms.empty() || ms.size() > s.size() || !std::equal(ms.begin(), ms.end(), s.end() - static_cast<std::ptrdiff_t>(ms.size())))
            shape_fail("softmax_masked", s, ms);
        mask_rows = mask.size() / len;
    }
    const std::size_t rows = a.size() / len;
    const auto av = a.values();
    std::vector<T> out(a.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* m = has_mask ? mask.values().data() + (r % mask_rows) * len : nullptr;
        T hi = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < len; ++j) {
            const T z = av[r * len + j] + (m ? m[j] : T(0));
            hi = std::max(hi, z);
        }
        if (!std::isfinite(hi)) shape_fail("softmax_masked", "row " + std::to_string(r) + " is fully masked");
        T total = 0;
        for (std::size_t j = 0; j < len; ++j) {
            const T z = av[r * len + j] + (m ? m[j] : T(0));
            const T e = std::isinf(z) ? T(0) : std::exp(z - hi);
            out[r * len + j] = e;
            total += e;
        }
        for (std::size_t j = 0; j < len; ++j) out[r * len + j] /= total;
    }
    return record<T>("softmax_masked", s, std::move(out), {a.node_ptr()}, [len, rows](detail::Node<T>& self) {
        T* ga = grad_buffer(*self.inputs[0]);
        if (!ga) return;
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = self.value.data() + r * len;
            const T* g = self.grad.data() + r * len;
            T dot = 0;
            for (std::size_t j = 0; j < len; ++j) dot += g[j] * y[j];
            for (std::size_t j = 0; j < len; ++j) ga[r * len + j] += y[j] * (g[j] - dot);
        }
    });
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
    return softmax_masked(a, Tensor<T>{});
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
    check_rank("conv2d", x.shape(), 3);
    check_rank("conv2d", weight.shape(), 4);
    if (weight.dim(1) != x.dim(0)) shape_fail("conv2d", x.shape(), weight.shape());
    if (stride == 0) shape_fail("conv2d", "stride must be positive");
    kernels::ConvGeometry g;
    g.in_channels = x.dim(0);
    g.in_h = x.dim(1);
    g.in_w = x.dim(2);
    g.out_channels = weight.dim(0);
    g.kernel_h = weight.dim(2);
    g.kernel_w = weight.dim(3);
    g.stride = stride;
    g.pad = pad;
    if (g.in_h + 2 * pad < g.kernel_h || g.in_w + 2 * pad < g.kernel_w)
        shape_fail("conv2d", "kernel larger than padded input: " + shape_str(x.shape()) + " vs " + shape_str(weight.shape()));
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != g.out_channels)) shape_fail("conv2d", weight.shape(), bias.shape());

    std::vector<T> out(g.out_channels * g.out_h() * g.out_w());
    kernels::conv2d_forward<T>(g, x.values(), weight.values(), has_bias ? bias.values() : std::span<const T>{}, out);
    std::vector<NodePtr<T>> inputs{x.node_ptr(), weight.node_ptr()};
    if (has_bias) inputs.push_back(bias.node_ptr());
    return record<T>("conv2d", {g.out_channels, g.out_h(), g.out_w()}, std::move(out), std::move(inputs),
                     [g, has_bias](detail::Node<T>& self) {
                         auto& xn = *self.inputs[0];
                         auto& wn = *self.inputs[1];
                         if (T* gx = grad_buffer(xn))
                             kernels::conv2d_backward_input<T>(g, self.grad, wn.value, std::span<T>(gx, xn.value.size()));
                         T* gw = grad_buffer(wn);
                         T* gb = has_bias ? grad_buffer(*self.inputs[2]) : nullptr;
                         if (gw) {
                             kernels::conv2d_backward_weight<T>(g, self.grad, xn.value, std::span<T>(gw, wn.value.size()),
                                                                gb ? std::span<T>(gb, g.out_channels) : std::span<T>{});
                         } else if (gb) {
                             const std::size_t plane = g.out_h() * g.out_w();
                             for (std::size_t o = 0; o < g.out_channels; ++o)
                                 for (std::size_t i = 0; i < plane; ++i) gb[o] += self.grad[o * plane + i];
                         }
                     });
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t factor) {
    check_rank("upsample_nearest", x.shape(), 3);
    if (factor == 0) shape_fail("upsample_nearest", "factor must be positive");
    const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const std::size_t oh = h * factor, ow = w * factor;
    const auto xv = x.values();
    std::vector<T> out(c * oh * ow);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx)
                out[(ch * oh + y) * ow + xx] = xv[(ch * h + y / factor) * w + xx / factor];
    return record<T>("upsample_nearest", {c, oh, ow}, std::move(out), {x.node_ptr()},
                     [c, h, w, oh, ow, factor](detail::Node<T>& self) {
                         T* gx = grad_buffer(*self.inputs[0]);
                         if (!gx) return;
                         for (std::size_t ch = 0; ch < c; ++ch)
                             for (std::size_t y = 0; y < oh; ++y)
                                 for (std::size_t xx = 0; xx < ow; ++xx)
                                     gx[(ch * h + y / factor) * w + xx / factor] += self.grad[(ch * oh + y) * ow + xx];
                     });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
    return unary<T>("leaky_relu", a, [slope](T x) { return x > 0 ? x : slope * x; },
                    [slope](T x, T) { return x > 0 ? T(1) : slope; });
}

template <typename T>
Tensor<T> silu(const Tensor<T>& a) {
    return unary<T>("silu", a, [](T x) { return x * sigmoid_scalar(x); },
                    [](T x, T) {
                        const T s = sigmoid_scalar(x);
                        return s * (T(1) + x * (T(1) - s));
                    });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return unary<T>("sigmoid", a, [](T x) { return sigmoid_scalar(x); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
    return unary<T>("softplus", a, [](T x) { return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x))); },
                    [](T x, T) { return sigmoid_scalar(x); });
}

template <typename T>
Tensor<T> rope(const Tensor<T>& x, std::span<const std::size_t> positions, double base) {
    const Shape& s = x.shape();
    if (s.size() < 2) shape_fail("rope", "expected (seq, ..., head_dim), got " + shape_str(s));
    const std::size_t seq = s.front();
    const std::size_t head_dim = s.back();
    if (head_dim % 2 != 0) shape_fail("rope", "head_dim must be even, got " + std::to_string(head_dim));
    if (positions.size() != seq)
        shape_fail("rope", "got " + std::to_string(positions.size()) + " positions for sequence length " + std::to_string(seq));
    const std::size_t per_pos = x.size() / seq;
    const std::size_t half = head_dim / 2;

    // cos/sin table per (position index, pair)
    auto table = std::make_shared<std::vector<T>>(seq * half * 2);
    for (std::size_t p = 0; p < seq; ++p) {
        for (std::size_t j = 0; j < half; ++j) {
            const double inv_freq = std::pow(base, -2.0 * static_cast<double>(j) / static_cast<double>(head_dim));
            const double angle = static_cast<double>(positions[p]) * inv_freq;
            (*table)[(p * half + j) * 2] = static_cast<T>(std::cos(angle));
            (*table)[(p * half + j) * 2 + 1] = static_cast<T>(std::sin(angle));
        }
    }
    const auto xv = x.values();
    std::vector<T> out(x.size());
    for (std::size_t p = 0; p < seq; ++p) {
        for (std::size_t base_i = p * per_pos; base_i < (p + 1) * per_pos; base_i += head_dim) {
            for (std::size_t j = 0; j < half; ++j) {
                const T c = (*table)[(p * half + j) * 2];
                const T sn = (*table)[(p * half + j) * 2 + 1];
                const T x0 = xv[base_i + 2 * j];
                const T x1 = xv[base_i + 2 * j + 1];
                out[base_i + 2 * j] = x0 * c - x1 * sn;
                out[base_i + 2 * j + 1] = x0 * sn + x1 * c;
            }
        }
    }
    return record<T>("rope", s, std::move(out), {x.node_ptr()},
                     [table, seq, per_pos, head_dim, half](detail::Node<T>& self) {
                         T* gx = grad_buffer(*self.inputs[0]);
                         if (!gx) return;
                         for (std::size_t p = 0; p < seq; ++p) {
                             for (std::size_t base_i = p * per_pos; base_i < (p + 1) * per_pos; base_i += head_dim) {
                                 for (std::size_t j = 0; j < half; ++j) {
                                     const T c = (*table)[(p * half + j) * 2];
                                     const T sn = (*table)[(p * half + j) * 2 + 1];
                                     const T g0 = self.grad[base_i + 2 * j];
                                     const T g1 = self.grad[base_i + 2 * j + 1];
                                     gx[base_i + 2 * j] += g0 * c + g1 * sn;
                                     gx[base_i + 2 * j + 1] += -g0 * sn + g1 * c;
                                 }
                             }
                         }
                     });
}

#define CAVM_INSTANTIATE_OPS(T)                                                                              \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                           \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                           \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                           \
    template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                                           \
    template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                                   \
    template Tensor<T> scale<T>(const Tensor<T>&, T);                                                        \
    template Tensor<T> neg<T>(const Tensor<T>&);                                                             \
    template Tensor<T> broadcast_to<T>(const Tensor<T>&, const Shape&);                                      \
    template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                                  \
    template Tensor<T> transpose<T>(const Tensor<T>&);                                                       \
    template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::size_t);                                \
    template Tensor<T> slice<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                    \
    template Tensor<T> exp<T>(const Tensor<T>&);                                                             \
    template Tensor<T> log<T>(const Tensor<T>&);                                                             \
    template Tensor<T> sqrt<T>(const Tensor<T>&);                                                            \
    template Tensor<T> pow<T>(const Tensor<T>&, T);                                                          \
    template Tensor<T> abs<T>(const Tensor<T>&);                                                             \
    template Tensor<T> sum<T>(const Tensor<T>&);                                                             \
    template Tensor<T> mean<T>(const Tensor<T>&);                                                            \
    template Tensor<T> sum_last<T>(const Tensor<T>&);                                                        \
    template Tensor<T> mean_last<T>(const Tensor<T>&);                                                       \
    template Tensor<T> softmax_masked<T>(const Tensor<T>&, const Tensor<T>&);                                \
    template Tensor<T> softmax<T>(const Tensor<T>&);                                                         \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,          \
                                 std::size_t);                                                               \
    template Tensor<T> upsample_nearest<T>(const Tensor<T>&, std::size_t);                                   \
    template Tensor<T> leaky_relu<T>(const Tensor<T>&, T);                                                   \
    template Tensor<T> silu<T>(const Tensor<T>&);                                                            \
    template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                         \
    template Tensor<T> softplus<T>(const Tensor<T>&);                                                        \
    template Tensor<T> rope<T>(const Tensor<T>&, std::span<const std::size_t>, double);

CAVM_INSTANTIATE_OPS(float)
CAVM_INSTANTIATE_OPS(double)

#undef CAVM_INSTANTIATE_OPS

} // namespace cavm::ops
