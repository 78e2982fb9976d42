#include "cavm/kernels.hpp"

#include <algorithm>
#include <cstddef>
#include <vector>

namespace cavm::kernels {
namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelThreshold = 1 << 15;

using Index = std::ptrdiff_t;

// Output columns ox for which ox*stride + kx - pad lands inside [0, in_w).
inline void valid_range(std::size_t kx, const ConvGeometry& g, std::size_t out_w,
                        std::size_t& lo, std::size_t& hi) {
    const Index offset = static_cast<Index>(kx) - static_cast<Index>(g.pad);
    const Index s = static_cast<Index>(g.stride);
    Index first = 0;
    if (offset < 0) first = (-offset + s - 1) / s;
    Index last = (static_cast<Index>(g.in_w) - 1 - offset);
    last = last < 0 ? -1 : last / s;
    lo = static_cast<std::size_t>(first);
    hi = static_cast<std::size_t>(std::min<Index>(last + 1, static_cast<Index>(out_w)));
    if (hi < lo) hi = lo;
}

} // namespace

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c,
            std::size_t m, std::size_t k, std::size_t n) {
    const bool parallel = m * k * n >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (parallel)
    for (Index i = 0; i < static_cast<Index>(m); ++i) {
        T* row = c.data() + static_cast<std::size_t>(i) * n;
        std::fill(row, row + n, T(0));
        const T* arow = a.data() + static_cast<std::size_t>(i) * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
    }
}

namespace {

// col[q][p] with q = (c, ky, kx) and p = (oy, ox); zero where the window
// leaves the image. With `transposed` the layout is col[p][q].
template <typename T>
void im2col(const ConvGeometry& g, const T* in, T* col, bool transposed) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    const std::size_t kk = g.kernel_h * g.kernel_w;
    const std::size_t q_count = g.in_channels * kk, p_count = oh * ow;
    const bool parallel = q_count * p_count >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (parallel)
    for (Index q = 0; q < static_cast<Index>(q_count); ++q) {
        const std::size_t c = static_cast<std::size_t>(q) / kk;
        const std::size_t ky = (static_cast<std::size_t>(q) % kk) / g.kernel_w;
        const std::size_t kx = static_cast<std::size_t>(q) % g.kernel_w;
        const T* src = in + c * g.in_h * g.in_w;
        std::size_t lo, hi;
        valid_range(kx, g, ow, lo, hi);
        for (std::size_t oy = 0; oy < oh; ++oy) {
            const Index iy = static_cast<Index>(oy * g.stride + ky) - static_cast<Index>(g.pad);
            const bool row_ok = iy >= 0 && iy < static_cast<Index>(g.in_h);
            const Index base = iy * static_cast<Index>(g.in_w) + static_cast<Index>(kx) - static_cast<Index>(g.pad);
            for (std::size_t ox = 0; ox < ow; ++ox) {
                const T v = row_ok && ox >= lo && ox < hi ? src[base + static_cast<Index>(ox * g.stride)] : T(0);
                const std::size_t p = oy * ow + ox;
                if (transposed) {
                    col[p * q_count + static_cast<std::size_t>(q)] = v;
                } else {
                    col[static_cast<std::size_t>(q) * p_count + p] = v;
                }
            }
        }
    }
}

} // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
    const std::size_t plane = g.out_h() * g.out_w();
    const std::size_t q_count = g.in_channels * g.kernel_h * g.kernel_w;
    std::vector<T> col(q_count * plane);
    im2col(g, in.data(), col.data(), false);
    matmul<T>(weight, col, out, g.out_channels, q_count, plane);
    if (!bias.empty()) {
        for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
            T* dst = out.data() + oc * plane;
            for (std::size_t p = 0; p < plane; ++p) dst[p] += bias[oc];
        }
    }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dout,
                           std::span<const T> weight, std::span<T> din) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    const std::size_t plane = oh * ow;
    const std::size_t kk = g.kernel_h * g.kernel_w;
    const std::size_t q_count = g.in_channels * kk;
    std::vector<T> wt(q_count * g.out_channels);
    for (std::size_t o = 0; o < g.out_channels; ++o)
        for (std::size_t q = 0; q < q_count; ++q) wt[q * g.out_channels + o] = weight[o * q_count + q];
    std::vector<T> gcol(q_count * plane);
    matmul<T>(wt, dout, gcol, q_count, g.out_channels, plane);

    const bool parallel = q_count * plane >= kParallelThreshold;
#pragma omp parallel for schedule(static) if (parallel)
    for (Index c = 0; c < static_cast<Index>(g.in_channels); ++c) {
        T* dst = din.data() + static_cast<std::size_t>(c) * g.in_h * g.in_w;
        for (std::size_t k = 0; k < kk; ++k) {
            const std::size_t ky = k / g.kernel_w, kx = k % g.kernel_w;
            const T* src = gcol.data() + (static_cast<std::size_t>(c) * kk + k) * plane;
            std::size_t lo, hi;
            valid_range(kx, g, ow, lo, hi);
            for (std::size_t oy = 0; oy < oh; ++oy) {
                const Index iy = static_cast<Index>(oy * g.stride + ky) - static_cast<Index>(g.pad);
                if (iy < 0 || iy >= static_cast<Index>(g.in_h)) continue;
                const Index base = iy * static_cast<Index>(g.in_w) + static_cast<Index>(kx) - static_cast<Index>(g.pad);
                const T* srow = src + oy * ow;
                for (std::size_t ox = lo; ox < hi; ++ox) dst[base + static_cast<Index>(ox * g.stride)] += srow[ox];
            }
        }
    }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> dout,
                            std::span<const T> in, std::span<T> dweight, std::span<T> dbias) {
    const std::size_t plane = g.out_h() * g.out_w();
    const std::size_t q_count = g.in_channels * g.kernel_h * g.kernel_w;
    if (!dbias.empty()) {
        for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
            const T* src = dout.data() + oc * plane;
            T acc = 0;
            for (std::size_t p = 0; p < plane; ++p) acc += src[p];
            dbias[oc] += acc;
        }
    }
    std::vector<T> col_t(plane * q_count);
    im2col(g, in.data(), col_t.data(), true);
    std::vector<T> dw(g.out_channels * q_count);
    matmul<T>(dout, col_t, dw, g.out_channels, plane, q_count);
    for (std::size_t i = 0; i < dw.size(); ++i) dweight[i] += dw[i];
}

namespace reference {

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c,
            std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            c[i * n + j] = acc;
        }
    }
}

// Reads input pixel (c, y, x) of the zero-padded image.
template <typename T>
T padded(const ConvGeometry& g, std::span<const T> in, std::size_t c, Index y, Index x) {
    if (y < 0 || x < 0 || y >= static_cast<Index>(g.in_h) || x >= static_cast<Index>(g.in_w)) return T(0);
    return in[(c * g.in_h + static_cast<std::size_t>(y)) * g.in_w + static_cast<std::size_t>(x)];
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    for (std::size_t o = 0; o < g.out_channels; ++o) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                T acc = bias.empty() ? T(0) : bias[o];
                for (std::size_t c = 0; c < g.in_channels; ++c) {
                    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
                        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                            const Index iy = static_cast<Index>(y * g.stride + ky) - static_cast<Index>(g.pad);
                            const Index ix = static_cast<Index>(x * g.stride + kx) - static_cast<Index>(g.pad);
                            acc += weight[((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx] *
                                   padded(g, in, c, iy, ix);
                        }
                    }
                }
                out[(o * oh + y) * ow + x] = acc;
            }
        }
    }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dout,
                           std::span<const T> weight, std::span<T> din) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    for (std::size_t o = 0; o < g.out_channels; ++o) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                const T go = dout[(o * oh + y) * ow + x];
                for (std::size_t c = 0; c < g.in_channels; ++c) {
                    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
                        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                            const Index iy = static_cast<Index>(y * g.stride + ky) - static_cast<Index>(g.pad);
                            const Index ix = static_cast<Index>(x * g.stride + kx) - static_cast<Index>(g.pad);
                            if (iy < 0 || ix < 0 || iy >= static_cast<Index>(g.in_h) || ix >= static_cast<Index>(g.in_w)) continue;
                            din[(c * g.in_h + static_cast<std::size_t>(iy)) * g.in_w + static_cast<std::size_t>(ix)] +=
                                go * weight[((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> dout,
                            std::span<const T> in, std::span<T> dweight, std::span<T> dbias) {
    const std::size_t oh = g.out_h(), ow = g.out_w();
    for (std::size_t o = 0; o < g.out_channels; ++o) {
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t x = 0; x < ow; ++x) {
                const T go = dout[(o * oh + y) * ow + x];
                if (!dbias.empty()) dbias[o] += go;
                for (std::size_t c = 0; c < g.in_channels; ++c) {
                    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
                        for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
                            const Index iy = static_cast<Index>(y * g.stride + ky) - static_cast<Index>(g.pad);
                            const Index ix = static_cast<Index>(x * g.stride + kx) - static_cast<Index>(g.pad);
                            dweight[((o * g.in_channels + c) * g.kernel_h + ky) * g.kernel_w + kx] +=
                                go * padded(g, in, c, iy, ix);
                        }
                    }
                }
            }
        }
    }
}

} // namespace reference

#define CAVM_INSTANTIATE_KERNELS(NS, T)                                                                  \
    template void NS::matmul<T>(std::span<const T>, std::span<const T>, std::span<T>, std::size_t,      \
                                std::size_t, std::size_t);                                                \
    template void NS::conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,     \
                                        std::span<const T>, std::span<T>);                               \
    template void NS::conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>,                  \
                                               std::span<const T>, std::span<T>);                        \
    template void NS::conv2d_backward_weight<T>(const ConvGeometry&, std::span<const T>,                 \
                                                std::span<const T>, std::span<T>, std::span<T>);

CAVM_INSTANTIATE_KERNELS(kernels, float)
CAVM_INSTANTIATE_KERNELS(kernels, double)
CAVM_INSTANTIATE_KERNELS(reference, float)
CAVM_INSTANTIATE_KERNELS(reference, double)

#undef CAVM_INSTANTIATE_KERNELS

} // namespace cavm::kernels
