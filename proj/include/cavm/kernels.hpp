#pragma once

#include <cstddef>
#include <span>

// Hot loops behind matmul and conv2d. The default kernels lower convolutions to
// matrix products over im2col buffers and split output rows across OpenMP
// threads; every output element keeps a fixed summation order, so results do
// not depend on the thread count. The
// `reference` namespace holds plain serial loops written independently, used
// by the tests as an oracle and by the benchmark as the baseline.
namespace cavm::kernels {

struct ConvGeometry {
    std::size_t in_channels = 0;
    std::size_t in_h = 0;
    std::size_t in_w = 0;
    std::size_t out_channels = 0;
    std::size_t kernel_h = 0;
    std::size_t kernel_w = 0;
    std::size_t stride = 1;
    std::size_t pad = 0;

    std::size_t out_h() const { return (in_h + 2 * pad - kernel_h) / stride + 1; }
    std::size_t out_w() const { return (in_w + 2 * pad - kernel_w) / stride + 1; }
};

/// c = a (m x k) * b (k x n), overwriting c.
template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c,
            std::size_t m, std::size_t k, std::size_t n);

/// out = conv(in, weight) + bias; bias may be empty.
template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out);

/// din += conv_transpose(dout, weight).
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dout,
                           std::span<const T> weight, std::span<T> din);

/// dweight += correlate(dout, in); dbias += sum(dout) when dbias is non-empty.
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> dout,
                            std::span<const T> in, std::span<T> dweight, std::span<T> dbias);

namespace reference {

template <typename T>
void matmul(std::span<const T> a, std::span<const T> b, std::span<T> c,
            std::size_t m, std::size_t k, std::size_t n);

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> in, std::span<const T> weight,
                    std::span<const T> bias, std::span<T> out);

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dout,
                           std::span<const T> weight, std::span<T> din);

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> dout,
                            std::span<const T> in, std::span<T> dweight, std::span<T> dbias);

} // namespace reference

} // namespace cavm::kernels
