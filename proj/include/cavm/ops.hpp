#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cavm/tensor.hpp"

// Differentiable tensor operations. Every op validates shapes, rejects
// non-finite results with NumericFault, and records itself on the graph when
// any operand requires gradients.
//
// Broadcasting (add/sub/mul/div) aligns trailing axes; an axis broadcasts when
// its extent is 1 or it is missing.
namespace cavm::ops {

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> broadcast_to(const Tensor<T>& a, const Shape& shape);

/// (M,K) x (K,N) -> (M,N).
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
/// Swaps the two axes of a rank-2 tensor.
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
/// Half-open range [begin, end) along `axis`.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t begin, std::size_t end);

template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);
template <typename T> Tensor<T> pow(const Tensor<T>& a, T exponent);
template <typename T> Tensor<T> abs(const Tensor<T>& a);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
/// Reduces the last axis, keeping it with extent 1.
template <typename T> Tensor<T> sum_last(const Tensor<T>& a);
template <typename T> Tensor<T> mean_last(const Tensor<T>& a);

/// Softmax over the last axis of `a + mask`. `mask` is a constant additive
/// mask (0 or -inf entries) whose shape matches the trailing axes of `a`.
/// Every row must keep at least one finite position.
template <typename T>
Tensor<T> softmax_masked(const Tensor<T>& a, const Tensor<T>& mask);
template <typename T> Tensor<T> softmax(const Tensor<T>& a);

/// x: (C,H,W), weight: (O,C,kh,kw), bias: (O) or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad);
/// Nearest-neighbour upsampling of a (C,H,W) tensor by an integer factor.
template <typename T> Tensor<T> upsample_nearest(const Tensor<T>& x, std::size_t factor);

template <typename T> Tensor<T> leaky_relu(const Tensor<T>& a, T slope);
template <typename T> Tensor<T> silu(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
/// log(1 + exp(a)), evaluated without overflow.
template <typename T> Tensor<T> softplus(const Tensor<T>& a);

/// Rotary position embedding. `x` has shape (seq, ..., head_dim) with even
/// head_dim; every consecutive pair (2j, 2j+1) of the vector at sequence index
/// s is rotated by positions[s] * base^(-2j/head_dim).
template <typename T>
Tensor<T> rope(const Tensor<T>& x, std::span<const std::size_t> positions, double base);

} // namespace cavm::ops

namespace cavm {

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return ops::add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return ops::sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return ops::mul(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a) { return ops::neg(a); }

} // namespace cavm
