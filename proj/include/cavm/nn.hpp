#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cavm/random.hpp"
#include "cavm/tensor.hpp"

namespace cavm::nn {

/// Named, insertion-ordered collection of trainable leaves.
template <typename T>
class ParameterStore {
public:
    /// Registers a zero-filled parameter.
    Tensor<T> add(const std::string& name, Shape shape);
    /// Registers a parameter drawn from uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    Tensor<T> add_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng);
    Tensor<T> add_filled(const std::string& name, Shape shape, T value);

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const Tensor<T>& get(const std::string& name) const;
    const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
    std::vector<Tensor<T>> with_prefix(std::string_view prefix) const;
    void set_requires_grad(std::string_view prefix, bool flag);
    std::size_t parameter_count() const;

private:
    std::vector<std::pair<std::string, Tensor<T>>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// y = x W + b for x of shape (rows, in).
template <typename T>
struct Linear {
    Tensor<T> weight; // (in, out)
    Tensor<T> bias;   // (out) or undefined

    static Linear create(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                         bool with_bias, bool zero_init, Rng& rng);
    Tensor<T> operator()(const Tensor<T>& x) const;
};

template <typename T>
struct Conv2d {
    Tensor<T> weight; // (out, in, k, k)
    Tensor<T> bias;   // (out); zero-initialised
    std::size_t stride = 1;
    std::size_t pad = 0;

    static Conv2d create(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                         std::size_t kernel, std::size_t stride, std::size_t pad, Rng& rng);
    Tensor<T> operator()(const Tensor<T>& x) const;
};

/// Block-structured attention permission matrix: token i may attend to token
/// k iff floor(k/n) <= floor(i/n). With n = 1 it is the causal mask.
struct StaircaseMask {
    std::size_t n_per_block = 0;
    std::size_t num_blocks = 0;
    std::vector<std::uint8_t> allowed; // row-major K x K

    std::size_t size() const { return n_per_block * num_blocks; }
    bool at(std::size_t i, std::size_t k) const { return allowed[i * size() + k] != 0; }
    /// 0 where allowed, -inf elsewhere.
    template <typename T>
    Tensor<T> additive() const;
};

StaircaseMask build_staircase_mask(std::size_t n_per_block, std::size_t num_blocks);

struct AttentionConfig {
    std::size_t embed_dim = 0;
    std::size_t num_heads = 1;
    double rope_base = 10000.0;

    std::size_t head_dim() const { return embed_dim / num_heads; }
    /// Throws ConfigError unless embed_dim splits evenly into heads of even width.
    void validate() const;
};

template <typename T>
struct AttentionWeights {
    Tensor<T> wq, wk, wv; // (D, D)
    Tensor<T> wo;         // (D, D), zero-initialised

    static AttentionWeights create(ParameterStore<T>& store, const std::string& name, std::size_t dim, Rng& rng);
};

/// Rotary embedding on x of shape (seq, heads, head_dim).
template <typename T>
Tensor<T> rope_apply(const Tensor<T>& x, std::span<const std::size_t> positions, double base);

/// y = x / sqrt(mean(x^2) + eps) * gain over the last axis.
template <typename T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& gain, T eps);

/// Masked multi-head self-attention over x of shape (K, D). RoPE is applied to
/// queries and keys at positions 0..K-1. When `attention` is non-null it
/// receives one (K, K) weight matrix per head.
template <typename T>
Tensor<T> mmhsa(const Tensor<T>& x, const StaircaseMask& mask, const AttentionConfig& config,
                const AttentionWeights<T>& weights, std::vector<Tensor<T>>* attention = nullptr);

/// Hidden width of the gated MLP: 8/3 * dim rounded up to a multiple of 8.
std::size_t mlp_hidden_dim(std::size_t dim);

template <typename T>
struct LlamaBlockWeights {
    Tensor<T> attn_norm;
    AttentionWeights<T> attn;
    Tensor<T> mlp_norm;
    Tensor<T> w_gate; // (D, H)
    Tensor<T> w_up;   // (D, H)
    Tensor<T> w_down; // (H, D), zero-initialised

    static LlamaBlockWeights create(ParameterStore<T>& store, const std::string& name, std::size_t dim, Rng& rng);
};

/// Pre-norm block: h = x + mmhsa(rmsnorm(x)); out = h + mlp(rmsnorm(h)) with
/// mlp(u) = (silu(u Wg) * (u Wu)) Wd.
template <typename T>
Tensor<T> llama_block(const Tensor<T>& x, const StaircaseMask& mask, const AttentionConfig& config,
                      const LlamaBlockWeights<T>& weights, T eps = T(1e-6));

/// Four stride-2 convolutions (kernel 4, pad 1) with leaky-relu(0.2) between
/// them; maps a (C, H, W) image to a (1, H/16, W/16) grid of real/fake logits.
template <typename T>
struct PatchDiscriminator {
    std::array<Conv2d<T>, 4> stages;

    static PatchDiscriminator create(ParameterStore<T>& store, const std::string& name, std::size_t in_channels,
                                     std::size_t base_width, Rng& rng);
    Tensor<T> operator()(const Tensor<T>& image) const;
};

} // namespace cavm::nn
