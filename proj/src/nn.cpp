#include "cavm/nn.hpp"

#include <cmath>
#include <limits>

#include "cavm/errors.hpp"
#include "cavm/ops.hpp"

namespace cavm::nn {

template <typename T>
Tensor<T> ParameterStore<T>::add(const std::string& name, Shape shape) {
    return add_filled(name, std::move(shape), T(0));
}

template <typename T>
Tensor<T> ParameterStore<T>::add_filled(const std::string& name, Shape shape, T value) {
    if (contains(name)) throw ConfigError("parameter '" + name + "' registered twice");
    Tensor<T> t = Tensor<T>::full(std::move(shape), value, true);
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, t);
    return t;
}

template <typename T>
Tensor<T> ParameterStore<T>::add_uniform(const std::string& name, Shape shape, std::size_t fan_in, Rng& rng) {
    Tensor<T> t = add(name, std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (T& v : t.mutable_values()) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
}

template <typename T>
const Tensor<T>& ParameterStore<T>::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
    return entries_[it->second].second;
}

template <typename T>
std::vector<Tensor<T>> ParameterStore<T>::with_prefix(std::string_view prefix) const {
    std::vector<Tensor<T>> out;
    for (const auto& [name, t] : entries_)
        if (std::string_view(name).substr(0, prefix.size()) == prefix) out.push_back(t);
    return out;
}

template <typename T>
void ParameterStore<T>::set_requires_grad(std::string_view prefix, bool flag) {
    for (auto& t : with_prefix(prefix)) t.set_requires_grad(flag);
}

template <typename T>
std::size_t ParameterStore<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.size();
    return n;
}

template <typename T>
Linear<T> Linear<T>::create(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                            bool with_bias, bool zero_init, Rng& rng) {
    Linear l;
    l.weight = zero_init ? store.add(name + ".weight", {in, out}) : store.add_uniform(name + ".weight", {in, out}, in, rng);
    if (with_bias) l.bias = store.add(name + ".bias", {out});
    return l;
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
    Tensor<T> y = ops::matmul(x, weight);
    return bias.defined() ? ops::add(y, bias) : y;
}

template <typename T>
Conv2d<T> Conv2d<T>::create(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
                            std::size_t kernel, std::size_t stride, std::size_t pad, Rng& rng) {
    Conv2d c;
    c.weight = store.add_uniform(name + ".weight", {out, in, kernel, kernel}, in * kernel * kernel, rng);
    c.bias = store.add(name + ".bias", {out});
    c.stride = stride;
    c.pad = pad;
    return c;
}

template <typename T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
    return ops::conv2d(x, weight, bias, stride, pad);
}

StaircaseMask build_staircase_mask(std::size_t n_per_block, std::size_t num_blocks) {
    if (n_per_block == 0 || num_blocks == 0)
        throw ConfigError("staircase mask: n_per_block and num_blocks must be >= 1");
    StaircaseMask m;
    m.n_per_block = n_per_block;
    m.num_blocks = num_blocks;
    const std::size_t k = m.size();
    m.allowed.assign(k * k, 0);
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) m.allowed[i * k + j] = (j / n_per_block <= i / n_per_block) ? 1 : 0;
    return m;
}

template <typename T>
Tensor<T> StaircaseMask::additive() const {
    const std::size_t k = size();
    std::vector<T> v(k * k);
    for (std::size_t i = 0; i < k * k; ++i) v[i] = allowed[i] ? T(0) : -std::numeric_limits<T>::infinity();
    return Tensor<T>({k, k}, std::move(v));
}

void AttentionConfig::validate() const {
    if (embed_dim == 0 || num_heads == 0 || embed_dim % num_heads != 0)
        throw ConfigError("attention: embed_dim " + std::to_string(embed_dim) + " is not divisible by " +
                          std::to_string(num_heads) + " heads");
    if (head_dim() % 2 != 0) throw ConfigError("attention: head_dim " + std::to_string(head_dim()) + " must be even for RoPE");
}

template <typename T>
AttentionWeights<T> AttentionWeights<T>::create(ParameterStore<T>& store, const std::string& name, std::size_t dim, Rng& rng) {
    AttentionWeights w;
    w.wq = store.add_uniform(name + ".wq", {dim, dim}, dim, rng);
    w.wk = store.add_uniform(name + ".wk", {dim, dim}, dim, rng);
    w.wv = store.add_uniform(name + ".wv", {dim, dim}, dim, rng);
    w.wo = store.add(name + ".wo", {dim, dim});
    return w;
}

template <typename T>
Tensor<T> rope_apply(const Tensor<T>& x, std::span<const std::size_t> positions, double base) {
    if (x.rank() != 3) throw ShapeError("rope_apply: expected (seq, heads, head_dim), got " + shape_str(x.shape()));
    return ops::rope(x, positions, base);
}

template <typename T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& gain, T eps) {
    if (gain.rank() != 1 || x.rank() == 0 || gain.dim(0) != x.shape().back())
        throw ShapeError("rmsnorm: gain " + shape_str(gain.shape()) + " does not match input " + shape_str(x.shape()));
    Tensor<T> mean_sq = ops::mean_last(ops::mul(x, x));
    Tensor<T> inv_rms = ops::pow(ops::add_scalar(mean_sq, eps), T(-0.5));
    return ops::mul(ops::mul(x, inv_rms), gain);
}

template <typename T>
Tensor<T> mmhsa(const Tensor<T>& x, const StaircaseMask& mask, const AttentionConfig& config,
                const AttentionWeights<T>& weights, std::vector<Tensor<T>>* attention) {
    config.validate();
    if (x.rank() != 2 || x.dim(1) != config.embed_dim)
        throw ShapeError("mmhsa: input " + shape_str(x.shape()) + " does not have width " + std::to_string(config.embed_dim));
    const std::size_t k = x.dim(0);
    if (mask.size() != k)
        throw ShapeError("mmhsa: mask of size " + std::to_string(mask.size()) + " for sequence length " + std::to_string(k));
    const std::size_t heads = config.num_heads;
    const std::size_t hd = config.head_dim();

    std::vector<std::size_t> positions(k);
    for (std::size_t i = 0; i < k; ++i) positions[i] = i;
    auto rotate = [&](const Tensor<T>& t) {
        return ops::reshape(rope_apply(ops::reshape(t, {k, heads, hd}), positions, config.rope_base), {k, config.embed_dim});
    };
    const Tensor<T> q = rotate(ops::matmul(x, weights.wq));
    const Tensor<T> kk = rotate(ops::matmul(x, weights.wk));
    const Tensor<T> v = ops::matmul(x, weights.wv);
    const Tensor<T> additive = mask.additive<T>();
    const T inv_sqrt = T(1) / static_cast<T>(std::sqrt(static_cast<double>(hd)));

    std::vector<Tensor<T>> outputs;
    outputs.reserve(heads);
    if (attention) attention->clear();
    for (std::size_t h = 0; h < heads; ++h) {
        const auto qh = heads == 1 ? q : ops::slice(q, 1, h * hd, (h + 1) * hd);
        const auto kh = heads == 1 ? kk : ops::slice(kk, 1, h * hd, (h + 1) * hd);
        const auto vh = heads == 1 ? v : ops::slice(v, 1, h * hd, (h + 1) * hd);
        const auto scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt);
        const auto weights_h = ops::softmax_masked(scores, additive);
        if (attention) attention->push_back(weights_h);
        outputs.push_back(ops::matmul(weights_h, vh));
    }
    const Tensor<T> merged = heads == 1 ? outputs.front() : ops::concat(outputs, 1);
    return ops::matmul(merged, weights.wo);
}

std::size_t mlp_hidden_dim(std::size_t dim) {
    const std::size_t raw = (8 * dim + 2) / 3;
    return (raw + 7) / 8 * 8;
}

template <typename T>
LlamaBlockWeights<T> LlamaBlockWeights<T>::create(ParameterStore<T>& store, const std::string& name, std::size_t dim, Rng& rng) {
    const std::size_t hidden = mlp_hidden_dim(dim);
    LlamaBlockWeights w;
    w.attn_norm = store.add_filled(name + ".attn_norm", {dim}, T(1));
    w.attn = AttentionWeights<T>::create(store, name + ".attn", dim, rng);
    w.mlp_norm = store.add_filled(name + ".mlp_norm", {dim}, T(1));
    w.w_gate = store.add_uniform(name + ".mlp.w_gate", {dim, hidden}, dim, rng);
    w.w_up = store.add_uniform(name + ".mlp.w_up", {dim, hidden}, dim, rng);
    w.w_down = store.add(name + ".mlp.w_down", {hidden, dim});
    return w;
}

template <typename T>
Tensor<T> llama_block(const Tensor<T>& x, const StaircaseMask& mask, const AttentionConfig& config,
                      const LlamaBlockWeights<T>& weights, T eps) {
    const Tensor<T> h = ops::add(x, mmhsa(rmsnorm(x, weights.attn_norm, eps), mask, config, weights.attn));
    const Tensor<T> u = rmsnorm(h, weights.mlp_norm, eps);
    const Tensor<T> gated = ops::mul(ops::silu(ops::matmul(u, weights.w_gate)), ops::matmul(u, weights.w_up));
    return ops::add(h, ops::matmul(gated, weights.w_down));
}

template <typename T>
PatchDiscriminator<T> PatchDiscriminator<T>::create(ParameterStore<T>& store, const std::string& name,
                                                    std::size_t in_channels, std::size_t base_width, Rng& rng) {
    PatchDiscriminator d;
    const std::array<std::size_t, 5> widths{in_channels, base_width, base_width * 2, base_width * 4, 1};
    for (std::size_t i = 0; i < 4; ++i)
        d.stages[i] = Conv2d<T>::create(store, name + ".stage" + std::to_string(i), widths[i], widths[i + 1], 4, 2, 1, rng);
    return d;
}

template <typename T>
Tensor<T> PatchDiscriminator<T>::operator()(const Tensor<T>& image) const {
    if (image.rank() != 3 || image.dim(1) < 16 || image.dim(2) < 16)
        throw ShapeError("patch_discriminator: input must be (C, H>=16, W>=16), got " + shape_str(image.shape()));
    Tensor<T> h = image;
    for (std::size_t i = 0; i < 4; ++i) {
        h = stages[i](h);
        if (i < 3) h = ops::leaky_relu(h, T(0.2));
    }
    return h;
}

#define CAVM_INSTANTIATE_NN(T)                                                                                   \
    template class ParameterStore<T>;                                                                            \
    template struct Linear<T>;                                                                                   \
    template struct Conv2d<T>;                                                                                   \
    template struct AttentionWeights<T>;                                                                         \
    template struct LlamaBlockWeights<T>;                                                                        \
    template struct PatchDiscriminator<T>;                                                                       \
    template Tensor<T> StaircaseMask::additive<T>() const;                                                       \
    template Tensor<T> rope_apply<T>(const Tensor<T>&, std::span<const std::size_t>, double);                    \
    template Tensor<T> rmsnorm<T>(const Tensor<T>&, const Tensor<T>&, T);                                        \
    template Tensor<T> mmhsa<T>(const Tensor<T>&, const StaircaseMask&, const AttentionConfig&,                  \
                                const AttentionWeights<T>&, std::vector<Tensor<T>>*);                            \
    template Tensor<T> llama_block<T>(const Tensor<T>&, const StaircaseMask&, const AttentionConfig&,            \
                                      const LlamaBlockWeights<T>&, T);

CAVM_INSTANTIATE_NN(float)
CAVM_INSTANTIATE_NN(double)

#undef CAVM_INSTANTIATE_NN

} // namespace cavm::nn
