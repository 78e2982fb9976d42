#include "cavm/codec.hpp"

#include "cavm/errors.hpp"
#include "cavm/ops.hpp"

namespace cavm::codec {

std::string_view to_string(Scale scale) { return scale == Scale::fine ? "fine" : "coarse"; }

std::string_view to_string(BlockRole role) {
    switch (role) {
    case BlockRole::input_x: return "input_x";
    case BlockRole::dose_ld: return "dose_LD";
    case BlockRole::dose_hd: return "dose_HD";
    case BlockRole::dose_sd: return "dose_SD";
    case BlockRole::placeholder: return "placeholder";
    }
    return "?";
}

template <typename T>
std::size_t TokenSequence<T>::tokens_per_block() const {
    return blocks.empty() ? 0 : blocks.front().dim(0);
}

template <typename T>
std::size_t TokenSequence<T>::embed_dim() const {
    return blocks.empty() ? 0 : blocks.front().dim(1);
}

template <typename T>
Tensor<T> TokenSequence<T>::matrix() const {
    if (blocks.empty()) throw ShapeError("token sequence: no blocks");
    return blocks.size() == 1 ? blocks.front() : ops::concat(blocks, 0);
}

template <typename T>
TokenSequence<T> TokenSequence<T>::from_matrix(Scale scale, const Tensor<T>& matrix, std::size_t tokens_per_block,
                                               std::vector<BlockRole> roles) {
    if (matrix.rank() != 2 || tokens_per_block == 0 || matrix.dim(0) != tokens_per_block * roles.size())
        throw ShapeError("token sequence: matrix " + shape_str(matrix.shape()) + " does not split into " +
                         std::to_string(roles.size()) + " blocks of " + std::to_string(tokens_per_block));
    TokenSequence seq;
    seq.scale = scale;
    seq.roles = std::move(roles);
    for (std::size_t b = 0; b < seq.roles.size(); ++b)
        seq.blocks.push_back(ops::slice(matrix, 0, b * tokens_per_block, (b + 1) * tokens_per_block));
    return seq;
}

template <typename T>
void TokenSequence<T>::validate(double placeholder_fill, std::size_t max_length) const {
    if (blocks.empty()) throw ShapeError("token sequence: no blocks");
    if (roles.size() != blocks.size())
        throw ShapeError("token sequence: " + std::to_string(roles.size()) + " roles for " + std::to_string(blocks.size()) + " blocks");
    const Shape& first = blocks.front().shape();
    if (first.size() != 2) throw ShapeError("token sequence: blocks must be (n, dim), got " + shape_str(first));
    for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (blocks[b].shape() != first)
            throw ShapeError("token sequence: block " + std::to_string(b) + " has shape " + shape_str(blocks[b].shape()) +
                             ", expected " + shape_str(first));
        if (roles[b] == BlockRole::placeholder) {
            for (T v : blocks[b].values())
                if (v != static_cast<T>(placeholder_fill))
                    throw ShapeError("token sequence: placeholder block " + std::to_string(b) + " holds non-fill values");
        }
    }
    if (max_length != 0 && length() > max_length)
        throw ShapeError("token sequence: length " + std::to_string(length()) + " exceeds maximum " + std::to_string(max_length));
}

void CodecGeometry::validate() const {
    if (image_size == 0 || image_size % kCoarseStride != 0)
        throw ConfigError("codec: image size " + std::to_string(image_size) + " must be a positive multiple of " +
                          std::to_string(kCoarseStride));
    if (in_channels == 0 || fine_dim == 0 || coarse_dim == 0) throw ConfigError("codec: channel counts must be positive");
    for (std::size_t w : encoder_widths)
        if (w == 0) throw ConfigError("codec: encoder widths must be positive");
    for (std::size_t w : decoder_widths)
        if (w == 0) throw ConfigError("codec: decoder widths must be positive");
}

std::size_t EncoderConfig::total_stride() const {
    std::size_t s = 1;
    for (const auto& st : stages) s *= st.stride;
    return s;
}

EncoderConfig dose_variant_config(const CodecGeometry& g) {
    EncoderConfig c;
    c.in_channels = g.in_channels;
    c.stages = {{g.fine_dim, CodecGeometry::kFineStride, CodecGeometry::kFineStride, 0}, {g.coarse_dim, 3, 2, 1}};
    return c;
}

EncoderConfig four_stage_config(const CodecGeometry& g, std::size_t in_channels) {
    EncoderConfig c;
    c.in_channels = in_channels;
    c.stages = {{g.encoder_widths[0], 3, 2, 1}, {g.encoder_widths[1], 3, 2, 1}, {g.fine_dim, 3, 2, 1}, {g.coarse_dim, 3, 2, 1}};
    return c;
}

template <typename T>
Tensor<T> tokens_from_map(const Tensor<T>& map) {
    if (map.rank() != 3) throw ShapeError("tokens_from_map: expected (C, H, W), got " + shape_str(map.shape()));
    return ops::transpose(ops::reshape(map, {map.dim(0), map.dim(1) * map.dim(2)}));
}

template <typename T>
Tensor<T> map_from_tokens(const Tensor<T>& tokens, std::size_t grid_h, std::size_t grid_w) {
    if (tokens.rank() != 2 || tokens.dim(0) != grid_h * grid_w)
        throw ShapeError("map_from_tokens: tokens " + shape_str(tokens.shape()) + " do not fill a " + std::to_string(grid_h) +
                         "x" + std::to_string(grid_w) + " grid");
    return ops::reshape(ops::transpose(tokens), {tokens.dim(1), grid_h, grid_w});
}

template <typename T>
Encoder<T> Encoder<T>::create(nn::ParameterStore<T>& store, const std::string& name, EncoderConfig config, Rng& rng) {
    if (config.stages.size() < 2) throw ConfigError("encoder '" + name + "': needs at least two stages");
    Encoder e;
    std::size_t in = config.in_channels;
    for (std::size_t i = 0; i < config.stages.size(); ++i) {
        const StageSpec& s = config.stages[i];
        const std::string stage = name + ".stage" + std::to_string(i);
        e.down.push_back(nn::Conv2d<T>::create(store, stage + ".down", in, s.out_channels, s.kernel, s.stride, s.pad, rng));
        e.refine.push_back(nn::Conv2d<T>::create(store, stage + ".refine", s.out_channels, s.out_channels, 3, 1, 1, rng));
        in = s.out_channels;
    }
    e.config = std::move(config);
    return e;
}

template <typename T>
TokenPair<T> Encoder<T>::operator()(const Tensor<T>& x) const {
    const std::size_t stride = config.total_stride();
    if (x.rank() != 3 || x.dim(0) != config.in_channels)
        throw ShapeError("encoder: expected (" + std::to_string(config.in_channels) + ", H, W) input, got " + shape_str(x.shape()));
    if (x.dim(1) % stride != 0 || x.dim(2) % stride != 0)
        throw ShapeError("encoder: spatial size " + shape_str(x.shape()) + " is not divisible by total stride " + std::to_string(stride));
    std::vector<Tensor<T>> outputs;
    Tensor<T> h = x;
    for (std::size_t i = 0; i < down.size(); ++i) {
        h = ops::silu(down[i](h));
        h = ops::silu(refine[i](h));
        outputs.push_back(h);
    }
    const std::size_t n = outputs.size();
    return {tokens_from_map(outputs[n - 2]), tokens_from_map(outputs[n - 1])};
}

template <typename T>
Decoder<T> Decoder<T>::create(nn::ParameterStore<T>& store, const std::string& name, const CodecGeometry& g, Rng& rng) {
    g.validate();
    Decoder d;
    d.geometry = g;
    const auto& w = g.decoder_widths;
    d.fuse_coarse = nn::Conv2d<T>::create(store, name + ".fuse_coarse", 2 * g.coarse_dim, g.coarse_dim, 1, 1, 0, rng);
    d.up[0] = nn::Conv2d<T>::create(store, name + ".up0", g.coarse_dim, w[0], 3, 1, 1, rng);
    d.fuse_fine = nn::Conv2d<T>::create(store, name + ".fuse_fine", w[0] + 2 * g.fine_dim, w[0], 1, 1, 0, rng);
    for (std::size_t i = 1; i < 4; ++i)
        d.up[i] = nn::Conv2d<T>::create(store, name + ".up" + std::to_string(i), w[i - 1], w[i], 3, 1, 1, rng);
    d.head = nn::Conv2d<T>::create(store, name + ".head", w[3], 1, 3, 1, 1, rng);
    return d;
}

template <typename T>
Tensor<T> Decoder<T>::operator()(const TokenPair<T>& di, const TokenPair<T>& dv) const {
    const CodecGeometry& g = geometry;
    auto check = [&](const Tensor<T>& t, Scale s, const char* what) {
        if (t.rank() != 2 || t.dim(0) != g.tokens(s) || t.dim(1) != g.dim(s))
            throw ShapeError(std::string("decoder: ") + what + " " + std::string(to_string(s)) + " tokens have shape " +
                             shape_str(t.shape()) + ", expected (" + std::to_string(g.tokens(s)) + "," +
                             std::to_string(g.dim(s)) + ")");
    };
    check(di.fine, Scale::fine, "dose-invariant");
    check(di.coarse, Scale::coarse, "dose-invariant");
    check(dv.fine, Scale::fine, "dose-variant");
    check(dv.coarse, Scale::coarse, "dose-variant");

    const std::size_t cg = g.coarse_grid(), fg = g.fine_grid();
    Tensor<T> h = ops::concat<T>({map_from_tokens(di.coarse, cg, cg), map_from_tokens(dv.coarse, cg, cg)}, 0);
    h = ops::silu(fuse_coarse(h));
    h = ops::silu(up[0](ops::upsample_nearest(h, 2)));
    h = ops::concat<T>({h, map_from_tokens(di.fine, fg, fg), map_from_tokens(dv.fine, fg, fg)}, 0);
    h = ops::silu(fuse_fine(h));
    for (std::size_t i = 1; i < 4; ++i) h = ops::silu(up[i](ops::upsample_nearest(h, 2)));
    return head(h);
}

template <typename T>
TokenBridge<T> TokenBridge<T>::create(nn::ParameterStore<T>& store, const std::string& name, const CodecGeometry& g, Rng& rng) {
    TokenBridge b;
    b.fine = nn::Linear<T>::create(store, name + ".fine", g.fine_dim, g.fine_dim, true, false, rng);
    b.coarse = nn::Linear<T>::create(store, name + ".coarse", g.coarse_dim, g.coarse_dim, true, false, rng);
    return b;
}

template <typename T>
TokenPair<T> TokenBridge<T>::operator()(const TokenPair<T>& tokens) const {
    return {fine(tokens.fine), coarse(tokens.coarse)};
}

#define CAVM_INSTANTIATE_CODEC(T)                                                      \
    template struct TokenSequence<T>;                                                  \
    template struct Encoder<T>;                                                        \
    template struct Decoder<T>;                                                        \
    template struct TokenBridge<T>;                                                    \
    template Tensor<T> tokens_from_map<T>(const Tensor<T>&);                           \
    template Tensor<T> map_from_tokens<T>(const Tensor<T>&, std::size_t, std::size_t);

CAVM_INSTANTIATE_CODEC(float)
CAVM_INSTANTIATE_CODEC(double)

#undef CAVM_INSTANTIATE_CODEC

} // namespace cavm::codec
