#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "cavm/nn.hpp"
#include "cavm/tensor.hpp"

// Convolutional stand-ins for the decomposition tokenizer (dose-variant and
// dose-invariant encoders), the shared contrast encoder and the
// reconstruction decoder. Every encoder emits the outputs of its last two
// stages as tokens: the "fine" scale at stride 8 and the "coarse" scale at
// stride 16, so tokens of all encoders can share one sequence.
namespace cavm::codec {

enum class Scale { fine, coarse };
enum class BlockRole { input_x, dose_ld, dose_hd, dose_sd, placeholder };

std::string_view to_string(Scale scale);
std::string_view to_string(BlockRole role);

/// Token matrices of one image at both scales, each (n_scale, embed_dim_scale).
template <typename T>
struct TokenPair {
    Tensor<T> fine;
    Tensor<T> coarse;

    const Tensor<T>& at(Scale s) const { return s == Scale::fine ? fine : coarse; }
    Tensor<T>& at(Scale s) { return s == Scale::fine ? fine : coarse; }
};

/// Ordered per-image token blocks at one scale.
template <typename T>
struct TokenSequence {
    Scale scale = Scale::fine;
    std::vector<Tensor<T>> blocks;
    std::vector<BlockRole> roles;

    std::size_t num_blocks() const { return blocks.size(); }
    std::size_t tokens_per_block() const;
    std::size_t embed_dim() const;
    std::size_t length() const { return num_blocks() * tokens_per_block(); }

    /// All blocks stacked into a (length, embed_dim) matrix.
    Tensor<T> matrix() const;
    static TokenSequence from_matrix(Scale scale, const Tensor<T>& matrix, std::size_t tokens_per_block,
                                     std::vector<BlockRole> roles);
    /// Throws ShapeError when blocks disagree in shape, roles do not match the
    /// blocks, a placeholder block holds anything but `placeholder_fill`, or the
    /// sequence exceeds `max_length` (0 disables that check).
    void validate(double placeholder_fill, std::size_t max_length = 0) const;
};

/// Spatial and channel layout shared by all encoders and the decoder.
struct CodecGeometry {
    std::size_t image_size = 64;
    std::size_t in_channels = 4;
    std::size_t fine_dim = 32;
    std::size_t coarse_dim = 64;
    std::array<std::size_t, 2> encoder_widths{16, 24};
    std::array<std::size_t, 4> decoder_widths{48, 32, 16, 8};

    static constexpr std::size_t kFineStride = 8;
    static constexpr std::size_t kCoarseStride = 16;

    std::size_t fine_grid() const { return image_size / kFineStride; }
    std::size_t coarse_grid() const { return image_size / kCoarseStride; }
    std::size_t fine_tokens() const { return fine_grid() * fine_grid(); }
    std::size_t coarse_tokens() const { return coarse_grid() * coarse_grid(); }
    std::size_t tokens(Scale s) const { return s == Scale::fine ? fine_tokens() : coarse_tokens(); }
    std::size_t dim(Scale s) const { return s == Scale::fine ? fine_dim : coarse_dim; }
    void validate() const;
};

struct StageSpec {
    std::size_t out_channels = 0;
    std::size_t kernel = 3;
    std::size_t stride = 2;
    std::size_t pad = 1;
};

/// Stage list of one encoder; the last two stages produce the tokens.
struct EncoderConfig {
    std::size_t in_channels = 0;
    std::vector<StageSpec> stages;

    std::size_t total_stride() const;
};

/// Two stages reaching the shared grids directly: an 8x8 patch embedding to
/// the fine grid, then a stride-2 convolution to the coarse grid.
EncoderConfig dose_variant_config(const CodecGeometry& g);
/// Four stride-2 stages (used by the dose-invariant and contrast encoders).
EncoderConfig four_stage_config(const CodecGeometry& g, std::size_t in_channels);

/// (C, gh, gw) feature map -> (gh*gw, C) tokens, and back.
template <typename T>
Tensor<T> tokens_from_map(const Tensor<T>& map);
template <typename T>
Tensor<T> map_from_tokens(const Tensor<T>& tokens, std::size_t grid_h, std::size_t grid_w);

/// Each stage: strided convolution + silu, then a 3x3 convolution + silu.
template <typename T>
struct Encoder {
    EncoderConfig config;
    std::vector<nn::Conv2d<T>> down;
    std::vector<nn::Conv2d<T>> refine;

    static Encoder create(nn::ParameterStore<T>& store, const std::string& name, EncoderConfig config, Rng& rng);
    /// x: (C_in, H, W) with H, W divisible by the encoder's total stride.
    TokenPair<T> operator()(const Tensor<T>& x) const;
};

/// Four upsampling stages from the coarse grid to full resolution. Dose-variant
/// and dose-invariant tokens are concatenated channel-wise and fused with 1x1
/// convolutions at the coarse grid and again at the fine grid.
template <typename T>
struct Decoder {
    CodecGeometry geometry;
    nn::Conv2d<T> fuse_coarse;
    nn::Conv2d<T> fuse_fine;
    std::array<nn::Conv2d<T>, 4> up;
    nn::Conv2d<T> head;

    static Decoder create(nn::ParameterStore<T>& store, const std::string& name, const CodecGeometry& g, Rng& rng);
    /// Returns a (1, H, W) image; no output activation.
    Tensor<T> operator()(const TokenPair<T>& dose_invariant, const TokenPair<T>& dose_variant) const;
};

/// Per-scale linear map carrying dose-variant tokens straight into the
/// decoder's dose slots (image-to-image pretraining and the no-autoregression
/// ablation).
template <typename T>
struct TokenBridge {
    nn::Linear<T> fine;
    nn::Linear<T> coarse;

    static TokenBridge create(nn::ParameterStore<T>& store, const std::string& name, const CodecGeometry& g, Rng& rng);
    TokenPair<T> operator()(const TokenPair<T>& tokens) const;
};

template <typename T>
TokenPair<T> encode_dose_variant(const Tensor<T>& x, const Encoder<T>& f_dv) { return f_dv(x); }
template <typename T>
TokenPair<T> encode_dose_invariant(const Tensor<T>& x, const Encoder<T>& f_di) { return f_di(x); }
template <typename T>
TokenPair<T> encode_contrast(const Tensor<T>& y, const Encoder<T>& f_ce) { return f_ce(y); }
template <typename T>
Tensor<T> decode(const TokenPair<T>& dose_invariant, const TokenPair<T>& dose_variant, const Decoder<T>& f_d) {
    return f_d(dose_invariant, dose_variant);
}

} // namespace cavm::codec
