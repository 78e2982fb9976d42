#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cavm/codec.hpp"
#include "cavm/nn.hpp"
#include "cavm/tensor.hpp"

// Gradual dose increase over dose-variant tokens. Each scale has its own
// Transformer stream; a sequence holds one block of tokens per image and the
// staircase mask lets block i see blocks 0..i. The output at block i is the
// prediction for the next dose level, so one masked pass over
// (t_x, t_LD, t_HD) yields (t_LD, t_HD, t_SD).
namespace cavm::ar {

struct StreamConfig {
    std::size_t embed_dim = 32;
    std::size_t num_heads = 2;
    std::size_t num_layers = 2;
    std::size_t max_seq_len = 192;
};

struct ArConfig {
    StreamConfig fine{32, 2, 2, 192};
    StreamConfig coarse{64, 4, 2, 48};
    double rope_base = 10000.0;
    int num_steps = 3;
    double placeholder_fill = 0.0;
    double norm_eps = 1e-6;

    /// Input block plus one block per intermediate dose; a one-step model still
    /// carries a single placeholder block after the input.
    std::size_t num_blocks() const { return num_steps < 2 ? 2 : static_cast<std::size_t>(num_steps); }
    const StreamConfig& stream(codec::Scale s) const { return s == codec::Scale::fine ? fine : coarse; }
    void validate() const;
};

/// Dose fractions produced by an n-step run, in order: {1/3, 2/3, 1} for
/// three steps, {1/3, 1} for two, {1} for one.
std::vector<double> dose_schedule(int num_steps);
codec::BlockRole role_for_dose(double dose);

template <typename T>
struct ArStream {
    nn::AttentionConfig attention;
    nn::Linear<T> in_proj;
    std::vector<nn::LlamaBlockWeights<T>> layers;
    Tensor<T> final_norm;
    nn::Linear<T> out_proj; // zero-initialised

    /// tokens + out_proj(rmsnorm(blocks(in_proj(tokens)))).
    Tensor<T> operator()(const Tensor<T>& tokens, const nn::StaircaseMask& mask, T eps) const;
};

template <typename T>
struct ARModel {
    ArConfig config;
    codec::CodecGeometry geometry;
    ArStream<T> fine;
    ArStream<T> coarse;

    static ARModel create(nn::ParameterStore<T>& store, const std::string& name, const ArConfig& config,
                          const codec::CodecGeometry& geometry, Rng& rng);
    const ArStream<T>& stream(codec::Scale s) const { return s == codec::Scale::fine ? fine : coarse; }
    std::size_t sequence_length(codec::Scale s) const { return config.num_blocks() * geometry.tokens(s); }
};

/// (n, embed_dim) block with every entry equal to `fill`.
template <typename T>
Tensor<T> make_placeholders(std::size_t n, std::size_t embed_dim, T fill);

/// One staircase-masked pass of the stream matching `seq.scale`. Returns the
/// output blocks; block i carries the prediction for dose level i+1.
template <typename T>
codec::TokenSequence<T> ar_forward(const codec::TokenSequence<T>& seq, const ARModel<T>& model);

template <typename T>
struct Codecs {
    const codec::Encoder<T>& f_dv;
    const codec::Encoder<T>& f_di;
    const codec::Encoder<T>& f_ce;
    const codec::Decoder<T>& f_d;
};

/// Invocations per scale pair during one inference run.
struct CallCounts {
    int ar_forward = 0;
    int decode = 0;
    int encode_contrast = 0;
};

template <typename T>
struct InferenceResult {
    std::vector<Tensor<T>> images; // lowest dose first
    std::vector<double> doses;
    CallCounts calls;
};

/// Step k runs the masked pass, decodes output block k with the dose-invariant
/// tokens, and (except after the last step) re-encodes the decoded image with
/// f_CE into input block k+1. `max_steps` >= 0 stops early.
template <typename T>
InferenceResult<T> ar_infer(const Tensor<T>& x, const Codecs<T>& codecs, const ARModel<T>& model, int max_steps = -1);

/// Single pass over (f_DV(x), f_CE(teacher[0]), ...) with teacher images at the
/// intermediate doses of the schedule (num_steps - 1 of them). Returns one
/// predicted token pair per produced dose.
template <typename T>
std::vector<codec::TokenPair<T>> ar_teacher_forced(const Tensor<T>& x, const std::vector<Tensor<T>>& teacher_images,
                                                   const Codecs<T>& codecs, const ARModel<T>& model);

/// Token-level core of ar_teacher_forced for callers that cache encoder outputs.
template <typename T>
std::vector<codec::TokenPair<T>> ar_teacher_forced_tokens(const codec::TokenPair<T>& dose_variant,
                                                          const std::vector<codec::TokenPair<T>>& teacher_tokens,
                                                          const ARModel<T>& model);

} // namespace cavm::ar
