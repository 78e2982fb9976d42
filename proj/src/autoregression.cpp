#include "cavm/autoregression.hpp"

#include <cmath>

#include "cavm/errors.hpp"
#include "cavm/ops.hpp"

namespace cavm::ar {

using codec::BlockRole;
using codec::Scale;
using codec::TokenPair;
using codec::TokenSequence;

void ArConfig::validate() const {
    if (num_steps < 1 || num_steps > 3) throw ConfigError("autoregression: num_steps must be 1, 2 or 3");
    for (const StreamConfig* s : {&fine, &coarse}) {
        nn::AttentionConfig{s->embed_dim, s->num_heads, rope_base}.validate();
        if (s->num_layers == 0) throw ConfigError("autoregression: each stream needs at least one layer");
    }
}

std::vector<double> dose_schedule(int num_steps) {
    switch (num_steps) {
    case 1: return {1.0};
    case 2: return {1.0 / 3.0, 1.0};
    case 3: return {1.0 / 3.0, 2.0 / 3.0, 1.0};
    default: throw ConfigError("dose schedule: num_steps must be 1, 2 or 3");
    }
}

BlockRole role_for_dose(double dose) {
    if (dose >= 1.0) return BlockRole::dose_sd;
    if (dose > 0.5) return BlockRole::dose_hd;
    return BlockRole::dose_ld;
}

template <typename T>
Tensor<T> ArStream<T>::operator()(const Tensor<T>& tokens, const nn::StaircaseMask& mask, T eps) const {
    Tensor<T> h = in_proj(tokens);
    for (const auto& layer : layers) h = nn::llama_block(h, mask, attention, layer, eps);
    return ops::add(tokens, out_proj(nn::rmsnorm(h, final_norm, eps)));
}

template <typename T>
ARModel<T> ARModel<T>::create(nn::ParameterStore<T>& store, const std::string& name, const ArConfig& config,
                              const codec::CodecGeometry& geometry, Rng& rng) {
    config.validate();
    geometry.validate();
    ARModel m;
    m.config = config;
    m.geometry = geometry;
    for (Scale s : {Scale::fine, Scale::coarse}) {
        const StreamConfig& sc = config.stream(s);
        if (sc.embed_dim != geometry.dim(s))
            throw ConfigError("autoregression: " + std::string(codec::to_string(s)) + " stream width " +
                              std::to_string(sc.embed_dim) + " differs from token width " + std::to_string(geometry.dim(s)));
        if (m.sequence_length(s) > sc.max_seq_len)
            throw ConfigError("autoregression: " + std::string(codec::to_string(s)) + " sequence length " +
                              std::to_string(m.sequence_length(s)) + " exceeds maximum " + std::to_string(sc.max_seq_len));
        const std::string prefix = name + "." + std::string(codec::to_string(s));
        ArStream<T>& st = s == Scale::fine ? m.fine : m.coarse;
        st.attention = {sc.embed_dim, sc.num_heads, config.rope_base};
        st.in_proj = nn::Linear<T>::create(store, prefix + ".in_proj", sc.embed_dim, sc.embed_dim, false, false, rng);
        for (std::size_t l = 0; l < sc.num_layers; ++l)
            st.layers.push_back(nn::LlamaBlockWeights<T>::create(store, prefix + ".layer" + std::to_string(l), sc.embed_dim, rng));
        st.final_norm = store.add_filled(prefix + ".final_norm", {sc.embed_dim}, T(1));
        st.out_proj = nn::Linear<T>::create(store, prefix + ".out_proj", sc.embed_dim, sc.embed_dim, false, true, rng);
    }
    return m;
}

template <typename T>
Tensor<T> make_placeholders(std::size_t n, std::size_t embed_dim, T fill) {
    if (n == 0 || embed_dim == 0) throw ConfigError("placeholders: n and embed_dim must be >= 1");
    return Tensor<T>::full({n, embed_dim}, fill);
}

template <typename T>
TokenSequence<T> ar_forward(const TokenSequence<T>& seq, const ARModel<T>& model) {
    const Scale s = seq.scale;
    const std::size_t n = model.geometry.tokens(s);
    seq.validate(model.config.placeholder_fill, model.config.stream(s).max_seq_len);
    if (seq.tokens_per_block() != n || seq.num_blocks() != model.config.num_blocks() || seq.embed_dim() != model.geometry.dim(s))
        throw ShapeError("ar_forward: " + std::string(codec::to_string(s)) + " sequence of " + std::to_string(seq.num_blocks()) +
                         " blocks x (" + std::to_string(seq.tokens_per_block()) + "," + std::to_string(seq.embed_dim()) +
                         ") does not match the model's " + std::to_string(model.config.num_blocks()) + " x (" +
                         std::to_string(n) + "," + std::to_string(model.geometry.dim(s)) + ")");
    const nn::StaircaseMask mask = nn::build_staircase_mask(n, seq.num_blocks());
    const Tensor<T> out = model.stream(s)(seq.matrix(), mask, static_cast<T>(model.config.norm_eps));

    const auto doses = dose_schedule(model.config.num_steps);
    std::vector<BlockRole> roles(seq.num_blocks(), BlockRole::placeholder);
    for (std::size_t b = 0; b < doses.size() && b < roles.size(); ++b) roles[b] = role_for_dose(doses[b]);
    return TokenSequence<T>::from_matrix(s, out, n, std::move(roles));
}

namespace {

template <typename T>
TokenSequence<T> initial_sequence(Scale s, const Tensor<T>& input_tokens, const ARModel<T>& model) {
    TokenSequence<T> seq;
    seq.scale = s;
    seq.blocks.push_back(input_tokens);
    seq.roles.push_back(BlockRole::input_x);
    const Tensor<T> placeholder = make_placeholders<T>(model.geometry.tokens(s), model.geometry.dim(s),
                                                       static_cast<T>(model.config.placeholder_fill));
    while (seq.blocks.size() < model.config.num_blocks()) {
        seq.blocks.push_back(placeholder);
        seq.roles.push_back(BlockRole::placeholder);
    }
    return seq;
}

} // namespace

template <typename T>
InferenceResult<T> ar_infer(const Tensor<T>& x, const Codecs<T>& codecs, const ARModel<T>& model, int max_steps) {
    const auto doses = dose_schedule(model.config.num_steps);
    const int steps = max_steps < 0 ? static_cast<int>(doses.size()) : std::min<int>(max_steps, static_cast<int>(doses.size()));

    const TokenPair<T> dv = codec::encode_dose_variant(x, codecs.f_dv);
    const TokenPair<T> di = codec::encode_dose_invariant(x, codecs.f_di);
    TokenSequence<T> fine = initial_sequence(Scale::fine, dv.fine, model);
    TokenSequence<T> coarse = initial_sequence(Scale::coarse, dv.coarse, model);

    InferenceResult<T> result;
    for (int step = 0; step < steps; ++step) {
        const auto out_fine = ar_forward(fine, model);
        const auto out_coarse = ar_forward(coarse, model);
        ++result.calls.ar_forward;
        const std::size_t b = static_cast<std::size_t>(step);
        const TokenPair<T> predicted{out_fine.blocks[b], out_coarse.blocks[b]};
        result.images.push_back(codec::decode(di, predicted, codecs.f_d));
        result.doses.push_back(doses[b]);
        ++result.calls.decode;
        if (b + 1 < doses.size()) {
            // Updated tokens: re-encode the decoded image rather than reuse the raw prediction.
            const TokenPair<T> updated = codec::encode_contrast(result.images.back(), codecs.f_ce);
            ++result.calls.encode_contrast;
            fine.blocks[b + 1] = updated.fine;
            coarse.blocks[b + 1] = updated.coarse;
            fine.roles[b + 1] = coarse.roles[b + 1] = role_for_dose(doses[b]);
        }
    }
    return result;
}

template <typename T>
std::vector<TokenPair<T>> ar_teacher_forced_tokens(const TokenPair<T>& dose_variant,
                                                   const std::vector<TokenPair<T>>& teacher_tokens,
                                                   const ARModel<T>& model) {
    const auto doses = dose_schedule(model.config.num_steps);
    if (teacher_tokens.size() + 1 != doses.size())
        throw ShapeError("ar_teacher_forced: " + std::to_string(teacher_tokens.size()) + " teacher images for a " +
                         std::to_string(doses.size()) + "-step model");
    TokenSequence<T> fine = initial_sequence(Scale::fine, dose_variant.fine, model);
    TokenSequence<T> coarse = initial_sequence(Scale::coarse, dose_variant.coarse, model);
    for (std::size_t i = 0; i < teacher_tokens.size(); ++i) {
        fine.blocks[i + 1] = teacher_tokens[i].fine;
        coarse.blocks[i + 1] = teacher_tokens[i].coarse;
        fine.roles[i + 1] = coarse.roles[i + 1] = role_for_dose(doses[i]);
    }
    const auto out_fine = ar_forward(fine, model);
    const auto out_coarse = ar_forward(coarse, model);
    std::vector<TokenPair<T>> predictions;
    for (std::size_t b = 0; b < doses.size(); ++b) predictions.push_back({out_fine.blocks[b], out_coarse.blocks[b]});
    return predictions;
}

template <typename T>
std::vector<TokenPair<T>> ar_teacher_forced(const Tensor<T>& x, const std::vector<Tensor<T>>& teacher_images,
                                            const Codecs<T>& codecs, const ARModel<T>& model) {
    std::vector<TokenPair<T>> teacher;
    for (const auto& y : teacher_images) teacher.push_back(codec::encode_contrast(y, codecs.f_ce));
    return ar_teacher_forced_tokens(codec::encode_dose_variant(x, codecs.f_dv), teacher, model);
}

#define CAVM_INSTANTIATE_AR(T)                                                                                      \
    template struct ArStream<T>;                                                                                    \
    template struct ARModel<T>;                                                                                     \
    template Tensor<T> make_placeholders<T>(std::size_t, std::size_t, T);                                          \
    template TokenSequence<T> ar_forward<T>(const TokenSequence<T>&, const ARModel<T>&);                           \
    template InferenceResult<T> ar_infer<T>(const Tensor<T>&, const Codecs<T>&, const ARModel<T>&, int);           \
    template std::vector<TokenPair<T>> ar_teacher_forced<T>(const Tensor<T>&, const std::vector<Tensor<T>>&,        \
                                                            const Codecs<T>&, const ARModel<T>&);                   \
    template std::vector<TokenPair<T>> ar_teacher_forced_tokens<T>(const TokenPair<T>&,                             \
                                                                   const std::vector<TokenPair<T>>&, const ARModel<T>&);

CAVM_INSTANTIATE_AR(float)
CAVM_INSTANTIATE_AR(double)

#undef CAVM_INSTANTIATE_AR

} // namespace cavm::ar
