#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cavm/adam.hpp"
#include "cavm/autoregression.hpp"
#include "cavm/checkpoint.hpp"
#include "cavm/codec.hpp"
#include "cavm/config.hpp"
#include "cavm/metrics.hpp"
#include "cavm/nn.hpp"
#include "cavm/phantom.hpp"

namespace cavm::train {

/// Mean absolute difference.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target);
/// Mean squared difference.
template <typename T>
Tensor<T> l2_loss(const Tensor<T>& pred, const Tensor<T>& target);

template <typename T>
struct AdversarialLosses {
    Tensor<T> discriminator; // mean softplus(-D(real)) + mean softplus(D(fake.detach()))
    Tensor<T> generator;     // mean softplus(-D(fake))
};

template <typename T>
AdversarialLosses<T> adversarial_losses(const nn::PatchDiscriminator<T>& disc, const Tensor<T>& real, const Tensor<T>& fake);

/// Parameter-name prefixes of the model components.
namespace prefix {
inline constexpr const char* dose_variant = "f_dv.";
inline constexpr const char* dose_invariant = "f_di.";
inline constexpr const char* contrast = "f_ce.";
inline constexpr const char* decoder = "dec.";
inline constexpr const char* bridge = "bridge.";
inline constexpr const char* discriminator = "disc.";
inline constexpr const char* autoregression = "ar.";
} // namespace prefix

/// Every trainable component, with parameters initialised from the config seed.
struct Model {
    ModelConfig config;
    nn::ParameterStore<float> store;
    codec::Encoder<float> f_dv;
    codec::Encoder<float> f_di;
    codec::Encoder<float> f_ce;
    codec::Decoder<float> f_d;
    codec::TokenBridge<float> bridge;
    nn::PatchDiscriminator<float> disc;
    ar::ARModel<float> ar;

    explicit Model(const ModelConfig& config);
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    ar::Codecs<float> codecs() const { return {f_dv, f_di, f_ce, f_d}; }
};

inline constexpr const char* kTokenizerStage = "tokenizer";
inline constexpr const char* kAutoregressionStage = "autoregression";

struct TrainHooks {
    /// Receives one record per logged step: phase, step, loss terms, wall time.
    std::function<void(const nlohmann::json&)> on_log;
    /// Called every checkpoint_interval steps and once at the end.
    std::function<void(const checkpoint::Checkpoint&)> on_checkpoint;
    /// Caps the configured step count.
    std::optional<std::size_t> max_steps;
};

struct TrainResult {
    checkpoint::Checkpoint checkpoint;
    std::vector<double> losses; // total loss per step
};

checkpoint::Checkpoint snapshot(const Model& model, const std::string& stage, std::uint64_t step);

/// Builds a model from the checkpoint's config snapshot and loads every tensor.
std::unique_ptr<Model> load_model(const checkpoint::Checkpoint& ckpt);

/// Joint autoencoding and image-to-image pretraining of the encoders, decoder
/// and token bridge (plus the discriminator when the adversarial weight is
/// positive).
TrainResult pretrain_tokenizers(Model& model, const std::vector<phantom::VolumeSample>& data, const TrainHooks& hooks = {});

/// Loads tokenizer weights from `pretrained` into `model` and trains the
/// autoregression streams with teacher forcing.
TrainResult train_autoregression(Model& model, const checkpoint::Checkpoint& pretrained,
                                 const std::vector<phantom::VolumeSample>& data, const TrainHooks& hooks = {});

struct Synthesis {
    std::vector<phantom::Image> images; // lowest dose first
    std::vector<double> doses;
    ar::CallCounts calls;
};

Synthesis synthesize(const Model& model, const phantom::VolumeSample& sample, int steps = -1);
/// Decoder fed the bridged dose-variant tokens directly.
phantom::Image synthesize_direct(const Model& model, const phantom::VolumeSample& sample);

enum class SynthesisMode { autoregressive, direct };

/// Scores the standard-dose prediction over a sample set.
metrics::RegionReport evaluate_model(const Model& model, const std::vector<phantom::VolumeSample>& data,
                                     const std::string& method, SynthesisMode mode);
struct DoseRamp {
    std::vector<double> doses;
    std::vector<double> rim_mean;     // mean predicted intensity over enhancing pixels, per dose
    double monotone_fraction = 0.0;   // samples whose rim mean never decreases along the ramp
};

/// Report-only check that synthesized intermediate doses brighten the
/// enhancing rim step by step.
DoseRamp dose_ramp(const Model& model, const std::vector<phantom::VolumeSample>& data);

/// Scores the non-contrast T1w channel used as the prediction.
metrics::RegionReport evaluate_copy_baseline(const std::vector<phantom::VolumeSample>& data, std::size_t dilation);

/// Row names of the ablation table, in order.
extern const std::array<const char*, 4> kAblationRows;

struct AblationResult {
    std::vector<metrics::RegionReport> rows; // kAblationRows order
    metrics::RegionReport baseline;
};

/// One shared pretraining run, then autoregression training for one, two and
/// three steps; the no-autoregression row decodes bridged tokens directly.
AblationResult run_ablation(const ModelConfig& base, const std::vector<phantom::VolumeSample>& train,
                            const std::vector<phantom::VolumeSample>& test, const TrainHooks& hooks = {});

} // namespace cavm::train
