#include "cavm/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "cavm/autodiff.hpp"
#include "cavm/errors.hpp"
#include "cavm/ops.hpp"
#include "cavm/random.hpp"

namespace cavm::train {

using phantom::VolumeSample;

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape())
        throw ShapeError("l1_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    return ops::mean(ops::abs(pred - target));
}

template <typename T>
Tensor<T> l2_loss(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape())
        throw ShapeError("l2_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    const Tensor<T> d = pred - target;
    return ops::mean(d * d);
}

template <typename T>
AdversarialLosses<T> adversarial_losses(const nn::PatchDiscriminator<T>& disc, const Tensor<T>& real, const Tensor<T>& fake) {
    const Tensor<T> real_logits = disc(real);
    const Tensor<T> fake_logits_detached = disc(fake.detach());
    const Tensor<T> fake_logits = disc(fake);
    return {ops::mean(ops::softplus(-real_logits)) + ops::mean(ops::softplus(fake_logits_detached)),
            ops::mean(ops::softplus(-fake_logits))};
}

template Tensor<float> l1_loss<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> l1_loss<double>(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> l2_loss<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> l2_loss<double>(const Tensor<double>&, const Tensor<double>&);
template AdversarialLosses<float> adversarial_losses<float>(const nn::PatchDiscriminator<float>&, const Tensor<float>&,
                                                            const Tensor<float>&);
template AdversarialLosses<double> adversarial_losses<double>(const nn::PatchDiscriminator<double>&,
                                                             const Tensor<double>&, const Tensor<double>&);

namespace {

constexpr std::size_t kDiscriminatorWidth = 16;
constexpr std::uint64_t kSamplingStream = 0x5851f42d4c957f2dULL;

const std::vector<std::string>& tokenizer_prefixes() {
    static const std::vector<std::string> p{prefix::dose_variant, prefix::dose_invariant, prefix::contrast,
                                            prefix::decoder, prefix::bridge};
    return p;
}

std::vector<Tensor<float>> params_with(const nn::ParameterStore<float>& store, const std::vector<std::string>& prefixes) {
    std::vector<Tensor<float>> out;
    for (const auto& p : prefixes) {
        auto part = store.with_prefix(p);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::size_t step_budget(std::size_t configured, const TrainHooks& hooks) {
    return hooks.max_steps ? std::min(configured, *hooks.max_steps) : configured;
}

void require_data(const std::vector<VolumeSample>& data, std::size_t image_size, const char* phase) {
    if (data.size() < 2) throw ConfigError(std::string(phase) + ": need at least 2 training samples");
    for (const auto& s : data)
        if (s.height() != image_size || s.width() != image_size)
            throw ShapeError(std::string(phase) + ": sample " + std::to_string(s.seed) + " is " +
                             std::to_string(s.height()) + "x" + std::to_string(s.width()) + ", model expects " +
                             std::to_string(image_size));
}

// Re-throws numeric faults with the step that produced them.
template <typename F>
void run_step(const char* phase, std::size_t step, F&& body) {
    try {
        body();
    } catch (const NumericFault& e) {
        throw NumericFault(std::string(phase) + " step " + std::to_string(step) + ": " + e.what());
    }
}

void emit_checkpoint(const TrainHooks& hooks, const checkpoint::Checkpoint& c) {
    if (hooks.on_checkpoint) hooks.on_checkpoint(c);
}

} // namespace

Model::Model(const ModelConfig& cfg) : config(cfg) {
    config.validate();
    // Construction order fixes the initial weights for a given seed.
    Rng rng(config.training.seed);
    const auto& g = config.geometry;
    f_dv = codec::Encoder<float>::create(store, "f_dv", codec::dose_variant_config(g), rng);
    f_di = codec::Encoder<float>::create(store, "f_di", codec::four_stage_config(g, g.in_channels), rng);
    f_ce = codec::Encoder<float>::create(store, "f_ce", codec::four_stage_config(g, 1), rng);
    f_d = codec::Decoder<float>::create(store, "dec", g, rng);
    bridge = codec::TokenBridge<float>::create(store, "bridge", g, rng);
    disc = nn::PatchDiscriminator<float>::create(store, "disc", 1, kDiscriminatorWidth, rng);
    ar = ar::ARModel<float>::create(store, "ar", config.ar, g, rng);
}

checkpoint::Checkpoint snapshot(const Model& model, const std::string& stage, std::uint64_t step) {
    checkpoint::Checkpoint c;
    c.config = to_json(model.config);
    c.stage = stage;
    c.step = step;
    c.tensors = checkpoint::capture(model.store);
    return c;
}

std::unique_ptr<Model> load_model(const checkpoint::Checkpoint& ckpt) {
    auto model = std::make_unique<Model>(model_config_from_json(ckpt.config));
    std::vector<std::string> required = tokenizer_prefixes();
    if (ckpt.stage == kAutoregressionStage) {
        required.push_back(prefix::autoregression);
    } else if (ckpt.stage != kTokenizerStage) {
        throw FormatError("checkpoint: unknown stage '" + ckpt.stage + "'");
    }
    checkpoint::restore(model->store, ckpt, required);
    return model;
}

TrainResult pretrain_tokenizers(Model& model, const std::vector<VolumeSample>& data, const TrainHooks& hooks) {
    const ModelConfig& cfg = model.config;
    require_data(data, cfg.geometry.image_size, "pretrain");
    const bool adversarial = cfg.loss.adv > 0.0;
    const auto gen_params = params_with(model.store, tokenizer_prefixes());
    Adam<float> gen_opt(gen_params, cfg.optimizer.adam);
    Adam<float> disc_opt(model.store.with_prefix(prefix::discriminator), cfg.optimizer.adam);
    Rng rng(cfg.training.seed ^ kSamplingStream);
    const std::array<double, 3> doses{1.0 / 3.0, 2.0 / 3.0, 1.0};
    const std::size_t steps = step_budget(cfg.training.pretrain_steps, hooks);
    const auto start = std::chrono::steady_clock::now();
    const float batch_scale = 1.0f / static_cast<float>(cfg.optimizer.batch_size);

    TrainResult result;
    for (std::size_t step = 0; step < steps; ++step) {
        run_step("pretrain", step, [&] {
            double l1_task1 = 0, l1_task2 = 0, adv_g = 0, adv_d = 0;
            std::vector<std::pair<Tensor<float>, Tensor<float>>> pairs; // (real, fake) for the discriminator
            model.store.set_requires_grad(prefix::discriminator, false);
            Tensor<float> total;
            for (std::size_t b = 0; b < cfg.optimizer.batch_size; ++b) {
                const VolumeSample& s = data[rng.below(data.size())];
                const double d = doses[rng.below(doses.size())];
                const auto x = phantom::input_tensor<float>(s);
                const auto y_d = phantom::image_tensor<float>(s.dose(d));
                const auto y_sd = phantom::image_tensor<float>(s.y_sd);

                const auto di = codec::encode_dose_invariant(x, model.f_di);
                const auto recon = codec::decode(di, codec::encode_contrast(y_d, model.f_ce), model.f_d);
                const auto pred = codec::decode(di, model.bridge(codec::encode_dose_variant(x, model.f_dv)), model.f_d);
                const auto loss1 = l1_loss(recon, y_d);
                const auto loss2 = l1_loss(pred, y_sd);
                l1_task1 += loss1.item();
                l1_task2 += loss2.item();
                Tensor<float> sample_loss = ops::scale(loss1 + loss2, static_cast<float>(cfg.loss.l1));
                if (adversarial) {
                    const auto g1 = ops::mean(ops::softplus(-model.disc(recon)));
                    const auto g2 = ops::mean(ops::softplus(-model.disc(pred)));
                    adv_g += g1.item() + g2.item();
                    sample_loss = sample_loss + ops::scale(g1 + g2, static_cast<float>(cfg.loss.adv));
                    pairs.emplace_back(y_d, recon.detach());
                    pairs.emplace_back(y_sd, pred.detach());
                }
                sample_loss = ops::scale(sample_loss, batch_scale);
                total = b == 0 ? sample_loss : total + sample_loss;
            }
            const double loss_value = total.item();
            backward(total);
            gen_opt.step();
            gen_opt.zero_grad();
            model.store.set_requires_grad(prefix::discriminator, true);

            if (adversarial) {
                Tensor<float> disc_total;
                for (std::size_t i = 0; i < pairs.size(); ++i) {
                    const auto l = adversarial_losses(model.disc, pairs[i].first, pairs[i].second).discriminator;
                    disc_total = i == 0 ? l : disc_total + l;
                }
                disc_total = ops::scale(disc_total, static_cast<float>(cfg.loss.adv) * batch_scale);
                adv_d = disc_total.item();
                backward(disc_total);
                disc_opt.step();
                disc_opt.zero_grad();
            }
            result.losses.push_back(loss_value);

            const std::size_t done = step + 1;
            if (hooks.on_log && (done % cfg.training.log_interval == 0 || done == steps || step == 0)) {
                const double n = static_cast<double>(cfg.optimizer.batch_size);
                hooks.on_log({{"phase", kTokenizerStage},
                              {"step", done},
                              {"loss", loss_value},
                              {"l1_autoencode", l1_task1 / n},
                              {"l1_image_to_image", l1_task2 / n},
                              {"adv_generator", adv_g / n},
                              {"adv_discriminator", adv_d},
                              {"wall_time", seconds_since(start)}});
            }
            if (cfg.training.checkpoint_interval > 0 && done % cfg.training.checkpoint_interval == 0 && done != steps) {
                auto c = snapshot(model, kTokenizerStage, done);
                c.optimizer.push_back(checkpoint::capture("generator", gen_opt, model.store));
                if (adversarial) c.optimizer.push_back(checkpoint::capture("discriminator", disc_opt, model.store));
                emit_checkpoint(hooks, c);
            }
        });
    }
    result.checkpoint = snapshot(model, kTokenizerStage, steps);
    result.checkpoint.optimizer.push_back(checkpoint::capture("generator", gen_opt, model.store));
    if (adversarial) result.checkpoint.optimizer.push_back(checkpoint::capture("discriminator", disc_opt, model.store));
    emit_checkpoint(hooks, result.checkpoint);
    return result;
}

namespace {

struct FrozenSample {
    codec::TokenPair<float> dose_variant;
    codec::TokenPair<float> dose_invariant;
    std::vector<codec::TokenPair<float>> teacher;
    std::vector<Tensor<float>> targets;
    std::vector<codec::TokenPair<float>> target_tokens;
};

std::vector<phantom::Image> dose_images(const VolumeSample& s, const std::vector<double>& doses) {
    std::vector<phantom::Image> out;
    for (double d : doses) out.push_back(s.dose(d));
    return out;
}

} // namespace

TrainResult train_autoregression(Model& model, const checkpoint::Checkpoint& pretrained,
                                 const std::vector<VolumeSample>& data, const TrainHooks& hooks) {
    const ModelConfig& cfg = model.config;
    require_data(data, cfg.geometry.image_size, "train-ar");
    if (pretrained.stage != kTokenizerStage && pretrained.stage != kAutoregressionStage)
        throw FormatError("train-ar: unknown checkpoint stage '" + pretrained.stage + "'");
    checkpoint::Checkpoint tokenizer = pretrained;
    std::erase_if(tokenizer.tensors, [](const checkpoint::NamedTensor& t) { return t.name.rfind(prefix::autoregression, 0) == 0; });
    tokenizer.optimizer.clear();
    checkpoint::restore(model.store, tokenizer, tokenizer_prefixes());

    const bool freeze = cfg.training.freeze_pretrained;
    std::vector<std::string> trained{prefix::autoregression};
    if (!freeze) trained.insert(trained.end(), tokenizer_prefixes().begin(), tokenizer_prefixes().end());
    for (const auto& [name, t] : model.store.entries()) {
        bool on = false;
        for (const auto& p : trained) on = on || name.rfind(p, 0) == 0;
        model.store.set_requires_grad(name, on);
    }
    Adam<float> opt(params_with(model.store, trained), cfg.optimizer.adam);

    const auto doses = ar::dose_schedule(cfg.ar.num_steps);
    const std::vector<double> teacher_doses(doses.begin(), doses.end() - 1);
    const bool image_loss = cfg.loss.l2_space != "token";
    const bool token_loss = cfg.loss.l2_space != "image";
    std::vector<std::optional<FrozenSample>> cache(freeze ? data.size() : 0);
    auto prepare = [&](std::size_t index) {
        const VolumeSample& s = data[index];
        FrozenSample f;
        const auto x = phantom::input_tensor<float>(s);
        f.dose_variant = codec::encode_dose_variant(x, model.f_dv);
        f.dose_invariant = codec::encode_dose_invariant(x, model.f_di);
        for (const auto& img : dose_images(s, teacher_doses))
            f.teacher.push_back(codec::encode_contrast(phantom::image_tensor<float>(img), model.f_ce));
        for (const auto& img : dose_images(s, doses)) {
            f.targets.push_back(phantom::image_tensor<float>(img));
            if (token_loss) {
                const auto t = codec::encode_contrast(f.targets.back(), model.f_ce);
                f.target_tokens.push_back({t.fine.detach(), t.coarse.detach()});
            }
        }
        return f;
    };

    Rng rng(cfg.training.seed ^ kSamplingStream);
    const std::size_t steps = step_budget(cfg.training.ar_steps, hooks);
    const auto start = std::chrono::steady_clock::now();
    const float batch_scale = 1.0f / static_cast<float>(cfg.optimizer.batch_size);
    TrainResult result;
    for (std::size_t step = 0; step < steps; ++step) {
        run_step("train-ar", step, [&] {
            Tensor<float> total;
            std::vector<double> per_dose(doses.size(), 0.0);
            for (std::size_t b = 0; b < cfg.optimizer.batch_size; ++b) {
                const std::size_t index = rng.below(data.size());
                FrozenSample fresh;
                const FrozenSample* f = nullptr;
                if (freeze) {
                    if (!cache[index]) {
                        NoGradGuard guard;
                        cache[index] = prepare(index);
                    }
                    f = &*cache[index];
                } else {
                    fresh = prepare(index);
                    f = &fresh;
                }
                const auto predicted = ar::ar_teacher_forced_tokens(f->dose_variant, f->teacher, model.ar);
                Tensor<float> sample_loss;
                for (std::size_t k = 0; k < predicted.size(); ++k) {
                    Tensor<float> l;
                    if (image_loss) l = l2_loss(codec::decode(f->dose_invariant, predicted[k], model.f_d), f->targets[k]);
                    if (token_loss) {
                        const auto& want = f->target_tokens[k];
                        const auto t = l2_loss(predicted[k].fine, want.fine) + l2_loss(predicted[k].coarse, want.coarse);
                        l = image_loss ? l + t : t;
                    }
                    per_dose[k] += l.item();
                    sample_loss = k == 0 ? l : sample_loss + l;
                }
                sample_loss = ops::scale(sample_loss, static_cast<float>(cfg.loss.l2) * batch_scale);
                total = b == 0 ? sample_loss : total + sample_loss;
            }
            const double loss_value = total.item();
            backward(total);
            opt.step();
            opt.zero_grad();
            result.losses.push_back(loss_value);

            const std::size_t done = step + 1;
            if (hooks.on_log && (done % cfg.training.log_interval == 0 || done == steps || step == 0)) {
                nlohmann::json rec{{"phase", kAutoregressionStage}, {"step", done}, {"loss", loss_value}};
                for (std::size_t k = 0; k < doses.size(); ++k)
                    rec["l2_" + std::string(codec::to_string(ar::role_for_dose(doses[k])))] =
                        per_dose[k] / static_cast<double>(cfg.optimizer.batch_size);
                rec["wall_time"] = seconds_since(start);
                hooks.on_log(rec);
            }
            if (cfg.training.checkpoint_interval > 0 && done % cfg.training.checkpoint_interval == 0 && done != steps) {
                auto c = snapshot(model, kAutoregressionStage, done);
                c.optimizer.push_back(checkpoint::capture("autoregression", opt, model.store));
                emit_checkpoint(hooks, c);
            }
        });
    }
    model.store.set_requires_grad("", true);
    result.checkpoint = snapshot(model, kAutoregressionStage, steps);
    result.checkpoint.optimizer.push_back(checkpoint::capture("autoregression", opt, model.store));
    emit_checkpoint(hooks, result.checkpoint);
    return result;
}

Synthesis synthesize(const Model& model, const VolumeSample& sample, int steps) {
    NoGradGuard guard;
    const auto r = ar::ar_infer(phantom::input_tensor<float>(sample), model.codecs(), model.ar, steps);
    Synthesis out;
    for (const auto& img : r.images) out.images.push_back(phantom::tensor_image(img));
    out.doses = r.doses;
    out.calls = r.calls;
    return out;
}

phantom::Image synthesize_direct(const Model& model, const VolumeSample& sample) {
    NoGradGuard guard;
    const auto x = phantom::input_tensor<float>(sample);
    const auto di = codec::encode_dose_invariant(x, model.f_di);
    const auto dv = model.bridge(codec::encode_dose_variant(x, model.f_dv));
    return phantom::tensor_image(codec::decode(di, dv, model.f_d));
}

metrics::RegionReport evaluate_model(const Model& model, const std::vector<VolumeSample>& data, const std::string& method,
                                     SynthesisMode mode) {
    std::vector<phantom::Image> preds, targets, masks;
    for (const auto& s : data) {
        preds.push_back(mode == SynthesisMode::direct ? synthesize_direct(model, s) : synthesize(model, s).images.back());
        targets.push_back(s.y_sd);
        masks.push_back(s.x_tm);
    }
    return metrics::evaluate(method, preds, targets, masks, model.config.tumor_dilation);
}

DoseRamp dose_ramp(const Model& model, const std::vector<VolumeSample>& data) {
    DoseRamp ramp;
    std::size_t monotone = 0;
    for (const auto& s : data) {
        const Synthesis syn = synthesize(model, s);
        if (ramp.doses.empty()) {
            ramp.doses = syn.doses;
            ramp.rim_mean.assign(syn.doses.size(), 0.0);
        }
        std::vector<double> means;
        for (const auto& img : syn.images) {
            double total = 0.0;
            std::size_t n = 0;
            for (std::size_t i = 0; i < img.pixels.size(); ++i) {
                if (s.y_sd.pixels[i] <= s.x_nc[0].pixels[i]) continue;
                total += img.pixels[i];
                ++n;
            }
            means.push_back(n ? total / static_cast<double>(n) : 0.0);
        }
        for (std::size_t k = 0; k < means.size(); ++k) ramp.rim_mean[k] += means[k] / static_cast<double>(data.size());
        monotone += std::is_sorted(means.begin(), means.end());
    }
    ramp.monotone_fraction = data.empty() ? 0.0 : static_cast<double>(monotone) / static_cast<double>(data.size());
    return ramp;
}

metrics::RegionReport evaluate_copy_baseline(const std::vector<VolumeSample>& data, std::size_t dilation) {
    std::vector<phantom::Image> preds, targets, masks;
    for (const auto& s : data) {
        preds.push_back(s.x_nc[0]);
        targets.push_back(s.y_sd);
        masks.push_back(s.x_tm);
    }
    return metrics::evaluate("Copy input (T1w)", preds, targets, masks, dilation);
}

const std::array<const char*, 4> kAblationRows{"One Step", "Two Steps", "w/o Dose-variant Autoregression", "CAVM"};

AblationResult run_ablation(const ModelConfig& base, const std::vector<VolumeSample>& train,
                            const std::vector<VolumeSample>& test, const TrainHooks& hooks) {
    if (test.empty()) throw ConfigError("ablate: empty test split");
    ModelConfig cfg = base;
    Model pretrain_model(cfg);
    TrainHooks phase1 = hooks;
    phase1.on_checkpoint = nullptr;
    const auto pretrained = pretrain_tokenizers(pretrain_model, train, phase1).checkpoint;

    AblationResult result;
    auto ar_variant = [&](int steps, const char* name) {
        ModelConfig c = base;
        c.ar.num_steps = steps;
        Model m(c);
        TrainHooks phase2 = hooks;
        phase2.on_checkpoint = nullptr;
        train_autoregression(m, pretrained, train, phase2);
        return evaluate_model(m, test, name, SynthesisMode::autoregressive);
    };
    result.rows.push_back(ar_variant(1, kAblationRows[0]));
    result.rows.push_back(ar_variant(2, kAblationRows[1]));
    result.rows.push_back(evaluate_model(pretrain_model, test, kAblationRows[2], SynthesisMode::direct));
    result.rows.push_back(ar_variant(3, kAblationRows[3]));
    result.baseline = evaluate_copy_baseline(test, base.tumor_dilation);
    return result;
}

} // namespace cavm::train
