#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "cavm/checkpoint.hpp"
#include "cavm/config.hpp"
#include "cavm/errors.hpp"
#include "cavm/io.hpp"
#include "cavm/metrics.hpp"
#include "cavm/phantom.hpp"
#include "cavm/training.hpp"

namespace fs = std::filesystem;
using namespace cavm;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 2, kNumeric = 3, kIo = 4 };

struct UsageError : Error {
    using Error::Error;
};

void ensure_writable_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw UsageError("cannot create directory '" + dir.string() + "'");
    const fs::path probe = dir / ".cavm-write-probe";
    {
        std::ofstream f(probe);
        if (!f) throw UsageError("directory '" + dir.string() + "' is not writable");
    }
    fs::remove(probe, ec);
}

void ensure_output_file(const fs::path& file) {
    ensure_writable_dir(file.has_parent_path() ? file.parent_path() : fs::path("."));
    if (fs::is_directory(file)) throw UsageError("output '" + file.string() + "' is a directory");
}

void ensure_split(const fs::path& data, const std::string& split) {
    if (!fs::is_directory(data / split))
        throw UsageError("data directory '" + data.string() + "' has no '" + split + "' split");
}

void ensure_file(const fs::path& path, const std::string& flag) {
    if (!fs::is_regular_file(path)) throw UsageError(flag + ": no such file '" + path.string() + "'");
}

ModelConfig resolve_config(const std::string& path) {
    if (path.empty()) return toy_preset();
    ensure_file(path, "--config");
    return load_run_config(path).model;
}

void write_text(const fs::path& path, const std::string& text) { io::write_atomic(path, io::Bytes(text.begin(), text.end())); }

// Line-delimited JSON log; each record is flushed as it is written.
class JsonLog {
public:
    explicit JsonLog(const fs::path& path) : out_(path, std::ios::trunc) {
        if (!out_) throw IoError("cannot open log '" + path.string() + "'");
    }
    void operator()(const json& record) {
        out_ << record.dump() << '\n';
        out_.flush();
        std::cerr << record.dump() << '\n';
    }

private:
    std::ofstream out_;
};

json provenance(const ModelConfig& cfg) {
    return {{"config_hash", io::hex64(config_hash(cfg))}, {"seed", cfg.training.seed}};
}

void write_pgm(const phantom::Image& img, const fs::path& path) {
    std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    const float hi = 1.5f;
    for (float v : img.pixels) {
        const float c = std::clamp(v / hi, 0.0f, 1.0f);
        out.push_back(static_cast<char>(static_cast<unsigned char>(c * 255.0f + 0.5f)));
    }
    write_text(path, out);
}

int cmd_gen_data(const fs::path& out, std::size_t train, std::size_t val, std::size_t test, std::size_t size,
                 std::uint64_t seed) {
    ensure_writable_dir(out);
    phantom::write_dataset(out, {train, val, test}, size, seed);
    std::cout << "wrote " << train + val + test << " samples to " << out.string() << "\n";
    return kOk;
}

int cmd_train_tokenizer(const std::string& config_path, const fs::path& data, const fs::path& out,
                        std::optional<std::size_t> steps) {
    const ModelConfig cfg = resolve_config(config_path);
    ensure_split(data, "train");
    ensure_output_file(out);
    const auto train = phantom::load_split(data, "train");
    JsonLog log(out.string() + ".log.jsonl");
    train::TrainHooks hooks;
    hooks.max_steps = steps;
    hooks.on_log = [&](const json& r) { log(r); };
    hooks.on_checkpoint = [&](const checkpoint::Checkpoint& c) { checkpoint::write(c, out); };
    train::Model model(cfg);
    const auto result = train::pretrain_tokenizers(model, train, hooks);
    std::cout << "tokenizer checkpoint " << out.string() << " after " << result.checkpoint.step << " steps\n";
    return kOk;
}

int cmd_train_ar(const std::string& config_path, const fs::path& data, const fs::path& init, const fs::path& out,
                 std::optional<std::size_t> steps) {
    ensure_file(init, "--init");
    ensure_split(data, "train");
    ensure_output_file(out);
    const auto pretrained = checkpoint::read(init);
    const ModelConfig cfg = config_path.empty() ? model_config_from_json(pretrained.config) : resolve_config(config_path);
    const auto train = phantom::load_split(data, "train");
    JsonLog log(out.string() + ".log.jsonl");
    train::TrainHooks hooks;
    hooks.max_steps = steps;
    hooks.on_log = [&](const json& r) { log(r); };
    hooks.on_checkpoint = [&](const checkpoint::Checkpoint& c) { checkpoint::write(c, out); };
    train::Model model(cfg);
    const auto result = train::train_autoregression(model, pretrained, train, hooks);
    std::cout << "autoregression checkpoint " << out.string() << " after " << result.checkpoint.step << " steps\n";
    return kOk;
}

std::unique_ptr<train::Model> model_for(const checkpoint::Checkpoint& ckpt, std::optional<int> steps) {
    json config = ckpt.config;
    if (steps) config["num_steps"] = *steps;
    checkpoint::Checkpoint c = ckpt;
    c.config = config;
    try {
        return train::load_model(c);
    } catch (const ShapeError& e) {
        throw UsageError(std::string("checkpoint does not match its config: ") + e.what());
    }
}

int cmd_synthesize(const fs::path& ckpt_path, const fs::path& input, const fs::path& out, std::optional<int> steps,
                   bool preview) {
    ensure_file(ckpt_path, "--ckpt");
    ensure_file(input, "--input");
    ensure_writable_dir(out);
    const auto ckpt = checkpoint::read(ckpt_path);
    const auto model = model_for(ckpt, steps);
    const auto sample = phantom::read_sample(input);
    const std::size_t size = model->config.geometry.image_size;
    if (sample.height() != size || sample.width() != size)
        throw UsageError("input is " + std::to_string(sample.height()) + "x" + std::to_string(sample.width()) +
                         " but the checkpoint expects " + std::to_string(size) + "x" + std::to_string(size));

    std::vector<std::pair<std::string, phantom::Image>> outputs;
    if (ckpt.stage == train::kAutoregressionStage) {
        const auto s = train::synthesize(*model, sample);
        for (std::size_t i = 0; i < s.images.size(); ++i) {
            std::string role(codec::to_string(ar::role_for_dose(s.doses[i])));
            role = role.substr(role.find('_') + 1);
            std::transform(role.begin(), role.end(), role.begin(), [](unsigned char c) { return std::tolower(c); });
            outputs.emplace_back("y_" + role, s.images[i]);
        }
    } else {
        outputs.emplace_back("y_sd", train::synthesize_direct(*model, sample));
    }
    for (std::size_t i = 0; i < outputs.size(); ++i) {
        const auto& [name, img] = outputs[i];
        const std::string stem = std::to_string(i + 1) + "_" + name;
        phantom::write_image_file({{name}, {img}, sample.seed}, out / (stem + ".cavm"));
        if (preview) write_pgm(img, out / (stem + ".pgm"));
        std::cout << (out / (stem + ".cavm")).string() << "\n";
    }
    return kOk;
}

int cmd_evaluate(const fs::path& ckpt_path, const fs::path& data, const fs::path& out, const std::string& split) {
    ensure_file(ckpt_path, "--ckpt");
    ensure_split(data, split);
    ensure_output_file(out);
    const auto ckpt = checkpoint::read(ckpt_path);
    const auto model = model_for(ckpt, std::nullopt);
    const auto samples = phantom::load_split(data, split);
    if (samples.empty()) throw UsageError("split '" + split + "' is empty");
    const auto mode = ckpt.stage == train::kAutoregressionStage ? train::SynthesisMode::autoregressive
                                                                 : train::SynthesisMode::direct;
    const std::vector<metrics::RegionReport> rows{
        train::evaluate_model(*model, samples, ckpt.stage == train::kAutoregressionStage ? "CAVM" : "Tokenizer (direct)", mode),
        train::evaluate_copy_baseline(samples, model->config.tumor_dilation)};
    json report = {{"provenance", provenance(model->config)}, {"split", split}, {"rows", json::array()}};
    for (const auto& r : rows) report["rows"].push_back(metrics::to_json(r));
    if (mode == train::SynthesisMode::autoregressive) {
        const auto ramp = train::dose_ramp(*model, samples);
        report["dose_ramp"] = {{"doses", ramp.doses}, {"rim_mean", ramp.rim_mean}, {"monotone_fraction", ramp.monotone_fraction}};
    }
    write_text(out, report.dump(2) + "\n");
    std::cout << metrics::render_table(rows);
    if (report.contains("dose_ramp")) {
        std::cout << "\nEnhancing-rim mean by dose:";
        for (std::size_t k = 0; k < report["dose_ramp"]["doses"].size(); ++k)
            std::printf(" %.2f -> %.4f", report["dose_ramp"]["doses"][k].get<double>(),
                        report["dose_ramp"]["rim_mean"][k].get<double>());
        std::printf("  (monotone in %.0f%% of samples)\n", 100.0 * report["dose_ramp"]["monotone_fraction"].get<double>());
    }
    return kOk;
}

int cmd_ablate(const std::string& config_path, const fs::path& data, const fs::path& out,
               std::optional<std::size_t> pretrain_steps, std::optional<std::size_t> ar_steps) {
    ModelConfig cfg = resolve_config(config_path);
    ensure_split(data, "train");
    ensure_split(data, "test");
    ensure_output_file(out);
    if (pretrain_steps) cfg.training.pretrain_steps = *pretrain_steps;
    if (ar_steps) cfg.training.ar_steps = *ar_steps;
    const auto train = phantom::load_split(data, "train");
    const auto test = phantom::load_split(data, "test");
    JsonLog log(out.string() + ".log.jsonl");
    train::TrainHooks hooks;
    hooks.on_log = [&](const json& r) { log(r); };
    const auto result = train::run_ablation(cfg, train, test, hooks);
    json report = {{"provenance", provenance(cfg)}, {"rows", json::array()}, {"baseline", metrics::to_json(result.baseline)}};
    for (const auto& r : result.rows) report["rows"].push_back(metrics::to_json(r));
    write_text(out, report.dump(2) + "\n");
    std::vector<metrics::RegionReport> table = result.rows;
    table.push_back(result.baseline);
    std::cout << metrics::render_table(table);
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dose-ramp contrast synthesis on synthetic phantoms"};
    app.require_subcommand(1);

    std::string out, data, config, init, ckpt, input, split = "test";
    std::size_t n_train = 200, n_val = 20, n_test = 40, size = 64;
    std::uint64_t seed = 1000;
    std::optional<std::size_t> steps, pretrain_steps, ar_steps;
    std::optional<int> synth_steps;
    bool preview = false;

    auto* gen = app.add_subcommand("gen-data", "Write train/val/test phantom splits and a manifest");
    gen->add_option("--out", out, "Output directory")->required();
    gen->add_option("--train", n_train, "Training samples");
    gen->add_option("--val", n_val, "Validation samples");
    gen->add_option("--test", n_test, "Test samples");
    gen->add_option("--size", size, "Image height and width");
    gen->add_option("--seed", seed, "Seed of the first sample");

    auto* tok = app.add_subcommand("train-tokenizer", "Pretrain encoders, decoder and token bridge");
    tok->add_option("--config", config, "Config file (default: toy preset)");
    tok->add_option("--data", data, "Dataset directory")->required();
    tok->add_option("--out", out, "Output checkpoint")->required();
    tok->add_option("--steps", steps, "Cap on training steps");

    auto* tar = app.add_subcommand("train-ar", "Train the autoregression streams on a pretrained tokenizer");
    tar->add_option("--config", config, "Config file (default: the --init checkpoint's config)");
    tar->add_option("--data", data, "Dataset directory")->required();
    tar->add_option("--init", init, "Tokenizer checkpoint")->required();
    tar->add_option("--out", out, "Output checkpoint")->required();
    tar->add_option("--steps", steps, "Cap on training steps");

    auto* syn = app.add_subcommand("synthesize", "Generate the dose ramp for one sample");
    syn->add_option("--ckpt", ckpt, "Checkpoint")->required();
    syn->add_option("--input", input, "Sample file")->required();
    syn->add_option("--out", out, "Output directory")->required();
    syn->add_option("--steps", synth_steps, "Number of dose steps")->check(CLI::Range(1, 3));
    syn->add_flag("--preview", preview, "Also write 8-bit PGM previews");

    auto* eval = app.add_subcommand("evaluate", "Region SSIM/PSNR of the standard-dose prediction");
    eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
    eval->add_option("--data", data, "Dataset directory")->required();
    eval->add_option("--out", out, "Report file (JSON)")->required();
    eval->add_option("--split", split, "Split to evaluate");

    auto* abl = app.add_subcommand("ablate", "Train and evaluate the four ablation variants");
    abl->add_option("--config,--configs", config, "Base config file (default: toy preset)");
    abl->add_option("--data", data, "Dataset directory")->required();
    abl->add_option("--out", out, "Report file (JSON)")->required();
    abl->add_option("--pretrain-steps", pretrain_steps, "Override pretraining steps");
    abl->add_option("--ar-steps", ar_steps, "Override autoregression steps");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*gen) return cmd_gen_data(out, n_train, n_val, n_test, size, seed);
        if (*tok) return cmd_train_tokenizer(config, data, out, steps);
        if (*tar) return cmd_train_ar(config, data, init, out, steps);
        if (*syn) return cmd_synthesize(ckpt, input, out, synth_steps, preview);
        if (*eval) return cmd_evaluate(ckpt, data, out, split);
        if (*abl) return cmd_ablate(config, data, out, pretrain_steps, ar_steps);
    } catch (const NumericFault& e) {
        std::cerr << "numeric fault: " << e.what() << "\n";
        return kNumeric;
    } catch (const IoError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kIo;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    }
    return kUsage;
}
