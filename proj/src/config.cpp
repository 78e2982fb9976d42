#include "cavm/config.hpp"

#include <set>

#include "cavm/errors.hpp"
#include "cavm/io.hpp"

namespace cavm {

using nlohmann::json;

void ModelConfig::validate() const {
    if (preset != "toy" && preset != "paper") throw ConfigError("config: unknown preset '" + preset + "'");
    geometry.validate();
    if (geometry.in_channels != 4) throw ConfigError("config: in_channels must be 4 (three modalities plus the tumour mask)");
    ar.validate();
    for (auto s : {codec::Scale::fine, codec::Scale::coarse}) {
        const auto& stream = ar.stream(s);
        const std::string name(codec::to_string(s));
        if (stream.embed_dim != geometry.dim(s))
            throw ConfigError("config: " + name + " stream width " + std::to_string(stream.embed_dim) +
                              " differs from the " + name + " token width " + std::to_string(geometry.dim(s)));
        const std::size_t length = ar.num_blocks() * geometry.tokens(s);
        if (length > stream.max_seq_len)
            throw ConfigError("config: " + name + " sequence of " + std::to_string(length) +
                              " tokens exceeds max_seq_len " + std::to_string(stream.max_seq_len));
    }
    const auto& a = optimizer.adam;
    if (!(a.learning_rate > 0.0) || !(a.beta1 >= 0.0 && a.beta1 < 1.0) || !(a.beta2 >= 0.0 && a.beta2 < 1.0) || !(a.eps > 0.0))
        throw ConfigError("config: optimizer settings out of range");
    if (optimizer.batch_size == 0) throw ConfigError("config: batch_size must be positive");
    if (!(loss.l1 >= 0.0) || !(loss.adv >= 0.0) || !(loss.l2 >= 0.0)) throw ConfigError("config: loss weights must be non-negative");
    if (loss.l2_space != "image" && loss.l2_space != "token" && loss.l2_space != "both")
        throw ConfigError("config: loss.l2_space must be image, token or both (got '" + loss.l2_space + "')");
    if (training.log_interval == 0) throw ConfigError("config: log_interval must be positive");
}

ModelConfig toy_preset() {
    ModelConfig c;
    c.optimizer.adam.learning_rate = 1e-3;
    c.training.pretrain_steps = 16000;
    c.training.ar_steps = 4000;
    c.training.log_interval = 500;
    c.validate();
    return c;
}

ModelConfig paper_preset() {
    ModelConfig c;
    c.preset = "paper";
    c.geometry.image_size = 96;
    c.geometry.fine_dim = 384;
    c.geometry.coarse_dim = 768;
    c.geometry.encoder_widths = {64, 128};
    c.geometry.decoder_widths = {256, 128, 64, 32};
    c.ar.fine = {384, 4, 4, 432};
    c.ar.coarse = {768, 8, 8, 864};
    c.training.pretrain_steps = 200000;
    c.training.ar_steps = 100000;
    c.validate();
    return c;
}

ModelConfig preset(const std::string& name) {
    if (name == "toy") return toy_preset();
    if (name == "paper") return paper_preset();
    throw ConfigError("config: unknown preset '" + name + "' (expected toy or paper)");
}

namespace {

json stream_json(const ar::StreamConfig& s) {
    return {{"embed_dim", s.embed_dim}, {"heads", s.num_heads}, {"layers", s.num_layers}, {"max_seq_len", s.max_seq_len}};
}

// Walks one JSON object, handing out typed fields and rejecting leftovers.
class Fields {
public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("config: '" + display() + "' must be an object");
    }

    template <typename V>
    void read(const char* key, V& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            out = it->template get<V>();
        } catch (const json::exception&) {
            throw ConfigError("config: '" + child(key) + "' has the wrong type");
        }
    }

    template <typename F>
    void object(const char* key, F&& f) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        Fields sub(*it, child(key));
        f(sub);
        sub.finish();
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("config: unknown key '" + child(it.key()) + "'");
    }

private:
    std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
    std::string display() const { return path_.empty() ? "<root>" : path_; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_stream(Fields& f, ar::StreamConfig& s) {
    f.read("embed_dim", s.embed_dim);
    f.read("heads", s.num_heads);
    f.read("layers", s.num_layers);
    f.read("max_seq_len", s.max_seq_len);
}

ModelConfig read_model(Fields& f) {
    std::string name = "toy";
    f.read("preset", name);
    ModelConfig c = preset(name);
    auto& g = c.geometry;
    f.read("image_size", g.image_size);
    f.read("in_channels", g.in_channels);
    f.read("encoder_widths", g.encoder_widths);
    f.read("decoder_widths", g.decoder_widths);
    f.object("fine", [&](Fields& s) { read_stream(s, c.ar.fine); });
    f.object("coarse", [&](Fields& s) { read_stream(s, c.ar.coarse); });
    g.fine_dim = c.ar.fine.embed_dim;
    g.coarse_dim = c.ar.coarse.embed_dim;
    f.read("rope_base", c.ar.rope_base);
    f.read("num_steps", c.ar.num_steps);
    f.read("placeholder_fill", c.ar.placeholder_fill);
    f.read("norm_eps", c.ar.norm_eps);
    f.object("optimizer", [&](Fields& o) {
        o.read("lr", c.optimizer.adam.learning_rate);
        o.read("beta1", c.optimizer.adam.beta1);
        o.read("beta2", c.optimizer.adam.beta2);
        o.read("eps", c.optimizer.adam.eps);
        o.read("batch_size", c.optimizer.batch_size);
    });
    f.object("loss", [&](Fields& l) {
        l.read("l1", c.loss.l1);
        l.read("adv", c.loss.adv);
        l.read("l2", c.loss.l2);
        l.read("l2_space", c.loss.l2_space);
    });
    f.object("training", [&](Fields& t) {
        t.read("pretrain_steps", c.training.pretrain_steps);
        t.read("ar_steps", c.training.ar_steps);
        t.read("checkpoint_interval", c.training.checkpoint_interval);
        t.read("log_interval", c.training.log_interval);
        t.read("freeze_pretrained", c.training.freeze_pretrained);
        t.read("seed", c.training.seed);
    });
    f.object("metrics", [&](Fields& m) { m.read("tumor_dilation", c.tumor_dilation); });
    c.validate();
    return c;
}

} // namespace

json to_json(const ModelConfig& c) {
    return {
        {"preset", c.preset},
        {"image_size", c.geometry.image_size},
        {"in_channels", c.geometry.in_channels},
        {"encoder_widths", c.geometry.encoder_widths},
        {"decoder_widths", c.geometry.decoder_widths},
        {"fine", stream_json(c.ar.fine)},
        {"coarse", stream_json(c.ar.coarse)},
        {"rope_base", c.ar.rope_base},
        {"num_steps", c.ar.num_steps},
        {"placeholder_fill", c.ar.placeholder_fill},
        {"norm_eps", c.ar.norm_eps},
        {"optimizer",
         {{"lr", c.optimizer.adam.learning_rate},
          {"beta1", c.optimizer.adam.beta1},
          {"beta2", c.optimizer.adam.beta2},
          {"eps", c.optimizer.adam.eps},
          {"batch_size", c.optimizer.batch_size}}},
        {"loss", {{"l1", c.loss.l1}, {"adv", c.loss.adv}, {"l2", c.loss.l2}, {"l2_space", c.loss.l2_space}}},
        {"training",
         {{"pretrain_steps", c.training.pretrain_steps},
          {"ar_steps", c.training.ar_steps},
          {"checkpoint_interval", c.training.checkpoint_interval},
          {"log_interval", c.training.log_interval},
          {"freeze_pretrained", c.training.freeze_pretrained},
          {"seed", c.training.seed}}},
        {"metrics", {{"tumor_dilation", c.tumor_dilation}}},
    };
}

ModelConfig model_config_from_json(const json& j) {
    Fields f(j, "");
    ModelConfig c = read_model(f);
    f.finish();
    return c;
}

RunConfig run_config_from_json(const json& j) {
    Fields f(j, "");
    RunConfig r;
    r.model = read_model(f);
    f.read("data_dir", r.data_dir);
    f.read("out_dir", r.out_dir);
    f.finish();
    return r;
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        // nlohmann reports a 1-based byte count just past the offending character.
        const std::size_t offset = e.byte == 0 ? 0 : std::min<std::size_t>(e.byte - 1, text.size());
        std::size_t line = 1, column = 1;
        for (std::size_t i = 0; i < offset; ++i) {
            if (text[i] == '\n') {
                ++line;
                column = 1;
            } else {
                ++column;
            }
        }
        throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": syntax error");
    }
    try {
        return run_config_from_json(j);
    } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
    }
}

RunConfig load_run_config(const std::filesystem::path& path) {
    const io::Bytes bytes = io::read_file(path);
    return parse_run_config(std::string(bytes.begin(), bytes.end()), path.string());
}

std::uint64_t config_hash(const ModelConfig& config) { return io::fnv1a(to_json(config).dump()); }

} // namespace cavm
