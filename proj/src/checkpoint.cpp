#include "cavm/checkpoint.hpp"

#include <algorithm>
#include <unordered_map>

#include "cavm/errors.hpp"
#include "cavm/io.hpp"

namespace cavm::checkpoint {

using nlohmann::json;

namespace {

constexpr std::string_view kMagic = "CAVMCKPT";

struct Slot {
    std::string section;
    std::string group;
    const NamedTensor* tensor;
};

std::vector<Slot> slots(const Checkpoint& c) {
    std::vector<Slot> out;
    for (const auto& t : c.tensors) out.push_back({"weights", "", &t});
    for (const auto& g : c.optimizer) {
        for (const auto& t : g.first_moment) out.push_back({"first_moment", g.name, &t});
        for (const auto& t : g.second_moment) out.push_back({"second_moment", g.name, &t});
    }
    return out;
}

std::string names_by_id(const nn::ParameterStore<float>& store, std::uint64_t id) {
    for (const auto& [name, t] : store.entries())
        if (t.id() == id) return name;
    throw Error("checkpoint: optimizer parameter is not in the store");
}

} // namespace

const NamedTensor* Checkpoint::find(std::string_view name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

json manifest(const Checkpoint& c) {
    json table = json::array();
    std::uint64_t offset = 0;
    for (const auto& s : slots(c)) {
        if (s.tensor->values.size() != numel(s.tensor->shape))
            throw ShapeError("checkpoint: tensor '" + s.tensor->name + "' holds " + std::to_string(s.tensor->values.size()) +
                             " values for shape " + shape_str(s.tensor->shape));
        json e = {{"name", s.tensor->name}, {"shape", s.tensor->shape}, {"dtype", "float32"}, {"offset", offset},
                  {"section", s.section}};
        if (!s.group.empty()) e["group"] = s.group;
        table.push_back(e);
        offset += 4 * s.tensor->values.size();
    }
    json groups = json::array();
    for (const auto& g : c.optimizer)
        groups.push_back({{"name", g.name},
                          {"lr", g.settings.learning_rate},
                          {"beta1", g.settings.beta1},
                          {"beta2", g.settings.beta2},
                          {"eps", g.settings.eps},
                          {"step_count", g.step_count}});
    return {{"config", c.config}, {"stage", c.stage}, {"step", c.step}, {"tensors", table}, {"optimizer", groups},
            {"payload_bytes", offset}};
}

void write(const Checkpoint& c, const std::filesystem::path& path) {
    const std::string text = manifest(c).dump();
    io::Bytes out;
    io::put_bytes(out, kMagic);
    io::put_u32(out, kVersion);
    io::put_u64(out, text.size());
    io::put_bytes(out, text);
    for (const auto& s : slots(c))
        for (float v : s.tensor->values) io::put_f32(out, v);
    io::write_atomic(path, out);
}

Checkpoint read(const std::filesystem::path& path) {
    const io::Bytes bytes = io::read_file(path);
    const std::string ctx = "checkpoint '" + path.string() + "'";
    io::Reader in(bytes, ctx);
    if (bytes.size() < kMagic.size() || in.string(kMagic.size()) != kMagic) throw FormatError(ctx + ": bad magic");
    const std::uint32_t version = in.u32();
    if (version != kVersion)
        throw FormatError(ctx + ": unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kVersion) + ")");
    const std::uint64_t length = in.u64();
    if (length > in.remaining()) throw IoError(ctx + ": truncated manifest");
    json m;
    try {
        m = json::parse(in.string(static_cast<std::size_t>(length)));
    } catch (const json::parse_error& e) {
        throw FormatError(ctx + ": malformed manifest: " + e.what());
    }
    const std::size_t payload = in.position();

    Checkpoint c;
    try {
        c.config = m.at("config");
        c.stage = m.at("stage").get<std::string>();
        c.step = m.at("step").get<std::uint64_t>();
        std::unordered_map<std::string, OptimizerGroup*> groups;
        c.optimizer.reserve(m.at("optimizer").size());
        for (const auto& g : m.at("optimizer")) {
            OptimizerGroup group;
            group.name = g.at("name").get<std::string>();
            group.settings = {g.at("lr").get<double>(), g.at("beta1").get<double>(), g.at("beta2").get<double>(),
                              g.at("eps").get<double>()};
            group.step_count = g.at("step_count").get<std::uint64_t>();
            c.optimizer.push_back(std::move(group));
            groups[c.optimizer.back().name] = &c.optimizer.back();
        }
        for (const auto& e : m.at("tensors")) {
            if (e.at("dtype").get<std::string>() != "float32") throw FormatError(ctx + ": unsupported dtype");
            NamedTensor t;
            t.name = e.at("name").get<std::string>();
            t.shape = e.at("shape").get<Shape>();
            const auto offset = e.at("offset").get<std::uint64_t>();
            const std::size_t n = numel(t.shape);
            if (payload + offset + 4 * n > bytes.size()) throw IoError(ctx + ": truncated payload at '" + t.name + "'");
            t.values.resize(n);
            io::Bytes chunk(bytes.begin() + static_cast<std::ptrdiff_t>(payload + offset),
                            bytes.begin() + static_cast<std::ptrdiff_t>(payload + offset + 4 * n));
            io::Reader r(chunk, ctx);
            for (float& v : t.values) v = r.f32();
            const std::string section = e.at("section").get<std::string>();
            if (section == "weights") {
                c.tensors.push_back(std::move(t));
            } else {
                auto it = groups.find(e.at("group").get<std::string>());
                if (it == groups.end()) throw FormatError(ctx + ": moment for unknown optimizer group");
                (section == "first_moment" ? it->second->first_moment : it->second->second_moment).push_back(std::move(t));
            }
        }
        if (payload + m.at("payload_bytes").get<std::uint64_t>() != bytes.size())
            throw IoError(ctx + ": payload size does not match the manifest");
    } catch (const json::exception& e) {
        throw FormatError(ctx + ": incomplete manifest: " + e.what());
    }
    return c;
}

std::vector<NamedTensor> capture(const nn::ParameterStore<float>& store) {
    std::vector<NamedTensor> out;
    for (const auto& [name, t] : store.entries()) {
        const auto v = t.values();
        out.push_back({name, t.shape(), std::vector<float>(v.begin(), v.end())});
    }
    return out;
}

OptimizerGroup capture(const std::string& group, const Adam<float>& adam, const nn::ParameterStore<float>& store) {
    OptimizerGroup g;
    g.name = group;
    g.settings = adam.state().settings;
    g.step_count = adam.state().step_count;
    const auto& params = adam.params();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string name = names_by_id(store, params[i].id());
        const auto& m = adam.state().first_moment;
        const auto& v = adam.state().second_moment;
        g.first_moment.push_back({name, params[i].shape(), m.empty() ? std::vector<float>(params[i].size(), 0.0f) : m[i]});
        g.second_moment.push_back({name, params[i].shape(), v.empty() ? std::vector<float>(params[i].size(), 0.0f) : v[i]});
    }
    return g;
}

std::size_t restore(nn::ParameterStore<float>& store, const Checkpoint& ckpt, const std::vector<std::string>& required) {
    std::unordered_map<std::string, const NamedTensor*> by_name;
    for (const auto& t : ckpt.tensors) {
        if (!store.contains(t.name)) throw FormatError("checkpoint: tensor '" + t.name + "' does not belong to this model");
        by_name[t.name] = &t;
    }
    std::size_t loaded = 0;
    for (const auto& [name, param] : store.entries()) {
        auto it = by_name.find(name);
        if (it == by_name.end()) {
            for (const auto& prefix : required)
                if (name.rfind(prefix, 0) == 0) throw FormatError("checkpoint: missing tensor '" + name + "'");
            continue;
        }
        if (it->second->shape != param.shape())
            throw ShapeError("checkpoint: tensor '" + name + "' has shape " + shape_str(it->second->shape) +
                             ", model expects " + shape_str(param.shape()));
        Tensor<float> target = param;
        auto values = target.mutable_values();
        std::copy(it->second->values.begin(), it->second->values.end(), values.begin());
        ++loaded;
    }
    return loaded;
}

void restore(Adam<float>& adam, const OptimizerGroup& group, const nn::ParameterStore<float>& store) {
    const auto& params = adam.params();
    if (group.first_moment.size() != params.size() || group.second_moment.size() != params.size())
        throw FormatError("checkpoint: optimizer group '" + group.name + "' does not match the parameter list");
    auto& state = adam.state();
    state.settings = group.settings;
    state.step_count = group.step_count;
    state.first_moment.assign(params.size(), {});
    state.second_moment.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string name = names_by_id(store, params[i].id());
        if (group.first_moment[i].name != name || group.first_moment[i].shape != params[i].shape() ||
            group.second_moment[i].name != name || group.second_moment[i].shape != params[i].shape())
            throw FormatError("checkpoint: optimizer moment for '" + name + "' does not match");
        state.first_moment[i] = group.first_moment[i].values;
        state.second_moment[i] = group.second_moment[i].values;
    }
}

} // namespace cavm::checkpoint
