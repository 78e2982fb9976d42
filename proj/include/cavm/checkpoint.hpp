#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cavm/adam.hpp"
#include "cavm/nn.hpp"

// Checkpoint file: "CAVMCKPT", u32 version, u64 manifest length, JSON manifest
// (config snapshot, stage, step, tensor table with name/shape/dtype/offset,
// optimizer groups), then the little-endian float32 payload.
namespace cavm::checkpoint {

constexpr std::uint32_t kVersion = 1;

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;

    bool operator==(const NamedTensor&) const = default;
};

/// Adam state of one parameter group; moments are keyed by parameter name.
struct OptimizerGroup {
    std::string name;
    AdamSettings settings;
    std::uint64_t step_count = 0;
    std::vector<NamedTensor> first_moment;
    std::vector<NamedTensor> second_moment;
};

struct Checkpoint {
    nlohmann::json config;
    std::string stage;
    std::uint64_t step = 0;
    std::vector<NamedTensor> tensors;
    std::vector<OptimizerGroup> optimizer;

    const NamedTensor* find(std::string_view name) const;
};

void write(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read(const std::filesystem::path& path);
nlohmann::json manifest(const Checkpoint& ckpt);

std::vector<NamedTensor> capture(const nn::ParameterStore<float>& store);
OptimizerGroup capture(const std::string& group, const Adam<float>& adam, const nn::ParameterStore<float>& store);

/// Copies checkpoint values into the store's leaves in place. Every store
/// entry whose name starts with one of `required` must be present with a
/// matching shape; other present entries are loaded too, absent ones are left
/// alone. Tensors unknown to the store throw FormatError. Returns the number
/// of loaded tensors.
std::size_t restore(nn::ParameterStore<float>& store, const Checkpoint& ckpt, const std::vector<std::string>& required);
void restore(Adam<float>& adam, const OptimizerGroup& group, const nn::ParameterStore<float>& store);

} // namespace cavm::checkpoint
