#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cavm/autoregression.hpp"
#include "cavm/codec.hpp"
#include "cavm/nn.hpp"
#include "cavm/random.hpp"
#include "cavm/tensor.hpp"

namespace cavm::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

/// Overwrites every parameter (including zero-initialised ones) with uniform noise.
template <typename T>
void randomize(nn::ParameterStore<T>& store, Rng& rng, double amplitude = 0.5) {
    for (const auto& [name, t] : store.entries()) {
        Tensor<T> handle = t;
        for (auto& v : handle.mutable_values()) v = static_cast<T>(rng.uniform(-amplitude, amplitude));
    }
}

/// 16x16 images: a 2x2 fine grid and a single coarse token.
inline codec::CodecGeometry tiny_geometry() {
    codec::CodecGeometry g;
    g.image_size = 16;
    g.fine_dim = 8;
    g.coarse_dim = 8;
    g.encoder_widths = {3, 4};
    g.decoder_widths = {6, 4, 3, 2};
    return g;
}

inline ar::ArConfig tiny_ar_config(std::size_t layers = 2, int steps = 3) {
    ar::ArConfig c;
    c.fine = {8, 2, layers, 12};
    c.coarse = {8, 2, layers, 3};
    c.num_steps = steps;
    return c;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag);
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

inline TempDir::TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    const auto base = std::filesystem::temp_directory_path();
    Rng rng(static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()) + counter++);
    path_ = base / ("cavm-" + tag + "-" + std::to_string(rng.next_u64() % 1000000000ULL));
    std::filesystem::create_directories(path_);
}

inline TempDir::~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
}



} // namespace cavm::testing
