#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cavm/tensor.hpp"

// Synthetic dose-ramp phantoms: an elliptical "brain" with smooth texture, an
// interior tumour whose rim enhances under contrast, three non-contrast
// surrogates (T1w-, T2w-, FLAIR-like), a binary tumour mask and the
// standard-dose contrast image.
namespace cavm::phantom {

/// Single-channel float32 image, row-major.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), pixels(h * w, fill) {}
    float& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
    float at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
    bool same_shape(const Image& o) const { return height == o.height && width == o.width; }
    bool operator==(const Image&) const = default;
};

struct VolumeSample {
    std::array<Image, 3> x_nc; // T1w-like, T2w-like, FLAIR-like
    Image x_tm;                // tumour mask, exactly 0 or 1
    Image y_sd;                // standard-dose contrast image
    std::uint64_t seed = 0;

    std::size_t height() const { return y_sd.height; }
    std::size_t width() const { return y_sd.width; }
    /// Contrast image at dose fraction d (linear ramp from the T1w channel).
    Image dose(double d) const;
    Image y_ld() const { return dose(1.0 / 3.0); }
    Image y_hd() const { return dose(2.0 / 3.0); }
    bool operator==(const VolumeSample&) const = default;
};

/// Channel names in on-disk order.
extern const std::array<const char*, 5> kChannelNames;

VolumeSample generate_phantom(std::uint64_t seed, std::size_t size = 64);

/// y_d = x_t1 + d * (y_sd - x_t1); d = 1 returns y_sd exactly.
Image dose_interpolate(const Image& x_t1, const Image& y_sd, double d);

/// Linear-interpolated percentile at position q*(N-1) of the sorted values, q in [0, 1].
double percentile(std::vector<double> values, double q);
double percentile(const Image& v, double q);
/// Double-precision form of normalize_volume.
std::vector<double> normalize_values(const std::vector<double>& v);
/// v / percentile_95(v). Throws ConfigError for negative or all-zero input.
Image normalize_volume(const Image& v);
/// Divides every pixel by `divisor` (shared-scale normalization of paired images).
Image divide(const Image& v, double divisor);

/// Binary dilation with a disc of the given radius.
Image dilate(const Image& mask, std::size_t radius);

/// Sample file: "CAVM", u32 version, u32 header length, JSON header (channel
/// names, shape, dtype, seed), then little-endian float32 planes in header order.
constexpr std::uint32_t kSampleVersion = 1;

/// Any set of named planes in the sample container.
struct ImageFile {
    std::vector<std::string> channels;
    std::vector<Image> planes;
    std::uint64_t seed = 0;
};
void write_image_file(const ImageFile& file, const std::filesystem::path& path);
ImageFile read_image_file(const std::filesystem::path& path);

void write_sample(const VolumeSample& sample, const std::filesystem::path& path);
VolumeSample read_sample(const std::filesystem::path& path);

/// Model input x = concat(x_NC, x_TM) as a (4, H, W) tensor.
template <typename T>
Tensor<T> input_tensor(const VolumeSample& s);
/// (1, H, W) tensor of an image.
template <typename T>
Tensor<T> image_tensor(const Image& img);
template <typename T>
Image tensor_image(const Tensor<T>& t);

struct SplitCounts {
    std::size_t train = 0;
    std::size_t val = 0;
    std::size_t test = 0;
};

/// Writes `<root>/<split>/<seed>.cavm` for seeds seed0, seed0+1, ... (train,
/// then val, then test) and `<root>/manifest.json`.
void write_dataset(const std::filesystem::path& root, const SplitCounts& counts, std::size_t size, std::uint64_t seed0);
/// All samples of one split, ordered by seed.
std::vector<VolumeSample> load_split(const std::filesystem::path& root, const std::string& split);

} // namespace cavm::phantom
