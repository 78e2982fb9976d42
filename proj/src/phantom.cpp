#include "cavm/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

#include "cavm/errors.hpp"
#include "cavm/io.hpp"
#include "cavm/random.hpp"

namespace cavm::phantom {

const std::array<const char*, 5> kChannelNames{"t1w", "t2w", "flair", "tumor_mask", "t1gd_sd"};

namespace {

using Field = std::vector<double>;

double smoothstep(double lo, double hi, double x) {
    const double t = std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
    return t * t * (3.0 - 2.0 * t);
}

// Rotated-ellipse coordinates: returns the normalised radius of (x, y).
struct Ellipse {
    double cx, cy, ax, ay, angle;

    double radius(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = (c * dx + s * dy) / ax;
        const double v = (-s * dx + c * dy) / ay;
        return std::sqrt(u * u + v * v);
    }
};

// Enhancement profile across the tumour rim: positive for 0.5 < r < 1, zero elsewhere.
double rim_profile(double r) {
    if (r <= 0.5 || r >= 1.0) return 0.0;
    return std::sin(std::numbers::pi * (r - 0.5) / 0.5);
}

Image to_image(const Field& f, std::size_t h, std::size_t w, double divisor) {
    Image img(h, w);
    for (std::size_t i = 0; i < f.size(); ++i) img.pixels[i] = static_cast<float>(f[i] / divisor);
    return img;
}

} // namespace

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw ConfigError("percentile: no values");
    if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("percentile: q must lie in [0, 1]");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Image VolumeSample::dose(double d) const { return dose_interpolate(x_nc[0], y_sd, d); }

VolumeSample generate_phantom(std::uint64_t seed, std::size_t size) {
    if (size < 32 || size % 2 != 0) throw ConfigError("phantom: size must be even and >= 32, got " + std::to_string(size));
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const double n = static_cast<double>(size);
    const std::size_t count = size * size;

    const Ellipse brain{n / 2 + rng.uniform(-0.04, 0.04) * n, n / 2 + rng.uniform(-0.04, 0.04) * n,
                        rng.uniform(0.36, 0.42) * n, rng.uniform(0.38, 0.44) * n, rng.uniform(-0.3, 0.3)};

    // Low-frequency texture: a few plane waves plus a brighter inner region.
    struct Wave { double kx, ky, phase, amp; };
    std::array<Wave, 3> waves;
    for (auto& w : waves) {
        const double freq = rng.uniform(1.0, 3.0) * 2.0 * std::numbers::pi / n;
        const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
        w = {freq * std::cos(dir), freq * std::sin(dir), rng.uniform(0.0, 2.0 * std::numbers::pi), rng.uniform(0.03, 0.06)};
    }
    const double base = rng.uniform(0.55, 0.7);

    // Tumour: ellipse whose dilated footprint stays well inside the brain.
    const double scale = n / 64.0;
    Ellipse tumor{};
    for (int attempt = 0;; ++attempt) {
        if (attempt > 10000) throw Error("phantom: could not place tumour for seed " + std::to_string(seed));
        tumor = {rng.uniform(0.2, 0.8) * n, rng.uniform(0.2, 0.8) * n, rng.uniform(5.0, 10.0) * scale,
                 rng.uniform(5.0, 10.0) * scale, rng.uniform(0.0, std::numbers::pi)};
        const double reach = std::max(tumor.ax, tumor.ay) * 1.8 + 3.0;
        bool inside = true;
        for (int k = 0; k < 64 && inside; ++k) {
            const double t = 2.0 * std::numbers::pi * k / 64.0;
            if (brain.radius(tumor.cx + reach * std::cos(t), tumor.cy + reach * std::sin(t)) > 0.92) inside = false;
        }
        if (inside) break;
    }
    const double amplitude_fraction = rng.uniform(0.3, 0.8);

    Field t1(count, 0.0), t2(count, 0.0), flair(count, 0.0), mask(count, 0.0), rim(count, 0.0);
    double brain_sum = 0.0;
    std::size_t brain_count = 0;
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
            const std::size_t i = y * size + x;
            const double rb = brain.radius(px, py);
            if (rb > 1.0) continue;
            double tex = base + 0.12 * (1.0 - smoothstep(0.3, 0.8, rb));
            for (const auto& w : waves) tex += w.amp * std::sin(w.kx * px + w.ky * py + w.phase);
            const double rt = tumor.radius(px, py);
            const double core = 1.0 - smoothstep(0.8, 1.2, rt);
            const double edema = 1.0 - smoothstep(1.0, 1.8, rt);
            t1[i] = tex * (1.0 - 0.25 * core);
            t2[i] = (1.3 - tex) * (1.0 + 0.6 * core);
            flair[i] = 0.8 * tex + 0.5 * edema;
            mask[i] = rt <= 1.0 ? 1.0 : 0.0;
            rim[i] = rim_profile(rt);
            brain_sum += t1[i];
            ++brain_count;
        }
    }
    const double amplitude = amplitude_fraction * brain_sum / static_cast<double>(brain_count);
    Field sd = t1;
    for (std::size_t i = 0; i < count; ++i) sd[i] += amplitude * rim[i];

    // T1w and its contrast-enhanced counterpart share one divisor so the
    // enhancement stays exactly zero away from the rim.
    VolumeSample s;
    s.seed = seed;
    const double t1_scale = percentile(t1, 0.95);
    s.x_nc[0] = to_image(t1, size, size, t1_scale);
    s.x_nc[1] = to_image(normalize_values(t2), size, size, 1.0);
    s.x_nc[2] = to_image(normalize_values(flair), size, size, 1.0);
    s.x_tm = to_image(mask, size, size, 1.0);
    s.y_sd = to_image(sd, size, size, t1_scale);
    return s;
}

Image dose_interpolate(const Image& x_t1, const Image& y_sd, double d) {
    if (!x_t1.same_shape(y_sd)) throw ShapeError("dose_interpolate: image shapes differ");
    if (!(d >= 0.0 && d <= 1.0)) throw ConfigError("dose_interpolate: dose must lie in [0, 1]");
    if (d == 1.0) return y_sd;
    Image out(x_t1.height, x_t1.width);
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        const double x = x_t1.pixels[i];
        out.pixels[i] = static_cast<float>(x + d * (static_cast<double>(y_sd.pixels[i]) - x));
    }
    return out;
}

double percentile(const Image& v, double q) { return percentile(Field(v.pixels.begin(), v.pixels.end()), q); }

std::vector<double> normalize_values(const std::vector<double>& v) {
    bool any = false;
    for (double p : v) {
        if (!(p >= 0.0)) throw ConfigError("normalize_volume: negative or non-finite intensity");
        any = any || p > 0.0;
    }
    if (!any) throw ConfigError("normalize_volume: all-zero image");
    const double p95 = percentile(v, 0.95);
    if (p95 <= 0.0) throw ConfigError("normalize_volume: 95th percentile is zero");
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / p95;
    return out;
}

Image divide(const Image& v, double divisor) {
    Image out(v.height, v.width);
    for (std::size_t i = 0; i < v.pixels.size(); ++i)
        out.pixels[i] = static_cast<float>(static_cast<double>(v.pixels[i]) / divisor);
    return out;
}

Image normalize_volume(const Image& v) {
    const auto values = normalize_values(Field(v.pixels.begin(), v.pixels.end()));
    Image out(v.height, v.width);
    for (std::size_t i = 0; i < values.size(); ++i) out.pixels[i] = static_cast<float>(values[i]);
    return out;
}

Image dilate(const Image& mask, std::size_t radius) {
    Image out(mask.height, mask.width);
    const auto r = static_cast<std::ptrdiff_t>(radius);
    const auto h = static_cast<std::ptrdiff_t>(mask.height), w = static_cast<std::ptrdiff_t>(mask.width);
    for (std::ptrdiff_t y = 0; y < h; ++y) {
        for (std::ptrdiff_t x = 0; x < w; ++x) {
            float hit = 0.0f;
            for (std::ptrdiff_t dy = -r; dy <= r && hit == 0.0f; ++dy) {
                for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
                    if (dx * dx + dy * dy > r * r) continue;
                    const std::ptrdiff_t yy = y + dy, xx = x + dx;
                    if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
                    if (mask.pixels[static_cast<std::size_t>(yy * w + xx)] != 0.0f) {
                        hit = 1.0f;
                        break;
                    }
                }
            }
            out.pixels[static_cast<std::size_t>(y * w + x)] = hit;
        }
    }
    return out;
}

void write_image_file(const ImageFile& file, const std::filesystem::path& path) {
    if (file.planes.empty() || file.planes.size() != file.channels.size())
        throw ShapeError("write_image_file: " + std::to_string(file.channels.size()) + " channel names for " +
                         std::to_string(file.planes.size()) + " planes");
    for (const Image& p : file.planes)
        if (!p.same_shape(file.planes.front())) throw ShapeError("write_image_file: channel shapes differ");
    nlohmann::json header = {
        {"channels", file.channels},
        {"height", file.planes.front().height},
        {"width", file.planes.front().width},
        {"dtype", "float32"},
        {"seed", file.seed},
    };
    const std::string text = header.dump();
    io::Bytes out;
    io::put_bytes(out, "CAVM");
    io::put_u32(out, kSampleVersion);
    io::put_u32(out, static_cast<std::uint32_t>(text.size()));
    io::put_bytes(out, text);
    for (const Image& p : file.planes)
        for (float v : p.pixels) io::put_f32(out, v);
    io::write_atomic(path, out);
}

ImageFile read_image_file(const std::filesystem::path& path) {
    const io::Bytes bytes = io::read_file(path);
    const std::string ctx = "image file '" + path.string() + "'";
    io::Reader in(bytes, ctx);
    if (bytes.size() < 4 || in.string(4) != "CAVM") throw FormatError(ctx + ": bad magic");
    const std::uint32_t version = in.u32();
    if (version != kSampleVersion)
        throw FormatError(ctx + ": unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kSampleVersion) + ")");
    const std::uint32_t header_len = in.u32();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(in.string(header_len));
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(ctx + ": malformed header: " + e.what());
    }
    ImageFile file;
    std::size_t h = 0, w = 0;
    try {
        h = header.at("height").get<std::size_t>();
        w = header.at("width").get<std::size_t>();
        file.seed = header.at("seed").get<std::uint64_t>();
        file.channels = header.at("channels").get<std::vector<std::string>>();
        if (header.at("dtype").get<std::string>() != "float32") throw FormatError(ctx + ": unsupported dtype");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(ctx + ": incomplete header: " + e.what());
    }
    if (h == 0 || w == 0) throw FormatError(ctx + ": empty image");
    if (in.remaining() / 4 / h / w < file.channels.size())
        throw IoError(ctx + ": truncated payload");
    for (std::size_t c = 0; c < file.channels.size(); ++c) {
        Image p(h, w);
        for (float& v : p.pixels) v = in.f32();
        file.planes.push_back(std::move(p));
    }
    if (in.remaining() != 0) throw FormatError(ctx + ": trailing bytes after payload");
    return file;
}

void write_sample(const VolumeSample& sample, const std::filesystem::path& path) {
    write_image_file({{kChannelNames.begin(), kChannelNames.end()},
                      {sample.x_nc[0], sample.x_nc[1], sample.x_nc[2], sample.x_tm, sample.y_sd},
                      sample.seed},
                     path);
}

VolumeSample read_sample(const std::filesystem::path& path) {
    ImageFile file = read_image_file(path);
    if (file.channels.size() != kChannelNames.size() ||
        !std::equal(file.channels.begin(), file.channels.end(), kChannelNames.begin()))
        throw FormatError("sample '" + path.string() + "': unexpected channel list");
    VolumeSample s;
    s.seed = file.seed;
    s.x_nc = {std::move(file.planes[0]), std::move(file.planes[1]), std::move(file.planes[2])};
    s.x_tm = std::move(file.planes[3]);
    s.y_sd = std::move(file.planes[4]);
    return s;
}

template <typename T>
Tensor<T> image_tensor(const Image& img) {
    return Tensor<T>({1, img.height, img.width}, std::vector<T>(img.pixels.begin(), img.pixels.end()));
}

template <typename T>
Tensor<T> input_tensor(const VolumeSample& s) {
    const std::size_t plane = s.height() * s.width();
    std::vector<T> v;
    v.reserve(4 * plane);
    for (const Image* p : {&s.x_nc[0], &s.x_nc[1], &s.x_nc[2], &s.x_tm}) v.insert(v.end(), p->pixels.begin(), p->pixels.end());
    return Tensor<T>({4, s.height(), s.width()}, std::move(v));
}

template <typename T>
Image tensor_image(const Tensor<T>& t) {
    if (t.rank() != 3 || t.dim(0) != 1) throw ShapeError("tensor_image: expected (1, H, W), got " + shape_str(t.shape()));
    Image img(t.dim(1), t.dim(2));
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<float>(t[i]);
    return img;
}

template Tensor<float> image_tensor<float>(const Image&);
template Tensor<double> image_tensor<double>(const Image&);
template Tensor<float> input_tensor<float>(const VolumeSample&);
template Tensor<double> input_tensor<double>(const VolumeSample&);
template Image tensor_image<float>(const Tensor<float>&);
template Image tensor_image<double>(const Tensor<double>&);

void write_dataset(const std::filesystem::path& root, const SplitCounts& counts, std::size_t size, std::uint64_t seed0) {
    std::error_code ec;
    std::filesystem::create_directories(root, ec);
    if (ec) throw IoError("cannot create '" + root.string() + "': " + ec.message());
    nlohmann::json manifest = {{"format", "cavm-dataset"}, {"version", 1}, {"size", size}, {"seed0", seed0}};
    std::uint64_t seed = seed0;
    for (const auto& [name, count] : {std::pair{"train", counts.train}, {"val", counts.val}, {"test", counts.test}}) {
        const auto dir = root / name;
        std::filesystem::create_directories(dir, ec);
        if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
        std::vector<std::uint64_t> seeds;
        for (std::size_t i = 0; i < count; ++i, ++seed) {
            write_sample(generate_phantom(seed, size), dir / (std::to_string(seed) + ".cavm"));
            seeds.push_back(seed);
        }
        manifest["splits"][name] = {{"count", count}, {"seeds", seeds}};
    }
    const std::string text = manifest.dump(2) + "\n";
    io::write_atomic(root / "manifest.json", io::Bytes(text.begin(), text.end()));
}

std::vector<VolumeSample> load_split(const std::filesystem::path& root, const std::string& split) {
    const auto dir = root / split;
    if (!std::filesystem::is_directory(dir)) throw IoError("missing split directory '" + dir.string() + "'");
    std::vector<std::pair<std::uint64_t, std::filesystem::path>> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.path().extension() != ".cavm") continue;
        try {
            files.emplace_back(std::stoull(entry.path().stem().string()), entry.path());
        } catch (const std::exception&) {
            throw FormatError("unexpected file name '" + entry.path().string() + "'");
        }
    }
    std::sort(files.begin(), files.end());
    std::vector<VolumeSample> samples;
    for (const auto& f : files) samples.push_back(read_sample(f.second));
    return samples;
}

} // namespace cavm::phantom
