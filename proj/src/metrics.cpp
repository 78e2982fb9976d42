#include "cavm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "cavm/errors.hpp"

namespace cavm::metrics {

namespace {

void require_same_shape(const Image& a, const Image& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shapes differ (" + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
}

nlohmann::json number(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

std::string cell(const Summary& s, int precision) {
    std::ostringstream os;
    if (std::isinf(s.mean)) {
        os << "inf";
    } else {
        os << std::fixed << std::setprecision(precision) << s.mean << " +/- " << s.std;
    }
    return os.str();
}

} // namespace

double psnr(const Image& a, const Image& b, const Image& region, double data_range) {
    require_same_shape(a, b, "psnr");
    require_same_shape(a, region, "psnr");
    if (!(data_range > 0.0)) throw ConfigError("psnr: data_range must be positive");
    double sq = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        if (region.pixels[i] == 0.0f) continue;
        const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
        sq += d * d;
        ++n;
    }
    if (n == 0) throw ShapeError("psnr: empty region");
    const double mse = sq / static_cast<double>(n);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(data_range * data_range / mse);
}

std::vector<double> ssim_map(const Image& a, const Image& b, double data_range, const SsimSettings& s) {
    require_same_shape(a, b, "ssim");
    if (s.window == 0 || s.window % 2 == 0) throw ConfigError("ssim: window must be odd");
    if (a.height < s.window || a.width < s.window) throw ShapeError("ssim: image smaller than the window");
    if (!(data_range > 0.0)) throw ConfigError("ssim: data_range must be positive");
    const double c1 = (s.k1 * data_range) * (s.k1 * data_range);
    const double c2 = (s.k2 * data_range) * (s.k2 * data_range);
    const std::size_t half = s.window / 2;
    const double inv_n = 1.0 / static_cast<double>(s.window * s.window);

    std::vector<double> map(a.pixels.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t cy = half; cy + half < a.height; ++cy) {
        for (std::size_t cx = half; cx + half < a.width; ++cx) {
            double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
            for (std::size_t y = cy - half; y <= cy + half; ++y) {
                for (std::size_t x = cx - half; x <= cx + half; ++x) {
                    const double va = a.at(y, x), vb = b.at(y, x);
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            const double ma = sa * inv_n, mb = sb * inv_n;
            const double va = saa * inv_n - ma * ma;
            const double vb = sbb * inv_n - mb * mb;
            const double cov = sab * inv_n - ma * mb;
            map[cy * a.width + cx] = ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    return map;
}

double ssim(const Image& a, const Image& b, const Image& region, double data_range, const SsimSettings& settings) {
    require_same_shape(a, region, "ssim");
    const auto map = ssim_map(a, b, data_range, settings);
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < map.size(); ++i) {
        if (region.pixels[i] == 0.0f || std::isnan(map[i])) continue;
        total += map[i];
        ++n;
    }
    if (n == 0) throw ShapeError("ssim: region has no usable window centres");
    return total / static_cast<double>(n);
}

Regions split_regions(const Image& target, const Image& tumor_mask, std::size_t dilation) {
    require_same_shape(target, tumor_mask, "split_regions");
    Regions r;
    r.tumor = phantom::dilate(tumor_mask, dilation);
    r.brain = Image(target.height, target.width);
    r.healthy = Image(target.height, target.width);
    for (std::size_t i = 0; i < target.pixels.size(); ++i) {
        const bool brain = target.pixels[i] > 0.0f;
        r.brain.pixels[i] = brain ? 1.0f : 0.0f;
        r.healthy.pixels[i] = brain && r.tumor.pixels[i] == 0.0f ? 1.0f : 0.0f;
    }
    return r;
}

Summary summarize(const std::vector<double>& values) {
    if (values.empty()) throw ConfigError("summarize: no values");
    Summary s;
    for (double v : values) s.mean += v;
    s.mean /= static_cast<double>(values.size());
    if (std::isinf(s.mean)) return {s.mean, 0.0};
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(values.size()));
    return s;
}

SampleScores score_sample(const Image& pred, const Image& target, const Image& tumor_mask, std::size_t dilation,
                          const SsimSettings& settings) {
    require_same_shape(pred, target, "evaluate");
    const Regions regions = split_regions(target, tumor_mask, dilation);
    const double range = *std::max_element(target.pixels.begin(), target.pixels.end());
    SampleScores s;
    s.tumor_ssim = 100.0 * ssim(pred, target, regions.tumor, range, settings);
    s.tumor_psnr = psnr(pred, target, regions.tumor, range);
    s.healthy_ssim = 100.0 * ssim(pred, target, regions.healthy, range, settings);
    s.healthy_psnr = psnr(pred, target, regions.healthy, range);
    return s;
}

RegionReport evaluate(const std::string& method, const std::vector<Image>& preds, const std::vector<Image>& targets,
                      const std::vector<Image>& tumor_masks, std::size_t dilation, const SsimSettings& settings) {
    if (preds.size() != targets.size() || preds.size() != tumor_masks.size())
        throw ShapeError("evaluate: " + std::to_string(preds.size()) + " predictions, " +
                         std::to_string(targets.size()) + " targets, " + std::to_string(tumor_masks.size()) + " masks");
    if (preds.empty()) throw ConfigError("evaluate: empty sample set");
    RegionReport r;
    r.method = method;
    r.count = preds.size();
    r.samples.resize(preds.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t i = 0; i < preds.size(); ++i)
        r.samples[i] = score_sample(preds[i], targets[i], tumor_masks[i], dilation, settings);

    std::vector<double> ts, tp, hs, hp;
    for (const auto& s : r.samples) {
        ts.push_back(s.tumor_ssim);
        tp.push_back(s.tumor_psnr);
        hs.push_back(s.healthy_ssim);
        hp.push_back(s.healthy_psnr);
    }
    r.tumor_ssim = summarize(ts);
    r.tumor_psnr = summarize(tp);
    r.healthy_ssim = summarize(hs);
    r.healthy_psnr = summarize(hp);
    return r;
}

nlohmann::json to_json(const RegionReport& r) {
    auto summary = [](const Summary& s) { return nlohmann::json{{"mean", number(s.mean)}, {"std", number(s.std)}}; };
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : r.samples)
        samples.push_back({{"tumor_ssim", number(s.tumor_ssim)},
                           {"tumor_psnr", number(s.tumor_psnr)},
                           {"healthy_ssim", number(s.healthy_ssim)},
                           {"healthy_psnr", number(s.healthy_psnr)}});
    return {
        {"method", r.method},
        {"count", r.count},
        {"tumor", {{"ssim_percent", summary(r.tumor_ssim)}, {"psnr_db", summary(r.tumor_psnr)}}},
        {"healthy", {{"ssim_percent", summary(r.healthy_ssim)}, {"psnr_db", summary(r.healthy_psnr)}}},
        {"samples", samples},
    };
}

std::string render_table(const std::vector<RegionReport>& reports) {
    const std::vector<std::string> header{"Method", "Tumor SSIM (%)", "Tumor PSNR (dB)", "Healthy SSIM (%)",
                                          "Healthy PSNR (dB)"};
    std::vector<std::vector<std::string>> rows{header};
    for (const auto& r : reports)
        rows.push_back({r.method, cell(r.tumor_ssim, 2), cell(r.tumor_psnr, 2), cell(r.healthy_ssim, 2),
                        cell(r.healthy_psnr, 2)});
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& row : rows)
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());

    std::ostringstream os;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
            if (c > 0) os << "  ";
            os << (c == 0 ? std::left : std::right) << std::setw(static_cast<int>(width[c])) << rows[r][c];
        }
        os << '\n';
        if (r == 0) {
            std::size_t total = 2 * (width.size() - 1);
            for (std::size_t w : width) total += w;
            os << std::string(total, '-') << '\n';
        }
    }
    return os.str();
}

} // namespace cavm::metrics
