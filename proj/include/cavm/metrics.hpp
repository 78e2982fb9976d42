#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "cavm/phantom.hpp"

namespace cavm::metrics {

using phantom::Image;

/// PSNR in dB over the pixels where `region` is non-zero. Identical images
/// give +infinity.
double psnr(const Image& a, const Image& b, const Image& region, double data_range);

struct SsimSettings {
    std::size_t window = 7;
    double k1 = 0.01;
    double k2 = 0.03;
};

/// Local SSIM over uniform windows, averaged over window centres inside
/// `region`. Centres whose window would leave the image are not used.
double ssim(const Image& a, const Image& b, const Image& region, double data_range, const SsimSettings& settings = {});
/// Full SSIM map; entries for unusable centres are NaN.
std::vector<double> ssim_map(const Image& a, const Image& b, double data_range, const SsimSettings& settings = {});

struct Regions {
    Image brain;
    Image tumor;
    Image healthy;
};

/// tumor = dilate(tumor_mask, dilation); brain = target > 0; healthy = brain \ tumor.
Regions split_regions(const Image& target, const Image& tumor_mask, std::size_t dilation);

struct Summary {
    double mean = 0.0;
    double std = 0.0; // population standard deviation
};

Summary summarize(const std::vector<double>& values);

struct SampleScores {
    double tumor_ssim = 0.0; // percent
    double tumor_psnr = 0.0;
    double healthy_ssim = 0.0;
    double healthy_psnr = 0.0;
};

struct RegionReport {
    std::string method;
    std::size_t count = 0;
    Summary tumor_ssim;
    Summary tumor_psnr;
    Summary healthy_ssim;
    Summary healthy_psnr;
    std::vector<SampleScores> samples;
};

SampleScores score_sample(const Image& pred, const Image& target, const Image& tumor_mask, std::size_t dilation,
                          const SsimSettings& settings = {});

/// data_range is the maximum of each target image.
RegionReport evaluate(const std::string& method, const std::vector<Image>& preds, const std::vector<Image>& targets,
                      const std::vector<Image>& tumor_masks, std::size_t dilation = 2, const SsimSettings& settings = {});

/// Infinite PSNR values are written as the string "inf".
nlohmann::json to_json(const RegionReport& report);
/// Aligned plain-text table, one row per report.
std::string render_table(const std::vector<RegionReport>& reports);

} // namespace cavm::metrics
