/**
 * @file metrics.hpp
 * @brief Full-reference quality metrics and the per-segment color error.
 */
#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "skf/image.hpp"

namespace skf {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) over all channels; capped at 100 dB.
double psnr(const Image& a, const Image& b);

/// Single-scale SSIM on Rec. 601 luma with an 11x11 Gaussian window
/// (sigma 1.5, K1 0.01, K2 0.03, L = 1), averaged over valid window positions.
double ssim(const Image& a, const Image& b);

/// 0.299 R + 0.587 G + 0.114 B
std::vector<double> luma(const Image& image);

/// Mean over segments of the L2 distance between mean RGB colors.
double segment_color_error(const Image& enhanced, const Image& target, const LabelMap& labels);

struct ImageMetrics {
    std::string id;
    double psnr = 0.0;
    double ssim = 0.0;
    double segment_color_error = 0.0;
};

struct MetricsReport {
    std::vector<ImageMetrics> per_image;

    void add(ImageMetrics m) { per_image.push_back(std::move(m)); }
    /// Arithmetic means; id is "mean".
    ImageMetrics aggregate() const;
    /// Columns: id,psnr,ssim,segment_color_error,niqe,lpips. The last two are
    /// always n/a. A "mean" row closes the table.
    void write_csv(std::ostream& out) const;
};

ImageMetrics evaluate_pair(const std::string& id, const Image& enhanced, const Image& target, const LabelMap& labels);

}  // namespace skf
