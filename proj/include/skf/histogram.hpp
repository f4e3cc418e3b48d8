/**
 * @file histogram.hpp
 * @brief Per-segment differentiable color histograms and the semantic-guided
 *        color histogram (SCH) loss.
 *
 * A pixel value x contributes to bin i (i = 0..255) the mass
 *
 *     sigmoid(alpha * (x - (i - 0.5) / 255)) - sigmoid(alpha * (x - (i + 0.5) / 255))
 *
 * so every bin is a smooth function of x and the histogram is differentiable.
 * Summed over all bins the contributions telescope to
 * sigmoid(alpha * (x + 0.5/255)) - sigmoid(alpha * (x - 255.5/255)).
 *
 * Histograms are raw (un-normalized) pixel counts. The loss compares the
 * histogram of each segment of the enhanced image against the same segment of
 * the target, per channel, with an L1 distance, using one label map for both.
 */
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "skf/autograd.hpp"
#include "skf/image.hpp"

namespace skf {

inline constexpr int kHistogramBins = 256;
inline constexpr double kDefaultAlpha = 400.0;
inline constexpr int kDefaultErosionRadius = 2;

/// Pixels of one class: mask, flat row-major indices and their RGB values.
struct SegmentPatch {
    int class_id = 0;
    std::vector<std::uint8_t> mask;
    std::vector<int> pixels;
    std::vector<std::array<double, 3>> values;
    /// Set when erosion removed every pixel of a class that was present.
    bool eroded_empty = false;

    std::size_t pixel_count() const { return pixels.size(); }
};

struct SegmentPatchSet {
    int height = 0;
    int width = 0;
    std::vector<SegmentPatch> patches;

    const SegmentPatch* find(int class_id) const;
};

struct SoftHistogram {
    std::array<double, kHistogramBins> bins{};
    double alpha = kDefaultAlpha;
    int pixel_count = 0;
};

/// One patch per class id present in the label map.
SegmentPatchSet split_into_patches(const Image& image, const LabelMap& labels);

/// Masks and indices only (values left empty); used when the image is a tensor.
SegmentPatchSet segment_masks(const LabelMap& labels);

/// Keeps a pixel iff every pixel within Chebyshev distance `radius` lies in
/// frame and carries the same class. Classes eroded to nothing stay in the
/// set with zero pixels and eroded_empty set.
SegmentPatchSet erode_segment_masks(const SegmentPatchSet& patch_set, int radius);

/// Mass pixel value x adds to bin i, by direct evaluation of both sigmoids.
double bin_contribution(double x, int bin, double alpha);

/// Closed form of the summed mass of x over all 256 bins.
double telescoped_mass(double x, double alpha);

SoftHistogram soft_histogram(std::span<const double> values, double alpha);

/// Histograms of every segment and channel: [segment][channel][bin].
template <typename T>
using SegmentHistograms = std::vector<std::array<std::vector<T>, 3>>;

/// Histograms of the segments in `patch_set` for sample n of an (N, 3, H, W) tensor.
template <typename T>
SegmentHistograms<T> segment_histograms(const Tensor<T>& images, int n, const SegmentPatchSet& patch_set, T alpha);

/// SCH loss summed over the batch. `patch_sets[n]` are the (eroded) segments
/// of sample n and `targets[n]` the target histograms over those segments.
/// Differentiable with respect to `enhanced` only.
template <typename T>
Var<T> sch_loss(const Var<T>& enhanced, std::span<const SegmentPatchSet* const> patch_sets,
                std::span<const SegmentHistograms<T>* const> targets, T alpha);

/// Convenience overload computing target histograms from `target`.
template <typename T>
Var<T> sch_loss(const Var<T>& enhanced, const Tensor<T>& target, std::span<const SegmentPatchSet* const> patch_sets,
                T alpha);

/// Single-image SCH loss; patches come from `labels` eroded by `erosion_radius`.
double sch_loss(const Image& enhanced, const Image& target, const LabelMap& labels, double alpha = kDefaultAlpha,
                int erosion_radius = kDefaultErosionRadius);

/// Gradient of the single-image SCH loss with respect to every enhanced pixel.
Image sch_loss_gradient(const Image& enhanced, const Image& target, const LabelMap& labels,
                        double alpha = kDefaultAlpha, int erosion_radius = kDefaultErosionRadius);

}  // namespace skf
