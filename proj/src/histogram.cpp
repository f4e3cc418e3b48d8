#include "skf/histogram.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "skf/errors.hpp"

namespace skf {

const SegmentPatch* SegmentPatchSet::find(int class_id) const {
    for (const auto& p : patches) {
        if (p.class_id == class_id) return &p;
    }
    return nullptr;
}

// ============================================================================
// Patch extraction and boundary refinement
// ============================================================================

namespace {

SegmentPatchSet group_by_label(const LabelMap& labels) {
    if (labels.height <= 0 || labels.width <= 0 || labels.labels.empty()) {
        throw InputError("split_into_patches: empty label map");
    }
    if (labels.labels.size() != static_cast<std::size_t>(labels.height) * labels.width) {
        throw InputError("split_into_patches: label map storage does not match its dims");
    }
    std::map<int, std::size_t> slot;
    SegmentPatchSet set;
    set.height = labels.height;
    set.width = labels.width;
    const std::size_t total = labels.labels.size();
    for (std::size_t i = 0; i < total; ++i) {
        const int id = labels.labels[i];
        auto [it, inserted] = slot.try_emplace(id, 0);
        if (inserted) {
            SegmentPatch patch;
            patch.class_id = id;
            patch.mask.assign(total, 0);
            set.patches.push_back(std::move(patch));
        }
    }
    std::sort(set.patches.begin(), set.patches.end(),
              [](const SegmentPatch& a, const SegmentPatch& b) { return a.class_id < b.class_id; });
    for (std::size_t k = 0; k < set.patches.size(); ++k) slot[set.patches[k].class_id] = k;
    for (std::size_t i = 0; i < total; ++i) {
        SegmentPatch& patch = set.patches[slot[labels.labels[i]]];
        patch.mask[i] = 1;
        patch.pixels.push_back(static_cast<int>(i));
    }
    return set;
}

}  // namespace

SegmentPatchSet segment_masks(const LabelMap& labels) {
    return group_by_label(labels);
}

SegmentPatchSet split_into_patches(const Image& image, const LabelMap& labels) {
    require_same_dims(image, labels, "split_into_patches");
    SegmentPatchSet set = group_by_label(labels);
    for (auto& patch : set.patches) {
        patch.values.reserve(patch.pixels.size());
        for (int idx : patch.pixels) {
            const double* px = image.pixels.data() + static_cast<std::size_t>(idx) * 3;
            patch.values.push_back({px[0], px[1], px[2]});
        }
    }
    return set;
}

SegmentPatchSet erode_segment_masks(const SegmentPatchSet& patch_set, int radius) {
    if (radius < 0) throw InputError("erode_segment_masks: radius must be >= 0");
    if (radius == 0) return patch_set;
    const int h = patch_set.height;
    const int w = patch_set.width;
    SegmentPatchSet out;
    out.height = h;
    out.width = w;
    std::vector<std::uint8_t> rows(static_cast<std::size_t>(h) * w);
    for (const auto& patch : patch_set.patches) {
        // Separable erosion with a square element; out-of-frame counts as background.
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                std::uint8_t keep = 1;
                for (int dx = -radius; dx <= radius && keep; ++dx) {
                    const int xx = x + dx;
                    keep = (xx >= 0 && xx < w) ? patch.mask[static_cast<std::size_t>(y) * w + xx] : 0;
                }
                rows[static_cast<std::size_t>(y) * w + x] = keep;
            }
        }
        SegmentPatch eroded;
        eroded.class_id = patch.class_id;
        eroded.mask.assign(rows.size(), 0);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                std::uint8_t keep = 1;
                for (int dy = -radius; dy <= radius && keep; ++dy) {
                    const int yy = y + dy;
                    keep = (yy >= 0 && yy < h) ? rows[static_cast<std::size_t>(yy) * w + x] : 0;
                }
                eroded.mask[static_cast<std::size_t>(y) * w + x] = keep;
            }
        }
        const bool has_values = !patch.values.empty();
        for (std::size_t k = 0; k < patch.pixels.size(); ++k) {
            if (!eroded.mask[static_cast<std::size_t>(patch.pixels[k])]) continue;
            eroded.pixels.push_back(patch.pixels[k]);
            if (has_values) eroded.values.push_back(patch.values[k]);
        }
        eroded.eroded_empty = patch.eroded_empty || (eroded.pixels.empty() && !patch.pixels.empty());
        out.patches.push_back(std::move(eroded));
    }
    return out;
}

// ============================================================================
// Soft histogram kernels
// ============================================================================

namespace {

double sigmoid(double z) {
    return 1.0 / (1.0 + std::exp(-z));
}

/// Evaluates the sigmoid at the anchors (k - 0.5) / 255 that matter for a
/// pixel. Beyond `half` bins from the pixel every sigmoid is saturated to
/// within the precision of T, so those bins receive no mass.
template <typename T>
class AnchorWindow {
public:
    explicit AnchorWindow(T alpha) : alpha_(alpha) {
        const double saturation = std::numeric_limits<T>::digits * 0.6931471805599453 + 3.0;
        const double a = static_cast<double>(alpha);
        half_ = static_cast<int>(std::min(300.0, std::ceil(saturation * 255.0 / a) + 1.0));
        const int span = 2 * half_ + 3;
        // Largest exponent reached by e_lo * ratio over any in-range window.
        const double max_exponent = a * (3 * half_ + 5) / 255.0;
        const double limit = std::log(static_cast<double>(std::numeric_limits<T>::max())) - 8.0;
        use_table_ = max_exponent < limit;
        if (use_table_) {
            ratio_.resize(static_cast<std::size_t>(span));
            for (int j = 0; j < span; ++j) ratio_[static_cast<std::size_t>(j)] = static_cast<T>(std::exp(a * j / 255.0));
        }
    }

    /// Fills s[k - lo] = sigmoid(alpha (x - (k - 0.5)/255)) for k in [lo, hi + 1]
    /// and returns false if no bin is affected.
    bool evaluate(T x, int& lo, int& hi, T* s) const {
        if (!std::isfinite(static_cast<double>(x))) return false;
        const double pos = std::clamp(static_cast<double>(x) * 255.0, -1e6, 1e6);
        const double center = std::floor(pos + 0.5);
        const double lo_d = std::max(0.0, center - half_);
        const double hi_d = std::min(255.0, center + half_);
        if (lo_d > hi_d) return false;
        lo = static_cast<int>(lo_d);
        hi = static_cast<int>(hi_d);
        const int count = hi - lo + 2;
        if (use_table_) {
            const T e_lo = std::exp(-alpha_ * (x - (T(lo) - T(0.5)) / T(255)));
            for (int j = 0; j < count; ++j) s[j] = T(1) / (T(1) + e_lo * ratio_[static_cast<std::size_t>(j)]);
        } else {
            for (int j = 0; j < count; ++j) {
                s[j] = T(1) / (T(1) + std::exp(-alpha_ * (x - (T(lo + j) - T(0.5)) / T(255))));
            }
        }
        return true;
    }

    int max_anchors() const { return 2 * half_ + 3; }
    T alpha() const { return alpha_; }

private:
    T alpha_;
    int half_ = 0;
    bool use_table_ = false;
    std::vector<T> ratio_;
};

template <typename T>
void accumulate(const AnchorWindow<T>& window, T x, T* bins, std::vector<T>& scratch) {
    int lo = 0, hi = -1;
    if (!window.evaluate(x, lo, hi, scratch.data())) return;
    for (int i = lo; i <= hi; ++i) bins[i] += scratch[static_cast<std::size_t>(i - lo)] - scratch[static_cast<std::size_t>(i - lo + 1)];
}

template <typename T>
void check_alpha(T alpha) {
    if (!(alpha > T(0)) || !std::isfinite(static_cast<double>(alpha))) {
        throw InputError("soft histogram: alpha must be positive and finite");
    }
}

}  // namespace

double bin_contribution(double x, int bin, double alpha) {
    return sigmoid(alpha * (x - (bin - 0.5) / 255.0)) - sigmoid(alpha * (x - (bin + 0.5) / 255.0));
}

double telescoped_mass(double x, double alpha) {
    return sigmoid(alpha * (x + 0.5 / 255.0)) - sigmoid(alpha * (x - 255.5 / 255.0));
}

SoftHistogram soft_histogram(std::span<const double> values, double alpha) {
    check_alpha(alpha);
    SoftHistogram hist;
    hist.alpha = alpha;
    hist.pixel_count = static_cast<int>(values.size());
    AnchorWindow<double> window(alpha);
    std::vector<double> scratch(static_cast<std::size_t>(window.max_anchors()));
    for (double x : values) {
        if (!std::isfinite(x)) throw InputError("soft_histogram: non-finite value");
        accumulate(window, x, hist.bins.data(), scratch);
    }
    return hist;
}

template <typename T>
SegmentHistograms<T> segment_histograms(const Tensor<T>& images, int n, const SegmentPatchSet& patch_set, T alpha) {
    check_alpha(alpha);
    const Shape& s = images.shape();
    if (s.c != 3 || s.h != patch_set.height || s.w != patch_set.width || n < 0 || n >= s.n) {
        throw InputError("segment_histograms: image " + s.str() + " does not match segments of " +
                         std::to_string(patch_set.height) + "x" + std::to_string(patch_set.width));
    }
    AnchorWindow<T> window(alpha);
    std::vector<T> scratch(static_cast<std::size_t>(window.max_anchors()));
    SegmentHistograms<T> out(patch_set.patches.size());
    for (std::size_t k = 0; k < patch_set.patches.size(); ++k) {
        for (int c = 0; c < 3; ++c) {
            auto& bins = out[k][static_cast<std::size_t>(c)];
            bins.assign(kHistogramBins, T(0));
            const T* plane = images.data() + images.index(n, c, 0, 0);
            for (int idx : patch_set.patches[k].pixels) accumulate(window, plane[idx], bins.data(), scratch);
        }
    }
    return out;
}

// ============================================================================
// SCH loss
// ============================================================================

template <typename T>
Var<T> sch_loss(const Var<T>& enhanced, std::span<const SegmentPatchSet* const> patch_sets,
                std::span<const SegmentHistograms<T>* const> targets, T alpha) {
    check_alpha(alpha);
    const Shape s = enhanced.shape();
    if (s.c != 3) throw InputError("sch_loss: expected 3-channel images, got " + s.str());
    if (patch_sets.size() != static_cast<std::size_t>(s.n) || targets.size() != patch_sets.size()) {
        throw InputError("sch_loss: need one patch set and one target per sample");
    }
    auto window = std::make_shared<AnchorWindow<T>>(alpha);
    std::vector<T> scratch(static_cast<std::size_t>(window->max_anchors()));

    // Sign of (predicted - target) for every sample, segment, channel and bin.
    auto signs = std::make_shared<std::vector<std::vector<std::int8_t>>>(static_cast<std::size_t>(s.n));
    std::vector<const SegmentPatchSet*> sets(patch_sets.begin(), patch_sets.end());
    T total = 0;
    for (int n = 0; n < s.n; ++n) {
        const SegmentPatchSet& set = *sets[static_cast<std::size_t>(n)];
        const SegmentHistograms<T>& target = *targets[static_cast<std::size_t>(n)];
        if (set.height != s.h || set.width != s.w) {
            throw InputError("sch_loss: segments of sample " + std::to_string(n) + " do not match image " + s.str());
        }
        if (target.size() != set.patches.size()) throw InputError("sch_loss: target histograms do not match segments");
        auto& sg = (*signs)[static_cast<std::size_t>(n)];
        sg.assign(set.patches.size() * 3 * kHistogramBins, 0);
        std::vector<T> bins(kHistogramBins);
        for (std::size_t k = 0; k < set.patches.size(); ++k) {
            const SegmentPatch& patch = set.patches[k];
            if (patch.pixels.empty()) continue;
            for (int c = 0; c < 3; ++c) {
                std::fill(bins.begin(), bins.end(), T(0));
                const T* plane = enhanced.value().data() + enhanced.value().index(n, c, 0, 0);
                for (int idx : patch.pixels) accumulate(*window, plane[idx], bins.data(), scratch);
                const auto& tb = target[k][static_cast<std::size_t>(c)];
                std::int8_t* sgn = sg.data() + (k * 3 + static_cast<std::size_t>(c)) * kHistogramBins;
                for (int i = 0; i < kHistogramBins; ++i) {
                    const T d = bins[static_cast<std::size_t>(i)] - tb[static_cast<std::size_t>(i)];
                    total += std::abs(d);
                    sgn[i] = static_cast<std::int8_t>(d > T(0) ? 1 : (d < T(0) ? -1 : 0));
                }
            }
        }
    }

    return make_op<T>(Tensor<T>(Shape{1, 1, 1, 1}, {total}), {enhanced}, [=](Node<T>& node) {
        if (node.inputs.empty() || !node.inputs[0]->requires_grad) return;
        const Tensor<T>& xv = node.inputs[0]->value;
        Tensor<T>& g = node.inputs[0]->grad_buffer();
        const T upstream = node.grad[0];
        const T alpha_v = window->alpha();
        std::vector<T> sv(static_cast<std::size_t>(window->max_anchors()));
        for (int n = 0; n < s.n; ++n) {
            const SegmentPatchSet& set = *sets[static_cast<std::size_t>(n)];
            const auto& sg = (*signs)[static_cast<std::size_t>(n)];
            for (std::size_t k = 0; k < set.patches.size(); ++k) {
                for (int c = 0; c < 3; ++c) {
                    const std::size_t plane_off = xv.index(n, c, 0, 0);
                    const std::int8_t* sgn = sg.data() + (k * 3 + static_cast<std::size_t>(c)) * kHistogramBins;
                    for (int idx : set.patches[k].pixels) {
                        int lo = 0, hi = -1;
                        if (!window->evaluate(xv[plane_off + idx], lo, hi, sv.data())) continue;
                        // d/dx of sum_i sign_i (s_i - s_{i+1}), with ds/dx = alpha s (1 - s).
                        T acc = 0;
                        for (int i = lo; i <= hi; ++i) {
                            if (sgn[i] == 0) continue;
                            const T a = sv[static_cast<std::size_t>(i - lo)];
                            const T b = sv[static_cast<std::size_t>(i - lo + 1)];
                            acc += T(sgn[i]) * (a * (T(1) - a) - b * (T(1) - b));
                        }
                        g[plane_off + idx] += upstream * alpha_v * acc;
                    }
                }
            }
        }
    });
}

template <typename T>
Var<T> sch_loss(const Var<T>& enhanced, const Tensor<T>& target, std::span<const SegmentPatchSet* const> patch_sets,
                T alpha) {
    if (!(enhanced.shape() == target.shape())) {
        throw InputError("sch_loss: enhanced " + enhanced.shape().str() + " vs target " + target.shape().str());
    }
    if (patch_sets.size() != static_cast<std::size_t>(target.shape().n)) {
        throw InputError("sch_loss: need one patch set per sample");
    }
    std::vector<SegmentHistograms<T>> hists;
    hists.reserve(patch_sets.size());
    for (std::size_t n = 0; n < patch_sets.size(); ++n) {
        hists.push_back(segment_histograms(target, static_cast<int>(n), *patch_sets[n], alpha));
    }
    std::vector<const SegmentHistograms<T>*> ptrs;
    for (const auto& h : hists) ptrs.push_back(&h);
    return sch_loss<T>(enhanced, patch_sets, ptrs, alpha);
}

namespace {

Var<double> single_image_sch(const Image& enhanced, const Image& target, const LabelMap& labels, double alpha,
                             int erosion_radius, bool track) {
    require_same_dims(enhanced, target, "sch_loss");
    require_same_dims(enhanced, labels, "sch_loss");
    const SegmentPatchSet eroded = erode_segment_masks(segment_masks(labels), erosion_radius);
    Var<double> x = Var<double>::leaf(image_to_tensor<double>(enhanced), track);
    const SegmentPatchSet* sets[] = {&eroded};
    Var<double> loss = sch_loss<double>(x, image_to_tensor<double>(target), sets, alpha);
    if (track) {
        backward(loss);
        return x;
    }
    return loss;
}

}  // namespace

double sch_loss(const Image& enhanced, const Image& target, const LabelMap& labels, double alpha, int erosion_radius) {
    return single_image_sch(enhanced, target, labels, alpha, erosion_radius, false).item();
}

Image sch_loss_gradient(const Image& enhanced, const Image& target, const LabelMap& labels, double alpha,
                        int erosion_radius) {
    Var<double> x = single_image_sch(enhanced, target, labels, alpha, erosion_radius, true);
    return tensor_to_image(x.grad());
}

template SegmentHistograms<float> segment_histograms(const Tensor<float>&, int, const SegmentPatchSet&, float);
template SegmentHistograms<double> segment_histograms(const Tensor<double>&, int, const SegmentPatchSet&, double);
template Var<float> sch_loss(const Var<float>&, std::span<const SegmentPatchSet* const>,
                             std::span<const SegmentHistograms<float>* const>, float);
template Var<double> sch_loss(const Var<double>&, std::span<const SegmentPatchSet* const>,
                              std::span<const SegmentHistograms<double>* const>, double);
template Var<float> sch_loss(const Var<float>&, const Tensor<float>&, std::span<const SegmentPatchSet* const>, float);
template Var<double> sch_loss(const Var<double>&, const Tensor<double>&, std::span<const SegmentPatchSet* const>,
                              double);

}  // namespace skf
