#include "skf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include "skf/histogram.hpp"
#include "skf/ops.hpp"
#include "skf/semantic_embedding.hpp"

namespace skf {

namespace {

constexpr int kSide = 8;
constexpr int kClasses = 3;

Image random_image(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.05, 0.95);
    Image img(kSide, kSide);
    for (double& v : img.pixels) v = u(rng);
    return img;
}

// Scattered labels for radius 0; three blocks that survive radius 1.
LabelMap random_labels(std::mt19937_64& rng, int radius) {
    LabelMap labels(kSide, kSide);
    if (radius == 0) {
        std::uniform_int_distribution<int> cls(0, kClasses - 1);
        for (auto& l : labels.labels) l = static_cast<std::uint8_t>(cls(rng));
        return labels;
    }
    std::uniform_int_distribution<int> cut(3, 5);
    const int cy = cut(rng), cx = cut(rng);
    for (int y = 0; y < kSide; ++y) {
        for (int x = 0; x < kSide; ++x) labels.at(y, x) = static_cast<std::uint8_t>(y >= cy ? 2 : (x < cx ? 0 : 1));
    }
    return labels;
}

GradcheckResult compare(std::string name, const std::vector<double>& analytic,
                        const std::function<double(std::size_t, double)>& perturbed_loss, double step, double floor,
                        double tolerance, const std::function<bool(std::size_t, double)>& smooth = {}) {
    GradcheckResult r;
    r.name = std::move(name);
    r.tolerance = tolerance;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        if (smooth && !smooth(i, step)) {
            ++r.skipped;
            continue;
        }
        const double numeric = (perturbed_loss(i, step) - perturbed_loss(i, -step)) / (2 * step);
        r.max_relative_error = std::max(r.max_relative_error, relative_error(analytic[i], numeric, floor));
        ++r.checked;
    }
    return r;
}

// Sign of every (output - target) bin difference. The SCH loss is smooth
// between two points exactly when these patterns agree.
std::vector<std::int8_t> bin_signs(const Tensor<double>& output, const Tensor<double>& target,
                                   const std::vector<SegmentPatchSet>& sets) {
    std::vector<std::int8_t> out;
    for (std::size_t n = 0; n < sets.size(); ++n) {
        const auto a = segment_histograms<double>(output, static_cast<int>(n), sets[n], kDefaultAlpha);
        const auto b = segment_histograms<double>(target, static_cast<int>(n), sets[n], kDefaultAlpha);
        for (std::size_t k = 0; k < a.size(); ++k) {
            for (std::size_t c = 0; c < 3; ++c) {
                for (int i = 0; i < kHistogramBins; ++i) {
                    const double d = a[k][c][static_cast<std::size_t>(i)] - b[k][c][static_cast<std::size_t>(i)];
                    out.push_back(static_cast<std::int8_t>(d > 0 ? 1 : (d < 0 ? -1 : 0)));
                }
            }
        }
    }
    return out;
}

bool stencil_is_smooth(const Tensor<double>& x, const Tensor<double>& target, const std::vector<SegmentPatchSet>& sets,
                       std::size_t i, double h) {
    Tensor<double> plus = x, minus = x;
    plus[i] += h;
    minus[i] -= h;
    return bin_signs(plus, target, sets) == bin_signs(minus, target, sets);
}

GradcheckResult sch_image_path(const GradcheckOptions& o, int radius, std::mt19937_64& rng) {
    const Image target = random_image(rng);
    const Image enhanced = random_image(rng);
    const LabelMap labels = random_labels(rng, radius);
    const Image grad = sch_loss_gradient(enhanced, target, labels, kDefaultAlpha, radius);
    const std::vector<SegmentPatchSet> sets{erode_segment_masks(segment_masks(labels), radius)};
    const Tensor<double> x = image_to_tensor<double>(enhanced);
    const Tensor<double> t = image_to_tensor<double>(target);
    // Image pixels are interleaved; tensor entries are planar.
    const std::size_t plane = enhanced.pixel_count();
    return compare(
        "sch image radius " + std::to_string(radius), grad.pixels,
        [&](std::size_t i, double h) {
            Image moved = enhanced;
            moved.pixels[i] += h;
            return sch_loss(moved, target, labels, kDefaultAlpha, radius);
        },
        o.step, o.floor, o.sch_tolerance,
        [&](std::size_t i, double h) { return stencil_is_smooth(x, t, sets, (i % 3) * plane + i / 3, h); });
}

GradcheckResult sch_tensor_path(const GradcheckOptions& o, int radius, std::mt19937_64& rng) {
    constexpr int kBatch = 2;
    std::vector<Image> targets, outputs;
    std::vector<SegmentPatchSet> sets;
    for (int n = 0; n < kBatch; ++n) {
        targets.push_back(random_image(rng));
        outputs.push_back(random_image(rng));
        sets.push_back(erode_segment_masks(segment_masks(random_labels(rng, radius)), radius));
    }
    const Image* tp[] = {&targets[0], &targets[1]};
    const Image* op[] = {&outputs[0], &outputs[1]};
    const Tensor<double> target = images_to_tensor<double>(tp);
    const Tensor<double> start = images_to_tensor<double>(op);
    const SegmentPatchSet* set_ptrs[] = {&sets[0], &sets[1]};

    auto loss_at = [&](const Tensor<double>& x) {
        return sch_loss<double>(Var<double>::constant(x), target, set_ptrs, kDefaultAlpha).item();
    };
    Var<double> x = Var<double>::leaf(start);
    backward(sch_loss<double>(x, target, set_ptrs, kDefaultAlpha));
    const Tensor<double> g = x.grad();
    return compare(
        "sch tensor radius " + std::to_string(radius), std::vector<double>(g.data(), g.data() + g.size()),
        [&](std::size_t i, double h) {
            Tensor<double> moved = start;
            moved[i] += h;
            return loss_at(moved);
        },
        o.step, o.floor, o.sch_tolerance, [&](std::size_t i, double h) { return stencil_is_smooth(start, target, sets, i, h); });
}

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Tensor<double> t(shape);
    for (auto& v : t.values()) v = g(rng);
    return t;
}

std::vector<GradcheckResult> se_case(const GradcheckOptions& o, bool layer_norm, std::mt19937_64& rng) {
    constexpr int kChannels = 4;
    constexpr int kSemantic = 4;
    const std::string tag = layer_norm ? "se " : "se no-ln ";

    ParamStore<double> store(o.seed);
    SemanticEmbeddingOptions options;
    options.layer_norm = layer_norm;
    SemanticEmbedding<double> block(store, "se", kChannels, kSemantic, options);
    // Default initialisation leaves the norm affine at (1, 0); perturb every
    // parameter so each group is checked away from that special point.
    std::normal_distribution<double> jitter(0.0, 0.3);
    for (auto& [name, p] : store.entries()) {
        for (auto& v : p.mutable_value().values()) v += jitter(rng);
    }

    Var<double> fi = Var<double>::leaf(random_tensor(Shape{2, kChannels, 4, 4}, rng));
    Var<double> fs = Var<double>::leaf(random_tensor(Shape{2, kSemantic, 4, 4}, rng));
    const Tensor<double> weights = random_tensor(Shape{2, kChannels, 4, 4}, rng);
    auto loss_of = [&](const Var<double>& a, const Var<double>& b) {
        return ops::sum_all<double>(ops::mul<double>(block.forward(a, b), Var<double>::constant(weights)));
    };
    auto loss_value = [&] {
        return loss_of(Var<double>::constant(fi.value()), Var<double>::constant(fs.value())).item();
    };
    store.zero_grad();
    backward(loss_of(fi, fs));

    std::vector<GradcheckResult> out;
    auto check_tensor = [&](const std::string& name, Var<double>& var) {
        const Tensor<double> g = var.grad();
        out.push_back(compare(
            tag + name, std::vector<double>(g.data(), g.data() + g.size()),
            [&](std::size_t i, double h) {
                const double saved = var.mutable_value()[i];
                var.mutable_value()[i] = saved + h;
                const double v = loss_value();
                var.mutable_value()[i] = saved;
                return v;
            },
            o.step, o.floor, o.se_tolerance));
    };
    for (auto& [name, p] : store.entries()) {
        if (!layer_norm && name.find(".ln_") != std::string::npos) continue;
        check_tensor(name, p);
    }
    check_tensor("input image features", fi);
    check_tensor("input semantic features", fs);
    return out;
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / scale;
}

std::vector<GradcheckResult> check_sch_gradients(const GradcheckOptions& options) {
    std::mt19937_64 rng(options.seed);
    std::vector<GradcheckResult> out;
    for (int radius : {0, 1}) {
        out.push_back(sch_image_path(options, radius, rng));
        out.push_back(sch_tensor_path(options, radius, rng));
    }
    return out;
}

std::vector<GradcheckResult> check_se_gradients(const GradcheckOptions& options) {
    std::mt19937_64 rng(options.seed ^ 0x5Eu);
    std::vector<GradcheckResult> out = se_case(options, true, rng);
    for (auto& r : se_case(options, false, rng)) out.push_back(std::move(r));
    return out;
}

std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& options) {
    std::vector<GradcheckResult> out = check_sch_gradients(options);
    for (auto& r : check_se_gradients(options)) out.push_back(std::move(r));
    return out;
}

bool report_gradcheck(std::ostream& out, const std::vector<GradcheckResult>& results) {
    bool ok = true;
    for (const auto& r : results) {
        char line[256];
        std::snprintf(line, sizeof line, "%-4s %-40s n=%-5zu skipped=%-3zu max rel err %.3e (tol %.0e)\n", r.passed() ? "ok" : "FAIL",
                      r.name.c_str(), r.checked, r.skipped, r.max_relative_error, r.tolerance);
        out << line;
        ok = ok && r.passed();
    }
    return ok;
}

}  // namespace skf
