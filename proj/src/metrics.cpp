#include "skf/metrics.hpp"

#include <array>
#include <cmath>
#include <iomanip>
#include <map>

#include "skf/errors.hpp"

namespace skf {

namespace {

constexpr int kWindow = 11;
constexpr double kWindowSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_window() {
    std::array<double, kWindow> g{};
    double sum = 0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kWindow / 2;
        g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * kWindowSigma * kWindowSigma));
        sum += g[static_cast<std::size_t>(i)];
    }
    for (double& v : g) v /= sum;
    return g;
}

/// Separable filter over every valid window position.
std::vector<double> filter_valid(const std::vector<double>& x, int h, int w, const std::array<double, kWindow>& g) {
    const int oh = h - kWindow + 1;
    const int ow = w - kWindow + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y) {
        for (int xo = 0; xo < ow; ++xo) {
            double acc = 0;
            for (int k = 0; k < kWindow; ++k) acc += g[static_cast<std::size_t>(k)] * x[static_cast<std::size_t>(y) * w + xo + k];
            rows[static_cast<std::size_t>(y) * ow + xo] = acc;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int yo = 0; yo < oh; ++yo) {
        for (int xo = 0; xo < ow; ++xo) {
            double acc = 0;
            for (int k = 0; k < kWindow; ++k) acc += g[static_cast<std::size_t>(k)] * rows[static_cast<std::size_t>(yo + k) * ow + xo];
            out[static_cast<std::size_t>(yo) * ow + xo] = acc;
        }
    }
    return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
    require_same_dims(a, b, "psnr");
    if (a.pixels.empty()) throw InputError("psnr: empty images");
    // Compensated summation keeps uniform error fields on their exact value.
    double sum = 0, carry = 0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        const double term = d * d;
        const double t = sum + term;
        carry += std::abs(sum) >= term ? (sum - t) + term : (term - t) + sum;
        sum = t;
    }
    const double mse = (sum + carry) / static_cast<double>(a.pixels.size());
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

std::vector<double> luma(const Image& image) {
    std::vector<double> y(image.pixel_count());
    for (std::size_t i = 0; i < y.size(); ++i) {
        y[i] = 0.299 * image.pixels[3 * i] + 0.587 * image.pixels[3 * i + 1] + 0.114 * image.pixels[3 * i + 2];
    }
    return y;
}

double ssim(const Image& a, const Image& b) {
    require_same_dims(a, b, "ssim");
    if (a.height < kWindow || a.width < kWindow) throw InputError("ssim: images smaller than the 11x11 window");
    const auto g = gaussian_window();
    const int h = a.height;
    const int w = a.width;
    const std::vector<double> x = luma(a);
    const std::vector<double> y = luma(b);
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, h, w, g);
    const auto my = filter_valid(y, h, w, g);
    const auto sxx = filter_valid(xx, h, w, g);
    const auto syy = filter_valid(yy, h, w, g);
    const auto sxy = filter_valid(xy, h, w, g);
    double total = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
        const double vx = sxx[i] - mx[i] * mx[i];
        const double vy = syy[i] - my[i] * my[i];
        const double cov = sxy[i] - mx[i] * my[i];
        total += ((2 * mx[i] * my[i] + kC1) * (2 * cov + kC2)) /
                 ((mx[i] * mx[i] + my[i] * my[i] + kC1) * (vx + vy + kC2));
    }
    return total / static_cast<double>(mx.size());
}

double segment_color_error(const Image& enhanced, const Image& target, const LabelMap& labels) {
    require_same_dims(enhanced, target, "segment_color_error");
    require_same_dims(enhanced, labels, "segment_color_error");
    struct Sums {
        std::array<double, 3> e{}, t{};
        std::size_t n = 0;
    };
    std::map<int, Sums> segments;
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        Sums& s = segments[labels.labels[i]];
        for (int c = 0; c < 3; ++c) {
            s.e[static_cast<std::size_t>(c)] += enhanced.pixels[3 * i + static_cast<std::size_t>(c)];
            s.t[static_cast<std::size_t>(c)] += target.pixels[3 * i + static_cast<std::size_t>(c)];
        }
        ++s.n;
    }
    if (segments.empty()) throw InputError("segment_color_error: empty label map");
    double total = 0;
    for (const auto& [id, s] : segments) {
        double sq = 0;
        for (std::size_t c = 0; c < 3; ++c) {
            const double d = (s.e[c] - s.t[c]) / static_cast<double>(s.n);
            sq += d * d;
        }
        total += std::sqrt(sq);
    }
    return total / static_cast<double>(segments.size());
}

ImageMetrics evaluate_pair(const std::string& id, const Image& enhanced, const Image& target, const LabelMap& labels) {
    return ImageMetrics{id, psnr(enhanced, target), ssim(enhanced, target),
                        segment_color_error(enhanced, target, labels)};
}

ImageMetrics MetricsReport::aggregate() const {
    ImageMetrics mean{"mean"};
    if (per_image.empty()) return mean;
    for (const auto& m : per_image) {
        mean.psnr += m.psnr;
        mean.ssim += m.ssim;
        mean.segment_color_error += m.segment_color_error;
    }
    const double n = static_cast<double>(per_image.size());
    mean.psnr /= n;
    mean.ssim /= n;
    mean.segment_color_error /= n;
    return mean;
}

void MetricsReport::write_csv(std::ostream& out) const {
    out << "id,psnr,ssim,segment_color_error,niqe,lpips\n";
    auto row = [&](const ImageMetrics& m) {
        out << m.id << ',' << std::fixed << std::setprecision(6) << m.psnr << ',' << m.ssim << ','
            << m.segment_color_error << ",n/a,n/a\n";
        out.unsetf(std::ios::floatfield);
    };
    for (const auto& m : per_image) row(m);
    row(aggregate());
}

}  // namespace skf
