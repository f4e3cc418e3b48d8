// Shared fixtures and brute-force oracles for the unit tests.
#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "skf/image.hpp"
#include "skf/tensor.hpp"

namespace skf::testing {

inline Image random_image(int h, int w, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Image img(h, w);
    for (double& v : img.pixels) v = u(rng);
    return img;
}

inline LabelMap random_labels(int h, int w, int classes, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> c(0, classes - 1);
    LabelMap l(h, w);
    for (auto& v : l.labels) v = static_cast<std::uint8_t>(c(rng));
    return l;
}

/// Axis-aligned blocks: class = (y >= cy) * 2 + (x >= cx), clipped to `classes`.
inline LabelMap block_labels(int h, int w, int cy, int cx, int classes = 4) {
    LabelMap l(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) l.at(y, x) = static_cast<std::uint8_t>(((y >= cy) * 2 + (x >= cx)) % classes);
    }
    return l;
}

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double sigma = 1.0) {
    std::normal_distribution<double> g(0.0, sigma);
    Tensor<double> t(shape);
    for (auto& v : t.values()) v = g(rng);
    return t;
}

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Bin i of a soft histogram, summed term by term over the values.
inline std::vector<double> brute_histogram(const std::vector<double>& values, double alpha) {
    std::vector<double> bins(256, 0.0);
    for (int i = 0; i < 256; ++i) {
        for (double x : values) {
            bins[static_cast<std::size_t>(i)] +=
                logistic(alpha * (x - (i - 0.5) / 255.0)) - logistic(alpha * (x - (i + 0.5) / 255.0));
        }
    }
    return bins;
}

inline double psnr_oracle(const Image& a, const Image& b) {
    long double sum = 0;
    for (int y = 0; y < a.height; ++y) {
        for (int x = 0; x < a.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const long double d = static_cast<long double>(a.at(y, x, c)) - b.at(y, x, c);
                sum += d * d;
            }
        }
    }
    const long double mse = sum / (3.0L * a.height * a.width);
    return static_cast<double>(10.0L * std::log10(1.0L / mse));
}

// Direct 2-D Gaussian window, centered moments, no separable filtering.
inline double ssim_oracle(const Image& a, const Image& b) {
    auto y_of = [](const Image& im, int y, int x) {
        return 0.299 * im.at(y, x, 0) + 0.587 * im.at(y, x, 1) + 0.114 * im.at(y, x, 2);
    };
    double w[11][11];
    double norm = 0;
    for (int i = 0; i < 11; ++i) {
        for (int j = 0; j < 11; ++j) {
            w[i][j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 1.5 * 1.5));
            norm += w[i][j];
        }
    }
    const double c1 = 1e-4, c2 = 9e-4;
    double total = 0;
    int count = 0;
    for (int y0 = 0; y0 + 11 <= a.height; ++y0) {
        for (int x0 = 0; x0 + 11 <= a.width; ++x0) {
            double mx = 0, my = 0;
            for (int i = 0; i < 11; ++i) {
                for (int j = 0; j < 11; ++j) {
                    mx += w[i][j] / norm * y_of(a, y0 + i, x0 + j);
                    my += w[i][j] / norm * y_of(b, y0 + i, x0 + j);
                }
            }
            double vx = 0, vy = 0, cov = 0;
            for (int i = 0; i < 11; ++i) {
                for (int j = 0; j < 11; ++j) {
                    const double dx = y_of(a, y0 + i, x0 + j) - mx, dy = y_of(b, y0 + i, x0 + j) - my;
                    vx += w[i][j] / norm * dx * dx;
                    vy += w[i][j] / norm * dy * dy;
                    cov += w[i][j] / norm * dx * dy;
                }
            }
            total += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    }
    return total / count;
}

// Applies the same spatial permutation to every channel of every sample.
inline Tensor<double> permute_spatial(const Tensor<double>& t, const std::vector<int>& perm) {
    Tensor<double> out(t.shape());
    const Shape& s = t.shape();
    const std::size_t plane = static_cast<std::size_t>(s.h) * s.w;
    for (std::size_t base = 0; base < t.size(); base += plane) {
        for (std::size_t p = 0; p < plane; ++p) out[base + p] = t[base + static_cast<std::size_t>(perm[p])];
    }
    return out;
}

}  // namespace skf::testing
