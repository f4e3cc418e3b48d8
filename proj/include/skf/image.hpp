/**
 * @file image.hpp
 * @brief RGB image and label map containers, and conversion to tensors.
 */
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "skf/tensor.hpp"

namespace skf {

/// H x W x 3 image, interleaved, nominal range [0, 1].
struct Image {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(int h, int w, double fill = 0.0) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
    double& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    double at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    bool operator==(const Image&) const = default;
};

/// Per-pixel class ids.
struct LabelMap {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> labels;

    LabelMap() = default;
    LabelMap(int h, int w, std::uint8_t fill = 0) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {}

    std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
    int max_label() const;
    bool operator==(const LabelMap&) const = default;
};

/// Stacks images into an (N, 3, H, W) tensor; all images must share dims.
template <typename T>
Tensor<T> images_to_tensor(std::span<const Image* const> images);

template <typename T>
Tensor<T> image_to_tensor(const Image& image) {
    const Image* one[] = {&image};
    return images_to_tensor<T>(one);
}

/// Extracts batch element n of an (N, 3, H, W) tensor.
template <typename T>
Image tensor_to_image(const Tensor<T>& tensor, int n = 0);

/// Throws InputError unless the image and label map share dims.
void require_same_dims(const Image& image, const LabelMap& labels, const char* op);
void require_same_dims(const Image& a, const Image& b, const char* op);

}  // namespace skf
