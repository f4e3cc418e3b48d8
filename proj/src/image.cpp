#include "skf/image.hpp"

#include <algorithm>
#include <string>

#include "skf/errors.hpp"

namespace skf {

int LabelMap::max_label() const {
    if (labels.empty()) return -1;
    return *std::max_element(labels.begin(), labels.end());
}

template <typename T>
Tensor<T> images_to_tensor(std::span<const Image* const> images) {
    if (images.empty()) throw InputError("images_to_tensor: no images");
    const int h = images[0]->height;
    const int w = images[0]->width;
    Tensor<T> out(Shape{static_cast<int>(images.size()), 3, h, w});
    for (std::size_t n = 0; n < images.size(); ++n) {
        const Image& img = *images[n];
        if (img.height != h || img.width != w) throw InputError("images_to_tensor: images differ in size");
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c) out.at(static_cast<int>(n), c, y, x) = static_cast<T>(img.at(y, x, c));
    }
    return out;
}

template <typename T>
Image tensor_to_image(const Tensor<T>& tensor, int n) {
    const Shape& s = tensor.shape();
    if (s.c != 3 || n < 0 || n >= s.n) throw InputError("tensor_to_image: expected (N, 3, H, W), got " + s.str());
    Image img(s.h, s.w);
    for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<double>(tensor.at(n, c, y, x));
    return img;
}

void require_same_dims(const Image& image, const LabelMap& labels, const char* op) {
    if (image.height != labels.height || image.width != labels.width) {
        throw InputError(std::string(op) + ": image is " + std::to_string(image.height) + "x" +
                         std::to_string(image.width) + " but label map is " + std::to_string(labels.height) + "x" +
                         std::to_string(labels.width));
    }
}

void require_same_dims(const Image& a, const Image& b, const char* op) {
    if (a.height != b.height || a.width != b.width) {
        throw InputError(std::string(op) + ": images differ in size (" + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
    }
}

template Tensor<float> images_to_tensor(std::span<const Image* const>);
template Tensor<double> images_to_tensor(std::span<const Image* const>);
template Image tensor_to_image(const Tensor<float>&, int);
template Image tensor_to_image(const Tensor<double>&, int);

}  // namespace skf
