#include "skf/tensor.hpp"

#include <algorithm>
#include <utility>

#include "skf/errors.hpp"

namespace skf {

std::string Shape::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
        throw InputError("tensor data size " + std::to_string(data_.size()) +
                         " does not match shape " + shape_.str());
    }
}

template <typename T>
void Tensor<T>::fill(T v) {
    std::fill(data_.begin(), data_.end(), v);
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
    if (shape.numel() != shape_.numel()) {
        throw InputError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return Tensor<T>(shape, data_);
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace skf
