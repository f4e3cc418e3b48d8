#include "skf/params.hpp"

#include <cmath>
#include <random>

#include "skf/errors.hpp"

namespace skf {

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

template <typename T>
Var<T> ParamStore<T>::add_uniform(const std::string& name, Shape shape, double bound) {
    if (contains(name)) throw ConfigError("duplicate parameter " + name);
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(fnv1a(name.data(), name.size())),
                      static_cast<std::uint32_t>(fnv1a(name.data(), name.size()) >> 32)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor<T> value(shape);
    for (auto& v : value.values()) v = static_cast<T>(dist(rng));
    params_.emplace_back(name, Var<T>::leaf(std::move(value), true));
    return params_.back().second;
}

template <typename T>
Var<T> ParamStore<T>::add_constant(const std::string& name, Shape shape, T value) {
    if (contains(name)) throw ConfigError("duplicate parameter " + name);
    params_.emplace_back(name, Var<T>::leaf(Tensor<T>(shape, value), true));
    return params_.back().second;
}

template <typename T>
Var<T> ParamStore<T>::add_conv_weight(const std::string& name, int cout, int cin, int k, double gain) {
    const double fan_in = static_cast<double>(cin) * k * k;
    return add_uniform(name, Shape{cout, cin, k, k}, gain * std::sqrt(3.0 / fan_in));
}

template <typename T>
const Var<T>& ParamStore<T>::get(const std::string& name) const {
    for (const auto& [n, v] : params_) {
        if (n == name) return v;
    }
    throw ConfigError("unknown parameter " + name);
}

template <typename T>
bool ParamStore<T>::contains(const std::string& name) const {
    for (const auto& entry : params_) {
        if (entry.first == name) return true;
    }
    return false;
}

template <typename T>
std::size_t ParamStore<T>::count() const {
    std::size_t total = 0;
    for (const auto& entry : params_) total += entry.second.value().size();
    return total;
}

template <typename T>
void ParamStore<T>::zero_grad() {
    for (auto& entry : params_) entry.second.zero_grad();
}

template <typename T>
std::uint64_t ParamStore<T>::hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& [name, v] : params_) {
        h = fnv1a(name.data(), name.size(), h);
        h = fnv1a(v.value().data(), v.value().size() * sizeof(T), h);
    }
    return h;
}

template <typename T>
void Adam<T>::step(ParamStore<T>& params) {
    auto& entries = params.entries();
    if (m_.size() != entries.size()) {
        m_.clear();
        v_.clear();
        for (const auto& e : entries) {
            m_.emplace_back(e.second.shape());
            v_.emplace_back(e.second.shape());
        }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const T step = static_cast<T>(lr_ * std::sqrt(c2) / c1);
    const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
    const T eps = static_cast<T>(eps_ * std::sqrt(c2));
    for (std::size_t k = 0; k < entries.size(); ++k) {
        Var<T>& p = entries[k].second;
        if (!p.has_grad()) continue;
        const Tensor<T>& g = p.node()->grad;
        Tensor<T>& value = p.mutable_value();
        Tensor<T>& m = m_[k];
        Tensor<T>& v = v_[k];
        for (std::size_t i = 0; i < value.size(); ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            value[i] -= step * m[i] / (std::sqrt(v[i]) + eps);
        }
    }
}

template class ParamStore<float>;
template class ParamStore<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace skf
