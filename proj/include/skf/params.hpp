/**
 * @file params.hpp
 * @brief Named parameter registry, seeded initialization and Adam.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "skf/autograd.hpp"

namespace skf {

/// Ordered collection of named trainable tensors.
///
/// Each parameter is initialized from a generator seeded by (seed, name), so
/// two stores that share a parameter name start from the same values no
/// matter which other parameters they hold.
template <typename T>
class ParamStore {
public:
    explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

    /// Uniform initialization in [-bound, bound].
    Var<T> add_uniform(const std::string& name, Shape shape, double bound);
    Var<T> add_constant(const std::string& name, Shape shape, T value);
    /// Conv weight (Cout, Cin, k, k), uniform with variance gain^2 / fan_in.
    Var<T> add_conv_weight(const std::string& name, int cout, int cin, int k, double gain = std::sqrt(2.0));

    const Var<T>& get(const std::string& name) const;
    bool contains(const std::string& name) const;
    const std::vector<std::pair<std::string, Var<T>>>& entries() const { return params_; }
    std::vector<std::pair<std::string, Var<T>>>& entries() { return params_; }

    std::size_t count() const;
    void zero_grad();
    /// FNV-1a over names and raw parameter bytes.
    std::uint64_t hash() const;
    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::vector<std::pair<std::string, Var<T>>> params_;
};

/// Adaptive-moment gradient descent with bias correction.
template <typename T>
class Adam {
public:
    explicit Adam(double lr = 2e-4, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(ParamStore<T>& params);

    long steps() const { return t_; }
    double lr() const { return lr_; }
    std::vector<Tensor<T>>& first_moments() { return m_; }
    std::vector<Tensor<T>>& second_moments() { return v_; }
    void set_steps(long t) { t_ = t; }

private:
    double lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
};

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 1469598103934665603ULL);

}  // namespace skf
