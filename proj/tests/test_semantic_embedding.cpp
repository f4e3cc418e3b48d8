#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "skf/errors.hpp"
#include "skf/gradcheck.hpp"
#include "skf/ops.hpp"
#include "skf/semantic_embedding.hpp"
#include "support.hpp"

using namespace skf;
using namespace skf::testing;

namespace {

void set_param(ParamStore<double>& store, const std::string& name, const std::vector<double>& values) {
    Var<double> p = store.get(name);
    REQUIRE(p.value().size() == values.size());
    std::copy(values.begin(), values.end(), p.mutable_value().data());
}

}  // namespace

TEST_SUITE("semantic_embedding") {

TEST_CASE("level resolutions") {
    CHECK(resolution_for_level(0, 256, 256) == std::pair{16, 16});
    CHECK(resolution_for_level(2, 64, 64) == std::pair{16, 16});
    CHECK(resolution_for_level(1, 64, 128) == std::pair{8, 16});
    CHECK_THROWS_AS(resolution_for_level(0, 60, 64), InputError);
    CHECK_THROWS_AS(resolution_for_level(3, 64, 64), InputError);
}

TEST_CASE("one channel attends only to itself") {
    std::mt19937_64 rng(1);
    ParamStore<double> store(3);
    SemanticEmbedding<double> se(store, "se", 1, 2);
    const auto a = se.attention(Var<double>::constant(random_tensor(Shape{1, 1, 4, 4}, rng)),
                                Var<double>::constant(random_tensor(Shape{1, 2, 4, 4}, rng)));
    REQUIRE(a.shape() == Shape{1, 1, 1, 1});
    CHECK(a.value()[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("two-channel attention by hand") {
    ParamStore<double> store(3);
    SemanticEmbeddingOptions opt;
    opt.layer_norm = false;
    SemanticEmbedding<double> se(store, "se", 2, 2, opt);
    for (const char* w : {"se.q.weight", "se.k.weight"}) set_param(store, w, {1, 0, 0, 1});
    for (const char* b : {"se.q.bias", "se.k.bias"}) set_param(store, b, {0, 0});
    const Tensor<double> f(Shape{1, 2, 1, 1}, {1.0, 0.0});
    const auto a = se.attention(Var<double>::constant(f), Var<double>::constant(f)).value();
    const double z = 1.0 / std::sqrt(2.0);
    const double e0 = std::exp(z) / (std::exp(z) + 1.0);
    CHECK(a[0] == doctest::Approx(e0).epsilon(1e-14));
    CHECK(a[1] == doctest::Approx(1.0 - e0).epsilon(1e-14));
    CHECK(a[2] == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(a[3] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("attention rows are distributions") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed);
        ParamStore<double> store(seed);
        SemanticEmbedding<double> se(store, "se", 6, 5);
        const auto a = se.attention(Var<double>::constant(random_tensor(Shape{2, 6, 4, 4}, rng, 3.0)),
                                    Var<double>::constant(random_tensor(Shape{2, 5, 4, 4}, rng, 3.0)))
                           .value();
        for (std::size_t row = 0; row < 12; ++row) {
            double sum = 0;
            for (std::size_t j = 0; j < 6; ++j) {
                const double v = a[row * 6 + j];
                CHECK((v > 0.0 && v < 1.0));
                sum += v;
            }
            CHECK(std::abs(sum - 1.0) <= 1e-5);
        }
    }
}

TEST_CASE("output has the image feature shape") {
    std::mt19937_64 rng(2);
    ParamStore<double> store(1);
    SemanticEmbedding<double> se(store, "se", 8, 4);
    const auto y = se.forward(Var<double>::constant(random_tensor(Shape{1, 8, 16, 16}, rng)),
                              Var<double>::constant(random_tensor(Shape{1, 4, 16, 16}, rng)));
    CHECK(y.shape() == Shape{1, 8, 16, 16});
}

TEST_CASE("zero value projection with passthrough FN returns the image features") {
    std::mt19937_64 rng(3);
    ParamStore<double> store(1);
    SemanticEmbeddingOptions opt;
    opt.ffn_passthrough = true;
    SemanticEmbedding<double> se(store, "se", 4, 4, opt);
    set_param(store, "se.v.weight", std::vector<double>(16, 0.0));
    set_param(store, "se.v.bias", std::vector<double>(4, 0.0));
    const Tensor<double> fi = random_tensor(Shape{2, 4, 8, 8}, rng);
    const auto y = se.forward(Var<double>::constant(fi), Var<double>::constant(random_tensor(Shape{2, 4, 8, 8}, rng)));
    CHECK(y.value().values() == fi.values());
}

TEST_CASE("joint spatial permutation commutes with the block") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        std::mt19937_64 rng(seed + 100);
        ParamStore<double> store(seed);
        SemanticEmbedding<double> se(store, "se", 4, 3);
        const Tensor<double> fi = random_tensor(Shape{1, 4, 4, 4}, rng);
        const Tensor<double> fs = random_tensor(Shape{1, 3, 4, 4}, rng);
        std::vector<int> perm(16);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        const auto y = se.forward(Var<double>::constant(fi), Var<double>::constant(fs)).value();
        const auto yp = se.forward(Var<double>::constant(permute_spatial(fi, perm)),
                                   Var<double>::constant(permute_spatial(fs, perm)))
                            .value();
        const auto expected = permute_spatial(y, perm);
        for (std::size_t i = 0; i < yp.size(); ++i) CHECK(std::abs(yp[i] - expected[i]) <= 1e-6);
    }
}

TEST_CASE("mismatched inputs are rejected") {
    std::mt19937_64 rng(4);
    ParamStore<double> store(1);
    SemanticEmbedding<double> se(store, "se", 4, 3);
    const auto fi = Var<double>::constant(random_tensor(Shape{1, 4, 4, 4}, rng));
    CHECK_THROWS_AS(se.forward(fi, Var<double>::constant(random_tensor(Shape{1, 3, 8, 8}, rng))), InputError);
    CHECK_THROWS_AS(se.forward(fi, Var<double>::constant(random_tensor(Shape{1, 2, 4, 4}, rng))), InputError);
    CHECK_THROWS_AS(se.forward(fi, Var<double>::constant(random_tensor(Shape{2, 3, 4, 4}, rng))), InputError);
}

TEST_CASE("parameter count matches the store") {
    for (auto [c, s] : {std::pair{4, 4}, std::pair{32, 16}, std::pair{128, 64}}) {
        ParamStore<double> store(1);
        SemanticEmbedding<double> se(store, "se", c, s);
        CHECK(store.count() == SemanticEmbedding<double>::parameter_count(c, s));
        // LN affine (2c + 2s), Q (s c + c), K and V (c c + c each), FN (2c * c + 2c, c * 2c + c).
        const std::size_t uc = static_cast<std::size_t>(c), us = static_cast<std::size_t>(s);
        CHECK(store.count() == 2 * uc + 2 * us + us * uc + uc + 2 * (uc * uc + uc) + 2 * uc * uc + 2 * uc + 2 * uc * uc + uc);
    }
}

TEST_CASE("finite-difference check of every parameter group") {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        GradcheckOptions opt;
        opt.seed = seed;
        for (const auto& r : check_se_gradients(opt)) {
            INFO(r.name, " seed ", seed, " err ", r.max_relative_error);
            CHECK(r.passed());
        }
    }
}

}  // TEST_SUITE
