#include <doctest.h>

#include <filesystem>

#include "skf/data.hpp"
#include "skf/errors.hpp"
#include "skf/nets.hpp"
#include "skf/ops.hpp"
#include "support.hpp"

using namespace skf;
using namespace skf::testing;

namespace {

Image run(const Enhancer<float>& net, const OracleProvider& provider, const Image& low, const LabelMap& labels) {
    return enhance(net, low, provider.from_labels(labels));
}

std::size_t conv3(std::size_t cout, std::size_t cin) { return cout * cin * 9 + cout; }

}  // namespace

TEST_SUITE("nets") {

TEST_CASE("oracle prior reproduces the ground truth") {
    const ScenePair pair = generate_dataset(DatasetConfig{SceneConfig{}, DegradeConfig{}, 1, 0, 0, 3}).pairs[0];
    OracleProvider provider(4);
    const SemanticPrior prior = provider.provide(pair.low, PriorRequest{pair.id, &pair.labels});
    CHECK(prior.label_map == pair.labels);
    CHECK(argmax_labels(prior.logits) == pair.labels);
    CHECK(prior.logits.shape() == Shape{1, 4, 64, 64});
    double max_logit = 0;
    for (double v : prior.logits.values()) max_logit = std::max(max_logit, v);
    CHECK(max_logit == kOracleConfidence);
    const int sizes[] = {4, 8, 16};
    const int widths[] = {64, 32, 16};
    for (int b = 0; b < kSemanticLevels; ++b) {
        const Shape& s = prior.features[static_cast<std::size_t>(b)].shape();
        CHECK(s.h == sizes[b]);
        CHECK(s.w == sizes[b]);
        CHECK(s.c == widths[b]);
        CHECK(provider.feature_channels(b) == widths[b]);
    }
    CHECK_THROWS_AS(provider.provide(pair.low, PriorRequest{pair.id, nullptr}), InputError);
    CHECK_THROWS_AS(provider.from_labels(LabelMap(64, 64, 7)), InputError);
}

TEST_CASE("argmax ties go to the lowest class") {
    Tensor<double> logits(Shape{1, 3, 1, 2}, {1, 2, 1, 2, 0, 2});
    const LabelMap l = argmax_labels(logits);
    CHECK(l.at(0, 0) == 0);
    CHECK(l.at(0, 1) == 0);
}

TEST_CASE("provider selection") {
    CHECK(make_provider("oracle", 4, {16, 32, 64}, 7)->name() == "oracle");
    CHECK_THROWS_AS(make_provider("hrnet", 4, {16, 32, 64}, 7), ConfigError);
    CHECK_THROWS_AS(make_provider("file", 4, {16, 32, 64}, 7), ConfigError);
}

TEST_CASE("file provider round trip and missing arrays") {
    const auto dir = std::filesystem::temp_directory_path() / "skf_prior_test";
    std::filesystem::create_directories(dir);
    OracleProvider oracle(3);
    const LabelMap labels = block_labels(32, 32, 10, 20, 3);
    const SemanticPrior prior = oracle.from_labels(labels);
    save_prior((dir / "img.prior").string(), prior);
    FileProvider files(dir.string(), 3, {16, 32, 64});
    const SemanticPrior back = files.provide(Image(32, 32), PriorRequest{"img", nullptr});
    CHECK(back.label_map == prior.label_map);
    CHECK(back.logits.values() == prior.logits.values());
    for (std::size_t b = 0; b < 3; ++b) CHECK(back.features[b].values() == prior.features[b].values());
    CHECK_THROWS_AS(files.provide(Image(32, 32), PriorRequest{"absent", nullptr}), InputError);
    FileProvider wrong(dir.string(), 5, {16, 32, 64});
    CHECK_THROWS_AS(wrong.provide(Image(32, 32), PriorRequest{"img", nullptr}), InputError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("output shape and range") {
    std::mt19937_64 rng(1);
    Enhancer<float> net(EnhancerConfig{}, 5);
    OracleProvider provider(4);
    for (auto [h, w] : {std::pair{64, 64}, std::pair{96, 64}}) {
        const Image low = random_image(h, w, rng, 0.0, 0.3);
        const Image out = run(net, provider, low, random_labels(h, w, 4, rng));
        CHECK(out.height == h);
        CHECK(out.width == w);
        for (double v : out.pixels) CHECK((v >= 0.0 && v <= 1.0));
    }
    CHECK_THROWS_AS(run(net, provider, Image(60, 64), LabelMap(60, 64)), InputError);
}

TEST_CASE("identical seeds give identical networks and outputs") {
    std::mt19937_64 rng(2);
    const Image low = random_image(64, 64, rng, 0.0, 0.3);
    const LabelMap labels = random_labels(64, 64, 4, rng);
    OracleProvider provider(4);
    Enhancer<float> a(EnhancerConfig{}, 9), b(EnhancerConfig{}, 9), c(EnhancerConfig{}, 10);
    CHECK(a.params().hash() == b.params().hash());
    CHECK(a.params().hash() != c.params().hash());
    CHECK(run(a, provider, low, labels) == run(b, provider, low, labels));
}

TEST_CASE("baseline network without SE still enhances") {
    std::mt19937_64 rng(3);
    EnhancerConfig cfg;
    cfg.use_se = false;
    Enhancer<float> net(cfg, 1);
    CHECK(net.se_block(0) == nullptr);
    for (const auto& [name, p] : net.params().entries()) CHECK(name.rfind("se", 0) != 0);
    OracleProvider provider(4);
    const Image out = run(net, provider, random_image(64, 64, rng, 0.0, 0.3), random_labels(64, 64, 4, rng));
    CHECK(out.height == 64);
}

TEST_CASE("bypassed SE blocks receive no gradient") {
    std::mt19937_64 rng(4);
    Enhancer<double> net(EnhancerConfig{}, 2);
    OracleProvider provider(4);
    const SemanticPrior prior = provider.from_labels(random_labels(32, 32, 4, rng));
    const SemanticPrior* priors[] = {&prior};
    const Image low = random_image(32, 32, rng);
    for (bool bypass : {true, false}) {
        net.params().zero_grad();
        backward(ops::sum_all<double>(net.forward(Var<double>::constant(image_to_tensor<double>(low)),
                                                  stack_features<double>(priors), bypass)));
        double se_grad = 0;
        for (const auto& [name, p] : net.params().entries()) {
            if (name.rfind("se", 0) != 0) continue;
            const Tensor<double> g = p.grad();
            for (double v : g.values()) se_grad += std::abs(v);
        }
        if (bypass) CHECK(se_grad == 0.0);
        else CHECK(se_grad > 0.0);
    }
}

TEST_CASE("SE levels sit at H/16, H/8 and H/4") {
    Enhancer<float> net(EnhancerConfig{}, 1);
    const int widths[] = {128, 64, 32};
    for (int b = 0; b < kSemanticLevels; ++b) {
        REQUIRE(net.se_block(b) != nullptr);
        CHECK(net.se_block(b)->channels() == widths[b]);
        CHECK(resolution_for_level(b, 64, 64).first == (4 << b));
    }
}

TEST_CASE("parameter count matches the analytic count") {
    const std::size_t folded = 48;
    const std::size_t base = conv3(32, folded) + conv3(64, 32) + conv3(128, 64) + conv3(128, 128) +
                             conv3(64, 192) + conv3(32, 96) + conv3(folded, 32 + folded);
    auto se = [](std::size_t c, std::size_t s) { return 6 * c * c + s * c + 2 * s + 8 * c; };
    const std::size_t with_se = base + se(128, 64) + se(64, 32) + se(32, 16);
    CHECK(base == 426736);
    CHECK(with_se == 568528);
    Enhancer<float> net(EnhancerConfig{}, 1);
    CHECK(net.params().count() == with_se);
    CHECK(Enhancer<float>::parameter_count(EnhancerConfig{}) == with_se);
    EnhancerConfig no_se;
    no_se.use_se = false;
    CHECK(Enhancer<float>::parameter_count(no_se) == base);
}

TEST_CASE("large control matches the SE parameter count within 5%") {
    const EnhancerConfig large = large_control_config(EnhancerConfig{});
    CHECK_FALSE(large.use_se);
    const double target = static_cast<double>(Enhancer<float>::parameter_count(EnhancerConfig{}));
    const double got = static_cast<double>(Enhancer<float>::parameter_count(large));
    CHECK(std::abs(got - target) / target <= 0.05);
    Enhancer<float> net(large, 1);
    CHECK(net.params().count() == Enhancer<float>::parameter_count(large));
}

TEST_CASE("oracle parameters never change") {
    OracleProvider provider(4);
    const auto before = provider.parameter_hash();
    std::mt19937_64 rng(5);
    for (int i = 0; i < 5; ++i) provider.from_labels(random_labels(32, 32, 4, rng));
    CHECK(provider.parameter_hash() == before);
}

}  // TEST_SUITE
