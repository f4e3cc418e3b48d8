#include <doctest.h>

#include <algorithm>
#include <limits>
#include <numeric>

#include "skf/adversarial.hpp"
#include "skf/errors.hpp"
#include "skf/ops.hpp"
#include "support.hpp"

using namespace skf;
using namespace skf::testing;

namespace {

// Every conv weight zero and the last bias `score`: D outputs `score` for any input.
void make_constant(ParamStore<double>& store, const std::string& prefix, double score) {
    for (auto& [name, p] : store.entries()) {
        if (name.rfind(prefix, 0) != 0) continue;
        auto& v = p.mutable_value().values();
        std::fill(v.begin(), v.end(), name == prefix + ".conv3.bias" ? score : 0.0);
    }
}

double lowest_scoring_class(const std::vector<std::pair<int, double>>& scores) {
    int best = -1;
    double best_score = std::numeric_limits<double>::infinity();
    for (const auto& [cls, s] : scores) {
        if (s < best_score || (s == best_score && cls < best)) {
            best = cls;
            best_score = s;
        }
    }
    return best;
}

}  // namespace

TEST_SUITE("adversarial") {

TEST_CASE("target patch is the lowest score, ties to the lowest class") {
    CHECK(select_target_fake_patch({{{0, 0.9}, {1, 0.2}, {2, 0.5}}}) == 1);
    CHECK(select_target_fake_patch({{{3, 0.4}, {1, 0.4}, {2, 0.7}}}) == 1);
    CHECK(select_target_fake_patch({{{5, -1.0}}}) == 5);
    CHECK_THROWS_AS(select_target_fake_patch({}), InputError);
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> levels(0, 3);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<std::pair<int, double>> scores;
        std::vector<int> ids(8);
        std::iota(ids.begin(), ids.end(), 0);
        std::shuffle(ids.begin(), ids.end(), rng);
        const int k = 1 + trial % 8;
        for (int i = 0; i < k; ++i) scores.emplace_back(ids[static_cast<std::size_t>(i)], 0.25 * levels(rng));
        CHECK(select_target_fake_patch({scores}) == lowest_scoring_class(scores));
    }
}

TEST_CASE("label conventions") {
    const GanTargets standard = gan_targets(LabelConvention::standard);
    CHECK(standard.real == 1.0);
    CHECK(standard.fake == 0.0);
    CHECK(standard.generator == 1.0);
    const GanTargets paper = gan_targets(parse_label_convention("paper"));
    CHECK(paper.real == 0.0);
    CHECK(paper.fake == 1.0);
    CHECK(paper.generator == 0.0);
    CHECK(to_string(parse_label_convention("standard")) == "standard");
    CHECK_THROWS_AS(parse_label_convention("wgan"), ConfigError);
}

TEST_CASE("bounding boxes match a coordinate scan") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const LabelMap labels = random_labels(12, 17, 3, rng);
        for (const auto& seg : segment_masks(labels).patches) {
            BoundingBox scan{100, 100, -1, -1};
            for (int y = 0; y < 12; ++y) {
                for (int x = 0; x < 17; ++x) {
                    if (labels.at(y, x) != seg.class_id) continue;
                    scan.y0 = std::min(scan.y0, y);
                    scan.x0 = std::min(scan.x0, x);
                    scan.y1 = std::max(scan.y1, y + 1);
                    scan.x1 = std::max(scan.x1, x + 1);
                }
            }
            CHECK(bounding_box(seg, 17) == scan);
        }
    }
    CHECK_THROWS_AS(bounding_box(SegmentPatch{}, 4), InputError);
}

TEST_CASE("fake patches are zero outside the eroded mask") {
    std::mt19937_64 rng(3);
    const Image img = random_image(32, 32, rng, 0.1, 1.0);
    const LabelMap labels = block_labels(32, 32, 12, 20, 4);
    const auto patches = extract_fake_patches(img, labels, 16, 1);
    REQUIRE(patches.size() == 4);
    for (std::size_t k = 0; k < patches.size(); ++k) {
        const auto& p = patches[k];
        CHECK(p.class_id == static_cast<int>(k));
        CHECK(p.pixels.height == 16);
        bool any_outside = false;
        for (std::size_t i = 0; i < p.mask.size(); ++i) {
            for (int c = 0; c < 3; ++c) {
                const double v = p.pixels.pixels[i * 3 + static_cast<std::size_t>(c)];
                if (p.mask[i]) CHECK(v > 0.0);
                else CHECK(v == 0.0);
            }
            any_outside = any_outside || !p.mask[i];
        }
        CHECK_FALSE(any_outside);
    }
    // An L-shaped segment leaves part of its box unmasked.
    LabelMap l(16, 16, 1);
    for (int y = 0; y < 8; ++y) {
        for (int x = 8; x < 16; ++x) l.at(y, x) = 0;
    }
    const auto shaped = extract_fake_patches(Image(16, 16, 0.5), l, 8, 0);
    REQUIRE(shaped.size() == 2);
    const auto& ell = shaped[1];
    CHECK(std::count(ell.mask.begin(), ell.mask.end(), 0) == 16);
    for (std::size_t i = 0; i < ell.mask.size(); ++i) CHECK(ell.pixels.pixels[i * 3] == (ell.mask[i] ? 0.5 : 0.0));
}

TEST_CASE("one segment covering the frame gives a single full-frame patch") {
    const LabelMap labels(20, 20, 2);
    const SegmentPatchSet eroded = erode_segment_masks(segment_masks(labels), 2);
    const auto layouts = fake_patch_layouts(eroded, 8);
    REQUIRE(layouts.size() == 1);
    CHECK(layouts[0].class_id == 2);
    CHECK(layouts[0].box == BoundingBox{2, 2, 18, 18});
    const auto patches = extract_fake_patches(Image(20, 20, 0.3), labels, 8, 0);
    REQUIRE(patches.size() == 1);
    CHECK(std::all_of(patches[0].mask.begin(), patches[0].mask.end(), [](auto m) { return m == 1; }));
}

TEST_CASE("no candidates when erosion removes every segment") {
    std::mt19937_64 rng(4);
    const LabelMap labels = random_labels(16, 16, 4, rng);
    CHECK(extract_fake_patches(random_image(16, 16, rng), labels, 8, 2).empty());
    ParamStore<double> store(1);
    Discriminator<double> d(store, "d", 3, 4);
    const Var<double> real = Var<double>::constant(random_tensor(Shape{1, 3, 8, 8}, rng));
    CHECK_THROWS_AS(local_adversarial_losses<double>(d, real, Var<double>(), {}, {}, gan_targets(LabelConvention::standard)),
                    NoFakeCandidates);
}

TEST_CASE("real crops stay inside the frame") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 200; ++i) {
        const PatchLayout l = random_crop_layout(40, 64, 16, rng);
        CHECK(l.box.height() == l.box.width());
        CHECK(l.box.height() >= 10);
        CHECK(l.box.height() <= 40);
        CHECK(l.box.y0 >= 0);
        CHECK(l.box.y1 <= 40);
        CHECK(l.box.x1 <= 64);
        CHECK(l.class_id == -1);
        CHECK(std::none_of(l.source.begin(), l.source.end(), [](auto s) { return s < 0; }));
    }
}

TEST_CASE("gathered patches equal sampled patches") {
    std::mt19937_64 rng(6);
    const Image a = random_image(24, 24, rng), b = random_image(24, 24, rng);
    const Image* both[] = {&a, &b};
    const Var<double> batch = Var<double>::constant(images_to_tensor<double>(both));
    const auto layouts_b = fake_patch_layouts(erode_segment_masks(segment_masks(block_labels(24, 24, 9, 15)), 1), 8);
    std::vector<PatchLayout> layouts = {random_crop_layout(24, 24, 8, rng)};
    layouts.insert(layouts.end(), layouts_b.begin(), layouts_b.end());
    std::vector<int> owners(layouts.size(), 1);
    owners[0] = 0;
    const Tensor<double> got = gather_patches<double>(batch, layouts, owners).value();
    for (std::size_t m = 0; m < layouts.size(); ++m) {
        const PatchSample s = sample_patch(m == 0 ? a : b, layouts[m]);
        const Tensor<double> expected = image_to_tensor<double>(s.pixels);
        for (std::size_t i = 0; i < expected.size(); ++i) CHECK(got[m * expected.size() + i] == expected[i]);
    }
}

TEST_CASE("constant discriminator gives the least-squares values") {
    std::mt19937_64 rng(7);
    ParamStore<double> store(1);
    Discriminator<double> d(store, "d", 3, 4);
    make_constant(store, "d", 0.5);
    const Var<double> real = Var<double>::constant(random_tensor(Shape{2, 3, 16, 16}, rng));
    const Var<double> fake = Var<double>::constant(random_tensor(Shape{3, 3, 16, 16}, rng));
    const int classes[] = {0, 1, 2};
    const int groups[] = {0, 0, 1};
    for (auto convention : {LabelConvention::standard, LabelConvention::paper}) {
        const auto l = local_adversarial_losses<double>(d, real, fake, classes, groups, gan_targets(convention));
        CHECK(l.loss_d.item() == doctest::Approx(0.5).epsilon(1e-14));
        CHECK(l.loss_g.item() == doctest::Approx(0.25).epsilon(1e-14));
    }
    // Perfect discriminator under the standard convention.
    make_constant(store, "d", 1.0);
    CHECK(local_generator_loss<double>(d, fake, gan_targets(LabelConvention::standard)).item() == 0.0);
    make_constant(store, "d", 0.0);
    CHECK(local_generator_loss<double>(d, fake, gan_targets(LabelConvention::paper)).item() == 0.0);
}

TEST_CASE("loss values match a scalar least-squares oracle") {
    std::mt19937_64 rng(8);
    ParamStore<double> store(3);
    Discriminator<double> d(store, "d", 3, 4);
    const Var<double> real = Var<double>::constant(random_tensor(Shape{2, 3, 16, 16}, rng));
    const Var<double> fake = Var<double>::constant(random_tensor(Shape{1, 3, 16, 16}, rng));
    const auto sr = d.forward(real).value();
    const double sf = d.forward(fake).value()[0];
    for (auto convention : {LabelConvention::standard, LabelConvention::paper}) {
        const GanTargets t = gan_targets(convention);
        const double expected_d =
            ((sr[0] - t.real) * (sr[0] - t.real) + (sr[1] - t.real) * (sr[1] - t.real)) / 2 + (sf - t.fake) * (sf - t.fake);
        CHECK(local_discriminator_loss<double>(d, real, fake, t).item() == doctest::Approx(expected_d).epsilon(1e-12));
        CHECK(local_generator_loss<double>(d, fake, t).item() ==
              doctest::Approx((sf - t.generator) * (sf - t.generator)).epsilon(1e-12));
    }
    CHECK(sa_loss(0.25, 0.5) == 0.75);
    const auto a = Var<double>::constant(Tensor<double>(Shape{1, 1, 1, 1}, {0.25}));
    const auto b = Var<double>::constant(Tensor<double>(Shape{1, 1, 1, 1}, {0.5}));
    CHECK(sa_loss<double>(a, b).item() == 0.75);
}

TEST_CASE("one target per image, chosen by the lowest score") {
    std::mt19937_64 rng(9);
    ParamStore<double> store(4);
    Discriminator<double> d(store, "d", 3, 4);
    const Var<double> cands = Var<double>::constant(random_tensor(Shape{5, 3, 16, 16}, rng));
    const int classes[] = {0, 2, 3, 1, 2};
    const int groups[] = {0, 0, 0, 1, 1};
    const auto scores = d.forward(cands).value();
    const auto chosen = select_targets<double>(d, cands, classes, groups);
    REQUIRE(chosen.size() == 2);
    const auto argmin = [&](int lo, int hi) {
        int best = lo;
        for (int i = lo; i < hi; ++i) {
            if (scores[static_cast<std::size_t>(i)] < scores[static_cast<std::size_t>(best)]) best = i;
        }
        return best;
    };
    CHECK(chosen[0] == argmin(0, 3));
    CHECK(chosen[1] == argmin(3, 5));
}

TEST_CASE("generator gradient flows only through the selected patch mask") {
    std::mt19937_64 rng(10);
    const Image img = random_image(16, 16, rng);
    const LabelMap labels = block_labels(16, 16, 5, 9, 4);
    const auto layouts = fake_patch_layouts(erode_segment_masks(segment_masks(labels), 1), 8);
    const std::vector<int> owners(layouts.size(), 0);
    std::vector<int> classes;
    for (const auto& l : layouts) classes.push_back(l.class_id);
    const std::vector<int> groups(layouts.size(), 0);

    ParamStore<double> store(5);
    Discriminator<double> d(store, "d", 3, 4);
    const Var<double> x = Var<double>::leaf(image_to_tensor<double>(img));
    const Var<double> cands = gather_patches<double>(x, layouts, owners);
    const Var<double> real = Var<double>::constant(random_tensor(Shape{1, 3, 8, 8}, rng));
    const auto losses = local_adversarial_losses<double>(d, real, cands, classes, groups,
                                                         gan_targets(LabelConvention::standard));
    const int target = select_targets<double>(d, cands, classes, groups)[0];

    backward(losses.loss_g);
    const Tensor<double> g = x.grad();
    const auto& src = layouts[static_cast<std::size_t>(target)].source;
    std::vector<bool> used(256, false);
    for (auto s : src) {
        if (s >= 0) used[static_cast<std::size_t>(s)] = true;
    }
    double inside = 0;
    for (int c = 0; c < 3; ++c) {
        for (std::size_t p = 0; p < 256; ++p) {
            const double v = g[static_cast<std::size_t>(c) * 256 + p];
            if (used[p]) inside += std::abs(v);
            else CHECK(v == 0.0);
        }
    }
    CHECK(inside > 0.0);

    // loss_d sees the fake detached.
    x.node()->grad = Tensor<double>();
    backward(losses.loss_d);
    const Tensor<double> gd = x.grad();
    CHECK(std::all_of(gd.values().begin(), gd.values().end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("discriminator and generator parameters stay apart") {
    std::mt19937_64 rng(11);
    ParamStore<double> g_store(1), d_store(2);
    const Var<double> w = g_store.add_uniform("g.w", Shape{1, 3, 16, 16}, 1.0);
    Discriminator<double> d(d_store, "d.local", 3, 4);
    CHECK(d_store.count() == Discriminator<double>::parameter_count(3, 4));
    for (const auto& [name, p] : d_store.entries()) CHECK(name.rfind("d.local.", 0) == 0);
    const Var<double> fake = ops::mul<double>(Var<double>::constant(random_tensor(Shape{1, 3, 16, 16}, rng)), w);
    const Var<double> real = Var<double>::constant(random_tensor(Shape{1, 3, 16, 16}, rng));
    const GanTargets t = gan_targets(LabelConvention::standard);

    backward(local_discriminator_loss<double>(d, real, fake, t));
    CHECK_FALSE(w.has_grad());
    double d_grad = 0;
    for (const auto& [name, p] : d_store.entries()) {
        const Tensor<double> gp = p.grad();
        for (double v : gp.values()) d_grad += std::abs(v);
    }
    CHECK(d_grad > 0.0);

    d_store.zero_grad();
    backward(local_generator_loss<double>(d, fake, t));
    CHECK(w.has_grad());
}

TEST_CASE("global discriminator is conditioned on the logits") {
    std::mt19937_64 rng(12);
    ParamStore<double> store(6);
    Discriminator<double> d(store, "d.global", 7, 4);
    const Var<double> real = Var<double>::constant(random_tensor(Shape{2, 3, 16, 16}, rng));
    const Var<double> fake = Var<double>::constant(random_tensor(Shape{2, 3, 16, 16}, rng));
    const Tensor<double> logits = random_tensor(Shape{2, 4, 16, 16}, rng);
    const GanTargets t = gan_targets(LabelConvention::standard);
    const auto l = global_adversarial_losses<double>(d, real, fake, logits, logits, t);
    CHECK(l.loss_d.item() >= 0.0);
    CHECK(l.loss_g.item() >= 0.0);
    Tensor<double> other = random_tensor(Shape{2, 4, 16, 16}, rng);
    CHECK(global_generator_loss<double>(d, fake, other, t).item() != l.loss_g.item());
    CHECK_THROWS_AS(global_adversarial_losses<double>(d, real, fake, random_tensor(Shape{2, 3, 16, 16}, rng),
                                                      random_tensor(Shape{2, 3, 16, 16}, rng), t),
                    ConfigError);
    CHECK_THROWS_AS(global_generator_loss<double>(d, fake, random_tensor(Shape{2, 4, 8, 8}, rng), t), InputError);
}

TEST_CASE("all adversarial terms are non-negative") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        std::mt19937_64 rng(seed);
        ParamStore<double> store(seed);
        Discriminator<double> d(store, "d", 3, 4);
        const Var<double> real = Var<double>::constant(random_tensor(Shape{2, 3, 8, 8}, rng, 2.0));
        const Var<double> fake = Var<double>::constant(random_tensor(Shape{2, 3, 8, 8}, rng, 2.0));
        const int classes[] = {0, 1};
        const int groups[] = {0, 0};
        for (auto convention : {LabelConvention::standard, LabelConvention::paper}) {
            const auto l = local_adversarial_losses<double>(d, real, fake, classes, groups, gan_targets(convention));
            CHECK(l.loss_d.item() >= 0.0);
            CHECK(l.loss_g.item() >= 0.0);
        }
    }
}

}  // TEST_SUITE
