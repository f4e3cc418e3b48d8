#include "skf/adversarial.hpp"

#include <algorithm>
#include <limits>

#include "skf/ops.hpp"

namespace skf {

LabelConvention parse_label_convention(const std::string& name) {
    if (name == "standard") return LabelConvention::standard;
    if (name == "paper") return LabelConvention::paper;
    throw ConfigError("unknown GAN label convention '" + name + "' (expected paper or standard)");
}

std::string to_string(LabelConvention convention) {
    return convention == LabelConvention::paper ? "paper" : "standard";
}

GanTargets gan_targets(LabelConvention convention) {
    if (convention == LabelConvention::paper) return GanTargets{0.0, 1.0, 0.0};
    return GanTargets{1.0, 0.0, 1.0};
}

// ============================================================================
// Patches
// ============================================================================

BoundingBox bounding_box(const SegmentPatch& segment, int width) {
    if (segment.pixels.empty()) throw InputError("bounding_box: empty segment");
    BoundingBox box{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), -1, -1};
    for (int idx : segment.pixels) {
        const int y = idx / width;
        const int x = idx % width;
        box.y0 = std::min(box.y0, y);
        box.x0 = std::min(box.x0, x);
        box.y1 = std::max(box.y1, y + 1);
        box.x1 = std::max(box.x1, x + 1);
    }
    return box;
}

PatchLayout patch_layout(const BoundingBox& box, int image_width, int patch_size, const SegmentPatch* segment) {
    if (patch_size < 8) throw InputError("patch size must be at least 8");
    if (box.height() <= 0 || box.width() <= 0) throw InputError("patch_layout: empty box");
    PatchLayout layout;
    layout.class_id = segment ? segment->class_id : -1;
    layout.box = box;
    layout.patch_size = patch_size;
    layout.source.resize(static_cast<std::size_t>(patch_size) * patch_size);
    for (int py = 0; py < patch_size; ++py) {
        const int y = box.y0 + py * box.height() / patch_size;
        for (int px = 0; px < patch_size; ++px) {
            const int x = box.x0 + px * box.width() / patch_size;
            const std::int64_t idx = static_cast<std::int64_t>(y) * image_width + x;
            const bool inside = !segment || segment->mask[static_cast<std::size_t>(idx)] != 0;
            layout.source[static_cast<std::size_t>(py) * patch_size + px] = inside ? idx : -1;
        }
    }
    return layout;
}

std::vector<PatchLayout> fake_patch_layouts(const SegmentPatchSet& eroded, int patch_size) {
    std::vector<PatchLayout> layouts;
    for (const auto& segment : eroded.patches) {
        if (segment.pixels.empty()) continue;
        layouts.push_back(patch_layout(bounding_box(segment, eroded.width), eroded.width, patch_size, &segment));
    }
    return layouts;
}

PatchLayout random_crop_layout(int height, int width, int patch_size, std::mt19937_64& rng) {
    const int side_max = std::min(height, width);
    const int side_min = std::max(1, side_max / 4);
    const int side = std::uniform_int_distribution<int>(side_min, side_max)(rng);
    const int y0 = std::uniform_int_distribution<int>(0, height - side)(rng);
    const int x0 = std::uniform_int_distribution<int>(0, width - side)(rng);
    return patch_layout(BoundingBox{y0, x0, y0 + side, x0 + side}, width, patch_size, nullptr);
}

PatchSample sample_patch(const Image& image, const PatchLayout& layout) {
    const int p = layout.patch_size;
    PatchSample sample;
    sample.pixels = Image(p, p);
    sample.mask.assign(static_cast<std::size_t>(p) * p, 0);
    for (std::size_t i = 0; i < layout.source.size(); ++i) {
        const std::int64_t src = layout.source[i];
        if (src < 0) continue;
        sample.mask[i] = 1;
        for (int c = 0; c < 3; ++c) {
            sample.pixels.pixels[i * 3 + static_cast<std::size_t>(c)] =
                image.pixels[static_cast<std::size_t>(src) * 3 + static_cast<std::size_t>(c)];
        }
    }
    if (layout.class_id >= 0) sample.class_id = layout.class_id;
    return sample;
}

std::vector<PatchSample> extract_fake_patches(const Image& enhanced, const LabelMap& labels, int patch_size,
                                              int erosion_radius) {
    require_same_dims(enhanced, labels, "extract_fake_patches");
    if (patch_size < 8) throw InputError("extract_fake_patches: patch size must be at least 8");
    const SegmentPatchSet eroded = erode_segment_masks(segment_masks(labels), erosion_radius);
    std::vector<PatchSample> out;
    for (const auto& layout : fake_patch_layouts(eroded, patch_size)) out.push_back(sample_patch(enhanced, layout));
    return out;
}

PatchSample random_real_crop(const Image& image, int patch_size, std::mt19937_64& rng) {
    return sample_patch(image, random_crop_layout(image.height, image.width, patch_size, rng));
}

template <typename T>
Var<T> gather_patches(const Var<T>& images, std::span<const PatchLayout> layouts, std::span<const int> owners) {
    const Shape s = images.shape();
    if (s.c != 3) throw InputError("gather_patches: expected 3-channel images, got " + s.str());
    if (layouts.empty() || owners.size() != layouts.size()) {
        throw InputError("gather_patches: need one owner per layout and at least one layout");
    }
    const int p = layouts.front().patch_size;
    const std::size_t pp = static_cast<std::size_t>(p) * p;
    std::vector<std::int64_t> indices;
    indices.reserve(layouts.size() * 3 * pp);
    for (std::size_t m = 0; m < layouts.size(); ++m) {
        if (layouts[m].patch_size != p) throw InputError("gather_patches: mixed patch sizes");
        const int n = owners[m];
        if (n < 0 || n >= s.n) throw InputError("gather_patches: owner out of range");
        for (int c = 0; c < 3; ++c) {
            const std::int64_t base = static_cast<std::int64_t>(images.value().index(n, c, 0, 0));
            for (std::int64_t src : layouts[m].source) indices.push_back(src < 0 ? -1 : base + src);
        }
    }
    return ops::gather<T>(images, indices, Shape{static_cast<int>(layouts.size()), 3, p, p});
}

int select_target_fake_patch(const DiscriminatorScores& scores) {
    if (scores.per_patch.empty()) throw InputError("select_target_fake_patch: no scores");
    auto best = scores.per_patch.front();
    for (const auto& entry : scores.per_patch) {
        if (entry.second < best.second || (entry.second == best.second && entry.first < best.first)) best = entry;
    }
    return best.first;
}

// ============================================================================
// Discriminator
// ============================================================================

template <typename T>
Discriminator<T>::Discriminator(ParamStore<T>& store, std::string prefix, int in_channels, int width)
    : store_(&store), prefix_(std::move(prefix)), in_channels_(in_channels), width_(width) {
    if (in_channels <= 0 || width <= 0) throw ConfigError("discriminator: channel counts must be positive");
    const int widths[] = {width, 2 * width, 4 * width, 1};
    int in = in_channels;
    for (int l = 0; l < 4; ++l) {
        const std::string name = prefix_ + ".conv" + std::to_string(l);
        store.add_conv_weight(name + ".weight", widths[l], in, 3);
        store.add_constant(name + ".bias", Shape{1, widths[l], 1, 1}, T(0));
        in = widths[l];
    }
}

template <typename T>
std::size_t Discriminator<T>::parameter_count(int in_channels, int width) {
    const int widths[] = {width, 2 * width, 4 * width, 1};
    std::size_t total = 0;
    int in = in_channels;
    for (int w : widths) {
        total += static_cast<std::size_t>(w) * in * 9 + static_cast<std::size_t>(w);
        in = w;
    }
    return total;
}

template <typename T>
Var<T> Discriminator<T>::forward(const Var<T>& x) const {
    if (x.shape().c != in_channels_) {
        throw ConfigError("discriminator " + prefix_ + " expects " + std::to_string(in_channels_) +
                          " input channels, got " + std::to_string(x.shape().c));
    }
    Var<T> h = x;
    for (int l = 0; l < 4; ++l) {
        const std::string name = prefix_ + ".conv" + std::to_string(l);
        h = ops::conv2d<T>(h, store_->get(name + ".weight"), store_->get(name + ".bias"), l < 3 ? 2 : 1, 1);
        if (l < 3) h = ops::leaky_relu<T>(h, T(0.2));
    }
    return ops::spatial_mean<T>(h);
}

// ============================================================================
// Losses
// ============================================================================

template <typename T>
std::vector<int> select_targets(const Discriminator<T>& d, const Var<T>& candidates, std::span<const int> class_ids,
                                std::span<const int> groups) {
    const std::size_t m = static_cast<std::size_t>(candidates.shape().n);
    if (m == 0) throw NoFakeCandidates();
    if (class_ids.size() != m || groups.size() != m) {
        throw InputError("select_targets: need one class id and group per candidate");
    }
    const Var<T> scores = d.forward(ops::detach<T>(candidates));
    std::vector<int> group_order;
    for (int g : groups) {
        if (std::find(group_order.begin(), group_order.end(), g) == group_order.end()) group_order.push_back(g);
    }
    std::vector<int> chosen;
    for (int g : group_order) {
        DiscriminatorScores group_scores;
        for (std::size_t i = 0; i < m; ++i) {
            if (groups[i] == g) group_scores.per_patch.emplace_back(class_ids[i], static_cast<double>(scores.value()[i]));
        }
        const int cls = select_target_fake_patch(group_scores);
        for (std::size_t i = 0; i < m; ++i) {
            if (groups[i] == g && class_ids[i] == cls) {
                chosen.push_back(static_cast<int>(i));
                break;
            }
        }
    }
    return chosen;
}

template <typename T>
Var<T> select_patches(const Var<T>& batch, const std::vector<int>& rows) {
    std::vector<Var<T>> parts;
    parts.reserve(rows.size());
    for (int r : rows) parts.push_back(ops::slice_batch<T>(batch, r));
    return parts.size() == 1 ? parts.front() : ops::concat_batch<T>(parts);
}

namespace {

template <typename T>
Var<T> with_logits(const Var<T>& images, const Tensor<T>& logits) {
    const Shape& is = images.shape();
    const Shape& ls = logits.shape();
    if (ls.n != is.n || ls.h != is.h || ls.w != is.w) {
        throw InputError("global adversarial loss: logits " + ls.str() + " do not match images " + is.str());
    }
    return ops::concat_channels<T>({images, Var<T>::constant(logits)});
}

}  // namespace

template <typename T>
Var<T> local_discriminator_loss(const Discriminator<T>& d, const Var<T>& real_patches, const Var<T>& fake_targets,
                                GanTargets targets) {
    return ops::add<T>(ops::mse_to_label<T>(d.forward(real_patches), static_cast<T>(targets.real)),
                       ops::mse_to_label<T>(d.forward(ops::detach<T>(fake_targets)), static_cast<T>(targets.fake)));
}

template <typename T>
Var<T> local_generator_loss(const Discriminator<T>& d, const Var<T>& fake_targets, GanTargets targets) {
    return ops::mse_to_label<T>(d.forward(fake_targets), static_cast<T>(targets.generator));
}

template <typename T>
AdversarialLosses<T> local_adversarial_losses(const Discriminator<T>& d, const Var<T>& real_patches,
                                              const Var<T>& candidates, std::span<const int> class_ids,
                                              std::span<const int> groups, GanTargets targets) {
    if (!candidates.defined() || candidates.shape().n == 0) throw NoFakeCandidates();
    if (real_patches.shape().n < 1) throw InputError("local adversarial loss: need at least one real patch");
    const Var<T> fake = select_patches(candidates, select_targets(d, candidates, class_ids, groups));
    return {local_discriminator_loss(d, real_patches, fake, targets), local_generator_loss(d, fake, targets)};
}

template <typename T>
Var<T> global_discriminator_loss(const Discriminator<T>& d, const Var<T>& real_images, const Var<T>& fake_images,
                                 const Tensor<T>& real_logits, const Tensor<T>& fake_logits, GanTargets targets) {
    const Var<T> real_in = with_logits(real_images, real_logits);
    const Var<T> fake_in = with_logits(ops::detach<T>(fake_images), fake_logits);
    return ops::add<T>(ops::mse_to_label<T>(d.forward(real_in), static_cast<T>(targets.real)),
                       ops::mse_to_label<T>(d.forward(fake_in), static_cast<T>(targets.fake)));
}

template <typename T>
Var<T> global_generator_loss(const Discriminator<T>& d, const Var<T>& fake_images, const Tensor<T>& fake_logits,
                             GanTargets targets) {
    return ops::mse_to_label<T>(d.forward(with_logits(fake_images, fake_logits)), static_cast<T>(targets.generator));
}

template <typename T>
AdversarialLosses<T> global_adversarial_losses(const Discriminator<T>& d, const Var<T>& real_images,
                                               const Var<T>& fake_images, const Tensor<T>& real_logits,
                                               const Tensor<T>& fake_logits, GanTargets targets) {
    if (real_images.shape().c + real_logits.shape().c != d.in_channels() ||
        fake_images.shape().c + fake_logits.shape().c != d.in_channels()) {
        throw ConfigError("global discriminator expects " + std::to_string(d.in_channels()) +
                          " channels but image + logits give " +
                          std::to_string(fake_images.shape().c + fake_logits.shape().c));
    }
    return {global_discriminator_loss(d, real_images, fake_images, real_logits, fake_logits, targets),
            global_generator_loss(d, fake_images, fake_logits, targets)};
}

template <typename T>
Var<T> sa_loss(const Var<T>& local_g, const Var<T>& global_g) {
    return ops::add<T>(local_g, global_g);
}

double sa_loss(double local_g, double global_g) { return local_g + global_g; }

#define SKF_INSTANTIATE_ADVERSARIAL(T)                                                                              \
    template class Discriminator<T>;                                                                                \
    template Var<T> gather_patches(const Var<T>&, std::span<const PatchLayout>, std::span<const int>);              \
    template std::vector<int> select_targets(const Discriminator<T>&, const Var<T>&, std::span<const int>,          \
                                             std::span<const int>);                                                 \
    template AdversarialLosses<T> local_adversarial_losses(const Discriminator<T>&, const Var<T>&, const Var<T>&,   \
                                                           std::span<const int>, std::span<const int>, GanTargets); \
    template Var<T> local_discriminator_loss(const Discriminator<T>&, const Var<T>&, const Var<T>&, GanTargets);    \
    template Var<T> local_generator_loss(const Discriminator<T>&, const Var<T>&, GanTargets);                       \
    template AdversarialLosses<T> global_adversarial_losses(const Discriminator<T>&, const Var<T>&, const Var<T>&,  \
                                                            const Tensor<T>&, const Tensor<T>&, GanTargets);        \
    template Var<T> global_discriminator_loss(const Discriminator<T>&, const Var<T>&, const Var<T>&,                \
                                              const Tensor<T>&, const Tensor<T>&, GanTargets);                      \
    template Var<T> global_generator_loss(const Discriminator<T>&, const Var<T>&, const Tensor<T>&, GanTargets);    \
    template Var<T> sa_loss(const Var<T>&, const Var<T>&);                                                         \
    template Var<T> select_patches(const Var<T>&, const std::vector<int>&);

SKF_INSTANTIATE_ADVERSARIAL(float)
SKF_INSTANTIATE_ADVERSARIAL(double)

}  // namespace skf
