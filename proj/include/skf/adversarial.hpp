/**
 * @file adversarial.hpp
 * @brief Semantic-guided adversarial (SA) loss: a local discriminator that
 *        trains on the least-real segment patch, and a global discriminator
 *        conditioned on segmentation logits. Least-squares objectives.
 */
#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "skf/errors.hpp"
#include "skf/histogram.hpp"
#include "skf/params.hpp"

namespace skf {

inline constexpr int kDefaultPatchSize = 64;

/// Which regression targets the least-squares objectives use.
///  standard: D sends real to 1 and fake to 0; G pushes fake to 1.
///  paper:    D sends real to 0 and fake to 1; G pushes fake to 0.
enum class LabelConvention { standard, paper };

LabelConvention parse_label_convention(const std::string& name);
std::string to_string(LabelConvention convention);

struct GanTargets {
    double real = 1.0;
    double fake = 0.0;
    double generator = 1.0;
};

GanTargets gan_targets(LabelConvention convention);

/// Raised when no segment survives erosion, so the local term has no candidate.
class NoFakeCandidates : public InputError {
public:
    NoFakeCandidates() : InputError("local adversarial loss: no candidate fake patches") {}
};

struct PatchSample {
    Image pixels;
    /// patch_size^2 entries; all ones for real crops.
    std::vector<std::uint8_t> mask;
    /// Segment class for fake patches; empty for real crops.
    std::optional<int> class_id;
};

/// Half-open pixel rectangle [y0, y1) x [x0, x1).
struct BoundingBox {
    int y0 = 0, x0 = 0, y1 = 0, x1 = 0;
    int height() const { return y1 - y0; }
    int width() const { return x1 - x0; }
    bool operator==(const BoundingBox&) const = default;
};

/// Where every pixel of a resized patch comes from: flat y * W + x indices
/// into the source plane, or -1 for masked-out pixels.
struct PatchLayout {
    int class_id = -1;
    BoundingBox box;
    int patch_size = 0;
    std::vector<std::int64_t> source;
};

/// Tight bounding box of a non-empty segment.
BoundingBox bounding_box(const SegmentPatch& segment, int width);

/// Nearest-neighbour layout of the box resized to patch_size x patch_size.
/// With a segment, pixels outside its mask map to -1.
PatchLayout patch_layout(const BoundingBox& box, int image_width, int patch_size, const SegmentPatch* segment);

/// One layout per non-empty segment of an eroded patch set.
std::vector<PatchLayout> fake_patch_layouts(const SegmentPatchSet& eroded, int patch_size);

/// Layout of a uniformly random square crop whose side lies in [min/4, min].
PatchLayout random_crop_layout(int height, int width, int patch_size, std::mt19937_64& rng);

PatchSample sample_patch(const Image& image, const PatchLayout& layout);

/// Candidate fake patches: every non-empty eroded segment, cropped to its
/// bounding box, zeroed outside the mask and resized. Empty when erosion
/// removed every segment.
std::vector<PatchSample> extract_fake_patches(const Image& enhanced, const LabelMap& labels,
                                              int patch_size = kDefaultPatchSize,
                                              int erosion_radius = kDefaultErosionRadius);

PatchSample random_real_crop(const Image& image, int patch_size, std::mt19937_64& rng);

/// Gathers patches out of an (N, 3, H, W) batch. layouts[i] is read from
/// sample owners[i]; the result is (M, 3, p, p) and differentiable.
template <typename T>
Var<T> gather_patches(const Var<T>& images, std::span<const PatchLayout> layouts, std::span<const int> owners);

struct DiscriminatorScores {
    std::vector<std::pair<int, double>> per_patch;
};

/// Class of the lowest score; ties go to the lowest class id.
int select_target_fake_patch(const DiscriminatorScores& scores);

/// Strided conv scorer: three stride-2 3x3 convs (width, 2w, 4w) with leaky
/// ReLU and a 3x3 conv to one channel. The score of a sample is the mean of
/// that map.
template <typename T>
class Discriminator {
public:
    Discriminator(ParamStore<T>& store, std::string prefix, int in_channels, int width = 16);

    /// (N, C, H, W) -> (N, 1, 1, 1) scores.
    Var<T> forward(const Var<T>& x) const;
    int in_channels() const { return in_channels_; }
    int width() const { return width_; }

    static std::size_t parameter_count(int in_channels, int width);

private:
    ParamStore<T>* store_;
    std::string prefix_;
    int in_channels_;
    int width_;
};

template <typename T>
struct AdversarialLosses {
    Var<T> loss_d;
    Var<T> loss_g;
};

/// Index of the selected candidate in each group (one group per image).
/// Scores are evaluated without building a graph.
template <typename T>
std::vector<int> select_targets(const Discriminator<T>& d, const Var<T>& candidates, std::span<const int> class_ids,
                                std::span<const int> groups);

/// Rows of a patch batch, in the given order.
template <typename T>
Var<T> select_patches(const Var<T>& batch, const std::vector<int>& rows);

/// Local objective. `candidates` are fake patches of the enhanced output,
/// class_ids and groups label each candidate with its segment and image. One
/// target P^t is chosen per group; loss_d sees it detached, loss_g only
/// propagates through it.
template <typename T>
AdversarialLosses<T> local_adversarial_losses(const Discriminator<T>& d, const Var<T>& real_patches,
                                              const Var<T>& candidates, std::span<const int> class_ids,
                                              std::span<const int> groups, GanTargets targets);

template <typename T>
Var<T> local_discriminator_loss(const Discriminator<T>& d, const Var<T>& real_patches, const Var<T>& fake_targets,
                                GanTargets targets);

template <typename T>
Var<T> local_generator_loss(const Discriminator<T>& d, const Var<T>& fake_targets, GanTargets targets);

/// Global objective on channel-concat(image, logits). Throws ConfigError when
/// D expects a different channel count.
template <typename T>
AdversarialLosses<T> global_adversarial_losses(const Discriminator<T>& d, const Var<T>& real_images,
                                               const Var<T>& fake_images, const Tensor<T>& real_logits,
                                               const Tensor<T>& fake_logits, GanTargets targets);

template <typename T>
Var<T> global_discriminator_loss(const Discriminator<T>& d, const Var<T>& real_images, const Var<T>& fake_images,
                                 const Tensor<T>& real_logits, const Tensor<T>& fake_logits, GanTargets targets);

template <typename T>
Var<T> global_generator_loss(const Discriminator<T>& d, const Var<T>& fake_images, const Tensor<T>& fake_logits,
                             GanTargets targets);

template <typename T>
Var<T> sa_loss(const Var<T>& local_g, const Var<T>& global_g);

double sa_loss(double local_g, double global_g);

}  // namespace skf
