/**
 * @file data.hpp
 * @brief Synthetic segment-world scenes, low-light degradation and the
 *        on-disk dataset layout.
 */
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "skf/image.hpp"

namespace skf {

struct SceneConfig {
    int height = 64;
    int width = 64;
    int class_count = 4;
    double texture_sigma = 0.04;
};

struct DegradeConfig {
    double gamma_min = 1.5;
    double gamma_max = 3.0;
    double scale_min = 0.1;
    double scale_max = 0.5;
    double noise_sigma = 0.01;
};

/// Parameters applied to one image.
struct DegradeParams {
    double gamma = 1.0;
    double scale = 1.0;
    double noise_sigma = 0.0;
};

struct Scene {
    Image image;
    LabelMap labels;
    /// Base color of every class id, before texture.
    std::vector<std::array<double, 3>> base_colors;
};

struct SceneMeta {
    std::uint64_t seed = 0;
    DegradeParams degradation;
    int class_count = 0;
};

struct ScenePair {
    std::string id;
    std::string split;
    Image normal;
    Image low;
    LabelMap labels;
    SceneMeta meta;
};

/// Base colors are kept at least this far apart in the max norm.
inline constexpr double kMinColorSeparation = 0.2;

/// Background (class 0) plus class_count - 1 ellipses or rectangles, each class
/// a distinct base color with Gaussian texture, clamped and stored on the
/// 16-bit grid. Deterministic in seed.
Scene generate_scene(std::uint64_t seed, const SceneConfig& config);

/// Draws gamma and scale uniformly from the configured ranges.
DegradeParams draw_degradation(std::uint64_t seed, const DegradeConfig& config);

/// clamp(scale * normal^gamma + N(0, noise_sigma^2), 0, 1); the noise stream
/// is seeded by `seed`.
Image degrade(const Image& normal, std::uint64_t seed, const DegradeParams& params);

/// Rounds every value to the nearest multiple of 1/65535.
Image quantize16(const Image& image);

/// Scene seeds and degradations used by pair `index` of a dataset.
std::uint64_t scene_seed(std::uint64_t master_seed, int index);
std::uint64_t noise_seed(std::uint64_t scene_seed);

/// Low image exactly as stored for a pair with this normal image and meta.
Image rederive_low(const Image& normal, const SceneMeta& meta);

struct DatasetConfig {
    SceneConfig scene;
    DegradeConfig degrade;
    int train = 400;
    int val = 50;
    int test = 50;
    std::uint64_t master_seed = 1;
};

struct Dataset {
    std::vector<ScenePair> pairs;

    std::vector<const ScenePair*> split(const std::string& name) const;
    int class_count() const;
};

/// Throws ConfigError for invalid sizes, class counts or ranges.
void validate(const DatasetConfig& config);

Dataset generate_dataset(const DatasetConfig& config);

/// Writes manifest.txt and pairs/<id>.{normal,low,labels}.
void save_dataset(const std::string& directory, const Dataset& dataset);
Dataset load_dataset(const std::string& directory);

void save_image16(const std::string& path, const Image& image);
Image load_image16(const std::string& path);
void save_labels(const std::string& path, const LabelMap& labels);
LabelMap load_labels(const std::string& path);

/// Builds a dataset from `<source>/<id>.{normal,low,labels}` files in the
/// same binary layout. Pairs are assigned train/val/test in sorted id order
/// using the given fractions; degradation meta is recorded as unknown (zeros).
Dataset import_pairs(const std::string& source_directory, double val_fraction = 0.1, double test_fraction = 0.1);

}  // namespace skf
