#include "skf/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "skf/binary_io.hpp"
#include "skf/errors.hpp"

namespace fs = std::filesystem;

namespace skf {

namespace {

// Pairwise max-norm distance >= 0.3, so jitter of +-0.05 keeps 0.2.
constexpr std::array<std::array<double, 3>, 8> kPalette{{
    {0.50, 0.50, 0.50},
    {0.85, 0.20, 0.20},
    {0.20, 0.70, 0.25},
    {0.20, 0.30, 0.85},
    {0.90, 0.85, 0.20},
    {0.15, 0.15, 0.15},
    {0.85, 0.45, 0.85},
    {0.25, 0.85, 0.85},
}};
constexpr double kColorJitter = 0.05;
constexpr int kShapeAttempts = 64;

constexpr char kImageMagic[] = "SKFIMG16";
constexpr char kLabelMagic[] = "SKFLABEL";
constexpr std::uint16_t kFormatVersion = 1;
constexpr char kManifestHeader[] = "skf-dataset 1";

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

void paint_shape(LabelMap& labels, std::uint8_t id, std::mt19937_64& rng) {
    const int h = labels.height;
    const int w = labels.width;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double cy = h * (0.15 + 0.7 * unit(rng));
    const double cx = w * (0.15 + 0.7 * unit(rng));
    const double ry = h * (0.12 + 0.18 * unit(rng));
    const double rx = w * (0.12 + 0.18 * unit(rng));
    const bool ellipse = unit(rng) < 0.5;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double dy = (y + 0.5 - cy) / ry;
            const double dx = (x + 0.5 - cx) / rx;
            const bool inside = ellipse ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
            if (inside) labels.at(y, x) = id;
        }
    }
}

void validate_scene(const SceneConfig& config) {
    if (config.class_count < 2 || config.class_count > 8) throw ConfigError("class_count must be in [2, 8]");
    if (config.height <= 0 || config.width <= 0 || config.height % 16 != 0 || config.width % 16 != 0) {
        throw ConfigError("image dims must be positive multiples of 16");
    }
    if (config.height > 4096 || config.width > 4096) throw ConfigError("image dims must not exceed 4096");
    if (!(config.texture_sigma >= 0.0) || !std::isfinite(config.texture_sigma)) {
        throw ConfigError("texture_sigma must be finite and non-negative");
    }
}

std::string format_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

}  // namespace

Scene generate_scene(std::uint64_t seed, const SceneConfig& config) {
    validate_scene(config);
    std::mt19937_64 rng(seed);
    const int k = config.class_count;
    const std::size_t min_pixels =
        std::min<std::size_t>(64, static_cast<std::size_t>(config.height) * config.width / (4 * k));

    Scene scene;
    for (int attempt = 0;; ++attempt) {
        if (attempt == kShapeAttempts) throw ConfigError("could not place every class; image too small");
        LabelMap labels(config.height, config.width, 0);
        for (int c = 1; c < k; ++c) paint_shape(labels, static_cast<std::uint8_t>(c), rng);
        std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
        for (auto v : labels.labels) ++counts[v];
        if (std::all_of(counts.begin(), counts.end(), [&](std::size_t n) { return n >= min_pixels; })) {
            scene.labels = std::move(labels);
            break;
        }
    }

    std::uniform_real_distribution<double> jitter(-kColorJitter, kColorJitter);
    for (int c = 0; c < k; ++c) {
        std::array<double, 3> color = kPalette[static_cast<std::size_t>(c)];
        for (double& v : color) v += jitter(rng);
        scene.base_colors.push_back(color);
    }

    std::normal_distribution<double> texture(0.0, 1.0);
    scene.image = Image(config.height, config.width);
    for (int y = 0; y < config.height; ++y) {
        for (int x = 0; x < config.width; ++x) {
            const auto& color = scene.base_colors[scene.labels.at(y, x)];
            for (int c = 0; c < 3; ++c) {
                const double v = color[static_cast<std::size_t>(c)] + config.texture_sigma * texture(rng);
                scene.image.at(y, x, c) = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    scene.image = quantize16(scene.image);
    return scene;
}

DegradeParams draw_degradation(std::uint64_t seed, const DegradeConfig& config) {
    std::mt19937_64 rng(seed);
    DegradeParams p;
    p.gamma = std::uniform_real_distribution<double>(config.gamma_min, config.gamma_max)(rng);
    p.scale = std::uniform_real_distribution<double>(config.scale_min, config.scale_max)(rng);
    p.noise_sigma = config.noise_sigma;
    return p;
}

Image degrade(const Image& normal, std::uint64_t seed, const DegradeParams& params) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    Image low = normal;
    for (double& v : low.pixels) {
        double d = params.scale * std::pow(v, params.gamma);
        if (params.noise_sigma > 0.0) d += params.noise_sigma * noise(rng);
        v = std::clamp(d, 0.0, 1.0);
    }
    return low;
}

Image quantize16(const Image& image) {
    Image out = image;
    for (double& v : out.pixels) v = std::round(std::clamp(v, 0.0, 1.0) * 65535.0) / 65535.0;
    return out;
}

std::uint64_t scene_seed(std::uint64_t master_seed, int index) {
    return splitmix64(master_seed * 0x100000001B3ULL + static_cast<std::uint64_t>(index));
}

std::uint64_t noise_seed(std::uint64_t seed) { return splitmix64(seed ^ 0xD1B54A32D192ED03ULL); }

Image rederive_low(const Image& normal, const SceneMeta& meta) {
    return quantize16(degrade(normal, noise_seed(meta.seed), meta.degradation));
}

// ============================================================================
// Dataset
// ============================================================================

std::vector<const ScenePair*> Dataset::split(const std::string& name) const {
    std::vector<const ScenePair*> out;
    for (const auto& p : pairs) {
        if (p.split == name) out.push_back(&p);
    }
    return out;
}

int Dataset::class_count() const {
    int k = 0;
    for (const auto& p : pairs) k = std::max({k, p.meta.class_count, p.labels.max_label() + 1});
    return k;
}

void validate(const DatasetConfig& config) {
    validate_scene(config.scene);
    const DegradeConfig& d = config.degrade;
    if (!(d.gamma_min >= 1.0 && d.gamma_min <= d.gamma_max && d.gamma_max <= 6.0)) {
        throw ConfigError("gamma range must satisfy 1 <= min <= max <= 6");
    }
    if (!(d.scale_min >= 0.05 && d.scale_min <= d.scale_max && d.scale_max <= 1.0)) {
        throw ConfigError("scale range must satisfy 0.05 <= min <= max <= 1");
    }
    if (!(d.noise_sigma >= 0.0 && d.noise_sigma <= 1.0)) throw ConfigError("noise_sigma must be in [0, 1]");
    if (config.train < 0 || config.val < 0 || config.test < 0 || config.train + config.val + config.test == 0) {
        throw ConfigError("split sizes must be non-negative with at least one pair");
    }
}

Dataset generate_dataset(const DatasetConfig& config) {
    validate(config);
    Dataset dataset;
    const int total = config.train + config.val + config.test;
    dataset.pairs.reserve(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) {
        ScenePair pair;
        std::ostringstream id;
        id << "scene_" << std::setw(5) << std::setfill('0') << i;
        pair.id = id.str();
        pair.split = i < config.train ? "train" : i < config.train + config.val ? "val" : "test";
        pair.meta.seed = scene_seed(config.master_seed, i);
        pair.meta.class_count = config.scene.class_count;
        pair.meta.degradation = draw_degradation(splitmix64(pair.meta.seed), config.degrade);
        Scene scene = generate_scene(pair.meta.seed, config.scene);
        pair.normal = std::move(scene.image);
        pair.labels = std::move(scene.labels);
        pair.low = rederive_low(pair.normal, pair.meta);
        dataset.pairs.push_back(std::move(pair));
    }
    return dataset;
}

void save_image16(const std::string& path, const Image& image) {
    if (image.height > 65535 || image.width > 65535) throw InputError("image too large for 16-bit header");
    BinaryWriter out(path);
    out.bytes(kImageMagic, 8);
    out.u16(kFormatVersion);
    out.u16(3);
    out.u16(static_cast<std::uint16_t>(image.height));
    out.u16(static_cast<std::uint16_t>(image.width));
    for (double v : image.pixels) out.u16(static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0, 1.0) * 65535.0)));
    out.close();
}

Image load_image16(const std::string& path) {
    BinaryReader in(path);
    in.expect_magic(kImageMagic);
    const auto version = in.u16("version");
    if (version != kFormatVersion) throw LoadError(path, "unsupported version " + std::to_string(version));
    const auto channels = in.u16("channel count");
    if (channels != 3) throw LoadError(path, "expected 3 channels, found " + std::to_string(channels));
    const int h = in.u16("height");
    const int w = in.u16("width");
    Image image(h, w);
    std::vector<std::uint16_t> raw(image.pixels.size());
    in.bytes(raw.data(), raw.size() * 2, "pixel data");
    for (std::size_t i = 0; i < raw.size(); ++i) image.pixels[i] = raw[i] / 65535.0;
    if (!in.at_end()) throw LoadError(path, "trailing bytes after pixel data");
    return image;
}

void save_labels(const std::string& path, const LabelMap& labels) {
    if (labels.height > 65535 || labels.width > 65535) throw InputError("label map too large for 16-bit header");
    BinaryWriter out(path);
    out.bytes(kLabelMagic, 8);
    out.u16(kFormatVersion);
    out.u16(1);
    out.u16(static_cast<std::uint16_t>(labels.height));
    out.u16(static_cast<std::uint16_t>(labels.width));
    out.bytes(labels.labels.data(), labels.labels.size());
    out.close();
}

LabelMap load_labels(const std::string& path) {
    BinaryReader in(path);
    in.expect_magic(kLabelMagic);
    const auto version = in.u16("version");
    if (version != kFormatVersion) throw LoadError(path, "unsupported version " + std::to_string(version));
    const auto channels = in.u16("channel count");
    if (channels != 1) throw LoadError(path, "expected 1 channel, found " + std::to_string(channels));
    const int h = in.u16("height");
    const int w = in.u16("width");
    LabelMap labels(h, w);
    in.bytes(labels.labels.data(), labels.labels.size(), "label data");
    if (!in.at_end()) throw LoadError(path, "trailing bytes after label data");
    return labels;
}

void save_dataset(const std::string& directory, const Dataset& dataset) {
    const fs::path root(directory);
    fs::create_directories(root / "pairs");
    const std::string manifest_path = (root / "manifest.txt").string();
    std::ofstream manifest(manifest_path);
    if (!manifest) throw LoadError(manifest_path, "cannot open for writing");
    manifest << kManifestHeader << "\n";
    manifest << "# id split seed gamma scale noise_sigma class_count\n";
    for (const auto& p : dataset.pairs) {
        const fs::path base = root / "pairs" / p.id;
        save_image16(base.string() + ".normal", p.normal);
        save_image16(base.string() + ".low", p.low);
        save_labels(base.string() + ".labels", p.labels);
        manifest << p.id << ' ' << p.split << ' ' << p.meta.seed << ' ' << format_double(p.meta.degradation.gamma)
                 << ' ' << format_double(p.meta.degradation.scale) << ' '
                 << format_double(p.meta.degradation.noise_sigma) << ' ' << p.meta.class_count << "\n";
    }
    if (!manifest) throw LoadError(manifest_path, "write failed");
}

Dataset load_dataset(const std::string& directory) {
    const fs::path root(directory);
    const std::string manifest_path = (root / "manifest.txt").string();
    if (!fs::exists(manifest_path)) throw InputError("no dataset at " + directory + " (manifest.txt missing)");
    std::ifstream manifest(manifest_path);
    if (!manifest) throw LoadError(manifest_path, "cannot open for reading");
    std::string line;
    if (!std::getline(manifest, line) || line != kManifestHeader) {
        throw LoadError(manifest_path, "missing or unsupported manifest header");
    }
    Dataset dataset;
    std::set<std::string> seen;
    int line_no = 1;
    while (std::getline(manifest, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream row(line);
        ScenePair p;
        if (!(row >> p.id >> p.split >> p.meta.seed >> p.meta.degradation.gamma >> p.meta.degradation.scale >>
              p.meta.degradation.noise_sigma >> p.meta.class_count)) {
            throw LoadError(manifest_path, "malformed record on line " + std::to_string(line_no));
        }
        if (p.split != "train" && p.split != "val" && p.split != "test") {
            throw LoadError(manifest_path, "unknown split '" + p.split + "' for " + p.id);
        }
        if (!seen.insert(p.id).second) throw LoadError(manifest_path, "duplicate id " + p.id);
        const fs::path base = root / "pairs" / p.id;
        p.normal = load_image16(base.string() + ".normal");
        p.low = load_image16(base.string() + ".low");
        p.labels = load_labels(base.string() + ".labels");
        if (p.normal.height != p.low.height || p.normal.width != p.low.width || p.labels.height != p.normal.height ||
            p.labels.width != p.normal.width) {
            throw LoadError(base.string(), "normal, low and label dims disagree");
        }
        dataset.pairs.push_back(std::move(p));
    }
    return dataset;
}

Dataset import_pairs(const std::string& source_directory, double val_fraction, double test_fraction) {
    if (!(val_fraction >= 0 && test_fraction >= 0 && val_fraction + test_fraction < 1)) {
        throw ConfigError("import: split fractions must be non-negative and sum below 1");
    }
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(source_directory)) {
        if (entry.path().extension() == ".normal") ids.push_back(entry.path().stem().string());
    }
    if (ids.empty()) throw InputError("import: no <id>.normal files in " + source_directory);
    std::sort(ids.begin(), ids.end());
    const int total = static_cast<int>(ids.size());
    const int test = static_cast<int>(std::floor(total * test_fraction));
    const int val = static_cast<int>(std::floor(total * val_fraction));
    Dataset dataset;
    for (int i = 0; i < total; ++i) {
        ScenePair p;
        p.id = ids[static_cast<std::size_t>(i)];
        p.split = i < total - val - test ? "train" : i < total - test ? "val" : "test";
        const fs::path base = fs::path(source_directory) / p.id;
        p.normal = load_image16(base.string() + ".normal");
        p.low = load_image16(base.string() + ".low");
        p.labels = load_labels(base.string() + ".labels");
        if (p.normal.height != p.low.height || p.normal.width != p.low.width || p.labels.height != p.normal.height ||
            p.labels.width != p.normal.width) {
            throw LoadError(base.string(), "normal, low and label dims disagree");
        }
        p.meta.degradation = DegradeParams{0.0, 0.0, 0.0};
        p.meta.class_count = p.labels.max_label() + 1;
        dataset.pairs.push_back(std::move(p));
    }
    return dataset;
}

}  // namespace skf
