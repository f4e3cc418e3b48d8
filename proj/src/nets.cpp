#include "skf/nets.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <limits>

#include "skf/binary_io.hpp"
#include "skf/errors.hpp"
#include "skf/ops.hpp"

namespace skf {

// ============================================================================
// Priors
// ============================================================================

LabelMap argmax_labels(const Tensor<double>& logits) {
    const Shape& s = logits.shape();
    if (s.n != 1 || s.c < 1 || s.c > 256) throw InputError("argmax_labels: expected (1, K, H, W) logits, got " + s.str());
    LabelMap labels(s.h, s.w);
    for (int y = 0; y < s.h; ++y) {
        for (int x = 0; x < s.w; ++x) {
            int best = 0;
            for (int c = 1; c < s.c; ++c) {
                if (logits.at(0, c, y, x) > logits.at(0, best, y, x)) best = c;
            }
            labels.at(y, x) = static_cast<std::uint8_t>(best);
        }
    }
    return labels;
}

OracleProvider::OracleProvider(int class_count, std::array<int, 3> feature_widths, std::uint64_t seed,
                               double confidence)
    : class_count_(class_count), widths_(feature_widths), confidence_(confidence), params_(seed) {
    if (class_count < 1 || class_count > 256) throw ConfigError("oracle provider: class count must be in [1, 256]");
    int in = class_count;
    for (int s = 0; s < 3; ++s) {
        const std::string prefix = "provider.level" + std::to_string(s);
        params_.add_conv_weight(prefix + ".weight", widths_[static_cast<std::size_t>(s)], in, 3, 1.5);
        params_.add_uniform(prefix + ".bias", Shape{1, widths_[static_cast<std::size_t>(s)], 1, 1}, 0.1);
        in = widths_[static_cast<std::size_t>(s)];
    }
}

int OracleProvider::feature_channels(int level) const {
    return widths_.at(static_cast<std::size_t>(2 - level));
}

SemanticPrior OracleProvider::from_labels(const LabelMap& labels) const {
    resolution_for_level(0, labels.height, labels.width);
    if (labels.max_label() >= class_count_) {
        throw InputError("oracle provider: label " + std::to_string(labels.max_label()) + " exceeds class count " +
                         std::to_string(class_count_));
    }
    SemanticPrior prior;
    prior.label_map = labels;
    Tensor<double> one_hot(Shape{1, class_count_, labels.height, labels.width});
    for (int y = 0; y < labels.height; ++y)
        for (int x = 0; x < labels.width; ++x) one_hot.at(0, labels.at(y, x), y, x) = 1.0;
    prior.logits = one_hot;
    for (double& v : prior.logits.values()) v *= confidence_;

    // Frozen encoder: pool to H/4, then conv + tanh at H/4, H/8, H/16.
    Var<double> x = ops::avg_pool<double>(Var<double>::constant(std::move(one_hot)), 4);
    for (int s = 0; s < 3; ++s) {
        if (s > 0) x = ops::avg_pool<double>(x, 2);
        const std::string prefix = "provider.level" + std::to_string(s);
        x = ops::tanh<double>(ops::conv2d<double>(x, ops::detach(params_.get(prefix + ".weight")),
                                                  ops::detach(params_.get(prefix + ".bias")), 1, 1));
        prior.features[static_cast<std::size_t>(2 - s)] = x.value();
    }
    return prior;
}

SemanticPrior OracleProvider::provide(const Image& image, const PriorRequest& request) const {
    if (request.ground_truth == nullptr) {
        throw InputError("oracle provider: no ground-truth label map for '" + request.id + "'");
    }
    require_same_dims(image, *request.ground_truth, "oracle provider");
    return from_labels(*request.ground_truth);
}

FileProvider::FileProvider(std::string directory, int class_count, std::array<int, 3> feature_widths)
    : directory_(std::move(directory)), class_count_(class_count), widths_(feature_widths) {}

int FileProvider::feature_channels(int level) const {
    return widths_.at(static_cast<std::size_t>(2 - level));
}

SemanticPrior FileProvider::provide(const Image& image, const PriorRequest& request) const {
    const std::string path = (std::filesystem::path(directory_) / (request.id + ".prior")).string();
    if (!std::filesystem::exists(path)) throw InputError("file provider: missing prior arrays " + path);
    SemanticPrior prior = load_prior(path);
    require_same_dims(image, prior.label_map, "file provider");
    if (prior.class_count() != class_count_) throw InputError(path + ": class count does not match configuration");
    for (int b = 0; b < kSemanticLevels; ++b) {
        const auto [h, w] = resolution_for_level(b, image.height, image.width);
        const Shape& fs = prior.features[static_cast<std::size_t>(b)].shape();
        if (fs.c != feature_channels(b) || fs.h != h || fs.w != w) {
            throw InputError(path + ": level " + std::to_string(b) + " features have shape " + fs.str());
        }
    }
    return prior;
}

std::unique_ptr<SemanticProvider> make_provider(const std::string& name, int class_count,
                                                std::array<int, 3> feature_widths, std::uint64_t seed,
                                                const std::string& prior_directory) {
    if (name == "oracle") return std::make_unique<OracleProvider>(class_count, feature_widths, seed);
    if (name == "file") {
        if (prior_directory.empty()) throw ConfigError("file provider needs a prior directory");
        return std::make_unique<FileProvider>(prior_directory, class_count, feature_widths);
    }
    throw ConfigError("unknown semantic provider '" + name + "' (expected oracle or file)");
}

namespace {

constexpr char kPriorMagic[] = "SKFPRIOR";
constexpr std::uint32_t kPriorVersion = 1;

void write_tensor(BinaryWriter& out, const Tensor<double>& t) {
    const Shape& s = t.shape();
    out.u32(static_cast<std::uint32_t>(s.c));
    out.u32(static_cast<std::uint32_t>(s.h));
    out.u32(static_cast<std::uint32_t>(s.w));
    out.bytes(t.data(), t.size() * sizeof(double));
}

Tensor<double> read_tensor(BinaryReader& in, const char* what) {
    const std::uint32_t c = in.u32(what), h = in.u32(what), w = in.u32(what);
    if (c == 0 || h == 0 || w == 0 || c > 4096 || h > 16384 || w > 16384) {
        throw LoadError(in.path(), std::string("implausible dims for ") + what);
    }
    Tensor<double> t(Shape{1, static_cast<int>(c), static_cast<int>(h), static_cast<int>(w)});
    in.bytes(t.data(), t.size() * sizeof(double), what);
    return t;
}

}  // namespace

void save_prior(const std::string& path, const SemanticPrior& prior) {
    BinaryWriter out(path);
    out.bytes(kPriorMagic, 8);
    out.u32(kPriorVersion);
    out.u32(0);
    write_tensor(out, prior.logits);
    for (const auto& f : prior.features) write_tensor(out, f);
    out.close();
}

SemanticPrior load_prior(const std::string& path) {
    BinaryReader in(path);
    in.expect_magic(std::string(kPriorMagic, 8));
    const std::uint32_t version = in.u32("version");
    if (version != kPriorVersion) throw LoadError(path, "unsupported prior version " + std::to_string(version));
    in.u32("reserved");
    SemanticPrior prior;
    prior.logits = read_tensor(in, "logits");
    for (int b = 0; b < kSemanticLevels; ++b) prior.features[static_cast<std::size_t>(b)] = read_tensor(in, "features");
    prior.label_map = argmax_labels(prior.logits);
    return prior;
}

// ============================================================================
// Enhancer
// ============================================================================

namespace {

constexpr int kFold = 4;
constexpr int kFoldedChannels = 3 * kFold * kFold;

std::size_t conv_params(int cout, int cin, int k) {
    return static_cast<std::size_t>(cout) * cin * k * k + static_cast<std::size_t>(cout);
}

}  // namespace

template <typename T>
Enhancer<T>::Enhancer(const EnhancerConfig& config, std::uint64_t seed) : config_(config), params_(seed) {
    for (int w : config.widths) {
        if (w <= 0) throw ConfigError("enhancer: widths must be positive");
    }
    const auto [c0, c1, c2] = config.widths;
    auto conv = [&](const std::string& name, int cout, int cin) {
        params_.add_conv_weight(name + ".weight", cout, cin, 3);
        params_.add_constant(name + ".bias", Shape{1, cout, 1, 1}, T(0));
    };
    conv("enc.stem", c0, kFoldedChannels);
    conv("enc.down1", c1, c0);
    conv("enc.down2", c2, c1);
    conv("dec.level0", c2, c2);
    conv("dec.level1", c1, c2 + c1);
    conv("dec.level2", c0, c1 + c0);
    params_.add_conv_weight("head.weight", kFoldedChannels, c0 + kFoldedChannels, 3, 0.5);
    params_.add_constant("head.bias", Shape{1, kFoldedChannels, 1, 1}, T(0));
    if (config.use_se) {
        se_.reserve(kSemanticLevels);
        for (int b = 0; b < kSemanticLevels; ++b) {
            se_.emplace_back(params_, "se" + std::to_string(b), config.level_width(b), config.level_semantic_width(b));
        }
    }
}

template <typename T>
std::size_t Enhancer<T>::parameter_count(const EnhancerConfig& config) {
    const auto [c0, c1, c2] = config.widths;
    std::size_t total = conv_params(c0, kFoldedChannels, 3) + conv_params(c1, c0, 3) + conv_params(c2, c1, 3) +
                        conv_params(c2, c2, 3) + conv_params(c1, c2 + c1, 3) + conv_params(c0, c1 + c0, 3) +
                        conv_params(kFoldedChannels, c0 + kFoldedChannels, 3);
    if (config.use_se) {
        for (int b = 0; b < kSemanticLevels; ++b) {
            total += SemanticEmbedding<T>::parameter_count(config.level_width(b), config.level_semantic_width(b));
        }
    }
    return total;
}

template <typename T>
const SemanticEmbedding<T>* Enhancer<T>::se_block(int level) const {
    if (se_.empty()) return nullptr;
    return &se_.at(static_cast<std::size_t>(level));
}

template <typename T>
Var<T> Enhancer<T>::forward(const Var<T>& low, const std::array<Var<T>, kSemanticLevels>& semantic,
                            bool bypass_se) const {
    const Shape& s = low.shape();
    if (s.c != 3) throw InputError("enhancer: expected 3-channel input, got " + s.str());
    resolution_for_level(0, s.h, s.w);
    const T slope = T(0.2);
    auto conv = [&](const Var<T>& x, const std::string& name, int stride) {
        return ops::conv2d<T>(x, params_.get(name + ".weight"), params_.get(name + ".bias"), stride, 1);
    };
    auto act = [&](const Var<T>& x) { return ops::leaky_relu<T>(x, slope); };
    const bool apply_se = !se_.empty() && !bypass_se;
    auto embed = [&](const Var<T>& x, int level) {
        if (!apply_se) return x;
        const Var<T>& fs = semantic[static_cast<std::size_t>(level)];
        if (!fs.defined()) throw InputError("enhancer: missing semantic features for level " + std::to_string(level));
        return se_[static_cast<std::size_t>(level)].forward(x, fs);
    };

    Var<T> folded = ops::space_to_depth<T>(low, kFold);
    Var<T> e_quarter = act(conv(folded, "enc.stem", 1));
    Var<T> e_eighth = act(conv(e_quarter, "enc.down1", 2));
    Var<T> e_sixteenth = act(conv(e_eighth, "enc.down2", 2));

    Var<T> d0 = embed(act(conv(e_sixteenth, "dec.level0", 1)), 0);
    Var<T> d1 = embed(act(conv(ops::concat_channels<T>({ops::upsample_nearest<T>(d0, 2), e_eighth}), "dec.level1", 1)), 1);
    Var<T> d2 = embed(act(conv(ops::concat_channels<T>({ops::upsample_nearest<T>(d1, 2), e_quarter}), "dec.level2", 1)), 2);

    Var<T> head = conv(ops::concat_channels<T>({d2, folded}), "head", 1);
    return ops::sigmoid<T>(ops::depth_to_space<T>(head, kFold));
}

EnhancerConfig large_control_config(const EnhancerConfig& with_se) {
    const std::size_t target = Enhancer<float>::parameter_count(with_se);
    EnhancerConfig best = with_se;
    best.use_se = false;
    std::size_t best_gap = std::numeric_limits<std::size_t>::max();
    for (int step = 0; step <= 400; ++step) {
        const double factor = 1.0 + step * 0.0025;
        EnhancerConfig candidate = with_se;
        candidate.use_se = false;
        for (std::size_t i = 0; i < 3; ++i) {
            candidate.widths[i] = static_cast<int>(std::lround(with_se.widths[i] * factor));
        }
        const std::size_t count = Enhancer<float>::parameter_count(candidate);
        const std::size_t gap = count > target ? count - target : target - count;
        if (gap < best_gap) {
            best_gap = gap;
            best = candidate;
        }
    }
    return best;
}

template <typename T>
std::array<Var<T>, kSemanticLevels> stack_features(std::span<const SemanticPrior* const> priors) {
    std::array<Var<T>, kSemanticLevels> out;
    if (priors.empty()) return out;
    for (int b = 0; b < kSemanticLevels; ++b) {
        const Shape& first = priors[0]->features[static_cast<std::size_t>(b)].shape();
        std::vector<T> data;
        data.reserve(first.numel() * priors.size());
        for (const SemanticPrior* p : priors) {
            const Tensor<double>& f = p->features[static_cast<std::size_t>(b)];
            if (!(f.shape() == first)) throw InputError("stack_features: priors differ in level shapes");
            data.insert(data.end(), f.values().begin(), f.values().end());
        }
        out[static_cast<std::size_t>(b)] = Var<T>::constant(
            Tensor<T>(Shape{static_cast<int>(priors.size()), first.c, first.h, first.w}, std::move(data)));
    }
    return out;
}

template <typename T>
Image enhance(const Enhancer<T>& net, const Image& low, const SemanticPrior& prior) {
    const SemanticPrior* one[] = {&prior};
    Var<T> out = net.forward(Var<T>::constant(image_to_tensor<T>(low)), stack_features<T>(one));
    return tensor_to_image(out.value());
}

template class Enhancer<float>;
template class Enhancer<double>;
template std::array<Var<float>, kSemanticLevels> stack_features(std::span<const SemanticPrior* const>);
template std::array<Var<double>, kSemanticLevels> stack_features(std::span<const SemanticPrior* const>);
template Image enhance(const Enhancer<float>&, const Image&, const SemanticPrior&);
template Image enhance(const Enhancer<double>&, const Image&, const SemanticPrior&);

}  // namespace skf
