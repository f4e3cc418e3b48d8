/**
 * @file nets.hpp
 * @brief Semantic providers (the frozen knowledge bank) and the reference
 *        enhancement network.
 */
#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>

#include "skf/image.hpp"
#include "skf/params.hpp"
#include "skf/semantic_embedding.hpp"

namespace skf {

// ============================================================================
// Semantic prior
// ============================================================================

/// Segmentation result plus multi-scale semantic features of one image.
struct SemanticPrior {
    LabelMap label_map;
    /// (1, K, H, W) pre-softmax class scores.
    Tensor<double> logits;
    /// features[b] is (1, C_b, H / 2^(4-b), W / 2^(4-b)).
    std::array<Tensor<double>, kSemanticLevels> features;

    int class_count() const { return logits.shape().c; }
};

/// Argmax over logit channels; ties go to the lowest class id.
LabelMap argmax_labels(const Tensor<double>& logits);

/// Identifies the image a prior is requested for.
struct PriorRequest {
    std::string id;
    /// Ground-truth segmentation, when the dataset has one.
    const LabelMap* ground_truth = nullptr;
};

class SemanticProvider {
public:
    virtual ~SemanticProvider() = default;
    virtual SemanticPrior provide(const Image& image, const PriorRequest& request) const = 0;
    virtual std::string name() const = 0;
    virtual int class_count() const = 0;
    /// Semantic feature channels at level b.
    virtual int feature_channels(int level) const = 0;
    /// Hash of every provider parameter; constant for a frozen provider.
    virtual std::uint64_t parameter_hash() const = 0;
};

inline constexpr double kOracleConfidence = 6.0;

/// Uses ground-truth label maps. Logits are the one-hot map scaled by a
/// confidence constant; features come from a small frozen random encoder
/// applied to the one-hot map.
class OracleProvider final : public SemanticProvider {
public:
    /// feature_widths are finest-first: channels at H/4, H/8, H/16.
    OracleProvider(int class_count, std::array<int, 3> feature_widths = {16, 32, 64}, std::uint64_t seed = 7,
                   double confidence = kOracleConfidence);

    SemanticPrior provide(const Image& image, const PriorRequest& request) const override;
    std::string name() const override { return "oracle"; }
    int class_count() const override { return class_count_; }
    int feature_channels(int level) const override;
    std::uint64_t parameter_hash() const override { return params_.hash(); }

    /// Prior for a label map directly.
    SemanticPrior from_labels(const LabelMap& labels) const;

private:
    int class_count_;
    std::array<int, 3> widths_;
    double confidence_;
    ParamStore<double> params_;
};

/// Loads `<directory>/<id>.prior` files written by save_prior().
class FileProvider final : public SemanticProvider {
public:
    FileProvider(std::string directory, int class_count, std::array<int, 3> feature_widths);

    SemanticPrior provide(const Image& image, const PriorRequest& request) const override;
    std::string name() const override { return "file"; }
    int class_count() const override { return class_count_; }
    int feature_channels(int level) const override;
    std::uint64_t parameter_hash() const override { return 0; }

private:
    std::string directory_;
    int class_count_;
    std::array<int, 3> widths_;
};

/// "oracle" or "file"; anything else is a ConfigError.
std::unique_ptr<SemanticProvider> make_provider(const std::string& name, int class_count,
                                                std::array<int, 3> feature_widths, std::uint64_t seed,
                                                const std::string& prior_directory = {});

void save_prior(const std::string& path, const SemanticPrior& prior);
SemanticPrior load_prior(const std::string& path);

// ============================================================================
// Enhancement network
// ============================================================================

struct EnhancerConfig {
    /// Decoder/encoder widths, finest first: H/4, H/8, H/16.
    std::array<int, 3> widths{32, 64, 128};
    /// Semantic feature widths, finest first, matching the provider.
    std::array<int, 3> semantic_widths{16, 32, 64};
    bool use_se = true;

    /// Width at SE level b (b = 0 is the coarsest).
    int level_width(int level) const { return widths[static_cast<std::size_t>(2 - level)]; }
    int level_semantic_width(int level) const { return semantic_widths[static_cast<std::size_t>(2 - level)]; }
};

/// Three-scale U-Net. The input is folded 4x into channels (lossless), the
/// encoder halves resolution twice more, and decoder layer b (b = 0, 1, 2 at
/// H/16, H/8, H/4) fuses its skip and then applies SE block b, whose output
/// feeds layer b + 1. A sigmoid head restores full resolution in [0, 1].
template <typename T>
class Enhancer {
public:
    Enhancer(const EnhancerConfig& config, std::uint64_t seed);
    Enhancer(const Enhancer&) = delete;
    Enhancer& operator=(const Enhancer&) = delete;
    Enhancer(Enhancer&&) = default;
    Enhancer& operator=(Enhancer&&) = default;

    /// low is (N, 3, H, W) with H, W multiples of 16. semantic[b] holds the
    /// batched level-b features; ignored when SE is absent or bypassed.
    Var<T> forward(const Var<T>& low, const std::array<Var<T>, kSemanticLevels>& semantic, bool bypass_se = false) const;

    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    const EnhancerConfig& config() const { return config_; }
    const SemanticEmbedding<T>* se_block(int level) const;

    static std::size_t parameter_count(const EnhancerConfig& config);

private:
    EnhancerConfig config_;
    ParamStore<T> params_;
    std::vector<SemanticEmbedding<T>> se_;
};

/// Widens a no-SE copy of `with_se` until its parameter count is as close as
/// possible to the SE-equipped count.
EnhancerConfig large_control_config(const EnhancerConfig& with_se);

/// Stacks level-b features of several priors into (N, C_b, h_b, w_b).
template <typename T>
std::array<Var<T>, kSemanticLevels> stack_features(std::span<const SemanticPrior* const> priors);

/// Single-image convenience wrapper around Enhancer::forward.
template <typename T>
Image enhance(const Enhancer<T>& net, const Image& low, const SemanticPrior& prior);

}  // namespace skf
