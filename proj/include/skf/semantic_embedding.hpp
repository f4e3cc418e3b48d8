/**
 * @file semantic_embedding.hpp
 * @brief Semantic-aware embedding (SE) block: channel-transposed cross
 *        attention from semantic features into image features.
 *
 * For image features F_i and semantic features F_s at the same level:
 *
 *     Q = W_q(LN(F_s)),  K = W_k(LN(F_i)),  V = W_v(LN(F_i))       (1x1 convs)
 *     A = row_softmax(Q K^T / sqrt(C))                             (C x C)
 *     F_o = FN(A V + F_i),  FN(x) = x + W_2(GELU(W_1(x)))
 *
 * Q, K, V are flattened to C x (h*w), so the attention map contracts over
 * space and its cost is linear in resolution.
 */
#pragma once

#include <string>
#include <utility>

#include "skf/params.hpp"

namespace skf {

inline constexpr int kSemanticLevels = 3;

/// Spatial size of level b in {0, 1, 2}: (H / 2^(4-b), W / 2^(4-b)).
std::pair<int, int> resolution_for_level(int level, int height, int width);

struct SemanticEmbeddingOptions {
    bool layer_norm = true;
    /// FN reduces to the identity; used to isolate the residual path.
    bool ffn_passthrough = false;
    int ffn_expansion = 2;
};

template <typename T>
class SemanticEmbedding {
public:
    SemanticEmbedding(ParamStore<T>& store, std::string prefix, int channels, int semantic_channels,
                      SemanticEmbeddingOptions options = {});

    /// (N, 1, C, C) attention map; every row sums to one.
    Var<T> attention(const Var<T>& image_features, const Var<T>& semantic_features) const;
    Var<T> forward(const Var<T>& image_features, const Var<T>& semantic_features) const;

    int channels() const { return channels_; }
    int semantic_channels() const { return semantic_channels_; }
    const std::string& prefix() const { return prefix_; }
    SemanticEmbeddingOptions& options() { return options_; }

    /// Parameter count for the given widths, without building the block.
    static std::size_t parameter_count(int channels, int semantic_channels, int ffn_expansion = 2);

private:
    void check_inputs(const Var<T>& image_features, const Var<T>& semantic_features) const;
    std::pair<Var<T>, Var<T>> normalized(const Var<T>& image_features, const Var<T>& semantic_features) const;

    std::string prefix_;
    int channels_;
    int semantic_channels_;
    SemanticEmbeddingOptions options_;
    Var<T> ln_img_gamma_, ln_img_beta_, ln_sem_gamma_, ln_sem_beta_;
    Var<T> wq_, bq_, wk_, bk_, wv_, bv_;
    Var<T> w1_, b1_, w2_, b2_;
};

}  // namespace skf
