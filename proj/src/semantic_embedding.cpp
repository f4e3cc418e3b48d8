#include "skf/semantic_embedding.hpp"

#include <cmath>

#include "skf/errors.hpp"
#include "skf/ops.hpp"

namespace skf {

std::pair<int, int> resolution_for_level(int level, int height, int width) {
    if (level < 0 || level >= kSemanticLevels) throw InputError("resolution_for_level: level must be 0, 1 or 2");
    if (height <= 0 || width <= 0 || height % 16 != 0 || width % 16 != 0) {
        throw InputError("resolution_for_level: dims " + std::to_string(height) + "x" + std::to_string(width) +
                         " are not positive multiples of 16");
    }
    const int shift = 4 - level;
    return {height >> shift, width >> shift};
}

template <typename T>
SemanticEmbedding<T>::SemanticEmbedding(ParamStore<T>& store, std::string prefix, int channels,
                                        int semantic_channels, SemanticEmbeddingOptions options)
    : prefix_(std::move(prefix)), channels_(channels), semantic_channels_(semantic_channels), options_(options) {
    if (channels <= 0 || semantic_channels <= 0 || options.ffn_expansion <= 0) {
        throw ConfigError("semantic embedding: channel counts must be positive");
    }
    const Shape c_vec{1, channels, 1, 1};
    const Shape s_vec{1, semantic_channels, 1, 1};
    ln_img_gamma_ = store.add_constant(prefix_ + ".ln_img.gamma", c_vec, T(1));
    ln_img_beta_ = store.add_constant(prefix_ + ".ln_img.beta", c_vec, T(0));
    ln_sem_gamma_ = store.add_constant(prefix_ + ".ln_sem.gamma", s_vec, T(1));
    ln_sem_beta_ = store.add_constant(prefix_ + ".ln_sem.beta", s_vec, T(0));
    wq_ = store.add_conv_weight(prefix_ + ".q.weight", channels, semantic_channels, 1, 1.0);
    bq_ = store.add_constant(prefix_ + ".q.bias", c_vec, T(0));
    wk_ = store.add_conv_weight(prefix_ + ".k.weight", channels, channels, 1, 1.0);
    bk_ = store.add_constant(prefix_ + ".k.bias", c_vec, T(0));
    wv_ = store.add_conv_weight(prefix_ + ".v.weight", channels, channels, 1, 1.0);
    bv_ = store.add_constant(prefix_ + ".v.bias", c_vec, T(0));
    const int hidden = channels * options.ffn_expansion;
    w1_ = store.add_conv_weight(prefix_ + ".ffn1.weight", hidden, channels, 1);
    b1_ = store.add_constant(prefix_ + ".ffn1.bias", Shape{1, hidden, 1, 1}, T(0));
    w2_ = store.add_conv_weight(prefix_ + ".ffn2.weight", channels, hidden, 1, 0.5);
    b2_ = store.add_constant(prefix_ + ".ffn2.bias", c_vec, T(0));
}

template <typename T>
std::size_t SemanticEmbedding<T>::parameter_count(int channels, int semantic_channels, int ffn_expansion) {
    const auto c = static_cast<std::size_t>(channels);
    const auto s = static_cast<std::size_t>(semantic_channels);
    const std::size_t hidden = c * static_cast<std::size_t>(ffn_expansion);
    return 2 * c + 2 * s                 // layer norms
           + (s * c + c)                 // W_q
           + 2 * (c * c + c)             // W_k, W_v
           + (c * hidden + hidden)       // FN first conv
           + (hidden * c + c);           // FN second conv
}

template <typename T>
void SemanticEmbedding<T>::check_inputs(const Var<T>& fi, const Var<T>& fs) const {
    const Shape& a = fi.shape();
    const Shape& b = fs.shape();
    if (a.c != channels_ || b.c != semantic_channels_ || a.n != b.n || a.h != b.h || a.w != b.w) {
        throw InputError(prefix_ + ": image features " + a.str() + " and semantic features " + b.str() +
                         " do not match a block built for " + std::to_string(channels_) + "/" +
                         std::to_string(semantic_channels_) + " channels");
    }
}

template <typename T>
std::pair<Var<T>, Var<T>> SemanticEmbedding<T>::normalized(const Var<T>& fi, const Var<T>& fs) const {
    if (!options_.layer_norm) return {fi, fs};
    return {ops::layer_norm_channels<T>(fi, ln_img_gamma_, ln_img_beta_),
            ops::layer_norm_channels<T>(fs, ln_sem_gamma_, ln_sem_beta_)};
}

template <typename T>
Var<T> SemanticEmbedding<T>::attention(const Var<T>& fi, const Var<T>& fs) const {
    check_inputs(fi, fs);
    auto [xi, xs] = normalized(fi, fs);
    Var<T> q = ops::conv2d<T>(xs, wq_, bq_, 1, 0);
    Var<T> k = ops::conv2d<T>(xi, wk_, bk_, 1, 0);
    return ops::softmax_rows<T>(ops::channel_gram<T>(q, k, T(1) / std::sqrt(T(channels_))));
}

template <typename T>
Var<T> SemanticEmbedding<T>::forward(const Var<T>& fi, const Var<T>& fs) const {
    check_inputs(fi, fs);
    auto [xi, xs] = normalized(fi, fs);
    Var<T> q = ops::conv2d<T>(xs, wq_, bq_, 1, 0);
    Var<T> k = ops::conv2d<T>(xi, wk_, bk_, 1, 0);
    Var<T> v = ops::conv2d<T>(xi, wv_, bv_, 1, 0);
    Var<T> a = ops::softmax_rows<T>(ops::channel_gram<T>(q, k, T(1) / std::sqrt(T(channels_))));
    Var<T> y = ops::add<T>(ops::channel_mix<T>(a, v), fi);
    if (options_.ffn_passthrough) return y;
    Var<T> h = ops::gelu<T>(ops::conv2d<T>(y, w1_, b1_, 1, 0));
    return ops::add<T>(y, ops::conv2d<T>(h, w2_, b2_, 1, 0));
}

template class SemanticEmbedding<float>;
template class SemanticEmbedding<double>;

}  // namespace skf
