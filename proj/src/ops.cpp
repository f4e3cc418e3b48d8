#include "skf/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "skf/errors.hpp"

namespace skf::ops {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

void require(bool ok, const char* what) {
    if (!ok) throw InputError(what);
}

/// Builds the message only on failure.
template <typename Message>
void require_lazy(bool ok, Message message) {
    if (!ok) throw InputError(message());
}

void require_same(const Shape& a, const Shape& b, const char* op) {
    require_lazy(a == b, [&] { return std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str(); });
}

/// Output columns [lo, hi) whose input column ox * stride - pad + kx is in frame.
std::pair<int, int> valid_range(int kx, int pad, int stride, int in_w, int out_w) {
    int lo = 0;
    while (lo < out_w && lo * stride - pad + kx < 0) ++lo;
    int hi = out_w;
    while (hi > lo && (hi - 1) * stride - pad + kx >= in_w) --hi;
    return {lo, hi};
}

template <typename T>
bool wants_grad(const Node<T>& node, std::size_t i) {
    return i < node.inputs.size() && node.inputs[i]->requires_grad;
}

template <typename T>
Tensor<T>& grad_of(Node<T>& node, std::size_t i) {
    return node.inputs[i]->grad_buffer();
}

/// Elementwise unary op: f gives the value, df(x, y) the local derivative.
template <typename T, typename F, typename DF>
Var<T> unary(const Var<T>& x, F f, DF df) {
    const Tensor<T>& xv = x.value();
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
    return make_op<T>(std::move(out), {x}, [df](Node<T>& node) {
        if (!wants_grad(node, 0)) return;
        const Tensor<T>& in = node.inputs[0]->value;
        Tensor<T>& g = grad_of(node, 0);
        for (std::size_t i = 0; i < in.size(); ++i) g[i] += node.grad[i] * df(in[i], node.value[i]);
    });
}

}  // namespace

// ---- elementwise --------------------------------------------------------

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    require_same(a.shape(), b.shape(), "add");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& node) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (!wants_grad(node, k)) continue;
            Tensor<T>& g = grad_of(node, k);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
        }
    });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    require_same(a.shape(), b.shape(), "sub");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& node) {
        if (wants_grad(node, 0)) {
            Tensor<T>& g = grad_of(node, 0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i];
        }
        if (wants_grad(node, 1)) {
            Tensor<T>& g = grad_of(node, 1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= node.grad[i];
        }
    });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    require_same(a.shape(), b.shape(), "mul");
    Tensor<T> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make_op<T>(std::move(out), {a, b}, [](Node<T>& node) {
        const Tensor<T>& av = node.inputs[0]->value;
        const Tensor<T>& bv = node.inputs[1]->value;
        if (wants_grad(node, 0)) {
            Tensor<T>& g = grad_of(node, 0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] * bv[i];
        }
        if (wants_grad(node, 1)) {
            Tensor<T>& g = grad_of(node, 1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[i] * av[i];
        }
    });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
    return unary<T>(a, [s](T x) { return x * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
    return unary<T>(
        x, [slope](T v) { return v > T(0) ? v : v * slope; },
        [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Var<T> gelu(const Var<T>& x) {
    const T inv_sqrt2 = T(1) / std::sqrt(T(2));
    const T inv_sqrt2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    return unary<T>(
        x, [=](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
        [=](T v, T) {
            const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
            return cdf + v * inv_sqrt2pi * std::exp(T(-0.5) * v * v);
        });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    return unary<T>(
        x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
    return unary<T>(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> detach(const Var<T>& x) {
    return Var<T>::constant(x.value());
}

// ---- convolution --------------------------------------------------------

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    require_lazy(ws.c == xs.c, [&] {
        return "conv2d: weight expects " + std::to_string(ws.c) + " input channels, got " + std::to_string(xs.c);
    });
    require(ws.h == ws.w && stride >= 1 && pad >= 0, "conv2d: unsupported kernel geometry");
    const bool has_bias = bias.defined();
    if (has_bias) require(bias.shape().numel() == static_cast<std::size_t>(ws.n), "conv2d: bias size");
    const int k = ws.h;
    const int ho = (xs.h + 2 * pad - k) / stride + 1;
    const int wo = (xs.w + 2 * pad - k) / stride + 1;
    require_lazy(ho > 0 && wo > 0, [&] { return "conv2d: input " + xs.str() + " too small for kernel"; });

    const int rows = xs.c * k * k;
    const int plane = ho * wo;
    const int cols_n = xs.n * plane;
    // Column matrix: rows x (N * plane), sample-major within a row.
    auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(rows) * cols_n, T(0));
    const Tensor<T>& xv = x.value();
    for (int n = 0; n < xs.n; ++n) {
        for (int ci = 0; ci < xs.c; ++ci) {
            const T* src = xv.data() + xv.index(n, ci, 0, 0);
            for (int ky = 0; ky < k; ++ky) {
                for (int kx = 0; kx < k; ++kx) {
                    const int r = (ci * k + ky) * k + kx;
                    T* dst = cols->data() + static_cast<std::size_t>(r) * cols_n + static_cast<std::size_t>(n) * plane;
                    const auto [ox_lo, ox_hi] = valid_range(kx, pad, stride, xs.w, wo);
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= xs.h) continue;
                        const T* row = src + iy * xs.w;
                        T* out_row = dst + oy * wo;
                        if (stride == 1) {
                            std::copy(row + (ox_lo - pad + kx), row + (ox_hi - pad + kx), out_row + ox_lo);
                        } else {
                            for (int ox = ox_lo; ox < ox_hi; ++ox) out_row[ox] = row[ox * stride - pad + kx];
                        }
                    }
                }
            }
        }
    }

    RowMat<T> prod(ws.n, cols_n);
    ConstMapMat<T> wmat(weight.value().data(), ws.n, rows);
    ConstMapMat<T> cmat(cols->data(), rows, cols_n);
    prod.noalias() = wmat * cmat;

    Tensor<T> out(Shape{xs.n, ws.n, ho, wo});
    for (int n = 0; n < xs.n; ++n) {
        for (int co = 0; co < ws.n; ++co) {
            const T b = has_bias ? bias.value()[co] : T(0);
            const T* src = prod.data() + static_cast<std::size_t>(co) * cols_n + static_cast<std::size_t>(n) * plane;
            T* dst = out.data() + out.index(n, co, 0, 0);
            for (int p = 0; p < plane; ++p) dst[p] = src[p] + b;
        }
    }

    std::vector<Var<T>> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return make_op<T>(std::move(out), std::move(inputs), [=](Node<T>& node) {
        RowMat<T> dprod(ws.n, cols_n);
        for (int n = 0; n < xs.n; ++n) {
            for (int co = 0; co < ws.n; ++co) {
                const T* src = node.grad.data() + node.grad.index(n, co, 0, 0);
                T* dst = dprod.data() + static_cast<std::size_t>(co) * cols_n + static_cast<std::size_t>(n) * plane;
                std::copy(src, src + plane, dst);
            }
        }
        ConstMapMat<T> cm(cols->data(), rows, cols_n);
        if (wants_grad(node, 1)) {
            MapMat<T> gw(grad_of(node, 1).data(), ws.n, rows);
            gw.noalias() += dprod * cm.transpose();
        }
        if (has_bias && wants_grad(node, 2)) {
            Tensor<T>& gb = grad_of(node, 2);
            for (int co = 0; co < ws.n; ++co) gb[co] += dprod.row(co).sum();
        }
        if (wants_grad(node, 0)) {
            ConstMapMat<T> wm(node.inputs[1]->value.data(), ws.n, rows);
            RowMat<T> dcols(rows, cols_n);
            dcols.noalias() = wm.transpose() * dprod;
            Tensor<T>& gx = grad_of(node, 0);
            for (int n = 0; n < xs.n; ++n) {
                for (int ci = 0; ci < xs.c; ++ci) {
                    T* dst = gx.data() + gx.index(n, ci, 0, 0);
                    for (int ky = 0; ky < k; ++ky) {
                        for (int kx = 0; kx < k; ++kx) {
                            const int r = (ci * k + ky) * k + kx;
                            const T* src = dcols.data() + static_cast<std::size_t>(r) * cols_n +
                                           static_cast<std::size_t>(n) * plane;
                            const auto [ox_lo, ox_hi] = valid_range(kx, pad, stride, xs.w, wo);
                            for (int oy = 0; oy < ho; ++oy) {
                                const int iy = oy * stride - pad + ky;
                                if (iy < 0 || iy >= xs.h) continue;
                                T* row = dst + iy * xs.w;
                                const T* in_row = src + oy * wo;
                                for (int ox = ox_lo; ox < ox_hi; ++ox) row[ox * stride - pad + kx] += in_row[ox];
                            }
                        }
                    }
                }
            }
        }
    });
}

// ---- resampling ---------------------------------------------------------

template <typename T>
Var<T> upsample_nearest(const Var<T>& x, int factor) {
    const Shape s = x.shape();
    require(factor >= 1, "upsample_nearest: factor must be >= 1");
    Tensor<T> out(Shape{s.n, s.c, s.h * factor, s.w * factor});
    const Tensor<T>& xv = x.value();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h * factor; ++y)
                for (int xx = 0; xx < s.w * factor; ++xx) out.at(n, c, y, xx) = xv.at(n, c, y / factor, xx / factor);
    return make_op<T>(std::move(out), {x}, [s, factor](Node<T>& node) {
        if (!wants_grad(node, 0)) return;
        Tensor<T>& g = grad_of(node, 0);
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                for (int y = 0; y < s.h * factor; ++y)
                    for (int xx = 0; xx < s.w * factor; ++xx)
                        g.at(n, c, y / factor, xx / factor) += node.grad.at(n, c, y, xx);
    });
}

template <typename T>
Var<T> avg_pool(const Var<T>& x, int factor) {
    const Shape s = x.shape();
    require(factor >= 1 && s.h % factor == 0 && s.w % factor == 0, "avg_pool: dims not divisible by factor");
    const Shape os{s.n, s.c, s.h / factor, s.w / factor};
    const T inv = T(1) / T(factor * factor);
    Tensor<T> out(os);
    const Tensor<T>& xv = x.value();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int y = 0; y < s.h; ++y)
                for (int xx = 0; xx < s.w; ++xx) out.at(n, c, y / factor, xx / factor) += xv.at(n, c, y, xx) * inv;
    return make_op<T>(std::move(out), {x}, [s, factor, inv](Node<T>& node) {
        if (!wants_grad(node, 0)) return;
        Tensor<T>& g = grad_of(node, 0);
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                for (int y = 0; y < s.h; ++y)
                    for (int xx = 0; xx < s.w; ++xx)
                        g.at(n, c, y, xx) += node.grad.at(n, c, y / factor, xx / factor) * inv;
    });
}

template <typename T>
Var<T> spatial_mean(const Var<T>& x) {
    const Shape s = x.shape();
    const std::size_t plane = s.plane();
    require(plane > 0, "spatial_mean: empty input");
    const T inv = T(1) / T(plane);
    Tensor<T> out(Shape{s.n, s.c, 1, 1});
    const T* xv = x.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        T acc = 0;
        for (std::size_t j = 0; j < plane; ++j) acc += xv[i * plane + j];
        out[i] = acc * inv;
    }
    return make_op<T>(std::move(out), {x}, [plane, inv](Node<T>& node) {
        if (!wants_grad(node, 0)) return;
        Tensor<T>& g = grad_of(node, 0);
        for (std::size_t i = 0; i < node.grad.size(); ++i) {
            const T gi = node.grad[i] * inv;
            for (std::size_t j = 0; j < plane; ++j) g[i * plane + j] += gi;
        }
    });
}

namespace {

// Index map shared by space_to_depth and depth_to_space: for each element of
// the depth layout, the flat index of the same element in the spatial layout.
std::vector<std::int64_t> depth_layout_indices(const Shape& spatial, int r) {
    const Shape ds{spatial.n, spatial.c * r * r, spatial.h / r, spatial.w / r};
    std::vector<std::int64_t> idx(ds.numel());
    std::size_t o = 0;
    for (int n = 0; n < ds.n; ++n)
        for (int c = 0; c < ds.c; ++c) {
            const int src_c = c / (r * r);
            const int dy = (c % (r * r)) / r;
            const int dx = c % r;
            for (int y = 0; y < ds.h; ++y)
                for (int x = 0; x < ds.w; ++x) {
                    const std::int64_t sy = y * r + dy;
                    const std::int64_t sx = x * r + dx;
                    idx[o++] = ((static_cast<std::int64_t>(n) * spatial.c + src_c) * spatial.h + sy) * spatial.w + sx;
                }
        }
    return idx;
}

}  // namespace

template <typename T>
Var<T> space_to_depth(const Var<T>& x, int r) {
    const Shape s = x.shape();
    require_lazy(r >= 1 && s.h % r == 0 && s.w % r == 0,
                 [&] { return "space_to_depth: dims not divisible by " + std::to_string(r); });
    return gather<T>(x, depth_layout_indices(s, r), Shape{s.n, s.c * r * r, s.h / r, s.w / r});
}

template <typename T>
Var<T> depth_to_space(const Var<T>& x, int r) {
    const Shape s = x.shape();
    require(r >= 1 && s.c % (r * r) == 0, "depth_to_space: channels not divisible by r^2");
    const Shape spatial{s.n, s.c / (r * r), s.h * r, s.w * r};
    const auto fwd = depth_layout_indices(spatial, r);
    std::vector<std::int64_t> inv(fwd.size());
    for (std::size_t i = 0; i < fwd.size(); ++i) inv[static_cast<std::size_t>(fwd[i])] = static_cast<std::int64_t>(i);
    return gather<T>(x, inv, spatial);
}

// ---- structural ---------------------------------------------------------

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
    require(!parts.empty(), "concat_channels: no inputs");
    Shape s = parts[0].shape();
    int total = 0;
    for (const auto& p : parts) {
        const Shape& ps = p.shape();
        require_lazy(ps.n == s.n && ps.h == s.h && ps.w == s.w,
                     [&] { return "concat_channels: shape mismatch " + ps.str() + " vs " + s.str(); });
        total += ps.c;
    }
    Tensor<T> out(Shape{s.n, total, s.h, s.w});
    std::vector<int> offsets;
    int off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const Tensor<T>& pv = p.value();
        for (int n = 0; n < s.n; ++n) {
            const std::size_t len = static_cast<std::size_t>(pv.shape().c) * s.plane();
            std::copy(pv.data() + pv.index(n, 0, 0, 0), pv.data() + pv.index(n, 0, 0, 0) + len,
                      out.data() + out.index(n, off, 0, 0));
        }
        off += p.shape().c;
    }
    return make_op<T>(std::move(out), parts, [offsets](Node<T>& node) {
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
            if (!wants_grad(node, k)) continue;
            Tensor<T>& g = grad_of(node, k);
            const Shape gs = g.shape();
            const std::size_t len = static_cast<std::size_t>(gs.c) * gs.plane();
            for (int n = 0; n < gs.n; ++n) {
                const T* src = node.grad.data() + node.grad.index(n, offsets[k], 0, 0);
                T* dst = g.data() + g.index(n, 0, 0, 0);
                for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
            }
        }
    });
}

template <typename T>
Var<T> concat_batch(const std::vector<Var<T>>& parts) {
    require(!parts.empty(), "concat_batch: no inputs");
    const Shape s = parts[0].shape();
    int total = 0;
    for (const auto& p : parts) {
        const Shape& ps = p.shape();
        require_lazy(ps.c == s.c && ps.h == s.h && ps.w == s.w,
                     [&] { return "concat_batch: shape mismatch " + ps.str() + " vs " + s.str(); });
        total += ps.n;
    }
    std::vector<T> data;
    data.reserve(static_cast<std::size_t>(total) * s.c * s.plane());
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        offsets.push_back(data.size());
        data.insert(data.end(), p.value().values().begin(), p.value().values().end());
    }
    return make_op<T>(Tensor<T>(Shape{total, s.c, s.h, s.w}, std::move(data)), parts, [offsets](Node<T>& node) {
        for (std::size_t k = 0; k < node.inputs.size(); ++k) {
            if (!wants_grad(node, k)) continue;
            Tensor<T>& g = grad_of(node, k);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[offsets[k] + i];
        }
    });
}

template <typename T>
Var<T> slice_batch(const Var<T>& x, int index) {
    const Shape s = x.shape();
    require(index >= 0 && index < s.n, "slice_batch: index out of range");
    const std::size_t len = static_cast<std::size_t>(s.c) * s.plane();
    const std::size_t start = static_cast<std::size_t>(index) * len;
    std::vector<T> data(x.value().values().begin() + static_cast<std::ptrdiff_t>(start),
                        x.value().values().begin() + static_cast<std::ptrdiff_t>(start + len));
    return make_op<T>(Tensor<T>(Shape{1, s.c, s.h, s.w}, std::move(data)), {x}, [start, len](Node<T>& node) {
        if (!wants_grad(node, 0)) return;
        Tensor<T>& g = grad_of(node, 0);
        for (std::size_t i = 0; i < len; ++i) g[start + i] += node.grad[i];
    });
}

template <typename T>
Var<T> gather(const Var<T>& x, const std::vector<std::int64_t>& indices, Shape out_shape) {
    require(indices.size() == out_shape.numel(), "gather: index count does not match output shape");
    const auto limit = static_cast<std::int64_t>(x.value().size());
    Tensor<T> out(out_shape);
    bool in_range = true;
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const std::int64_t j = indices[i];
        in_range = in_range && j < limit;
        if (j >= 0 && j < limit) out[i] = x.value()[static_cast<std::size_t>(j)];
    }
    require(in_range, "gather: index out of range");
    return make_op<T>(std::move(out), {x}, [indices](Node<T>& node) {
        if (!wants_grad(node, 0)) return;
        Tensor<T>& g = grad_of(node, 0);
        for (std::size_t i = 0; i < indices.size(); ++i) {
            if (indices[i] >= 0) g[static_cast<std::size_t>(indices[i])] += node.grad[i];
        }
    });
}

// ---- normalization and attention ----------------------------------------

template <typename T>
Var<T> layer_norm_channels(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
    const Shape s = x.shape();
    require(gamma.shape().numel() == static_cast<std::size_t>(s.c) && beta.shape().numel() == static_cast<std::size_t>(s.c),
            "layer_norm_channels: affine parameters must have C elements");
    const std::size_t plane = s.plane();
    Tensor<T> out(s);
    auto xhat = std::make_shared<Tensor<T>>(s);
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(s.n) * plane);
    const Tensor<T>& xv = x.value();
    for (int n = 0; n < s.n; ++n) {
        for (std::size_t p = 0; p < plane; ++p) {
            const std::size_t base = xv.index(n, 0, 0, 0) + p;
            T mean = 0;
            for (int c = 0; c < s.c; ++c) mean += xv[base + c * plane];
            mean /= T(s.c);
            T var = 0;
            for (int c = 0; c < s.c; ++c) {
                const T d = xv[base + c * plane] - mean;
                var += d * d;
            }
            var /= T(s.c);
            const T is = T(1) / std::sqrt(var + eps);
            (*inv_std)[static_cast<std::size_t>(n) * plane + p] = is;
            for (int c = 0; c < s.c; ++c) {
                const T xh = (xv[base + c * plane] - mean) * is;
                (*xhat)[base + c * plane] = xh;
                out[base + c * plane] = xh * gamma.value()[c] + beta.value()[c];
            }
        }
    }
    return make_op<T>(std::move(out), {x, gamma, beta}, [s, plane, xhat, inv_std](Node<T>& node) {
        const Tensor<T>& gv = node.inputs[1]->value;
        const bool gx = wants_grad(node, 0), gg = wants_grad(node, 1), gb = wants_grad(node, 2);
        for (int n = 0; n < s.n; ++n) {
            for (std::size_t p = 0; p < plane; ++p) {
                const std::size_t base = node.grad.index(n, 0, 0, 0) + p;
                T sum_d = 0, sum_dx = 0;
                for (int c = 0; c < s.c; ++c) {
                    const std::size_t i = base + c * plane;
                    const T d = node.grad[i] * gv[c];
                    sum_d += d;
                    sum_dx += d * (*xhat)[i];
                    if (gg) grad_of(node, 1)[c] += node.grad[i] * (*xhat)[i];
                    if (gb) grad_of(node, 2)[c] += node.grad[i];
                }
                if (!gx) continue;
                const T is = (*inv_std)[static_cast<std::size_t>(n) * plane + p];
                Tensor<T>& g = grad_of(node, 0);
                for (int c = 0; c < s.c; ++c) {
                    const std::size_t i = base + c * plane;
                    const T d = node.grad[i] * gv[c];
                    g[i] += is * (d - sum_d / T(s.c) - (*xhat)[i] * sum_dx / T(s.c));
                }
            }
        }
    });
}

template <typename T>
Var<T> channel_gram(const Var<T>& q, const Var<T>& k, T factor) {
    require_same(q.shape(), k.shape(), "channel_gram");
    const Shape s = q.shape();
    const int c = s.c;
    const int p = static_cast<int>(s.plane());
    Tensor<T> out(Shape{s.n, 1, c, c});
    for (int n = 0; n < s.n; ++n) {
        ConstMapMat<T> qm(q.value().data() + q.value().index(n, 0, 0, 0), c, p);
        ConstMapMat<T> km(k.value().data() + k.value().index(n, 0, 0, 0), c, p);
        MapMat<T> om(out.data() + out.index(n, 0, 0, 0), c, c);
        om.noalias() = (qm * km.transpose()) * factor;
    }
    return make_op<T>(std::move(out), {q, k}, [s, c, p, factor](Node<T>& node) {
        for (int n = 0; n < s.n; ++n) {
            ConstMapMat<T> dm(node.grad.data() + node.grad.index(n, 0, 0, 0), c, c);
            const std::size_t off = node.inputs[0]->value.index(n, 0, 0, 0);
            if (wants_grad(node, 0)) {
                ConstMapMat<T> km(node.inputs[1]->value.data() + off, c, p);
                MapMat<T> gq(grad_of(node, 0).data() + off, c, p);
                gq.noalias() += (dm * km) * factor;
            }
            if (wants_grad(node, 1)) {
                ConstMapMat<T> qm(node.inputs[0]->value.data() + off, c, p);
                MapMat<T> gk(grad_of(node, 1).data() + off, c, p);
                gk.noalias() += (dm.transpose() * qm) * factor;
            }
        }
    });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& x) {
    const Shape s = x.shape();
    const std::size_t rows = static_cast<std::size_t>(s.n) * s.c * s.h;
    const std::size_t len = static_cast<std::size_t>(s.w);
    Tensor<T> out(s);
    const Tensor<T>& xv = x.value();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = xv.data() + r * len;
        T* o = out.data() + r * len;
        const T mx = *std::max_element(in, in + len);
        T sum = 0;
        for (std::size_t j = 0; j < len; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (std::size_t j = 0; j < len; ++j) o[j] /= sum;
    }
    return make_op<T>(std::move(out), {x}, [rows, len](Node<T>& node) {
        if (!wants_grad(node, 0)) return;
        Tensor<T>& g = grad_of(node, 0);
        for (std::size_t r = 0; r < rows; ++r) {
            const T* y = node.value.data() + r * len;
            const T* dy = node.grad.data() + r * len;
            T dot = 0;
            for (std::size_t j = 0; j < len; ++j) dot += dy[j] * y[j];
            for (std::size_t j = 0; j < len; ++j) g[r * len + j] += y[j] * (dy[j] - dot);
        }
    });
}

template <typename T>
Var<T> channel_mix(const Var<T>& attention, const Var<T>& v) {
    const Shape as = attention.shape();
    const Shape vs = v.shape();
    require_lazy(as.n == vs.n && as.c == 1 && as.h == vs.c && as.w == vs.c,
                 [&] { return "channel_mix: attention " + as.str() + " incompatible with values " + vs.str(); });
    const int c = vs.c;
    const int p = static_cast<int>(vs.plane());
    Tensor<T> out(vs);
    for (int n = 0; n < vs.n; ++n) {
        ConstMapMat<T> am(attention.value().data() + attention.value().index(n, 0, 0, 0), c, c);
        ConstMapMat<T> vm(v.value().data() + v.value().index(n, 0, 0, 0), c, p);
        MapMat<T> om(out.data() + out.index(n, 0, 0, 0), c, p);
        om.noalias() = am * vm;
    }
    return make_op<T>(std::move(out), {attention, v}, [vs, c, p](Node<T>& node) {
        for (int n = 0; n < vs.n; ++n) {
            const std::size_t aoff = static_cast<std::size_t>(n) * c * c;
            const std::size_t voff = static_cast<std::size_t>(n) * c * p;
            ConstMapMat<T> dm(node.grad.data() + voff, c, p);
            if (wants_grad(node, 0)) {
                ConstMapMat<T> vm(node.inputs[1]->value.data() + voff, c, p);
                MapMat<T> ga(grad_of(node, 0).data() + aoff, c, c);
                ga.noalias() += dm * vm.transpose();
            }
            if (wants_grad(node, 1)) {
                ConstMapMat<T> am(node.inputs[0]->value.data() + aoff, c, c);
                MapMat<T> gv(grad_of(node, 1).data() + voff, c, p);
                gv.noalias() += am.transpose() * dm;
            }
        }
    });
}

// ---- reductions and losses ----------------------------------------------

template <typename T>
Var<T> sum_all(const Var<T>& x) {
    T total = 0;
    for (T v : x.value().values()) total += v;
    return make_op<T>(Tensor<T>(Shape{1, 1, 1, 1}, {total}), {x}, [](Node<T>& node) {
        if (!wants_grad(node, 0)) return;
        Tensor<T>& g = grad_of(node, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[0];
    });
}

template <typename T>
Var<T> mean_all(const Var<T>& x) {
    require(x.value().size() > 0, "mean_all: empty tensor");
    return scale<T>(sum_all<T>(x), T(1) / T(x.value().size()));
}

template <typename T>
Var<T> l1_loss(const Var<T>& x, const Tensor<T>& target) {
    require_same(x.shape(), target.shape(), "l1_loss");
    const T inv = T(1) / T(target.size());
    T total = 0;
    for (std::size_t i = 0; i < target.size(); ++i) total += std::abs(x.value()[i] - target[i]);
    return make_op<T>(Tensor<T>(Shape{1, 1, 1, 1}, {total * inv}), {x}, [target, inv](Node<T>& node) {
        if (!wants_grad(node, 0)) return;
        Tensor<T>& g = grad_of(node, 0);
        const Tensor<T>& xv = node.inputs[0]->value;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const T d = xv[i] - target[i];
            const T sign = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
            g[i] += node.grad[0] * sign * inv;
        }
    });
}

template <typename T>
Var<T> mse_loss(const Var<T>& x, const Tensor<T>& target) {
    require_same(x.shape(), target.shape(), "mse_loss");
    const T inv = T(1) / T(target.size());
    T total = 0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const T d = x.value()[i] - target[i];
        total += d * d;
    }
    return make_op<T>(Tensor<T>(Shape{1, 1, 1, 1}, {total * inv}), {x}, [target, inv](Node<T>& node) {
        if (!wants_grad(node, 0)) return;
        Tensor<T>& g = grad_of(node, 0);
        const Tensor<T>& xv = node.inputs[0]->value;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += node.grad[0] * T(2) * (xv[i] - target[i]) * inv;
    });
}

template <typename T>
Var<T> mse_to_label(const Var<T>& x, T label) {
    return mse_loss<T>(x, Tensor<T>(x.shape(), label));
}

#define SKF_INSTANTIATE_OPS(T)                                                                       \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                                \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                                \
    template Var<T> scale(const Var<T>&, T);                                                          \
    template Var<T> leaky_relu(const Var<T>&, T);                                                     \
    template Var<T> gelu(const Var<T>&);                                                              \
    template Var<T> sigmoid(const Var<T>&);                                                           \
    template Var<T> tanh(const Var<T>&);                                                              \
    template Var<T> detach(const Var<T>&);                                                            \
    template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);                    \
    template Var<T> upsample_nearest(const Var<T>&, int);                                             \
    template Var<T> avg_pool(const Var<T>&, int);                                                     \
    template Var<T> spatial_mean(const Var<T>&);                                                      \
    template Var<T> space_to_depth(const Var<T>&, int);                                               \
    template Var<T> depth_to_space(const Var<T>&, int);                                               \
    template Var<T> concat_channels(const std::vector<Var<T>>&);                                      \
    template Var<T> concat_batch(const std::vector<Var<T>>&);                                         \
    template Var<T> slice_batch(const Var<T>&, int);                                                  \
    template Var<T> gather(const Var<T>&, const std::vector<std::int64_t>&, Shape);                   \
    template Var<T> layer_norm_channels(const Var<T>&, const Var<T>&, const Var<T>&, T);              \
    template Var<T> channel_gram(const Var<T>&, const Var<T>&, T);                                    \
    template Var<T> softmax_rows(const Var<T>&);                                                      \
    template Var<T> channel_mix(const Var<T>&, const Var<T>&);                                        \
    template Var<T> sum_all(const Var<T>&);                                                           \
    template Var<T> mean_all(const Var<T>&);                                                          \
    template Var<T> l1_loss(const Var<T>&, const Tensor<T>&);                                         \
    template Var<T> mse_loss(const Var<T>&, const Tensor<T>&);                                        \
    template Var<T> mse_to_label(const Var<T>&, T);

SKF_INSTANTIATE_OPS(float)
SKF_INSTANTIATE_OPS(double)

}  // namespace skf::ops
