#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <type_traits>
#include <variant>
#include <vector>

#include "sparseshift/model.hpp"
#include "sparseshift/tensor.hpp"

namespace sparseshift {

enum class ConvAlgo {
    Direct, // explicit zero padding, nested accumulation
    Im2col, // column buffer + matrix product; matches Direct within 1e-6
};

namespace kernels {

/// Copy of one [C,H,W] image with `pad` zeros on every spatial border.
inline std::vector<float> zero_pad(const float* in, std::size_t c, std::size_t h, std::size_t w, std::size_t pad) {
    const std::size_t ph = h + 2 * pad, pw = w + 2 * pad;
    std::vector<float> out(c * ph * pw, 0.0f);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < h; ++y) {
            std::copy_n(in + (ch * h + y) * w, w, out.begin() + static_cast<std::ptrdiff_t>((ch * ph + y + pad) * pw + pad));
        }
    }
    return out;
}

inline Tensor conv2d_direct(const Tensor& x, const Conv2d& conv, std::size_t node) {
    if (x.rank() != 4 || x.dim(1) != conv.in_channels()) {
        throw ShapeError(node, "conv expects [N," + std::to_string(conv.in_channels()) + ",H,W], got " +
                                   shape_string(x.shape()));
    }
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oc = conv.out_channels(), kh = conv.kernel_h(), kw = conv.kernel_w();
    const std::size_t s = conv.stride, pad = conv.padding;
    const std::size_t oh = conv_output_extent(h, kh, s, pad), ow = conv_output_extent(w, kw, s, pad);
    if (!oh || !ow) throw ShapeError(node, "conv kernel larger than padded input");
    const std::size_t ph = h + 2 * pad, pw = w + 2 * pad;

    Tensor y({n, oc, oh, ow});
    std::vector<double> acc(oh * ow);
    for (std::size_t b = 0; b < n; ++b) {
        const auto padded = zero_pad(x.data() + b * c * h * w, c, h, w, pad);
        for (std::size_t o = 0; o < oc; ++o) {
            std::fill(acc.begin(), acc.end(), conv.bias ? static_cast<double>((*conv.bias)[o]) : 0.0);
            const float* wo = conv.weight.data() + o * c * kh * kw;
            for (std::size_t ci = 0; ci < c; ++ci) {
                const float* plane = padded.data() + ci * ph * pw;
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const double wv = wo[(ci * kh + ky) * kw + kx];
                        for (std::size_t oy = 0; oy < oh; ++oy) {
                            const float* row = plane + (oy * s + ky) * pw + kx;
                            double* arow = acc.data() + oy * ow;
                            if (s == 1) {
                                for (std::size_t ox = 0; ox < ow; ++ox) arow[ox] += wv * row[ox];
                            } else {
                                for (std::size_t ox = 0; ox < ow; ++ox) arow[ox] += wv * row[ox * s];
                            }
                        }
                    }
                }
            }
            float* dst = y.data() + (b * oc + o) * oh * ow;
            for (std::size_t i = 0; i < oh * ow; ++i) dst[i] = static_cast<float>(acc[i]);
        }
    }
    return y;
}

inline Tensor conv2d_im2col(const Tensor& x, const Conv2d& conv, std::size_t node) {
    if (x.rank() != 4 || x.dim(1) != conv.in_channels()) {
        throw ShapeError(node, "conv expects [N," + std::to_string(conv.in_channels()) + ",H,W], got " +
                                   shape_string(x.shape()));
    }
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oc = conv.out_channels(), kh = conv.kernel_h(), kw = conv.kernel_w();
    const std::size_t s = conv.stride, pad = conv.padding;
    const std::size_t oh = conv_output_extent(h, kh, s, pad), ow = conv_output_extent(w, kw, s, pad);
    if (!oh || !ow) throw ShapeError(node, "conv kernel larger than padded input");
    const std::size_t k = c * kh * kw, p = oh * ow;

    Tensor y({n, oc, oh, ow});
    std::vector<float> col(k * p);
    std::vector<double> acc(p);
    for (std::size_t b = 0; b < n; ++b) {
        const float* img = x.data() + b * c * h * w;
        for (std::size_t ci = 0; ci < c; ++ci) {
            for (std::size_t ky = 0; ky < kh; ++ky) {
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    float* dst = col.data() + ((ci * kh + ky) * kw + kx) * p;
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * s + ky) - static_cast<std::ptrdiff_t>(pad);
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const auto ix = static_cast<std::ptrdiff_t>(ox * s + kx) - static_cast<std::ptrdiff_t>(pad);
                            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                                ix < static_cast<std::ptrdiff_t>(w);
                            dst[oy * ow + ox] = inside ? img[(ci * h + static_cast<std::size_t>(iy)) * w +
                                                             static_cast<std::size_t>(ix)]
                                                       : 0.0f;
                        }
                    }
                }
            }
        }
        for (std::size_t o = 0; o < oc; ++o) {
            std::fill(acc.begin(), acc.end(), conv.bias ? static_cast<double>((*conv.bias)[o]) : 0.0);
            const float* wo = conv.weight.data() + o * k;
            for (std::size_t kk = 0; kk < k; ++kk) {
                const double wv = wo[kk];
                const float* crow = col.data() + kk * p;
                for (std::size_t i = 0; i < p; ++i) acc[i] += wv * crow[i];
            }
            float* dst = y.data() + (b * oc + o) * p;
            for (std::size_t i = 0; i < p; ++i) dst[i] = static_cast<float>(acc[i]);
        }
    }
    return y;
}

inline Tensor batchnorm_eval(const Tensor& x, const BatchNorm2d& bn, std::size_t node) {
    if (x.rank() != 4 || x.dim(1) != bn.channels()) {
        throw ShapeError(node, "batchnorm expects [N," + std::to_string(bn.channels()) + ",H,W], got " +
                                   shape_string(x.shape()));
    }
    Tensor y = x;
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double scale = bn.gamma[ch] / std::sqrt(static_cast<double>(bn.running_var[ch]) + bn.eps);
        const double shift = bn.beta[ch] - bn.running_mean[ch] * scale;
        for (std::size_t b = 0; b < n; ++b) {
            float* p = y.data() + (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) p[i] = static_cast<float>(p[i] * scale + shift);
        }
    }
    return y;
}

inline Tensor linear(const Tensor& x, const Linear& lin, std::size_t node) {
    if (x.rank() != 2 || x.dim(1) != lin.in_features()) {
        throw ShapeError(node, "linear expects [N," + std::to_string(lin.in_features()) + "], got " +
                                   shape_string(x.shape()));
    }
    const std::size_t n = x.dim(0), in = lin.in_features(), out = lin.out_features();
    Tensor y({n, out});
    for (std::size_t b = 0; b < n; ++b) {
        const float* xr = x.data() + b * in;
        for (std::size_t o = 0; o < out; ++o) {
            const float* wr = lin.weight.data() + o * in;
            double acc = lin.bias ? (*lin.bias)[o] : 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += static_cast<double>(wr[i]) * xr[i];
            y[b * out + o] = static_cast<float>(acc);
        }
    }
    return y;
}

template <bool IsMax>
Tensor pool2d(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t node) {
    if (x.rank() != 4) throw ShapeError(node, "pool expects [N,C,H,W], got " + shape_string(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = conv_output_extent(h, kernel, stride, 0), ow = conv_output_extent(w, kernel, stride, 0);
    if (!oh || !ow) throw ShapeError(node, "pool window larger than input");
    Tensor y({n, c, oh, ow});
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const float* src = x.data() + plane * h * w;
        float* dst = y.data() + plane * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = IsMax ? -std::numeric_limits<double>::infinity() : 0.0;
                for (std::size_t ky = 0; ky < kernel; ++ky) {
                    for (std::size_t kx = 0; kx < kernel; ++kx) {
                        const double v = src[(oy * stride + ky) * w + ox * stride + kx];
                        if constexpr (IsMax) acc = std::max(acc, v);
                        else acc += v;
                    }
                }
                if constexpr (!IsMax) acc /= static_cast<double>(kernel * kernel);
                dst[oy * ow + ox] = static_cast<float>(acc);
            }
        }
    }
    return y;
}

} // namespace kernels

/**
 * Evaluates the model on `batch` ([N, input_shape...]) and returns the last
 * node's output. Batch-norm layers use running statistics. Pure and reentrant.
 */
inline Tensor forward(const ModelGraph& model, const Tensor& batch, ConvAlgo algo = ConvAlgo::Direct) {
    const Shape& in_shape = model.meta.input_shape;
    if (batch.rank() != in_shape.size() + 1 || !std::equal(in_shape.begin(), in_shape.end(), batch.shape().begin() + 1)) {
        throw ShapeError(0, "batch shape " + shape_string(batch.shape()) + " does not match model input " +
                                shape_string(in_shape) + " with a leading batch dimension");
    }

    // Release each activation after its last reader.
    std::vector<std::size_t> last_use(model.size(), 0);
    for (std::size_t j = 0; j < model.size(); ++j) {
        if (auto p = model.primary_input(j)) last_use[*p] = std::max(last_use[*p], j);
        if (const auto* add = std::get_if<Add>(&model.nodes[j].layer)) last_use[add->other] = std::max(last_use[add->other], j);
    }

    std::vector<std::optional<Tensor>> acts(model.size());
    for (std::size_t j = 0; j < model.size(); ++j) {
        const auto p = model.primary_input(j);
        if (p && !acts[*p]) throw ShapeError(j, "input activation was released");
        const Tensor& x = p ? *acts[*p] : batch;
        acts[j] = std::visit(
            [&](const auto& layer) -> Tensor {
                using T = std::decay_t<decltype(layer)>;
                if constexpr (std::is_same_v<T, Conv2d>) {
                    return algo == ConvAlgo::Direct ? kernels::conv2d_direct(x, layer, j)
                                                    : kernels::conv2d_im2col(x, layer, j);
                } else if constexpr (std::is_same_v<T, BatchNorm2d>) {
                    return kernels::batchnorm_eval(x, layer, j);
                } else if constexpr (std::is_same_v<T, Linear>) {
                    return kernels::linear(x, layer, j);
                } else if constexpr (std::is_same_v<T, ReLU>) {
                    Tensor y = x;
                    for (float& v : y.values()) v = v > 0.0f ? v : 0.0f;
                    return y;
                } else if constexpr (std::is_same_v<T, MaxPool2d>) {
                    return kernels::pool2d<true>(x, layer.kernel, layer.stride, j);
                } else if constexpr (std::is_same_v<T, AvgPool2d>) {
                    return kernels::pool2d<false>(x, layer.kernel, layer.stride, j);
                } else if constexpr (std::is_same_v<T, Flatten>) {
                    return x.reshaped({x.dim(0), x.slice_size()});
                } else {
                    const Tensor& other = acts.at(layer.other).value();
                    if (other.shape() != x.shape()) {
                        throw ShapeError(j, "add operands differ: " + shape_string(x.shape()) + " vs " +
                                                shape_string(other.shape()));
                    }
                    Tensor y = x;
                    for (std::size_t i = 0; i < y.size(); ++i) y[i] += other[i];
                    return y;
                }
            },
            model.nodes[j].layer);
        for (std::size_t i = 0; i < j; ++i) {
            if (acts[i] && last_use[i] <= j) acts[i].reset();
        }
    }
    return std::move(*acts.back());
}

/// Index of the largest logit per row.
inline std::vector<std::size_t> argmax_rows(const Tensor& logits) {
    const std::size_t n = logits.dim(0), k = logits.slice_size();
    std::vector<std::size_t> out(n);
    for (std::size_t b = 0; b < n; ++b) {
        const float* r = logits.data() + b * k;
        out[b] = static_cast<std::size_t>(std::max_element(r, r + k) - r);
    }
    return out;
}

} // namespace sparseshift
