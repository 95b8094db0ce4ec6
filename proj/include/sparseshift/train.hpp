#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <vector>

#include "sparseshift/dataset.hpp"
#include "sparseshift/mask.hpp"
#include "sparseshift/model.hpp"

namespace sparseshift {

enum class Loss { CrossEntropy, MeanSquared };

struct TrainConfig {
    std::size_t epochs = 20;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    std::vector<std::size_t> milestone_steps;
    double gamma = 0.1; // learning-rate factor applied at each milestone
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::size_t portfolio_depth = 1; // IMP iterations n
    std::size_t rewind_epoch = 1; // k
    std::uint64_t seed = 0;
    Loss loss = Loss::CrossEntropy;
    bool per_layer_ranking = false;
    bool evaluate_each_epoch = true;

    void validate() const {
        if (portfolio_depth < 1) throw Error("portfolio depth must be >= 1");
        if (rewind_epoch >= epochs) throw Error("rewind epoch must be < epochs");
        validate_optimizer();
    }

    void validate_optimizer() const {
        if (!(gamma > 0.0 && gamma <= 1.0)) throw Error("gamma must be in (0, 1]");
        if (batch_size == 0) throw Error("batch size must be positive");
        if (!(learning_rate > 0.0)) throw Error("learning rate must be positive");
        if (momentum < 0.0 || weight_decay < 0.0) throw Error("momentum and weight decay must be >= 0");
    }

    double lr_at(std::size_t epoch) const {
        double lr = learning_rate;
        for (auto m : milestone_steps) {
            if (epoch >= m) lr *= gamma;
        }
        return lr;
    }
};

/// Full parameter snapshot taken after `epoch` completed epochs.
struct Checkpoint {
    std::size_t epoch = 0;
    ModelGraph weights;
};

struct EpochLog {
    std::size_t epoch = 0;
    double loss = 0.0;
    double test_accuracy = 0.0;
};

struct TrainResult {
    ModelGraph model;
    std::vector<Checkpoint> checkpoints;
    std::vector<EpochLog> log;

    const Checkpoint* checkpoint_at(std::size_t epoch) const {
        for (const auto& c : checkpoints) {
            if (c.epoch == epoch) return &c;
        }
        return nullptr;
    }
};

namespace gemm {

// C[MxN] += A[MxK] * B[KxN]
inline void nn(std::size_t M, std::size_t N, std::size_t K, const float* A, const float* B, float* C) {
    for (std::size_t i = 0; i < M; ++i) {
        float* c = C + i * N;
        for (std::size_t k = 0; k < K; ++k) {
            const float a = A[i * K + k];
            if (a == 0.0f) continue;
            const float* b = B + k * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
        }
    }
}

// C[MxN] += A[MxP] * B[NxP]^T
inline void nt(std::size_t M, std::size_t N, std::size_t P, const float* A, const float* B, float* C) {
    for (std::size_t i = 0; i < M; ++i) {
        const float* a = A + i * P;
        for (std::size_t j = 0; j < N; ++j) {
            const float* b = B + j * P;
            float s0 = 0, s1 = 0, s2 = 0, s3 = 0;
            std::size_t p = 0;
            for (; p + 4 <= P; p += 4) {
                s0 += a[p] * b[p];
                s1 += a[p + 1] * b[p + 1];
                s2 += a[p + 2] * b[p + 2];
                s3 += a[p + 3] * b[p + 3];
            }
            for (; p < P; ++p) s0 += a[p] * b[p];
            C[i * N + j] += (s0 + s1) + (s2 + s3);
        }
    }
}

// C[MxN] += A[KxM]^T * B[KxN]
inline void tn(std::size_t M, std::size_t N, std::size_t K, const float* A, const float* B, float* C) {
    for (std::size_t k = 0; k < K; ++k) {
        const float* b = B + k * N;
        for (std::size_t i = 0; i < M; ++i) {
            const float a = A[k * M + i];
            if (a == 0.0f) continue;
            float* c = C + i * N;
            for (std::size_t j = 0; j < N; ++j) c[j] += a * b[j];
        }
    }
}

} // namespace gemm

namespace detail {

inline std::vector<Tensor*> parameters_of(Layer& layer) {
    std::vector<Tensor*> out;
    if (auto* c = std::get_if<Conv2d>(&layer)) {
        out.push_back(&c->weight);
        if (c->bias) out.push_back(&*c->bias);
    } else if (auto* l = std::get_if<Linear>(&layer)) {
        out.push_back(&l->weight);
        if (l->bias) out.push_back(&*l->bias);
    } else if (auto* b = std::get_if<BatchNorm2d>(&layer)) {
        out.push_back(&b->gamma);
        out.push_back(&b->beta);
    }
    return out;
}

/**
 * Backpropagation over a sequential graph (each node reads the previous one,
 * no residual adds). Parameters are updated in place in the bound model.
 */
class Engine {
public:
    static constexpr float kBnMomentum = 0.1f;

    explicit Engine(ModelGraph& model) : m_(model), state_(model.size()) {
        for (std::size_t j = 0; j < m_.size(); ++j) {
            if (m_.nodes[j].input && *m_.nodes[j].input + 1 != j) {
                throw StructureError("trainer supports sequential models only (node " + std::to_string(j) + ")");
            }
            if (m_.kind(j) == LayerKind::Add) throw StructureError("trainer does not support residual adds");
            for (Tensor* p : parameters_of(m_.nodes[j].layer)) {
                state_[j].grads.emplace_back(p->size(), 0.0f);
                state_[j].velocity.emplace_back(p->size(), 0.0f);
            }
        }
    }

    /// Forward + backward on one batch; returns the mean loss. Gradients are overwritten.
    double forward_backward(const Split& batch, Loss loss) {
        Tensor out = run(batch.images, true);
        Tensor grad(out.shape());
        double total = 0.0;
        const std::size_t n = out.dim(0), k = out.slice_size();
        if (loss == Loss::CrossEntropy) {
            for (std::size_t b = 0; b < n; ++b) {
                const float* z = out.data() + b * k;
                const double mx = *std::max_element(z, z + k);
                double sum = 0.0;
                for (std::size_t i = 0; i < k; ++i) sum += std::exp(z[i] - mx);
                const std::size_t label = batch.labels.at(b);
                total += -(z[label] - mx - std::log(sum));
                for (std::size_t i = 0; i < k; ++i) {
                    const double p = std::exp(z[i] - mx) / sum;
                    grad[b * k + i] = static_cast<float>((p - (i == label ? 1.0 : 0.0)) / static_cast<double>(n));
                }
            }
        } else {
            if (!batch.targets) throw Error("mean-squared loss needs regression targets");
            const Tensor& t = *batch.targets;
            if (t.size() != out.size()) throw Error("target shape does not match model output");
            for (std::size_t i = 0; i < out.size(); ++i) {
                const double d = static_cast<double>(out[i]) - t[i];
                total += d * d;
                grad[i] = static_cast<float>(2.0 * d / static_cast<double>(n));
            }
        }
        backward(std::move(grad));
        return total / static_cast<double>(n);
    }

    Tensor infer(const Tensor& x) { return run(x, false); }

    /// Gradient of parameter `param` (weight, then bias / gamma, beta) of `node` from the last batch.
    const std::vector<float>& gradient(std::size_t node, std::size_t param) const { return state_.at(node).grads.at(param); }

    void sgd_step(double lr, double momentum, double weight_decay, const SparsityMask* mask) {
        for (std::size_t j = 0; j < m_.size(); ++j) {
            auto params = parameters_of(m_.nodes[j].layer);
            for (std::size_t p = 0; p < params.size(); ++p) {
                float* w = params[p]->data();
                const auto& g = state_[j].grads[p];
                auto& v = state_[j].velocity[p];
                const bool first = !stepped_;
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const float d = g[i] + static_cast<float>(weight_decay) * w[i];
                    v[i] = (momentum > 0.0 && !first) ? static_cast<float>(momentum) * v[i] + d : d;
                    w[i] -= static_cast<float>(lr) * v[i];
                }
            }
        }
        stepped_ = true;
        if (mask) mask->apply(m_);
    }

private:
    struct NodeState {
        std::vector<std::vector<float>> grads;
        std::vector<std::vector<float>> velocity;
        Tensor input; // saved input activation
        Tensor output; // saved output activation
        std::vector<float> cols; // conv im2col buffers, one per sample
        std::vector<float> xhat; // batchnorm normalised input
        std::vector<float> inv_std;
        std::vector<std::uint32_t> argmax; // maxpool
    };

    Tensor run(const Tensor& x0, bool training) {
        Tensor x = x0;
        for (std::size_t j = 0; j < m_.size(); ++j) {
            NodeState& st = state_[j];
            Tensor y = std::visit(
                [&](auto& layer) -> Tensor {
                    using T = std::decay_t<decltype(layer)>;
                    if constexpr (std::is_same_v<T, Conv2d>) return conv_forward(layer, x, st, training);
                    else if constexpr (std::is_same_v<T, BatchNorm2d>) return bn_forward(layer, x, st, training);
                    else if constexpr (std::is_same_v<T, Linear>) return linear_forward(layer, x, j);
                    else if constexpr (std::is_same_v<T, ReLU>) {
                        Tensor r = x;
                        for (float& v : r.values()) v = v > 0.0f ? v : 0.0f;
                        return r;
                    } else if constexpr (std::is_same_v<T, MaxPool2d>) return pool_forward<true>(layer.kernel, layer.stride, x, st);
                    else if constexpr (std::is_same_v<T, AvgPool2d>) return pool_forward<false>(layer.kernel, layer.stride, x, st);
                    else if constexpr (std::is_same_v<T, Flatten>) return x.reshaped({x.dim(0), x.slice_size()});
                    else throw StructureError("unsupported layer in trainer");
                },
                m_.nodes[j].layer);
            if (training) {
                st.input = std::move(x);
                st.output = y;
            }
            x = std::move(y);
        }
        return x;
    }

    static void im2col(const float* img, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                       std::size_t s, std::size_t pad, std::size_t oh, std::size_t ow, float* col) {
        const std::size_t p = oh * ow;
        for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t ky = 0; ky < kh; ++ky)
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    float* dst = col + ((ci * kh + ky) * kw + kx) * p;
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) - static_cast<std::ptrdiff_t>(pad);
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s + kx) - static_cast<std::ptrdiff_t>(pad);
                            dst[oy * ow + ox] = (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                                 ix < static_cast<std::ptrdiff_t>(w))
                                                    ? img[(ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)]
                                                    : 0.0f;
                        }
                    }
                }
    }

    static void col2im(const float* col, std::size_t c, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                       std::size_t s, std::size_t pad, std::size_t oh, std::size_t ow, float* img) {
        const std::size_t p = oh * ow;
        for (std::size_t ci = 0; ci < c; ++ci)
            for (std::size_t ky = 0; ky < kh; ++ky)
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const float* src = col + ((ci * kh + ky) * kw + kx) * p;
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * s + ky) - static_cast<std::ptrdiff_t>(pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * s + kx) - static_cast<std::ptrdiff_t>(pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                            img[(ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] += src[oy * ow + ox];
                        }
                    }
                }
    }

    Tensor conv_forward(const Conv2d& conv, const Tensor& x, NodeState& st, bool training) {
        const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const std::size_t o = conv.out_channels(), kh = conv.kernel_h(), kw = conv.kernel_w();
        const std::size_t oh = conv_output_extent(h, kh, conv.stride, conv.padding);
        const std::size_t ow = conv_output_extent(w, kw, conv.stride, conv.padding);
        const std::size_t k = c * kh * kw, p = oh * ow;
        Tensor y({n, o, oh, ow});
        st.cols.resize(n * k * p);
        for (std::size_t b = 0; b < n; ++b) {
            float* col = st.cols.data() + (training ? b * k * p : 0);
            im2col(x.data() + b * c * h * w, c, h, w, kh, kw, conv.stride, conv.padding, oh, ow, col);
            float* yb = y.data() + b * o * p;
            if (conv.bias) {
                for (std::size_t oc = 0; oc < o; ++oc) std::fill_n(yb + oc * p, p, (*conv.bias)[oc]);
            }
            gemm::nn(o, p, k, conv.weight.data(), col, yb);
        }
        return y;
    }

    Tensor bn_forward(BatchNorm2d& bn, const Tensor& x, NodeState& st, bool training) {
        const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3), count = n * hw;
        Tensor y(x.shape());
        if (training) {
            st.xhat.resize(x.size());
            st.inv_std.resize(c);
        }
        for (std::size_t ch = 0; ch < c; ++ch) {
            double mean, var;
            if (training) {
                double s = 0.0, s2 = 0.0;
                for (std::size_t b = 0; b < n; ++b) {
                    const float* p = x.data() + (b * c + ch) * hw;
                    for (std::size_t i = 0; i < hw; ++i) s += p[i];
                }
                mean = s / static_cast<double>(count);
                for (std::size_t b = 0; b < n; ++b) {
                    const float* p = x.data() + (b * c + ch) * hw;
                    for (std::size_t i = 0; i < hw; ++i) s2 += (p[i] - mean) * (p[i] - mean);
                }
                var = s2 / static_cast<double>(count);
                const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
                bn.running_mean[ch] = static_cast<float>((1.0 - kBnMomentum) * bn.running_mean[ch] + kBnMomentum * mean);
                bn.running_var[ch] = static_cast<float>((1.0 - kBnMomentum) * bn.running_var[ch] + kBnMomentum * unbiased);
            } else {
                mean = bn.running_mean[ch];
                var = bn.running_var[ch];
            }
            const double inv = 1.0 / std::sqrt(var + bn.eps);
            if (training) st.inv_std[ch] = static_cast<float>(inv);
            for (std::size_t b = 0; b < n; ++b) {
                const std::size_t off = (b * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    const float xh = static_cast<float>((x[off + i] - mean) * inv);
                    if (training) st.xhat[off + i] = xh;
                    y[off + i] = bn.gamma[ch] * xh + bn.beta[ch];
                }
            }
        }
        return y;
    }

    Tensor linear_forward(const Linear& lin, const Tensor& x, std::size_t node) {
        if (x.rank() != 2 || x.dim(1) != lin.in_features()) throw ShapeError(node, "linear input mismatch");
        const std::size_t n = x.dim(0), o = lin.out_features();
        Tensor y({n, o});
        if (lin.bias) {
            for (std::size_t b = 0; b < n; ++b) std::copy_n(lin.bias->data(), o, y.data() + b * o);
        }
        gemm::nt(n, o, lin.in_features(), x.data(), lin.weight.data(), y.data());
        return y;
    }

    template <bool IsMax>
    Tensor pool_forward(std::size_t kernel, std::size_t stride, const Tensor& x, NodeState& st) {
        const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const std::size_t oh = conv_output_extent(h, kernel, stride, 0), ow = conv_output_extent(w, kernel, stride, 0);
        Tensor y({n, c, oh, ow});
        if constexpr (IsMax) st.argmax.resize(y.size());
        for (std::size_t plane = 0; plane < n * c; ++plane) {
            const float* src = x.data() + plane * h * w;
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const std::size_t oi = plane * oh * ow + oy * ow + ox;
                    float best = -std::numeric_limits<float>::infinity();
                    std::uint32_t arg = 0;
                    float sum = 0.0f;
                    for (std::size_t ky = 0; ky < kernel; ++ky)
                        for (std::size_t kx = 0; kx < kernel; ++kx) {
                            const std::size_t ii = (oy * stride + ky) * w + ox * stride + kx;
                            if constexpr (IsMax) {
                                if (src[ii] > best) {
                                    best = src[ii];
                                    arg = static_cast<std::uint32_t>(plane * h * w + ii);
                                }
                            } else {
                                sum += src[ii];
                            }
                        }
                    if constexpr (IsMax) {
                        y[oi] = best;
                        st.argmax[oi] = arg;
                    } else {
                        y[oi] = sum / static_cast<float>(kernel * kernel);
                    }
                }
        }
        return y;
    }

    void backward(Tensor dy) {
        for (std::size_t jj = m_.size(); jj-- > 0;) {
            NodeState& st = state_[jj];
            const bool need_dx = jj > 0;
            Tensor dx = std::visit(
                [&](auto& layer) -> Tensor {
                    using T = std::decay_t<decltype(layer)>;
                    if constexpr (std::is_same_v<T, Conv2d>) return conv_backward(layer, dy, st, need_dx);
                    else if constexpr (std::is_same_v<T, BatchNorm2d>) return bn_backward(layer, dy, st);
                    else if constexpr (std::is_same_v<T, Linear>) return linear_backward(layer, dy, st, need_dx);
                    else if constexpr (std::is_same_v<T, ReLU>) {
                        Tensor g = dy;
                        for (std::size_t i = 0; i < g.size(); ++i) {
                            if (!(st.output[i] > 0.0f)) g[i] = 0.0f;
                        }
                        return g;
                    } else if constexpr (std::is_same_v<T, MaxPool2d>) {
                        Tensor g(st.input.shape());
                        for (std::size_t i = 0; i < dy.size(); ++i) g[st.argmax[i]] += dy[i];
                        return g;
                    } else if constexpr (std::is_same_v<T, AvgPool2d>) {
                        return avgpool_backward(layer, dy, st);
                    } else if constexpr (std::is_same_v<T, Flatten>) {
                        return dy.reshaped(st.input.shape());
                    } else {
                        throw StructureError("unsupported layer in trainer");
                    }
                },
                m_.nodes[jj].layer);
            dy = std::move(dx);
        }
    }

    Tensor conv_backward(const Conv2d& conv, const Tensor& dy, NodeState& st, bool need_dx) {
        const Tensor& x = st.input;
        const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        const std::size_t o = conv.out_channels(), kh = conv.kernel_h(), kw = conv.kernel_w();
        const std::size_t oh = dy.dim(2), ow = dy.dim(3), k = c * kh * kw, p = oh * ow;
        auto& gw = st.grads[0];
        std::fill(gw.begin(), gw.end(), 0.0f);
        std::vector<float>* gb = conv.bias ? &st.grads[1] : nullptr;
        if (gb) std::fill(gb->begin(), gb->end(), 0.0f);
        Tensor dx = need_dx ? Tensor(x.shape()) : Tensor();
        std::vector<float> dcol(need_dx ? k * p : 0);
        for (std::size_t b = 0; b < n; ++b) {
            const float* dyb = dy.data() + b * o * p;
            const float* col = st.cols.data() + b * k * p;
            gemm::nt(o, k, p, dyb, col, gw.data());
            if (gb) {
                for (std::size_t oc = 0; oc < o; ++oc) {
                    float s = 0.0f;
                    for (std::size_t i = 0; i < p; ++i) s += dyb[oc * p + i];
                    (*gb)[oc] += s;
                }
            }
            if (need_dx) {
                std::fill(dcol.begin(), dcol.end(), 0.0f);
                gemm::tn(k, p, o, conv.weight.data(), dyb, dcol.data());
                col2im(dcol.data(), c, h, w, kh, kw, conv.stride, conv.padding, oh, ow, dx.data() + b * c * h * w);
            }
        }
        return dx;
    }

    Tensor bn_backward(const BatchNorm2d& bn, const Tensor& dy, NodeState& st) {
        const std::size_t n = dy.dim(0), c = dy.dim(1), hw = dy.dim(2) * dy.dim(3);
        const double count = static_cast<double>(n * hw);
        auto& gg = st.grads[0];
        auto& gbeta = st.grads[1];
        Tensor dx(dy.shape());
        for (std::size_t ch = 0; ch < c; ++ch) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                const std::size_t off = (b * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    sum_dy += dy[off + i];
                    sum_dy_xhat += static_cast<double>(dy[off + i]) * st.xhat[off + i];
                }
            }
            gg[ch] = static_cast<float>(sum_dy_xhat);
            gbeta[ch] = static_cast<float>(sum_dy);
            const double scale = bn.gamma[ch] * st.inv_std[ch] / count;
            for (std::size_t b = 0; b < n; ++b) {
                const std::size_t off = (b * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) {
                    dx[off + i] = static_cast<float>(scale * (count * dy[off + i] - sum_dy - st.xhat[off + i] * sum_dy_xhat));
                }
            }
        }
        return dx;
    }

    Tensor linear_backward(const Linear& lin, const Tensor& dy, NodeState& st, bool need_dx) {
        const Tensor& x = st.input;
        const std::size_t n = x.dim(0), in = lin.in_features(), o = lin.out_features();
        auto& gw = st.grads[0];
        std::fill(gw.begin(), gw.end(), 0.0f);
        gemm::tn(o, in, n, dy.data(), x.data(), gw.data());
        if (lin.bias) {
            auto& gb = st.grads[1];
            std::fill(gb.begin(), gb.end(), 0.0f);
            for (std::size_t b = 0; b < n; ++b)
                for (std::size_t i = 0; i < o; ++i) gb[i] += dy[b * o + i];
        }
        if (!need_dx) return Tensor();
        Tensor dx(x.shape());
        gemm::nn(n, in, o, dy.data(), lin.weight.data(), dx.data());
        return dx;
    }

    Tensor avgpool_backward(const AvgPool2d& pool, const Tensor& dy, const NodeState& st) {
        const Tensor& x = st.input;
        const std::size_t h = x.dim(2), w = x.dim(3), oh = dy.dim(2), ow = dy.dim(3);
        const float scale = 1.0f / static_cast<float>(pool.kernel * pool.kernel);
        Tensor dx(x.shape());
        for (std::size_t plane = 0; plane < x.dim(0) * x.dim(1); ++plane)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const float g = dy[plane * oh * ow + oy * ow + ox] * scale;
                    for (std::size_t ky = 0; ky < pool.kernel; ++ky)
                        for (std::size_t kx = 0; kx < pool.kernel; ++kx)
                            dx[plane * h * w + (oy * pool.stride + ky) * w + ox * pool.stride + kx] += g;
                }
        return dx;
    }

    ModelGraph& m_;
    std::vector<NodeState> state_;
    bool stepped_ = false;
};

} // namespace detail

/// Top-1 accuracy of `model` on `split` (batch-norm in inference mode).
inline double evaluate_accuracy(const ModelGraph& model, const Split& split, std::size_t batch = 128) {
    if (split.size() == 0) throw Error("cannot evaluate on an empty split");
    ModelGraph copy = model;
    detail::Engine engine(copy);
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < split.size(); start += batch) {
        idx.clear();
        for (std::size_t i = start; i < std::min(split.size(), start + batch); ++i) idx.push_back(i);
        Split b = gather(split, idx);
        Tensor logits = engine.infer(b.images);
        const std::size_t k = logits.slice_size();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const float* r = logits.data() + i * k;
            if (static_cast<std::size_t>(std::max_element(r, r + k) - r) == b.labels[i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(split.size());
}

/**
 * SGD with momentum, weight decay and milestone learning-rate decay, starting
 * at `start_epoch` (used when retraining from a rewound checkpoint). The mask
 * is applied before training and after every optimiser step. Checkpoints are
 * recorded after `cfg.rewind_epoch` and after the final epoch.
 */
inline TrainResult train(const ModelGraph& model, const Dataset& data, const TrainConfig& cfg, const SparsityMask& mask,
                         std::size_t start_epoch = 0) {
    cfg.validate_optimizer();
    mask.check(model);
    if (data.train.size() == 0) throw Error("training split is empty");

    TrainResult result{model, {}, {}};
    mask.apply(result.model);
    detail::Engine engine(result.model);

    if (start_epoch == cfg.rewind_epoch) result.checkpoints.push_back({start_epoch, result.model});

    const std::size_t n = data.train.size();
    std::vector<std::size_t> order(n);
    for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ull + epoch);
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

        const double lr = cfg.lr_at(epoch);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t end = std::min(n, start + cfg.batch_size);
            Split batch = gather(data.train, std::span<const std::size_t>(order).subspan(start, end - start));
            const double loss = engine.forward_backward(batch, cfg.loss);
            if (!std::isfinite(loss)) throw DivergenceError(epoch);
            engine.sgd_step(lr, cfg.momentum, cfg.weight_decay, &mask);
            loss_sum += loss;
            ++batches;
        }
        EpochLog entry{epoch + 1, loss_sum / static_cast<double>(batches), 0.0};
        const bool last = epoch + 1 == cfg.epochs;
        if (cfg.loss == Loss::CrossEntropy && data.test.size() && (cfg.evaluate_each_epoch || last)) {
            entry.test_accuracy = evaluate_accuracy(result.model, data.test);
        }
        result.log.push_back(entry);
        if (epoch + 1 == cfg.rewind_epoch || last) result.checkpoints.push_back({epoch + 1, result.model});
    }
    return result;
}

} // namespace sparseshift
