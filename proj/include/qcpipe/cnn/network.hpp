#pragma once

// Sequential 3D network with hand-written forward and backward passes. Templated on the
// scalar type: float for training, double for gradient audits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qcpipe/cnn/spec.hpp"
#include "qcpipe/error.hpp"

namespace qc::cnn {

struct Segment {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
};

/// Named slices of the flat parameter and buffer vectors, plus per-layer offsets.
struct ParamLayout {
    std::vector<Segment> params;
    std::vector<Segment> buffers;  // batch-norm running statistics
    std::size_t n_params = 0;
    std::size_t n_buffers = 0;
    std::vector<std::size_t> weight_offset, bias_offset, buffer_offset;

    explicit ParamLayout(const NetworkSpec& spec) {
        const auto shapes = propagate_shapes(spec);
        const std::size_t L = spec.layers.size();
        weight_offset.assign(L, 0);
        bias_offset.assign(L, 0);
        buffer_offset.assign(L, 0);
        auto add = [](std::vector<Segment>& segs, std::size_t& total, std::string name, std::vector<std::size_t> shape) {
            const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
            segs.push_back({std::move(name), std::move(shape), total, n});
            total += n;
            return segs.back().offset;
        };
        Dims4 in = spec.input;
        int conv_i = 0, bn_i = 0, fc_i = 0;
        for (std::size_t i = 0; i < L; ++i) {
            const auto& l = spec.layers[i];
            switch (l.kind) {
            case LayerKind::conv3d: {
                const std::string p = "conv" + std::to_string(++conv_i);
                weight_offset[i] = add(params, n_params, p + ".weight", {l.out, in[0], l.kernel, l.kernel, l.kernel});
                bias_offset[i] = add(params, n_params, p + ".bias", {l.out});
                break;
            }
            case LayerKind::batchnorm: {
                const std::string p = "bn" + std::to_string(++bn_i);
                weight_offset[i] = add(params, n_params, p + ".gamma", {in[0]});
                bias_offset[i] = add(params, n_params, p + ".beta", {in[0]});
                buffer_offset[i] = add(buffers, n_buffers, p + ".running_mean", {in[0]});
                add(buffers, n_buffers, p + ".running_var", {in[0]});
                break;
            }
            case LayerKind::linear: {
                const std::string p = "fc" + std::to_string(++fc_i);
                weight_offset[i] = add(params, n_params, p + ".weight", {l.out, numel(in)});
                bias_offset[i] = add(params, n_params, p + ".bias", {l.out});
                break;
            }
            default: break;
            }
            in = shapes[i];
        }
    }
};

template <class T>
struct ForwardCache {
    std::uint64_t version = 0;
    bool training = false;
    std::size_t batch = 0;
    std::vector<std::vector<T>> acts;  // acts[0] = input, acts[i + 1] = output of layer i
    std::vector<std::vector<T>> aux;   // per layer: BN normalized input, dropout mask
    std::vector<std::vector<T>> inv_std;  // per BN layer, per channel
    std::vector<std::vector<std::uint32_t>> argmax;  // per pooling layer
    std::vector<T> logits;  // batch x 2
    std::vector<T> probs;   // batch x 2
};

namespace kernels {

template <class T>
inline void axpy(T* __restrict y, const T* __restrict x, T a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <class T>
inline T dot(const T* __restrict a, const T* __restrict b, std::size_t n) {
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

// Geometry of a stride-1 convolution evaluated on the zero-padded input grid. Outputs are
// computed at padded-stride positions j = (ox * Yp + oy) * Zp + oz so that every kernel tap is a
// constant offset and each (out, in, tap) triple is one contiguous axpy of length `span`.
struct ConvGeometry {
    std::size_t cin, cout, k, pad;
    std::size_t X, Y, Z;     // input extent
    std::size_t Xo, Yo, Zo;  // output extent
    std::size_t Xp, Yp, Zp;  // padded input extent
    std::size_t span;        // number of padded-stride output positions
    std::vector<std::size_t> offsets;  // per tap, row-major (kx, ky, kz)

    ConvGeometry(const Dims4& in, const LayerSpec& l)
        : cin(in[0]), cout(l.out), k(l.kernel), pad(l.pad), X(in[1]), Y(in[2]), Z(in[3]) {
        Xp = X + 2 * pad;
        Yp = Y + 2 * pad;
        Zp = Z + 2 * pad;
        Xo = Xp - k + 1;
        Yo = Yp - k + 1;
        Zo = Zp - k + 1;
        span = ((Xo - 1) * Yp + (Yo - 1)) * Zp + Zo;
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b)
                for (std::size_t c = 0; c < k; ++c) offsets.push_back((a * Yp + b) * Zp + c);
    }
    std::size_t padded_size() const { return Xp * Yp * Zp; }
    std::size_t taps() const { return offsets.size(); }
};

template <class T>
inline void pad_channels(const T* in, const ConvGeometry& g, std::vector<T>& out) {
    out.assign(g.cin * g.padded_size(), T(0));
    for (std::size_t c = 0; c < g.cin; ++c)
        for (std::size_t x = 0; x < g.X; ++x)
            for (std::size_t y = 0; y < g.Y; ++y) {
                const T* src = in + ((c * g.X + x) * g.Y + y) * g.Z;
                T* dst = out.data() + c * g.padded_size() + ((x + g.pad) * g.Yp + (y + g.pad)) * g.Zp + g.pad;
                std::copy(src, src + g.Z, dst);
            }
}

template <class T>
inline void conv_forward(const T* in, const T* w, const T* bias, T* out, const ConvGeometry& g,
                         std::vector<T>& padded, std::vector<T>& acc) {
    pad_channels(in, g, padded);
    acc.resize(g.span);
    const std::size_t taps = g.taps();
    for (std::size_t co = 0; co < g.cout; ++co) {
        std::fill(acc.begin(), acc.end(), T(0));
        for (std::size_t ci = 0; ci < g.cin; ++ci) {
            const T* wk = w + (co * g.cin + ci) * taps;
            const T* src = padded.data() + ci * g.padded_size();
            for (std::size_t t = 0; t < taps; ++t) axpy(acc.data(), src + g.offsets[t], wk[t], g.span);
        }
        T* dst = out + co * g.Xo * g.Yo * g.Zo;
        for (std::size_t x = 0; x < g.Xo; ++x)
            for (std::size_t y = 0; y < g.Yo; ++y) {
                const T* row = acc.data() + (x * g.Yp + y) * g.Zp;
                for (std::size_t z = 0; z < g.Zo; ++z) *dst++ = row[z] + bias[co];
            }
    }
}

// Accumulates weight/bias gradients; writes the input gradient when `din` is non-null.
template <class T>
inline void conv_backward(const T* in, const T* w, const T* dout, T* dw, T* db, T* din, const ConvGeometry& g,
                          std::vector<T>& padded, std::vector<T>& dpadded, std::vector<T>& dspan) {
    pad_channels(in, g, padded);
    if (din) dpadded.assign(g.cin * g.padded_size(), T(0));
    dspan.assign(g.span, T(0));
    const std::size_t taps = g.taps();
    const std::size_t out_vol = g.Xo * g.Yo * g.Zo;
    for (std::size_t co = 0; co < g.cout; ++co) {
        const T* d = dout + co * out_vol;
        T bsum = 0;
        for (std::size_t x = 0; x < g.Xo; ++x)
            for (std::size_t y = 0; y < g.Yo; ++y) {
                T* row = dspan.data() + (x * g.Yp + y) * g.Zp;
                for (std::size_t z = 0; z < g.Zo; ++z) {
                    row[z] = *d;
                    bsum += *d++;
                }
            }
        db[co] += bsum;
        for (std::size_t ci = 0; ci < g.cin; ++ci) {
            const T* wk = w + (co * g.cin + ci) * taps;
            T* dwk = dw + (co * g.cin + ci) * taps;
            const T* src = padded.data() + ci * g.padded_size();
            T* dsrc = din ? dpadded.data() + ci * g.padded_size() : nullptr;
            for (std::size_t t = 0; t < taps; ++t) {
                dwk[t] += dot(dspan.data(), src + g.offsets[t], g.span);
                if (dsrc) axpy(dsrc + g.offsets[t], dspan.data(), wk[t], g.span);
            }
        }
    }
    if (!din) return;
    for (std::size_t c = 0; c < g.cin; ++c)
        for (std::size_t x = 0; x < g.X; ++x)
            for (std::size_t y = 0; y < g.Y; ++y) {
                const T* src = dpadded.data() + c * g.padded_size() + ((x + g.pad) * g.Yp + (y + g.pad)) * g.Zp + g.pad;
                std::copy(src, src + g.Z, din + ((c * g.X + x) * g.Y + y) * g.Z);
            }
}

}  // namespace kernels

/// Network parameters and state. Every mutation of `params` through the class bumps `version`,
/// which invalidates earlier forward caches.
template <class T>
class Network {
public:
    explicit Network(NetworkSpec spec) : spec_(std::move(spec)), layout_(spec_) {
        validate_spec(spec_);
        shapes_ = propagate_shapes(spec_);
        params_.assign(layout_.n_params, T(0));
        buffers_.assign(layout_.n_buffers, T(0));
        reset_buffers();
    }

    const NetworkSpec& spec() const { return spec_; }
    const ParamLayout& layout() const { return layout_; }
    const std::vector<Dims4>& shapes() const { return shapes_; }
    const std::vector<T>& params() const { return params_; }
    const std::vector<T>& buffers() const { return buffers_; }
    std::uint64_t version() const { return version_; }

    void set_params(std::vector<T> p) {
        if (p.size() != params_.size()) fail(errc::shape_mismatch, "parameter count mismatch");
        params_ = std::move(p);
        ++version_;
    }
    void set_buffers(std::vector<T> b) {
        if (b.size() != buffers_.size()) fail(errc::shape_mismatch, "buffer count mismatch");
        buffers_ = std::move(b);
    }
    /// Mutable access for optimizers; invalidates outstanding caches.
    std::vector<T>& mutable_params() {
        ++version_;
        return params_;
    }

    /// He-style fan-in Gaussian for conv/linear weights, zero biases, unit BN scale.
    void initialize(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        Dims4 in = spec_.input;
        for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
            const auto& l = spec_.layers[i];
            if (l.kind == LayerKind::conv3d || l.kind == LayerKind::linear) {
                const std::size_t fan_in = l.kind == LayerKind::conv3d ? in[0] * l.kernel * l.kernel * l.kernel : numel(in);
                const std::size_t n = l.kind == LayerKind::conv3d ? l.out * fan_in : l.out * fan_in;
                std::normal_distribution<double> d(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
                for (std::size_t k = 0; k < n; ++k) params_[layout_.weight_offset[i] + k] = static_cast<T>(d(rng));
                std::fill_n(params_.begin() + static_cast<long>(layout_.bias_offset[i]), l.out, T(0));
            } else if (l.kind == LayerKind::batchnorm) {
                std::fill_n(params_.begin() + static_cast<long>(layout_.weight_offset[i]), in[0], T(1));
                std::fill_n(params_.begin() + static_cast<long>(layout_.bias_offset[i]), in[0], T(0));
            }
            in = shapes_[i];
        }
        reset_buffers();
        ++version_;
    }

    void reset_buffers() {
        Dims4 in = spec_.input;
        for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
            if (spec_.layers[i].kind == LayerKind::batchnorm) {
                std::fill_n(buffers_.begin() + static_cast<long>(layout_.buffer_offset[i]), in[0], T(0));
                std::fill_n(buffers_.begin() + static_cast<long>(layout_.buffer_offset[i] + in[0]), in[0], T(1));
            }
            in = shapes_[i];
        }
    }

    /// Runs a batch stored contiguously (batch x input volume). Training mode uses batch
    /// statistics for BN (and updates running statistics when `update_stats`) and samples a
    /// dropout mask from `dropout_seed`.
    ForwardCache<T> forward(std::span<const T> input, std::size_t batch, bool training, std::uint64_t dropout_seed = 0,
                            bool update_stats = true) {
        const std::size_t in_n = numel(spec_.input);
        if (batch == 0 || input.size() != batch * in_n)
            fail(errc::shape_mismatch, "input holds " + std::to_string(input.size()) + " values, expected " +
                                           std::to_string(batch) + " x " + std::to_string(in_n));
        for (T v : input)
            if (!std::isfinite(static_cast<double>(v))) fail(errc::non_finite, "non-finite network input");
        if (training && batch < 2 && has_batchnorm())
            fail(errc::invalid_argument, "batch norm in training mode needs a batch of at least 2");

        ForwardCache<T> c;
        c.version = version_;
        c.training = training;
        c.batch = batch;
        const std::size_t L = spec_.layers.size();
        c.acts.resize(L + 1);
        c.aux.resize(L);
        c.inv_std.resize(L);
        c.argmax.resize(L);
        c.acts[0].assign(input.begin(), input.end());
        std::mt19937_64 rng(dropout_seed);

        Dims4 in = spec_.input;
        for (std::size_t i = 0; i < L; ++i) {
            const auto& l = spec_.layers[i];
            const Dims4 out = shapes_[i];
            const std::size_t nin = numel(in), nout = numel(out);
            const std::vector<T>& x = c.acts[i];
            std::vector<T>& y = c.acts[i + 1];
            y.assign(batch * nout, T(0));
            switch (l.kind) {
            case LayerKind::conv3d: {
                const kernels::ConvGeometry g(in, l);
                const T* w = params_.data() + layout_.weight_offset[i];
                const T* b = params_.data() + layout_.bias_offset[i];
                for (std::size_t s = 0; s < batch; ++s)
                    kernels::conv_forward(x.data() + s * nin, w, b, y.data() + s * nout, g, scratch_a_, scratch_b_);
                break;
            }
            case LayerKind::batchnorm: forward_bn(i, in, x, y, c, training, update_stats); break;
            case LayerKind::relu:
                for (std::size_t k = 0; k < y.size(); ++k) y[k] = x[k] > T(0) ? x[k] : T(0);
                break;
            case LayerKind::maxpool: forward_pool(in, out, x, y, c.argmax[i], batch); break;
            case LayerKind::dropout:
                if (!training || l.dropout == 0.0) {
                    y = x;
                } else {
                    std::bernoulli_distribution keep(1.0 - l.dropout);
                    const T scale = static_cast<T>(1.0 / (1.0 - l.dropout));
                    c.aux[i].resize(y.size());
                    for (std::size_t k = 0; k < y.size(); ++k) {
                        c.aux[i][k] = keep(rng) ? scale : T(0);
                        y[k] = x[k] * c.aux[i][k];
                    }
                }
                break;
            case LayerKind::linear: {
                const T* w = params_.data() + layout_.weight_offset[i];
                const T* b = params_.data() + layout_.bias_offset[i];
                for (std::size_t s = 0; s < batch; ++s)
                    for (std::size_t o = 0; o < l.out; ++o)
                        y[s * nout + o] = b[o] + kernels::dot(w + o * nin, x.data() + s * nin, nin);
                break;
            }
            }
            in = out;
        }

        c.logits = c.acts[L];
        c.probs.resize(batch * 2);
        for (std::size_t s = 0; s < batch; ++s) softmax2(&c.logits[2 * s], &c.probs[2 * s]);
        return c;
    }

    /// Mean over the batch of -w[y] * log p[y].
    T loss(const ForwardCache<T>& c, std::span<const int> labels, std::span<const T> class_weights) const {
        check_labels(c, labels, class_weights);
        T total = 0;
        for (std::size_t s = 0; s < c.batch; ++s) {
            const T* z = &c.logits[2 * s];
            const T m = std::max(z[0], z[1]);
            const T lse = m + std::log(std::exp(z[0] - m) + std::exp(z[1] - m));
            total += class_weights[labels[s]] * (lse - z[labels[s]]);
        }
        return total / static_cast<T>(c.batch);
    }

    /// Gradient of `loss` with respect to every parameter, laid out like `params()`.
    std::vector<T> backward(const ForwardCache<T>& c, std::span<const int> labels, std::span<const T> class_weights) {
        if (c.version != version_) fail(errc::stale_cache, "parameters changed since the forward pass");
        if (!c.training) fail(errc::stale_cache, "backward needs a training-mode forward cache");
        check_labels(c, labels, class_weights);

        const std::size_t L = spec_.layers.size();
        const std::size_t batch = c.batch;
        std::vector<T> grad(params_.size(), T(0));

        std::vector<T> dy(batch * 2);
        for (std::size_t s = 0; s < batch; ++s) {
            const T w = class_weights[labels[s]] / static_cast<T>(batch);
            for (int k = 0; k < 2; ++k)
                dy[2 * s + k] = w * (c.probs[2 * s + k] - (k == labels[s] ? T(1) : T(0)));
        }

        for (std::size_t ii = L; ii-- > 0;) {
            const auto& l = spec_.layers[ii];
            const Dims4 in = ii == 0 ? spec_.input : shapes_[ii - 1];
            const Dims4 out = shapes_[ii];
            const std::size_t nin = numel(in), nout = numel(out);
            const std::vector<T>& x = c.acts[ii];
            const bool need_dx = ii > 0;
            std::vector<T> dx(need_dx || l.kind != LayerKind::conv3d ? batch * nin : 0, T(0));
            switch (l.kind) {
            case LayerKind::conv3d: {
                const kernels::ConvGeometry g(in, l);
                const T* w = params_.data() + layout_.weight_offset[ii];
                T* dw = grad.data() + layout_.weight_offset[ii];
                T* db = grad.data() + layout_.bias_offset[ii];
                for (std::size_t s = 0; s < batch; ++s)
                    kernels::conv_backward(x.data() + s * nin, w, dy.data() + s * nout, dw, db,
                                           need_dx ? dx.data() + s * nin : nullptr, g, scratch_a_, scratch_b_, scratch_c_);
                break;
            }
            case LayerKind::batchnorm: backward_bn(ii, in, dy, dx, grad, c); break;
            case LayerKind::relu:
                for (std::size_t k = 0; k < dx.size(); ++k) dx[k] = x[k] > T(0) ? dy[k] : T(0);
                break;
            case LayerKind::maxpool:
                for (std::size_t s = 0; s < batch; ++s)
                    for (std::size_t k = 0; k < nout; ++k) dx[s * nin + c.argmax[ii][s * nout + k]] += dy[s * nout + k];
                break;
            case LayerKind::dropout:
                if (c.aux[ii].empty()) dx = dy;
                else
                    for (std::size_t k = 0; k < dx.size(); ++k) dx[k] = dy[k] * c.aux[ii][k];
                break;
            case LayerKind::linear: {
                const T* w = params_.data() + layout_.weight_offset[ii];
                T* dw = grad.data() + layout_.weight_offset[ii];
                T* db = grad.data() + layout_.bias_offset[ii];
                for (std::size_t s = 0; s < batch; ++s)
                    for (std::size_t o = 0; o < l.out; ++o) {
                        const T g = dy[s * nout + o];
                        db[o] += g;
                        if (g == T(0)) continue;
                        kernels::axpy(dw + o * nin, x.data() + s * nin, g, nin);
                        kernels::axpy(dx.data() + s * nin, w + o * nin, g, nin);
                    }
                break;
            }
            }
            dy = std::move(dx);
        }
        return grad;
    }

private:
    bool has_batchnorm() const {
        return std::any_of(spec_.layers.begin(), spec_.layers.end(),
                           [](const LayerSpec& l) { return l.kind == LayerKind::batchnorm; });
    }

    static void check_labels(const ForwardCache<T>& c, std::span<const int> labels, std::span<const T> w) {
        if (labels.size() != c.batch) fail(errc::shape_mismatch, "one label per sample required");
        if (w.size() != 2) fail(errc::shape_mismatch, "two class weights required");
        for (int y : labels)
            if (y != 0 && y != 1) fail(errc::invalid_argument, "labels must be 0 or 1");
    }

    static void softmax2(const T* z, T* p) {
        const T m = std::max(z[0], z[1]);
        const T e0 = std::exp(z[0] - m), e1 = std::exp(z[1] - m);
        p[0] = e0 / (e0 + e1);
        p[1] = e1 / (e0 + e1);
    }

    void forward_bn(std::size_t i, const Dims4& in, const std::vector<T>& x, std::vector<T>& y, ForwardCache<T>& c,
                    bool training, bool update_stats) {
        const auto& l = spec_.layers[i];
        const std::size_t C = in[0], S = in[1] * in[2] * in[3], B = c.batch;
        const T* gamma = params_.data() + layout_.weight_offset[i];
        const T* beta = params_.data() + layout_.bias_offset[i];
        T* rmean = buffers_.data() + layout_.buffer_offset[i];
        T* rvar = rmean + C;
        const T eps = static_cast<T>(l.bn_eps);
        if (!training) {
            for (std::size_t s = 0; s < B; ++s)
                for (std::size_t ch = 0; ch < C; ++ch) {
                    const T inv = T(1) / std::sqrt(rvar[ch] + eps);
                    const T* xs = x.data() + (s * C + ch) * S;
                    T* ys = y.data() + (s * C + ch) * S;
                    for (std::size_t k = 0; k < S; ++k) ys[k] = gamma[ch] * (xs[k] - rmean[ch]) * inv + beta[ch];
                }
            return;
        }
        auto& xhat = c.aux[i];
        xhat.resize(x.size());
        c.inv_std[i].resize(C);
        const double count = static_cast<double>(B * S);
        for (std::size_t ch = 0; ch < C; ++ch) {
            double sum = 0.0;
            for (std::size_t s = 0; s < B; ++s) {
                const T* xs = x.data() + (s * C + ch) * S;
                for (std::size_t k = 0; k < S; ++k) sum += xs[k];
            }
            const double mean = sum / count;
            double sq = 0.0;
            for (std::size_t s = 0; s < B; ++s) {
                const T* xs = x.data() + (s * C + ch) * S;
                for (std::size_t k = 0; k < S; ++k) sq += (xs[k] - mean) * (xs[k] - mean);
            }
            const double var = sq / count;
            const T inv = static_cast<T>(1.0 / std::sqrt(var + l.bn_eps));
            c.inv_std[i][ch] = inv;
            for (std::size_t s = 0; s < B; ++s) {
                const std::size_t base = (s * C + ch) * S;
                for (std::size_t k = 0; k < S; ++k) {
                    const T h = (x[base + k] - static_cast<T>(mean)) * inv;
                    xhat[base + k] = h;
                    y[base + k] = gamma[ch] * h + beta[ch];
                }
            }
            if (update_stats) {
                const double m = l.bn_momentum;
                const double unbiased = count > 1 ? sq / (count - 1) : var;
                rmean[ch] = static_cast<T>((1 - m) * rmean[ch] + m * mean);
                rvar[ch] = static_cast<T>((1 - m) * rvar[ch] + m * unbiased);
            }
        }
    }

    void backward_bn(std::size_t i, const Dims4& in, const std::vector<T>& dy, std::vector<T>& dx, std::vector<T>& grad,
                     const ForwardCache<T>& c) const {
        const std::size_t C = in[0], S = in[1] * in[2] * in[3], B = c.batch;
        const T* gamma = params_.data() + layout_.weight_offset[i];
        T* dgamma = grad.data() + layout_.weight_offset[i];
        T* dbeta = grad.data() + layout_.bias_offset[i];
        const auto& xhat = c.aux[i];
        const double count = static_cast<double>(B * S);
        for (std::size_t ch = 0; ch < C; ++ch) {
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            for (std::size_t s = 0; s < B; ++s) {
                const std::size_t base = (s * C + ch) * S;
                for (std::size_t k = 0; k < S; ++k) {
                    sum_dy += dy[base + k];
                    sum_dy_xhat += dy[base + k] * xhat[base + k];
                }
            }
            dgamma[ch] += static_cast<T>(sum_dy_xhat);
            dbeta[ch] += static_cast<T>(sum_dy);
            const T scale = gamma[ch] * c.inv_std[i][ch];
            const T mean_dy = static_cast<T>(sum_dy / count), mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
            for (std::size_t s = 0; s < B; ++s) {
                const std::size_t base = (s * C + ch) * S;
                for (std::size_t k = 0; k < S; ++k)
                    dx[base + k] = scale * (dy[base + k] - mean_dy - xhat[base + k] * mean_dy_xhat);
            }
        }
    }

    static void forward_pool(const Dims4& in, const Dims4& out, const std::vector<T>& x, std::vector<T>& y,
                             std::vector<std::uint32_t>& argmax, std::size_t batch) {
        const std::size_t nin = numel(in), nout = numel(out);
        argmax.assign(batch * nout, 0);
        for (std::size_t s = 0; s < batch; ++s)
            for (std::size_t ch = 0; ch < in[0]; ++ch)
                for (std::size_t ox = 0; ox < out[1]; ++ox)
                    for (std::size_t oy = 0; oy < out[2]; ++oy)
                        for (std::size_t oz = 0; oz < out[3]; ++oz) {
                            T best = -std::numeric_limits<T>::infinity();
                            std::size_t best_i = 0;
                            for (std::size_t ix = 2 * ox; ix < std::min(2 * ox + 2, in[1]); ++ix)
                                for (std::size_t iy = 2 * oy; iy < std::min(2 * oy + 2, in[2]); ++iy)
                                    for (std::size_t iz = 2 * oz; iz < std::min(2 * oz + 2, in[3]); ++iz) {
                                        const std::size_t idx = ((ch * in[1] + ix) * in[2] + iy) * in[3] + iz;
                                        const T v = x[s * nin + idx];
                                        if (v > best) {
                                            best = v;
                                            best_i = idx;
                                        }
                                    }
                            const std::size_t o = ((ch * out[1] + ox) * out[2] + oy) * out[3] + oz;
                            y[s * nout + o] = best;
                            argmax[s * nout + o] = static_cast<std::uint32_t>(best_i);
                        }
    }

    NetworkSpec spec_;
    ParamLayout layout_;
    std::vector<Dims4> shapes_;
    std::vector<T> params_;
    std::vector<T> buffers_;
    std::uint64_t version_ = 1;
    std::vector<T> scratch_a_, scratch_b_, scratch_c_;
};

}  // namespace qc::cnn
