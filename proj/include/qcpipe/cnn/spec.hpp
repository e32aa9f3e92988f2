#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "qcpipe/error.hpp"

namespace qc::cnn {

/// (channels, x, y, z). Fully connected activations use (n, 1, 1, 1).
using Dims4 = std::array<std::size_t, 4>;

inline std::size_t numel(const Dims4& d) { return d[0] * d[1] * d[2] * d[3]; }

enum class LayerKind { conv3d, batchnorm, relu, maxpool, dropout, linear };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
    case LayerKind::conv3d: return "conv3d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::dropout: return "dropout";
    case LayerKind::linear: return "linear";
    }
    return "";
}

inline LayerKind parse_layer_kind(const std::string& s) {
    for (auto k : {LayerKind::conv3d, LayerKind::batchnorm, LayerKind::relu, LayerKind::maxpool, LayerKind::dropout,
                   LayerKind::linear})
        if (s == layer_kind_name(k)) return k;
    fail(errc::invalid_argument, "unknown layer kind '" + s + "'");
}

struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    std::size_t out = 0;   // conv output channels or linear width
    std::size_t kernel = 3;  // conv kernel edge; stride is always 1
    std::size_t pad = 1;
    double dropout = 0.5;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;

    static LayerSpec conv(std::size_t channels, std::size_t k = 3, std::size_t p = 1) {
        return {LayerKind::conv3d, channels, k, p};
    }
    static LayerSpec bn() { return {LayerKind::batchnorm}; }
    static LayerSpec relu() { return {LayerKind::relu}; }
    static LayerSpec pool() { return {LayerKind::maxpool}; }
    static LayerSpec drop(double p) {
        LayerSpec l{LayerKind::dropout};
        l.dropout = p;
        return l;
    }
    static LayerSpec fc(std::size_t width) { return {LayerKind::linear, width}; }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NetworkSpec {
    Dims4 input{1, 169, 208, 179};
    std::vector<LayerSpec> layers;

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Output extent of 2x2x2 stride-2 max pooling in ceil mode.
constexpr std::size_t pooled_extent(std::size_t n) { return (n + 1) / 2; }

/// Output shape of every layer, in order. Throws ShapeMismatch on incompatible layers.
inline std::vector<Dims4> propagate_shapes(const NetworkSpec& spec) {
    std::vector<Dims4> out;
    out.reserve(spec.layers.size());
    Dims4 cur = spec.input;
    bool flat = false;
    for (const auto& l : spec.layers) {
        switch (l.kind) {
        case LayerKind::conv3d:
            if (flat) fail(errc::shape_mismatch, "convolution after a fully connected layer");
            if (l.out == 0) fail(errc::shape_mismatch, "convolution with zero channels");
            for (int a = 1; a < 4; ++a) {
                if (cur[a] + 2 * l.pad < l.kernel) fail(errc::shape_mismatch, "convolution kernel larger than input");
                cur[a] = cur[a] + 2 * l.pad - l.kernel + 1;
            }
            cur[0] = l.out;
            break;
        case LayerKind::batchnorm:
            if (flat) fail(errc::shape_mismatch, "batch norm is only supported on volumes");
            break;
        case LayerKind::maxpool:
            if (flat) fail(errc::shape_mismatch, "pooling after a fully connected layer");
            for (int a = 1; a < 4; ++a) cur[a] = pooled_extent(cur[a]);
            break;
        case LayerKind::relu:
        case LayerKind::dropout: break;
        case LayerKind::linear:
            if (l.out == 0) fail(errc::shape_mismatch, "linear layer with zero width");
            cur = {l.out, 1, 1, 1};
            flat = true;
            break;
        }
        out.push_back(cur);
    }
    return out;
}

/// Five Conv+BN+ReLU+MaxPool blocks, dropout, then three fully connected layers (ReLU between).
inline NetworkSpec conv5_fc3(Dims4 input = {1, 169, 208, 179}, std::size_t fc1_width = 1300,
                             std::array<std::size_t, 5> channels = {8, 16, 32, 64, 128}, std::size_t fc2_width = 50,
                             double dropout = 0.5) {
    NetworkSpec s;
    s.input = input;
    for (auto c : channels) {
        s.layers.push_back(LayerSpec::conv(c));
        s.layers.push_back(LayerSpec::bn());
        s.layers.push_back(LayerSpec::relu());
        s.layers.push_back(LayerSpec::pool());
    }
    s.layers.push_back(LayerSpec::drop(dropout));
    s.layers.push_back(LayerSpec::fc(fc1_width));
    s.layers.push_back(LayerSpec::relu());
    s.layers.push_back(LayerSpec::fc(fc2_width));
    s.layers.push_back(LayerSpec::relu());
    s.layers.push_back(LayerSpec::fc(2));
    return s;
}

inline void validate_spec(const NetworkSpec& spec) {
    const auto shapes = propagate_shapes(spec);
    if (shapes.empty() || spec.layers.back().kind != LayerKind::linear || shapes.back()[0] != 2)
        fail(errc::shape_mismatch, "network must end in a linear layer of width 2");
    for (const auto& l : spec.layers)
        if (l.kind == LayerKind::dropout && !(l.dropout >= 0.0 && l.dropout < 1.0))
            fail(errc::invalid_argument, "dropout rate must lie in [0, 1)");
}

inline void to_json(nlohmann::json& j, const LayerSpec& l) {
    j = {{"kind", layer_kind_name(l.kind)}};
    switch (l.kind) {
    case LayerKind::conv3d:
        j["out"] = l.out;
        j["kernel"] = l.kernel;
        j["pad"] = l.pad;
        break;
    case LayerKind::linear: j["out"] = l.out; break;
    case LayerKind::dropout: j["rate"] = l.dropout; break;
    case LayerKind::batchnorm:
        j["momentum"] = l.bn_momentum;
        j["eps"] = l.bn_eps;
        break;
    default: break;
    }
}

inline void from_json(const nlohmann::json& j, LayerSpec& l) {
    l = LayerSpec{parse_layer_kind(j.at("kind").get<std::string>())};
    l.out = j.value("out", std::size_t{0});
    l.kernel = j.value("kernel", std::size_t{3});
    l.pad = j.value("pad", std::size_t{1});
    l.dropout = j.value("rate", 0.5);
    l.bn_momentum = j.value("momentum", 0.1);
    l.bn_eps = j.value("eps", 1e-5);
}

inline void to_json(nlohmann::json& j, const NetworkSpec& s) { j = {{"input", s.input}, {"layers", s.layers}}; }
inline void from_json(const nlohmann::json& j, NetworkSpec& s) {
    s.input = j.at("input").get<Dims4>();
    s.layers = j.at("layers").get<std::vector<LayerSpec>>();
}

}  // namespace qc::cnn
