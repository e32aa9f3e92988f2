#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "qcpipe/error.hpp"

namespace qc::cnn {

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<double> m, v;
    std::uint64_t step = 0;
};

/// One bias-corrected Adam update, in place.
template <class T>
void adam_step(std::vector<T>& params, const std::vector<T>& grads, AdamState& state, const AdamConfig& cfg) {
    if (params.size() != grads.size()) fail(errc::shape_mismatch, "parameter and gradient sizes differ");
    if (state.m.empty()) {
        state.m.assign(params.size(), 0.0);
        state.v.assign(params.size(), 0.0);
    }
    if (state.m.size() != params.size()) fail(errc::shape_mismatch, "optimizer state does not match parameters");
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double mhat = state.m[i] / c1;
        const double vhat = state.v[i] / c2;
        params[i] = static_cast<T>(params[i] - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps));
    }
}

}  // namespace qc::cnn
