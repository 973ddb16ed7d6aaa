#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "thermocast/error.hpp"
#include "thermocast/tensor.hpp"

namespace thermocast::ad {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::size_t step = 0;
};

/// One bias-corrected Adam update of `params` in place.
inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
                      const AdamConfig& cfg) {
    if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient counts differ");
    if (state.m.empty()) {
        for (const Tensor* p : params) {
            state.m.emplace_back(p->shape());
            state.v.emplace_back(p->shape());
        }
    }
    if (state.m.size() != params.size()) throw ShapeError("adam_step: state does not match parameters");
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& p = *params[k];
        const Tensor& g = grads[k];
        if (g.shape() != p.shape() || state.m[k].shape() != p.shape())
            throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(k));
        Tensor& m = state.m[k];
        Tensor& v = state.v[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            p[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
        }
    }
}

}  // namespace thermocast::ad
