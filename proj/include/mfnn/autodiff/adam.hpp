#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mfnn::ad {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    AdamConfig config;
    std::size_t step = 0;
    std::vector<double> m;
    std::vector<double> v;

    AdamState() = default;
    AdamState(std::size_t size, AdamConfig cfg = {}) : config(cfg), m(size, 0.0), v(size, 0.0) {}
};

/// One bias-corrected Adam update in place. A non-finite gradient entry
/// throws numerical-divergence before anything is modified.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grad);

} // namespace mfnn::ad
