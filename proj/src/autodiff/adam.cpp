#include "mfnn/autodiff/adam.hpp"

#include <cmath>
#include <string>

#include "mfnn/error.hpp"

namespace mfnn::ad {

void adam_step(AdamState& state, std::span<double> params, std::span<const double> grad) {
    const std::size_t n = params.size();
    if (grad.size() != n || state.m.size() != n || state.v.size() != n) {
        throw Error(ErrorKind::dimension_mismatch, "Adam state, parameters and gradient differ in length");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!std::isfinite(grad[i])) {
            throw Error(ErrorKind::divergence, "non-finite gradient at coordinate " + std::to_string(i));
        }
    }
    const AdamConfig& c = state.config;
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double corr1 = 1.0 - std::pow(c.beta1, t);
    const double corr2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t i = 0; i < n; ++i) {
        state.m[i] = c.beta1 * state.m[i] + (1.0 - c.beta1) * grad[i];
        state.v[i] = c.beta2 * state.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
        const double mhat = state.m[i] / corr1;
        const double vhat = state.v[i] / corr2;
        params[i] -= c.lr * mhat / (std::sqrt(vhat) + c.epsilon);
    }
}

} // namespace mfnn::ad
