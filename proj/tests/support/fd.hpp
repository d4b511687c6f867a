#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace mfnn::testing {

/// Central finite differences of f at x, step h * max(1, |x_i|).
inline std::vector<double> central_differences(const std::function<double(std::span<const double>)>& f,
                                               std::span<const double> x, double h = 1e-6) {
    std::vector<double> p(x.begin(), x.end());
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double step = h * std::max(1.0, std::abs(x[i]));
        p[i] = x[i] + step;
        const double up = f(p);
        p[i] = x[i] - step;
        const double down = f(p);
        p[i] = x[i];
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

/// max_i |a_i - b_i| / max(|a|_inf, |b|_inf, floor): entrywise error
/// relative to the gradient scale.
inline double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12) {
    double scale = floor, err = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
        err = std::max(err, std::abs(a[i] - b[i]));
    }
    return err / scale;
}

} // namespace mfnn::testing
