#include "mfnn/measures.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mfnn/error.hpp"

namespace mfnn {

BinGrid::BinGrid(double lo, double hi, std::size_t bins) : lo_(lo), hi_(hi), bins_(bins), width_(0.0) {
    if (!(std::isfinite(lo) && std::isfinite(hi)) || !(hi > lo)) {
        throw Error(ErrorKind::invalid_domain, "bin grid needs hi > lo");
    }
    if (bins == 0) {
        throw Error(ErrorKind::invalid_domain, "bin grid needs at least one bin");
    }
    width_ = (hi - lo) / static_cast<double>(bins);
}

double BinGrid::edge(std::size_t k) const noexcept {
    if (k >= bins_) return hi_;
    return lo_ + static_cast<double>(k) * width_;
}

double BinGrid::center(std::size_t k) const noexcept {
    return lo_ + (static_cast<double>(k) + 0.5) * width_;
}

std::vector<double> BinGrid::centers() const {
    std::vector<double> out(bins_);
    for (std::size_t k = 0; k < bins_; ++k) out[k] = center(k);
    return out;
}

std::size_t BinGrid::bin_of(double x) const noexcept {
    const double clamped = std::clamp(x, lo_, hi_);
    const double pos = std::floor((clamped - lo_) / width_);
    if (!(pos > 0.0)) return 0;
    const auto k = static_cast<std::size_t>(pos);
    return k >= bins_ ? bins_ - 1 : k;
}

BinGrid make_grid(double lo, double hi, std::size_t bins) {
    return BinGrid(lo, hi, bins);
}

BinDensity::BinDensity(BinGrid grid, std::vector<double> levels, double tolerance)
    : grid_(grid), levels_(std::move(levels)) {
    if (levels_.size() != grid_.size()) {
        throw Error(ErrorKind::dimension_mismatch,
                    "bin density has " + std::to_string(levels_.size()) + " levels for a grid of " +
                        std::to_string(grid_.size()) + " bins");
    }
    const double h = grid_.width();
    cumulative_.resize(levels_.size());
    cumulative_first_.resize(levels_.size());
    double mass = 0.0;
    double first = 0.0;
    for (std::size_t k = 0; k < levels_.size(); ++k) {
        const double p = levels_[k];
        if (!(p >= 0.0) || !std::isfinite(p)) {
            throw Error(ErrorKind::invalid_domain, "bin density level " + std::to_string(k) + " is negative or not finite");
        }
        mass += p * h;
        first += p * h * grid_.center(k);
        cumulative_[k] = mass;
        cumulative_first_[k] = first;
    }
    if (std::abs(mass - 1.0) > tolerance) {
        throw Error(ErrorKind::invalid_domain, "bin density mass is " + std::to_string(mass) + ", expected 1");
    }
}

double BinDensity::total_mass() const noexcept {
    return cumulative_.back();
}

double BinDensity::cdf(double x) const noexcept {
    if (x < grid_.lo()) return 0.0;
    if (x >= grid_.hi()) return 1.0;
    const std::size_t k = grid_.bin_of(x);
    const double before = k == 0 ? 0.0 : cumulative_[k - 1];
    return before + levels_[k] * (x - grid_.edge(k));
}

double BinDensity::partial_first_moment(double x) const noexcept {
    if (x < grid_.lo()) return 0.0;
    if (x >= grid_.hi()) return cumulative_first_.back();
    const std::size_t k = grid_.bin_of(x);
    const double before = k == 0 ? 0.0 : cumulative_first_[k - 1];
    const double left = grid_.edge(k);
    return before + 0.5 * levels_[k] * (x * x - left * left);
}

QuantizedMeasure::QuantizedMeasure(std::vector<double> points, std::vector<double> weights, double tolerance)
    : points_(std::move(points)), weights_(std::move(weights)) {
    if (points_.empty() || points_.size() != weights_.size()) {
        throw Error(ErrorKind::dimension_mismatch, "quantized measure needs as many weights as points (>= 1)");
    }
    cumulative_.resize(weights_.size());
    double total = 0.0;
    for (std::size_t k = 0; k < weights_.size(); ++k) {
        if (!(weights_[k] >= 0.0) || !std::isfinite(weights_[k])) {
            throw Error(ErrorKind::invalid_domain, "quantized weight is negative or not finite");
        }
        total += weights_[k];
        cumulative_[k] = total;
    }
    if (std::abs(total - 1.0) > tolerance) {
        throw Error(ErrorKind::invalid_domain, "quantized weights sum to " + std::to_string(total));
    }
}

EmpiricalSample::EmpiricalSample(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) {
        throw Error(ErrorKind::invalid_domain, "empirical sample needs N >= 1");
    }
}

PointSampler uniform_points(double lo, double hi) {
    return [lo, hi](Rng& rng) {
        std::uniform_real_distribution<double> u(lo, hi);
        return u(rng);
    };
}

BinDensity random_bin_density(const BinGrid& grid, Rng& rng) {
    std::exponential_distribution<double> expo(1.0);
    std::vector<double> e(grid.size());
    double total = 0.0;
    for (auto& v : e) {
        v = expo(rng);
        total += v;
    }
    const double norm = 1.0 / (total * grid.width());
    for (auto& v : e) v *= norm;
    // Rounding of the normalization is far below the default tolerance.
    return BinDensity(grid, std::move(e));
}

QuantizedMeasure random_quantized(std::size_t points, const PointSampler& point_sampler, Rng& rng) {
    if (points == 0) {
        throw Error(ErrorKind::invalid_domain, "quantized measure needs K >= 1");
    }
    std::vector<double> x(points);
    for (auto& v : x) v = point_sampler(rng);
    std::exponential_distribution<double> expo(1.0);
    std::vector<double> w(points);
    double total = 0.0;
    for (auto& v : w) {
        v = expo(rng);
        total += v;
    }
    for (auto& v : w) v /= total;
    return QuantizedMeasure(std::move(x), std::move(w));
}

double inverse_cdf(const BinDensity& density, double u) noexcept {
    const BinGrid& grid = density.grid();
    if (u >= 1.0) return grid.hi();
    const auto cum = density.cumulative();
    // k_u = first bin whose cumulative mass reaches u.
    auto it = std::lower_bound(cum.begin(), cum.end(), u);
    std::size_t k = it == cum.end() ? cum.size() - 1 : static_cast<std::size_t>(it - cum.begin());
    const double before = k == 0 ? 0.0 : cum[k - 1];
    const double left = grid.edge(k);
    const double p = density.level(k);
    if (!(p > 0.0)) return left;
    const double x = left + (u - before) / p;
    return std::clamp(x, left, grid.edge(k + 1));
}

void sample_into(const BinDensity& density, std::span<double> out, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (auto& v : out) v = inverse_cdf(density, unif(rng));
}

EmpiricalSample sample(const BinDensity& density, std::size_t count, Rng& rng) {
    std::vector<double> out(count);
    sample_into(density, out, rng);
    return EmpiricalSample(std::move(out));
}

void sample_into(const QuantizedMeasure& measure, std::span<double> out, Rng& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const auto cum = measure.cumulative();
    const auto pts = measure.points();
    for (auto& v : out) {
        const double u = unif(rng);
        auto it = std::upper_bound(cum.begin(), cum.end(), u);
        std::size_t k = it == cum.end() ? cum.size() - 1 : static_cast<std::size_t>(it - cum.begin());
        v = pts[k];
    }
}

EmpiricalSample sample(const QuantizedMeasure& measure, std::size_t count, Rng& rng) {
    std::vector<double> out(count);
    sample_into(measure, out, rng);
    return EmpiricalSample(std::move(out));
}

void estimate_bins_into(const BinGrid& grid, std::span<const double> xs, std::span<double> levels) {
    if (levels.size() != grid.size()) {
        throw Error(ErrorKind::dimension_mismatch, "estimate_bins output has the wrong size");
    }
    if (xs.empty()) {
        throw Error(ErrorKind::invalid_domain, "estimate_bins needs N >= 1");
    }
    std::fill(levels.begin(), levels.end(), 0.0);
    for (const double x : xs) levels[grid.bin_of(x)] += 1.0;
    const double scale = 1.0 / (static_cast<double>(xs.size()) * grid.width());
    for (auto& v : levels) v *= scale;
}

BinDensity estimate_bins(const BinGrid& grid, std::span<const double> xs) {
    std::vector<double> levels(grid.size());
    estimate_bins_into(grid, xs, levels);
    return BinDensity(grid, std::move(levels));
}

BinDensity estimate_bins(const BinGrid& grid, const EmpiricalSample& xs) {
    return estimate_bins(grid, xs.values());
}

BinDensity rebin(const BinDensity& density, const BinGrid& target) {
    std::vector<double> levels(target.size());
    for (std::size_t k = 0; k < target.size(); ++k) {
        const double a = target.edge(k);
        const double b = target.edge(k + 1);
        const double mass = density.cdf(b) - (a <= density.grid().lo() ? 0.0 : density.cdf(a));
        levels[k] = std::max(mass, 0.0) / target.width();
    }
    // Mass outside the target domain is dropped; renormalize what remains.
    double total = 0.0;
    for (const double p : levels) total += p * target.width();
    if (!(total > 0.0)) {
        throw Error(ErrorKind::invalid_domain, "rebin target grid carries no mass");
    }
    for (auto& p : levels) p /= total;
    return BinDensity(target, std::move(levels), 1e-9);
}

Moments moments(const BinDensity& density) noexcept {
    const BinGrid& grid = density.grid();
    const double h = grid.width();
    Moments m;
    for (std::size_t k = 0; k < density.size(); ++k) {
        const double p = density.level(k);
        const double c = grid.center(k);
        m.mean += p * h * c;
        m.second_moment += p * (h * c * c + h * h * h / 12.0);
    }
    return m;
}

Moments moments(const QuantizedMeasure& measure) noexcept {
    Moments m;
    const auto x = measure.points();
    const auto w = measure.weights();
    for (std::size_t k = 0; k < x.size(); ++k) {
        m.mean += w[k] * x[k];
        m.second_moment += w[k] * x[k] * x[k];
    }
    return m;
}

Moments moments(std::span<const double> xs) noexcept {
    Moments m;
    for (const double x : xs) {
        m.mean += x;
        m.second_moment += x * x;
    }
    const double n = static_cast<double>(xs.size());
    m.mean /= n;
    m.second_moment /= n;
    return m;
}

Moments moments(const EmpiricalSample& xs) noexcept {
    return moments(xs.values());
}

} // namespace mfnn
