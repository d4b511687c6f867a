#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mfnn/random.hpp"

namespace mfnn {

/// Uniform partition of [lo, hi] into K half-open bins [x_{k-1}, x_k); the
/// last bin is closed on the right.
class BinGrid {
public:
    BinGrid(double lo, double hi, std::size_t bins);

    double lo() const noexcept { return lo_; }
    double hi() const noexcept { return hi_; }
    std::size_t size() const noexcept { return bins_; }
    double width() const noexcept { return width_; }

    /// Left edge of bin k (0-based) for k < K; edge(K) is exactly hi.
    double edge(std::size_t k) const noexcept;
    double center(std::size_t k) const noexcept;
    std::vector<double> centers() const;

    /// Bin index of Proj_K(x), i.e. x clamped to [lo, hi].
    std::size_t bin_of(double x) const noexcept;

    bool operator==(const BinGrid& other) const noexcept = default;

private:
    double lo_;
    double hi_;
    std::size_t bins_;
    double width_;
};

BinGrid make_grid(double lo, double hi, std::size_t bins);

struct Moments {
    double mean = 0.0;
    double second_moment = 0.0;

    double variance() const noexcept { return second_moment - mean * mean; }
};

/// Piecewise-constant probability density on a BinGrid. Immutable; the CDF
/// and partial first moments at the bin edges are cached at construction.
class BinDensity {
public:
    /// Validates p_k >= 0 and |sum p_k h - 1| <= tolerance.
    BinDensity(BinGrid grid, std::vector<double> levels, double tolerance = 1e-12);

    const BinGrid& grid() const noexcept { return grid_; }
    std::span<const double> levels() const noexcept { return levels_; }
    double level(std::size_t k) const noexcept { return levels_[k]; }
    std::size_t size() const noexcept { return levels_.size(); }

    /// F(x) = mass of (-inf, x].
    double cdf(double x) const noexcept;
    /// int_{-inf}^{x} y p(y) dy.
    double partial_first_moment(double x) const noexcept;
    /// Cumulative mass at the right edge of bins 0..k (size K).
    std::span<const double> cumulative() const noexcept { return cumulative_; }

    double total_mass() const noexcept;

private:
    BinGrid grid_;
    std::vector<double> levels_;
    std::vector<double> cumulative_;
    std::vector<double> cumulative_first_;
};

/// Discrete measure sum_k w_k delta_{x_k} with weights on the simplex.
class QuantizedMeasure {
public:
    QuantizedMeasure(std::vector<double> points, std::vector<double> weights, double tolerance = 1e-12);

    std::span<const double> points() const noexcept { return points_; }
    std::span<const double> weights() const noexcept { return weights_; }
    std::size_t size() const noexcept { return points_.size(); }
    std::span<const double> cumulative() const noexcept { return cumulative_; }

private:
    std::vector<double> points_;
    std::vector<double> weights_;
    std::vector<double> cumulative_;
};

/// N >= 1 i.i.d. draws from some law.
class EmpiricalSample {
public:
    explicit EmpiricalSample(std::vector<double> values);

    std::span<const double> values() const noexcept { return values_; }
    std::size_t size() const noexcept { return values_.size(); }
    double operator[](std::size_t n) const noexcept { return values_[n]; }

private:
    std::vector<double> values_;
};

using PointSampler = std::function<double(Rng&)>;

/// Default law of the random quantization grid: i.i.d. uniform on [lo, hi].
PointSampler uniform_points(double lo, double hi);

/// p_k = e_k / (sum_j e_j h) with e_k i.i.d. standard exponentials.
BinDensity random_bin_density(const BinGrid& grid, Rng& rng);

/// Random points from `point_sampler`, weights e_k / sum_j e_j.
QuantizedMeasure random_quantized(std::size_t points, const PointSampler& point_sampler, Rng& rng);

/// Generalized inverse of the piecewise-linear CDF. A zero-mass bin maps to
/// its left edge.
double inverse_cdf(const BinDensity& density, double u) noexcept;

EmpiricalSample sample(const BinDensity& density, std::size_t count, Rng& rng);
void sample_into(const BinDensity& density, std::span<double> out, Rng& rng);
EmpiricalSample sample(const QuantizedMeasure& measure, std::size_t count, Rng& rng);
void sample_into(const QuantizedMeasure& measure, std::span<double> out, Rng& rng);

/// Histogram estimate p_k = #{n : Proj(X_n) in Bin(k)} / (N h).
BinDensity estimate_bins(const BinGrid& grid, const EmpiricalSample& xs);
BinDensity estimate_bins(const BinGrid& grid, std::span<const double> xs);
/// Same estimate written into `levels` (size K) without validation.
void estimate_bins_into(const BinGrid& grid, std::span<const double> xs, std::span<double> levels);

/// Exact re-projection of a density onto another grid: each target bin
/// receives the mass the source density puts on it.
BinDensity rebin(const BinDensity& density, const BinGrid& target);

Moments moments(const BinDensity& density) noexcept;
Moments moments(const QuantizedMeasure& measure) noexcept;
Moments moments(const EmpiricalSample& xs) noexcept;
Moments moments(std::span<const double> xs) noexcept;

} // namespace mfnn
