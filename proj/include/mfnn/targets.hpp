#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mfnn/measures.hpp"

namespace mfnn {

/// A: x + mean + 2 Var            B: E (x - X)^2
/// C: E (x - X - X')^2            D: E |x - X|
/// E: P(X <= x)
enum class TargetCase { A, B, C, D, E };

TargetCase parse_target(const std::string& tag);
std::string to_string(TargetCase c);
/// Cases A to C depend on the measure only through its first two moments.
bool moment_based(TargetCase c) noexcept;

double eval_target(TargetCase c, double x, const Moments& m);
double eval_target(TargetCase c, double x, const BinDensity& density);
double eval_target(TargetCase c, double x, const EmpiricalSample& xs);

/// Sorted copy of a sample with prefix sums: O(log N) evaluation of the
/// empirical CDF and of E|x - X|.
class SortedSample {
public:
    explicit SortedSample(std::span<const double> xs);

    std::size_t size() const noexcept { return sorted_.size(); }
    const Moments& moments() const noexcept { return moments_; }
    /// Fraction of samples <= x.
    double cdf(double x) const noexcept;
    double mean_abs_deviation(double x) const noexcept;

private:
    std::vector<double> sorted_;
    std::vector<double> prefix_;
    Moments moments_;
};

double eval_target(TargetCase c, double x, const SortedSample& xs);

/// out[n] = V(xs[n], density).
void eval_target_batch(TargetCase c, std::span<const double> xs, const BinDensity& density, std::span<double> out);

enum class Test2Variant { bimodal, literal };

Test2Variant parse_test2_variant(const std::string& name);
std::string to_string(Test2Variant v);

struct GaussianComponent {
    double weight;
    double mean;
    double stddev;
};

/// The three test laws. `draw` follows the stated constructions literally;
/// `components` is the equivalent Gaussian mixture.
class TestDistribution {
public:
    TestDistribution(int which, Test2Variant variant = Test2Variant::bimodal);

    int which() const noexcept { return which_; }
    Test2Variant variant() const noexcept { return variant_; }
    const std::vector<GaussianComponent>& components() const noexcept { return components_; }
    Moments exact_moments() const noexcept;

    double draw(Rng& rng) const;
    EmpiricalSample sample(std::size_t count, Rng& rng) const;
    void sample_into(std::span<double> out, Rng& rng) const;

private:
    int which_;
    Test2Variant variant_;
    std::vector<GaussianComponent> components_;
};

TestDistribution make_test_distribution(int which, Test2Variant variant = Test2Variant::bimodal);

} // namespace mfnn
