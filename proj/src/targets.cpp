#include "mfnn/targets.hpp"

#include <algorithm>
#include <cmath>

#include "mfnn/error.hpp"

namespace mfnn {

TargetCase parse_target(const std::string& tag) {
    if (tag == "A") return TargetCase::A;
    if (tag == "B") return TargetCase::B;
    if (tag == "C") return TargetCase::C;
    if (tag == "D") return TargetCase::D;
    if (tag == "E") return TargetCase::E;
    throw Error(ErrorKind::config_invalid, "target must be one of A, B, C, D, E (got '" + tag + "')");
}

std::string to_string(TargetCase c) {
    return std::string(1, static_cast<char>('A' + static_cast<int>(c)));
}

bool moment_based(TargetCase c) noexcept {
    return c == TargetCase::A || c == TargetCase::B || c == TargetCase::C;
}

double eval_target(TargetCase c, double x, const Moments& m) {
    const double mu = m.mean;
    const double m2 = m.second_moment;
    switch (c) {
    case TargetCase::A: return x + mu + 2.0 * (m2 - mu * mu);
    case TargetCase::B: return x * x - 2.0 * x * mu + m2;
    case TargetCase::C: return x * x - 4.0 * x * mu + 2.0 * m2 + 2.0 * mu * mu;
    default: break;
    }
    throw Error(ErrorKind::unsupported_primitive, "case " + to_string(c) + " is not a function of the moments");
}

double eval_target(TargetCase c, double x, const BinDensity& density) {
    if (moment_based(c)) return eval_target(c, x, moments(density));
    const double f = density.cdf(x);
    if (c == TargetCase::E) return f;
    // E|x - X| = x (2F(x) - 1) + E X - 2 int_{y <= x} y p(y) dy.
    const double mean = density.partial_first_moment(density.grid().hi());
    return x * (2.0 * f - 1.0) + mean - 2.0 * density.partial_first_moment(x);
}

double eval_target(TargetCase c, double x, const EmpiricalSample& xs) {
    if (moment_based(c)) return eval_target(c, x, moments(xs));
    double s = 0.0;
    for (const double v : xs.values()) s += c == TargetCase::D ? std::abs(x - v) : (v <= x ? 1.0 : 0.0);
    return s / static_cast<double>(xs.size());
}

void eval_target_batch(TargetCase c, std::span<const double> xs, const BinDensity& density, std::span<double> out) {
    if (out.size() != xs.size()) throw Error(ErrorKind::dimension_mismatch, "target output has the wrong size");
    if (moment_based(c)) {
        const Moments m = moments(density);
        for (std::size_t n = 0; n < xs.size(); ++n) out[n] = eval_target(c, xs[n], m);
    } else {
        for (std::size_t n = 0; n < xs.size(); ++n) out[n] = eval_target(c, xs[n], density);
    }
}

SortedSample::SortedSample(std::span<const double> xs) : sorted_(xs.begin(), xs.end()) {
    if (sorted_.empty()) throw Error(ErrorKind::invalid_domain, "empty sample");
    std::sort(sorted_.begin(), sorted_.end());
    prefix_.resize(sorted_.size() + 1);
    prefix_[0] = 0.0;
    for (std::size_t i = 0; i < sorted_.size(); ++i) prefix_[i + 1] = prefix_[i] + sorted_[i];
    moments_ = mfnn::moments(xs);
}

double SortedSample::cdf(double x) const noexcept {
    const auto k = std::upper_bound(sorted_.begin(), sorted_.end(), x) - sorted_.begin();
    return static_cast<double>(k) / static_cast<double>(sorted_.size());
}

double SortedSample::mean_abs_deviation(double x) const noexcept {
    const auto k = static_cast<std::size_t>(std::upper_bound(sorted_.begin(), sorted_.end(), x) - sorted_.begin());
    const double n = static_cast<double>(sorted_.size());
    const double below = prefix_[k];
    const double above = prefix_.back() - below;
    const double kb = static_cast<double>(k);
    return (x * kb - below + above - x * (n - kb)) / n;
}

double eval_target(TargetCase c, double x, const SortedSample& xs) {
    if (moment_based(c)) return eval_target(c, x, xs.moments());
    return c == TargetCase::D ? xs.mean_abs_deviation(x) : xs.cdf(x);
}

Test2Variant parse_test2_variant(const std::string& name) {
    if (name == "bimodal" || name == "test2_bimodal") return Test2Variant::bimodal;
    if (name == "literal" || name == "test2_literal") return Test2Variant::literal;
    throw Error(ErrorKind::config_invalid, "test2 variant must be bimodal or literal (got '" + name + "')");
}

std::string to_string(Test2Variant v) {
    return v == Test2Variant::bimodal ? "bimodal" : "literal";
}

namespace {
constexpr double kTest2A = 0.25;
constexpr double kTest2B = 0.1;
constexpr double kTest3A = 0.3;
constexpr double kTest3B = 0.07;
} // namespace

TestDistribution::TestDistribution(int which, Test2Variant variant) : which_(which), variant_(variant) {
    switch (which) {
    case 1: components_ = {{1.0, 0.3, 0.05}}; break;
    case 2:
        if (variant == Test2Variant::bimodal) {
            components_ = {{0.5, -kTest2A, kTest2B}, {0.5, kTest2A, kTest2B}};
        } else {
            components_ = {{1.0, -kTest2A, kTest2B}};
        }
        break;
    case 3:
        components_ = {{1.0 / 3.0, -kTest3A, kTest3B}, {1.0 / 3.0, kTest3A, kTest3B}, {1.0 / 3.0, 0.0, kTest3B}};
        break;
    default: throw Error(ErrorKind::config_invalid, "test distribution must be 1, 2 or 3");
    }
}

Moments TestDistribution::exact_moments() const noexcept {
    Moments m;
    for (const auto& c : components_) {
        m.mean += c.weight * c.mean;
        m.second_moment += c.weight * (c.mean * c.mean + c.stddev * c.stddev);
    }
    return m;
}

double TestDistribution::draw(Rng& rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    switch (which_) {
    case 1: return 0.3 + 0.05 * normal(rng);
    case 2: {
        const double p = unif(rng) < 0.5 ? 1.0 : 0.0;
        const double y = normal(rng);
        const double ybar = normal(rng);
        const double other = variant_ == Test2Variant::bimodal ? kTest2A : -kTest2A;
        return p * (-kTest2A + kTest2B * y) + (1.0 - p) * (other + kTest2B * ybar);
    }
    default: {
        const double u = unif(rng);
        const double y = normal(rng);
        const int slot = static_cast<int>(std::floor(3.0 * u));
        return kTest3A * ((slot == 0 ? -1.0 : 0.0) + (slot == 1 ? 1.0 : 0.0)) + kTest3B * y;
    }
    }
}

void TestDistribution::sample_into(std::span<double> out, Rng& rng) const {
    for (auto& v : out) v = draw(rng);
}

EmpiricalSample TestDistribution::sample(std::size_t count, Rng& rng) const {
    std::vector<double> v(count);
    sample_into(v, rng);
    return EmpiricalSample(std::move(v));
}

TestDistribution make_test_distribution(int which, Test2Variant variant) {
    return TestDistribution(which, variant);
}

} // namespace mfnn
