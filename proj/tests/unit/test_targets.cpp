#include <cmath>

#include "doctest.h"
#include "mfnn/error.hpp"
#include "mfnn/targets.hpp"

using namespace mfnn;

namespace {

const BinDensity& uniform01() {
    static const BinDensity d(BinGrid(0.0, 1.0, 8), std::vector<double>(8, 1.0));
    return d;
}

} // namespace

TEST_CASE("worked values") {
    CHECK(std::abs(eval_target(TargetCase::A, 0.0, uniform01()) - 2.0 / 3.0) <= 1e-12);
    CHECK(std::abs(eval_target(TargetCase::B, 0.5, uniform01()) - 1.0 / 12.0) <= 1e-12);
    CHECK(std::abs(eval_target(TargetCase::C, 0.0, uniform01()) - 7.0 / 6.0) <= 1e-12);
    CHECK(std::abs(eval_target(TargetCase::D, 0.5, uniform01()) - 0.25) <= 1e-12);
    CHECK(std::abs(eval_target(TargetCase::E, 0.5, uniform01()) - 0.5) <= 1e-12);
    const Moments test1{0.3, 0.3 * 0.3 + 0.05 * 0.05};
    CHECK(std::abs(eval_target(TargetCase::A, 0.0, test1) - 0.305) <= 1e-12);
}

TEST_CASE("tags") {
    for (const auto c : {TargetCase::A, TargetCase::B, TargetCase::C, TargetCase::D, TargetCase::E}) {
        CHECK(parse_target(to_string(c)) == c);
    }
    CHECK_THROWS_AS(parse_target("F"), Error);
    CHECK(moment_based(TargetCase::C));
    CHECK_FALSE(moment_based(TargetCase::D));
}

TEST_CASE("cases D and E integrate a density exactly") {
    // Independent oracle: fine midpoint quadrature of |x - y| p(y) and 1{y <= x} p(y).
    Rng rng(21);
    const BinDensity p = random_bin_density(BinGrid(-1.0, 1.0, 13), rng);
    for (const double x : {-1.5, -0.77, 0.0, 0.31, 1.0, 2.2}) {
        double d = 0.0, e = 0.0;
        const int sub = 20000;
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double a = p.grid().edge(k), h = p.grid().width() / sub;
            for (int s = 0; s < sub; ++s) {
                const double y = a + (s + 0.5) * h;
                d += std::abs(x - y) * p.level(k) * h;
                e += (y <= x ? 1.0 : 0.0) * p.level(k) * h;
            }
        }
        CHECK(eval_target(TargetCase::D, x, p) == doctest::Approx(d).epsilon(1e-6));
        CHECK(eval_target(TargetCase::E, x, p) == doctest::Approx(e).epsilon(1e-4));
    }
}

TEST_CASE("expanded forms of B and C match direct sample averages") {
    Rng rng(17);
    std::vector<double> ys(400);
    std::normal_distribution<double> normal(0.1, 0.4);
    for (auto& y : ys) y = normal(rng);
    const EmpiricalSample s(ys);
    for (const double x : {-0.5, 0.2, 1.1}) {
        double b = 0.0, c = 0.0;
        for (const double y : ys) {
            b += (x - y) * (x - y);
            for (const double z : ys) c += (x - y - z) * (x - y - z);
        }
        b /= ys.size();
        c /= double(ys.size()) * double(ys.size());
        CHECK(eval_target(TargetCase::B, x, s) == doctest::Approx(b).epsilon(1e-12));
        CHECK(eval_target(TargetCase::C, x, s) == doctest::Approx(c).epsilon(1e-12));
    }
}

TEST_CASE("sorted sample agrees with the plain sample") {
    Rng rng(3);
    std::vector<double> ys(999);
    std::uniform_real_distribution<double> u(-1.0, 2.0);
    for (auto& y : ys) y = u(rng);
    const EmpiricalSample plain(ys);
    const SortedSample sorted(ys);
    for (const auto c : {TargetCase::A, TargetCase::B, TargetCase::C, TargetCase::D, TargetCase::E}) {
        for (const double x : {-2.0, -0.3, 0.5, ys[10], 1.7, 3.0}) {
            CHECK(eval_target(c, x, sorted) == doctest::Approx(eval_target(c, x, plain)).epsilon(1e-12));
        }
    }
}

TEST_CASE("batched evaluation") {
    Rng rng(6);
    const BinDensity p = random_bin_density(BinGrid(-1.0, 1.0, 30), rng);
    const std::vector<double> xs{-1.2, -0.1, 0.0, 0.4, 0.99};
    std::vector<double> out(xs.size());
    for (const auto c : {TargetCase::A, TargetCase::B, TargetCase::C, TargetCase::D, TargetCase::E}) {
        eval_target_batch(c, xs, p, out);
        for (std::size_t i = 0; i < xs.size(); ++i) CHECK(out[i] == doctest::Approx(eval_target(c, xs[i], p)).epsilon(1e-14));
    }
}

TEST_CASE("test laws") {
    const std::size_t n = 1000000;
    SUBCASE("test 1 mean") {
        Rng rng(1);
        std::vector<double> xs(n);
        TestDistribution(1).sample_into(xs, rng);
        double mean = 0.0;
        for (const double x : xs) mean += x;
        mean /= n;
        CHECK(std::abs(mean - 0.3) <= 3.0 * 0.05 / std::sqrt(double(n)));
    }
    SUBCASE("test 3 mean") {
        Rng rng(2);
        std::vector<double> xs(n);
        TestDistribution(3).sample_into(xs, rng);
        double mean = 0.0, sq = 0.0;
        for (const double x : xs) {
            mean += x;
            sq += x * x;
        }
        mean /= n;
        const double se = std::sqrt((sq / n - mean * mean) / n);
        CHECK(std::abs(mean) <= 4.0 * se);
    }
    SUBCASE("exact moments match the mixtures") {
        for (int which = 1; which <= 3; ++which) {
            for (const auto v : {Test2Variant::bimodal, Test2Variant::literal}) {
                const TestDistribution law(which, v);
                Rng rng(40 + which);
                std::vector<double> xs(n);
                law.sample_into(xs, rng);
                double m1 = 0.0, m2 = 0.0, m4 = 0.0;
                for (const double x : xs) {
                    m1 += x;
                    m2 += x * x;
                    m4 += x * x * x * x;
                }
                m1 /= n;
                m2 /= n;
                m4 /= n;
                const Moments exact = law.exact_moments();
                CHECK(std::abs(m1 - exact.mean) <= 5.0 * std::sqrt((m2 - m1 * m1) / n));
                CHECK(std::abs(m2 - exact.second_moment) <= 5.0 * std::sqrt((m4 - m2 * m2) / n));
            }
        }
    }
    SUBCASE("variants") {
        CHECK(TestDistribution(2, Test2Variant::bimodal).components().size() == 2);
        const auto lit = TestDistribution(2, Test2Variant::literal).exact_moments();
        CHECK(lit.mean == doctest::Approx(-0.25));
        CHECK(lit.variance() == doctest::Approx(0.01));
        CHECK(parse_test2_variant("literal") == Test2Variant::literal);
        CHECK_THROWS_AS(TestDistribution(4), Error);
    }
    SUBCASE("same seed, same sample") {
        Rng a(77), b(77);
        std::vector<double> xa(100), xb(100);
        TestDistribution(3).sample_into(xa, a);
        TestDistribution(3).sample_into(xb, b);
        CHECK(xa == xb);
    }
}
