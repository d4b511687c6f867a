#include <cmath>

#include "../support/fd.hpp"
#include "doctest.h"
#include "mfnn/dynamics.hpp"
#include "mfnn/error.hpp"

using namespace mfnn;
using mfnn::testing::relative_error;

namespace {

std::vector<double> normals(std::size_t n, std::uint64_t seed, double sd) {
    Rng rng(seed);
    std::normal_distribution<double> d(0.0, sd);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

Kernel generic_cos() {
    Kernel k = Kernel::cos();
    k.cosine = false;
    return k;
}

SolverConfig tiny_solver(SolverMode mode, Arch arch) {
    SolverConfig c;
    c.mode = mode;
    c.arch.arch = arch;
    c.arch.hidden = {4};
    c.arch.inner_hidden = {3};
    c.arch.latent = 2;
    c.arch.outer_hidden = {4};
    c.batch_measures = 2;
    c.samples = 8;
    c.iterations = 3;
    c.seed = 5;
    return c;
}

PdeProblem tiny_problem() {
    PdeProblem p;
    p.steps = 2;
    p.grid = BinGrid(-1.3, 1.3, 6);
    return p;
}

} // namespace

TEST_CASE("terminal function and exact solution") {
    PdeProblem p;
    const std::vector<double> xs{0.1, -0.4, 0.7};
    double g = 0.0;
    for (const double y : xs) g += std::cos(0.2 - y);
    g /= 3.0;
    CHECK(terminal_g(p, 0.2, xs) == doctest::Approx(g).epsilon(1e-14));
    CHECK(exact_solution(p, 0.04, 0.2, xs) == doctest::Approx(std::exp(0.06) * g).epsilon(1e-14));
}

TEST_CASE("cosine moments agree with the generic kernel route") {
    PdeProblem fast;
    PdeProblem slow;
    slow.kernel = generic_cos();
    const auto xs = normals(300, 1, 0.4);
    for (const double x : {-1.0, -0.2, 0.0, 0.33, 1.2}) {
        for (const double t : {0.0, 0.05}) {
            CHECK(generator_f(fast, t, x, xs, 0.7) == doctest::Approx(generator_f(slow, t, x, xs, 0.7)).epsilon(1e-12));
        }
        CHECK(terminal_g(fast, x, xs) == doctest::Approx(terminal_g(slow, x, xs)).epsilon(1e-13));
    }
    const ad::Grouping g{3, 100};
    std::vector<double> a(300), b(300);
    generator_base_batch(fast, 0.02, g, xs, 100, xs, a);
    reference::generator_base_batch(fast, 0.02, g, xs, 100, xs, b);
    CHECK(relative_error(a, b) <= 1e-12);
}

TEST_CASE("generator closed form") {
    // f(t, x, mu, y) written out term by term for a two-point measure.
    PdeProblem p;
    const std::vector<double> xs{0.25, -0.5};
    const double x = 0.1, t = 0.03, y = 0.4, e = std::exp(p.T - t);
    double lin = 0.0, g = 0.0;
    for (const double xi : xs) {
        const double u = x - xi;
        lin += (1 + p.sigma * p.sigma) * std::cos(u) - p.kappa * u * std::sin(u);
        g += std::cos(u);
    }
    lin /= 2.0;
    g /= 2.0;
    const double f = e * lin - p.a * (e * g) * (e * g) + p.a * y * y;
    CHECK(generator_f(p, t, x, xs, y) == doctest::Approx(f).epsilon(1e-14));
}

TEST_CASE("Euler step") {
    PdeProblem p;
    const ad::Grouping g{4, 2500};
    auto x = normals(g.rows(), 2, 0.3);
    const auto dw = normals(g.rows(), 3, std::sqrt(p.dt()));
    auto y = x;
    euler_step(p, g, x, dw);
    reference::euler_step(p, g, y, dw);
    CHECK(relative_error(x, y) <= 1e-14);

    // Hand computation for one cloud.
    std::vector<double> c{0.0, 1.0, 2.0};
    const std::vector<double> d{0.1, 0.0, -0.1};
    euler_step(p, ad::Grouping{1, 3}, c, d);
    CHECK(c[0] == doctest::Approx(0.0 + p.kappa * 1.0 * p.dt() + p.sigma * 0.1));
    CHECK(c[2] == doctest::Approx(2.0 - p.kappa * 1.0 * p.dt() - p.sigma * 0.1));
}

TEST_CASE("local batch at the last step uses the terminal function") {
    const PdeProblem p = tiny_problem();
    const SolverConfig c = tiny_solver(SolverMode::local_regression, Arch::cylindrical);
    const LocalBatch b = make_local_batch(p, c, 1, 0, nullptr, nullptr);
    auto moved = b.x;
    reference::euler_step(p, b.grouping, moved, b.dw);
    for (std::size_t m = 0; m < 2; ++m) {
        const std::span<const double> cloud(moved.data() + m * 8, 8);
        const std::span<const double> here(b.x.data() + m * 8, 8);
        for (std::size_t n = 0; n < 8; ++n) {
            CHECK(b.next_value[m * 8 + n] == doctest::Approx(terminal_g(p, moved[m * 8 + n], cloud)).epsilon(1e-12));
            CHECK(b.f_base[m * 8 + n] ==
                  doctest::Approx(generator_f(p, p.time(1), b.x[m * 8 + n], here, 0.0)).epsilon(1e-12));
        }
    }
    const LocalBatch again = make_local_batch(p, c, 1, 0, nullptr, nullptr);
    CHECK(again.x == b.x);
    CHECK(again.dw == b.dw);
}

TEST_CASE("local and global losses: gradients") {
    const PdeProblem p = tiny_problem();
    for (const Arch arch : {Arch::bin, Arch::cylindrical}) {
        SolverConfig c = tiny_solver(SolverMode::local_bsde, arch);
        Rng rng(7);
        ArchitectureConfig a1 = c.arch, a2 = c.arch;
        a2.state_dim = 2;
        MeanFieldNet u = make_net(a1, p.grid, rng);
        MeanFieldNet z = make_net(a1, p.grid, rng);
        MeanFieldNet zt = make_net(a2, p.grid, rng);
        MeanFieldNet ut = make_net(a2, p.grid, rng);
        MeanFieldNet next = make_net(a1, p.grid, rng);

        const LocalBatch lb = make_local_batch(p, c, 0, 0, &next, grid_of(u));
        const GlobalBatch gb = make_global_batch(p, c, 0, grid_of(u));

        auto check = [&](std::vector<ad::Mlp*> nets, std::size_t nu, auto&& loss) {
            ad::ParameterSet set(nets);
            const auto vg = ad::value_and_grad(set, loss);
            const std::vector<double> theta = set.gather();
            const auto fd = mfnn::testing::central_differences(
                [&](std::span<const double> x) {
                    set.scatter(x);
                    ad::Tape t;
                    std::vector<ad::Var> params;
                    for (std::size_t i = 0; i < set.count(); ++i) {
                        const auto s = set.net(i).params();
                        params.push_back(t.constant(ad::Tensor(s.size(), 1, std::vector<double>(s.begin(), s.end()))));
                    }
                    const double v = t.scalar(loss(t, params));
                    set.scatter(theta);
                    return v;
                },
                theta);
            (void)nu;
            CHECK(relative_error(vg.grad, fd) <= 1e-7);
        };
        auto join = [](MeanFieldNet& a, MeanFieldNet* b) {
            auto v = components(a);
            if (b) {
                for (auto* m : components(*b)) v.push_back(m);
            }
            return v;
        };
        const std::size_t nu = components(u).size();
        check(join(u, nullptr), nu, [&](ad::Tape& t, std::span<const ad::Var> q) {
            return local_loss(t, p, u, q, nullptr, {}, lb);
        });
        check(join(u, &z), nu, [&](ad::Tape& t, std::span<const ad::Var> q) {
            return local_loss(t, p, u, q.subspan(0, nu), &z, q.subspan(nu), lb);
        });
        check(join(ut, nullptr), nu, [&](ad::Tape& t, std::span<const ad::Var> q) {
            return global_regression_loss(t, p, ut, q, gb);
        });
        check(join(u, &zt), nu, [&](ad::Tape& t, std::span<const ad::Var> q) {
            return global_bsde_loss(t, p, u, q.subspan(0, nu), zt, q.subspan(nu), gb);
        });
    }
}

TEST_CASE("local regression loss against a direct computation") {
    const PdeProblem p = tiny_problem();
    const SolverConfig c = tiny_solver(SolverMode::local_regression, Arch::cylindrical);
    Rng rng(9);
    const MeanFieldNet u = make_net(c.arch, p.grid, rng);
    const LocalBatch b = make_local_batch(p, c, 1, 2, nullptr, nullptr);
    ad::Tape t;
    const double loss = t.scalar(local_loss(t, p, u, constant_params(t, u), nullptr, {}, b));
    double direct = 0.0;
    for (std::size_t r = 0; r < b.x.size(); ++r) {
        const std::size_t m = r / 8;
        const std::vector<double> own(b.x.begin() + m * 8, b.x.begin() + m * 8 + 8);
        const double uv = eval_cyl(std::get<CylindricalNet>(u), b.x[r], EmpiricalSample(own))[0];
        const double res = b.next_value[r] - uv + (b.f_base[r] + p.a * uv * uv) * p.dt();
        direct += res * res;
    }
    CHECK(loss == doctest::Approx(direct / b.x.size()).epsilon(1e-12));
}

TEST_CASE("solvers are deterministic") {
    const PdeProblem p = tiny_problem();
    for (const auto mode : {SolverMode::local_regression, SolverMode::local_bsde, SolverMode::global_regression,
                            SolverMode::global_bsde}) {
        const SolverConfig c = tiny_solver(mode, Arch::cylindrical);
        std::vector<double> losses;
        SolveObserver obs;
        obs.on_loss = [&](std::size_t, std::size_t, double l) { losses.push_back(l); };
        const PdeSolution a = solve(p, c, obs);
        const PdeSolution b = solve(p, c);
        CHECK(a.u.size() == (is_local(mode) ? 2u : 1u));
        CHECK(a.z.size() == (uses_z(mode) ? (is_local(mode) ? 2u : 1u) : 0u));
        CHECK(losses.size() == (is_local(mode) ? 6u : 3u));
        for (std::size_t i = 0; i < a.u.size(); ++i) {
            const auto pa = components(a.u[i]);
            const auto pb = components(b.u[i]);
            for (std::size_t k = 0; k < pa.size(); ++k) {
                CHECK(std::equal(pa[k]->params().begin(), pa[k]->params().end(), pb[k]->params().begin()));
            }
        }
        const std::vector<std::size_t> steps{0, 1, 2};
        const auto ma = evaluate_pde_mse(a, 1, steps, 50, 3);
        const auto mb = evaluate_pde_mse(b, 1, steps, 50, 3);
        REQUIRE(ma.size() == 3);
        for (std::size_t i = 0; i < 3; ++i) CHECK(ma[i].mse == mb[i].mse);
        if (is_local(mode)) CHECK(ma[2].mse == 0.0);
    }
}

TEST_CASE("warm start copies the later step") {
    const PdeProblem p = tiny_problem();
    SolverConfig c = tiny_solver(SolverMode::local_regression, Arch::bin);
    c.iterations = 0;
    const PdeSolution s = solve(p, c);
    CHECK(std::equal(components(s.u[0])[0]->params().begin(), components(s.u[0])[0]->params().end(),
                     components(s.u[1])[0]->params().begin()));
    c.warm_start = false;
    const PdeSolution cold = solve(p, c);
    CHECK_FALSE(std::equal(components(cold.u[0])[0]->params().begin(), components(cold.u[0])[0]->params().end(),
                           components(cold.u[1])[0]->params().begin()));
}

TEST_CASE("exact evaluator has zero error") {
    PdeProblem p;
    auto ev = make_exact_evaluator(p);
    const std::vector<std::size_t> steps{0, 3, 10};
    for (const auto& r : evaluate_pde_mse(p, *ev, 2, steps, 200, 1)) CHECK(r.mse <= 1e-28);
    CHECK_THROWS_AS(evaluate_pde_mse(p, *ev, 1, std::vector<std::size_t>{11}, 10, 1), Error);
}

TEST_CASE("conditional residual estimator is the mean of the Monte-Carlo one") {
    PdeProblem p;
    p.steps = 1;
    const std::size_t n = 6;
    const double cond = martingale_residual(p, n, 4, ResidualEstimator::conditional).per_step[0];
    const int reps = 20000;
    double sum = 0.0, sq = 0.0;
    // Same initial cloud, many independent Brownian increments.
    Rng cloud_rng = make_rng(4, {stream::residual, 0});
    std::vector<double> x(n);
    TestDistribution(1).sample_into(x, cloud_rng);
    double v0 = 0.0, f0 = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        v0 += exact_solution(p, 0.0, x[k], x);
        f0 += generator_f(p, 0.0, x[k], x, exact_solution(p, 0.0, x[k], x));
    }
    v0 /= n;
    f0 /= n;
    Rng noise(123);
    std::normal_distribution<double> normal(0.0, std::sqrt(p.dt()));
    for (int r = 0; r < reps; ++r) {
        std::vector<double> y = x, dw(n);
        for (auto& d : dw) d = normal(noise);
        reference::euler_step(p, ad::Grouping{1, n}, y, dw);
        double v1 = 0.0;
        for (std::size_t k = 0; k < n; ++k) v1 += exact_solution(p, p.T, y[k], y);
        const double res = v1 / n - v0 + f0 * p.dt();
        sum += res;
        sq += res * res;
    }
    const double mean = sum / reps;
    const double se = std::sqrt((sq / reps - mean * mean) / reps);
    CHECK(std::abs(mean - cond) <= 4.0 * se);
}

TEST_CASE("residual of the exact solution shrinks with the step") {
    PdeProblem p;
    p.steps = 5;
    const double coarse = martingale_residual(p, 20000, 1).total;
    p.steps = 40;
    const double fine = martingale_residual(p, 20000, 1).total;
    CHECK(fine < coarse);
    const double flipped = martingale_residual(p, 20000, 1, ResidualEstimator::conditional, -1.0).total;
    CHECK(flipped > 10.0 * fine);
}
