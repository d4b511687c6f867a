#include <cmath>

#include "../support/fd.hpp"
#include "doctest.h"
#include "mfnn/error.hpp"
#include "mfnn/training.hpp"

using namespace mfnn;
using mfnn::testing::relative_error;

namespace {

TrainConfig tiny(Arch arch) {
    TrainConfig c;
    c.batch_measures = 2;
    c.samples = 40;
    c.iterations = 12;
    c.eval_every = 5;
    c.heldout = 3;
    c.heldout_samples = 30;
    c.grid = BinGrid(-1.0, 1.0, 8);
    c.arch.arch = arch;
    c.arch.hidden = {6};
    c.arch.inner_hidden = {4};
    c.arch.latent = 3;
    c.arch.outer_hidden = {4};
    c.seed = 13;
    return c;
}

} // namespace

TEST_CASE("batches hold the targets and the exact bins") {
    const BinGrid law(-1.0, 1.0, 20);
    const BinGrid net(-1.0, 1.0, 5);
    Rng rng(1);
    std::vector<BinDensity> d{random_bin_density(law, rng), random_bin_density(law, rng)};
    const MeasureBatch b = make_batch(d, 50, TargetCase::D, &net, [](std::size_t m) { return make_rng(2, {m}); });
    CHECK(b.grouping == ad::Grouping{2, 50});
    for (std::size_t m = 0; m < 2; ++m) {
        const BinDensity coarse = rebin(d[m], net);
        for (std::size_t k = 0; k < 5; ++k) CHECK(b.bins(m, k) == doctest::Approx(coarse.level(k)).epsilon(1e-12));
        Rng again = make_rng(2, {m});
        std::vector<double> xs(50);
        sample_into(d[m], xs, again);
        for (std::size_t n = 0; n < 50; ++n) {
            CHECK(b.samples[m * 50 + n] == xs[n]);
            CHECK(b.targets[m * 50 + n] == doctest::Approx(eval_target(TargetCase::D, xs[n], d[m])).epsilon(1e-14));
        }
    }
}

TEST_CASE("static losses: value and gradient") {
    for (const Arch arch : {Arch::bin, Arch::deeponet, Arch::cylindrical}) {
        const TrainConfig c = tiny(arch);
        Rng rng(3);
        MeanFieldNet net = make_net(c.arch, c.grid, rng);
        std::vector<BinDensity> d{random_bin_density(c.grid, rng), random_bin_density(c.grid, rng)};
        const MeasureBatch b = make_batch(d, 6, TargetCase::A, grid_of(net), [](std::size_t m) { return make_rng(4, {m}); });
        ad::ParameterSet set(components(net));
        const auto vg = ad::value_and_grad(set, [&](ad::Tape& t, std::span<const ad::Var> p) { return batch_loss(t, net, p, b); });
        CHECK(vg.value == doctest::Approx(batch_mse(net, b)).epsilon(1e-12));

        // Loss against an independent per-point evaluation.
        double direct = 0.0;
        for (std::size_t r = 0; r < b.samples.size(); ++r) {
            const std::size_t m = r / 6;
            double y = 0.0;
            if (arch == Arch::bin) {
                y = eval_bin(std::get<BinDensityNet>(net), b.samples[r], d[m])[0];
            } else if (arch == Arch::deeponet) {
                y = eval_deeponet(std::get<DeepOnetNet>(net), b.samples[r], d[m]);
            } else {
                const std::vector<double> own(b.samples.begin() + m * 6, b.samples.begin() + m * 6 + 6);
                y = eval_cyl(std::get<CylindricalNet>(net), b.samples[r], EmpiricalSample(own))[0];
            }
            direct += (y - b.targets[r]) * (y - b.targets[r]);
        }
        CHECK(vg.value == doctest::Approx(direct / b.samples.size()).epsilon(1e-12));

        const std::vector<double> theta = set.gather();
        const auto fd = mfnn::testing::central_differences(
            [&](std::span<const double> x) {
                set.scatter(x);
                const double v = batch_mse(net, b);
                set.scatter(theta);
                return v;
            },
            theta);
        CHECK(relative_error(vg.grad, fd) <= 1e-7);
    }
}

TEST_CASE("zero iterations gives empty histories") {
    TrainConfig c = tiny(Arch::cylindrical);
    c.iterations = 0;
    const TrainResult r = train(c, TargetCase::A);
    CHECK(r.loss_history.empty());
    CHECK(r.heldout_history.empty());
}

TEST_CASE("training is deterministic and records held-out points") {
    for (const Arch arch : {Arch::bin, Arch::cylindrical}) {
        const TrainConfig c = tiny(arch);
        std::vector<double> seen;
        TrainObserver obs;
        obs.on_loss = [&](std::size_t, double l) { seen.push_back(l); };
        const TrainResult a = train(c, TargetCase::B, obs);
        const TrainResult b = train(c, TargetCase::B);
        CHECK(a.loss_history == b.loss_history);
        CHECK(a.heldout_history == b.heldout_history);
        REQUIRE(a.loss_history.size() == 12);
        CHECK(seen.size() == 12);
        std::vector<std::size_t> its;
        for (const auto& h : a.heldout_history) its.push_back(h.iteration);
        CHECK(its == std::vector<std::size_t>{0, 5, 10, 12});
        CHECK(a.heldout_history.back().value == doctest::Approx(heldout_mse(a.net, c, TargetCase::B)).epsilon(1e-12));
        double best = a.heldout_history[0].value;
        std::size_t best_it = 0;
        for (const auto& h : a.heldout_history) {
            if (h.value < best) {
                best = h.value;
                best_it = h.iteration;
            }
        }
        REQUIRE(a.best_net);
        CHECK(a.best_iteration == best_it);
        CHECK(heldout_mse(*a.best_net, c, TargetCase::B) == doctest::Approx(best).epsilon(1e-12));
    }
}

TEST_CASE("fixed pool and law grid options") {
    TrainConfig c = tiny(Arch::bin);
    c.fixed_pool = true;
    c.pool_size = 4;
    c.law_grid = BinGrid(-1.0, 1.0, 16);
    const TrainResult r = train(c, TargetCase::A);
    CHECK(r.loss_history.size() == 12);
    CHECK(heldout_densities(c)[0].size() == 16);
}

TEST_CASE("divergence is reported") {
    TrainConfig c = tiny(Arch::cylindrical);
    c.lr = 1e200;
    std::size_t calls = 0;
    TrainObserver obs;
    obs.on_loss = [&](std::size_t, double) { ++calls; };
    try {
        train(c, TargetCase::A, obs);
        FAIL("expected divergence");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::divergence);
    }
    CHECK(calls >= 1);
}

TEST_CASE("invalid configs") {
    TrainConfig c = tiny(Arch::bin);
    c.samples = 0;
    CHECK_THROWS_AS(train(c, TargetCase::A), Error);
    c = tiny(Arch::bin);
    c.lr = -1.0;
    CHECK_THROWS_AS(train(c, TargetCase::A), Error);
}

TEST_CASE("generalization error against a direct computation") {
    const TrainConfig c = tiny(Arch::cylindrical);
    Rng rng(5);
    const MeanFieldNet net = make_net(c.arch, c.grid, rng);
    const std::size_t n = 200;
    const double got = generalization_error(net, TargetCase::A, 1, n, 99);

    Rng srng = make_rng(99, {stream::test_eval, 1});
    std::vector<double> xs(n);
    TestDistribution(1).sample_into(xs, srng);
    const EmpiricalSample s(xs);
    const Moments exact{0.3, 0.09 + 0.0025};
    double mse = 0.0;
    for (const double x : xs) {
        const double y = eval_cyl(std::get<CylindricalNet>(net), x, s)[0];
        const double v = x + exact.mean + 2.0 * exact.variance();
        mse += (y - v) * (y - v);
    }
    CHECK(got == doctest::Approx(mse / n).epsilon(1e-12));
    CHECK(generalization_error(net, TargetCase::E, 3, 50, 1, {Test2Variant::bimodal, 1000}) >= 0.0);
}
