#include <cmath>
#include <sstream>

#include "../support/fd.hpp"
#include "doctest.h"
#include "mfnn/error.hpp"
#include "mfnn/networks.hpp"

using namespace mfnn;
using mfnn::testing::relative_error;

namespace {

ArchitectureConfig small(Arch arch) {
    ArchitectureConfig c;
    c.arch = arch;
    c.hidden = {5, 4};
    c.inner_hidden = {3};
    c.latent = 4;
    c.outer_hidden = {4};
    c.deeponet_width = 3;
    return c;
}

std::vector<double> uniform_points(std::size_t n, std::uint64_t seed, double lo, double hi) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

} // namespace

TEST_CASE("default architectures") {
    Rng rng(1);
    const BinGrid grid(-1.0, 1.0, 100);
    ArchitectureConfig c;
    c.arch = Arch::bin;
    const MeanFieldNet bin = make_net(c, grid, rng);
    CHECK(components(bin)[0]->params().size() == (1 + 100 + 1) * 20 + 21 * 20 + 21 * 20 + 21);
    c.arch = Arch::cylindrical;
    const MeanFieldNet cyl = make_net(c, grid, rng);
    CHECK(components(cyl).size() == 2);
    CHECK(components(cyl)[0]->spec() == ad::MlpSpec{1, {20}, 20, ad::Activation::tanh});
    CHECK(components(cyl)[1]->spec() == ad::MlpSpec{21, {10, 10}, 1, ad::Activation::tanh});
    c.arch = Arch::deeponet;
    const MeanFieldNet don = make_net(c, grid, rng);
    CHECK(components(don)[0]->spec().input_dim == 100);
    CHECK(components(don)[1]->spec().output_dim == 20);
    CHECK(arch_of(don) == Arch::deeponet);
    CHECK(parse_arch("cylindrical") == Arch::cylindrical);
    CHECK_THROWS_AS(parse_arch("transformer"), Error);
}

TEST_CASE("batched apply agrees with single-point evaluation") {
    const BinGrid grid(-1.0, 1.0, 6);
    const ad::Grouping query{2, 5};
    const auto xs = uniform_points(query.rows(), 3, -1.2, 1.2);
    Rng drng(4);
    const std::vector<BinDensity> dens{random_bin_density(grid, drng), random_bin_density(grid, drng)};
    ad::Tensor bins(2, grid.size());
    for (std::size_t m = 0; m < 2; ++m) {
        for (std::size_t k = 0; k < grid.size(); ++k) bins(m, k) = dens[m].level(k);
    }
    const ad::Grouping measure{2, 7};
    const auto samples = uniform_points(measure.rows(), 5, -1.0, 1.0);

    for (const Arch arch : {Arch::bin, Arch::deeponet, Arch::cylindrical}) {
        Rng rng(10 + static_cast<int>(arch));
        const MeanFieldNet net = make_net(small(arch), grid, rng);
        const auto out = evaluate(net, ad::Tensor(query.rows(), 1, xs), query, measure, samples, bins);
        for (std::size_t r = 0; r < query.rows(); ++r) {
            const std::size_t m = query.group_of(r);
            double expected = 0.0;
            if (arch == Arch::bin) {
                expected = eval_bin(std::get<BinDensityNet>(net), xs[r], dens[m])[0];
            } else if (arch == Arch::deeponet) {
                expected = eval_deeponet(std::get<DeepOnetNet>(net), xs[r], dens[m]);
            } else {
                const auto& cyl = std::get<CylindricalNet>(net);
                const std::vector<double> own(samples.begin() + m * 7, samples.begin() + m * 7 + 7);
                expected = eval_cyl(cyl, xs[r], EmpiricalSample(own))[0];
                // Independent composition from the component MLPs.
                const double manual = eval_cylindrical(
                    [&](double y) { return cyl.inner.forward(std::vector<double>{y}); },
                    [&](double x, const std::vector<double>& z) {
                        std::vector<double> in{x};
                        in.insert(in.end(), z.begin(), z.end());
                        return cyl.outer.forward(in)[0];
                    },
                    xs[r], own);
                CHECK(expected == doctest::Approx(manual).epsilon(1e-13));
            }
            CHECK(out[r] == doctest::Approx(expected).epsilon(1e-12));
        }
    }
}

TEST_CASE("apply gradients match finite differences") {
    const BinGrid grid(-1.0, 1.0, 4);
    const ad::Grouping g{2, 3};
    const auto xs = uniform_points(g.rows(), 8, -1.0, 1.0);
    const auto target = uniform_points(g.rows(), 9, -0.5, 0.5);
    ad::Tensor bins(2, 4, {0.3, 0.7, 0.5, 0.5, 0.2, 0.4, 0.5, 0.4});
    for (const Arch arch : {Arch::bin, Arch::deeponet, Arch::cylindrical}) {
        Rng rng(20 + static_cast<int>(arch));
        MeanFieldNet net = make_net(small(arch), grid, rng);
        ad::ParameterSet set(components(net));
        auto loss = [&](ad::Tape& t, std::span<const ad::Var> p) {
            MeasureFeatures f;
            f.grouping = g;
            f.samples = t.constant(ad::Tensor(g.rows(), 1, xs));
            f.bins = t.constant(bins);
            const ad::Var y = apply(t, net, p, t.constant(ad::Tensor(g.rows(), 1, xs)), g, f);
            return t.mean(t.square(t.sub(y, t.constant(ad::Tensor(g.rows(), 1, target)))));
        };
        const auto vg = ad::value_and_grad(set, loss);
        const std::vector<double> theta = set.gather();
        const auto fd = mfnn::testing::central_differences(
            [&](std::span<const double> x) {
                set.scatter(x);
                ad::Tape t;
                const double v = t.scalar(loss(t, constant_params(t, net)));
                set.scatter(theta);
                return v;
            },
            theta);
        CHECK(relative_error(vg.grad, fd) <= 1e-7);
    }
}

TEST_CASE("checkpoints round trip") {
    const BinGrid grid(-1.3, 1.3, 9);
    for (const Arch arch : {Arch::bin, Arch::deeponet, Arch::cylindrical}) {
        Rng rng(30);
        ArchitectureConfig c = small(arch);
        c.state_dim = 2;
        const MeanFieldNet net = make_net(c, grid, rng);
        std::stringstream buf;
        write_checkpoint(buf, net);
        const std::string bytes = buf.str();
        CHECK(bytes.substr(0, 8) == "MFNNCKPT");
        const MeanFieldNet back = read_checkpoint(buf);
        CHECK(arch_of(back) == arch);
        CHECK(state_dim_of(back) == 2);
        const auto a = components(net);
        const auto b = components(back);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i]->spec() == b[i]->spec());
            CHECK(std::equal(a[i]->params().begin(), a[i]->params().end(), b[i]->params().begin()));
        }
        if (arch != Arch::cylindrical) CHECK(*grid_of(back) == grid);
        std::stringstream again;
        write_checkpoint(again, back);
        CHECK(again.str() == bytes);

        std::string broken = bytes;
        broken[0] = 'X';
        std::stringstream bad(broken);
        CHECK_THROWS_AS(read_checkpoint(bad), Error);
        std::stringstream cut(bytes.substr(0, bytes.size() - 3));
        CHECK_THROWS_AS(read_checkpoint(cut), Error);
    }
}
