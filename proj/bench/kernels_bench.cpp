// Serial per-row reference vs the blocked OpenMP kernels on a training-sized batch.
#include <chrono>
#include <cstdio>
#include <vector>

#include "mfnn/autodiff/kernels.hpp"
#include "mfnn/autodiff/mlp.hpp"
#include "mfnn/dynamics.hpp"
#include "mfnn/random.hpp"

using namespace mfnn;

template <class F>
double best_ms(int reps, F&& f) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        if (ms < best) best = ms;
    }
    return best;
}

int main() {
    const std::size_t groups = 20, n = 5000, rows = groups * n;
    Rng rng(7);
    const ad::Mlp net = ad::make_mlp(ad::MlpSpec{21, {10, 10}, 1, ad::Activation::tanh}, rng);
    std::normal_distribution<double> normal;
    std::vector<double> x(rows), z(groups * 20), out(rows), d_out(rows, 1.0 / rows);
    for (auto& v : x) v = normal(rng);
    for (auto& v : z) v = normal(rng);
    const ad::BatchInput in{x, 1, z, 20, ad::Grouping{groups, n}};
    std::vector<double> gp(net.params().size()), gs(rows), gg(z.size());
    const ad::BatchGradients grads{gp, gs, gg};

    ad::ActivationCache cache, ref_cache;
    const double fwd = best_ms(5, [&] { ad::forward_batch(net, in, out, &cache); });
    const double fwd_ref = best_ms(3, [&] { ad::reference::forward_batch(net, in, out, &ref_cache); });
    const double bwd = best_ms(5, [&] { ad::backward_batch(net, in, cache, d_out, grads); });
    const double bwd_ref = best_ms(3, [&] { ad::reference::backward_batch(net, in, ref_cache, d_out, grads); });

    PdeProblem problem;
    std::vector<double> cloud(10 * 10000), dw(cloud.size()), f(cloud.size());
    for (auto& v : cloud) v = 0.3 * normal(rng);
    for (auto& v : dw) v = 0.1 * normal(rng);
    const ad::Grouping g{10, 10000};
    // The reference generator is O(N^2) per cloud, so it gets smaller clouds.
    const ad::Grouping small{10, 2000};
    const std::span<const double> head(cloud.data(), small.rows());
    const std::span<double> fh(f.data(), small.rows());
    const double gen = best_ms(5, [&] { generator_base_batch(problem, 0.0, small, head, 2000, head, fh); });
    const double gen_ref = best_ms(1, [&] { reference::generator_base_batch(problem, 0.0, small, head, 2000, head, fh); });
    const double eul = best_ms(5, [&] { euler_step(problem, g, cloud, dw); });
    const double eul_ref = best_ms(5, [&] { reference::euler_step(problem, g, cloud, dw); });

    std::printf("threads %d, batch %zu rows\n", ad::max_threads(), rows);
    std::printf("%-28s %13s %12s %9s\n", "kernel", "reference ms", "batched ms", "speedup");
    auto line = [](const char* name, double ref, double fast) {
        std::printf("%-28s %13.3f %12.3f %8.2fx\n", name, ref, fast, ref / fast);
    };
    line("mlp forward", fwd_ref, fwd);
    line("mlp backward", bwd_ref, bwd);
    line("generator (cos moments)", gen_ref, gen);
    line("euler step", eul_ref, eul);
    return 0;
}
