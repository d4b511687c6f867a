#include "mfnn/training.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mfnn/autodiff/adam.hpp"
#include "mfnn/error.hpp"

namespace mfnn {

namespace {

constexpr std::size_t kHeldoutChunk = 20;

ad::Tensor bin_levels(const std::vector<BinDensity>& densities, const BinGrid& grid) {
    const std::size_t groups = densities.size();
    ad::Tensor bins(groups, grid.size());
    for (std::size_t m = 0; m < groups; ++m) {
        const bool same = densities[m].grid() == grid;
        const BinDensity projected = same ? densities[m] : rebin(densities[m], grid);
        for (std::size_t k = 0; k < grid.size(); ++k) bins(m, k) = projected.level(k);
    }
    return bins;
}

MeasureFeatures features_of(ad::Tape& tape, const MeanFieldNet& net, const MeasureBatch& batch, ad::Var state) {
    MeasureFeatures f;
    f.grouping = batch.grouping;
    if (arch_of(net) == Arch::cylindrical) {
        f.samples = state;
    } else {
        if (batch.bins.rows != batch.grouping.groups) {
            throw Error(ErrorKind::dimension_mismatch, "batch carries no bin levels for a bin architecture");
        }
        f.bins = tape.constant(batch.bins);
    }
    return f;
}

ad::Var squared_error(ad::Tape& tape, const MeanFieldNet& net, std::span<const ad::Var> params,
                      const MeasureBatch& batch) {
    if (state_dim_of(net) != 1 || output_dim_of(net) != 1) {
        throw Error(ErrorKind::dimension_mismatch, "static learning needs a scalar state and a scalar output");
    }
    const std::size_t rows = batch.grouping.rows();
    const ad::Var state = tape.constant(ad::Tensor(rows, 1, batch.samples));
    const ad::Var out = apply(tape, net, params, state, batch.grouping, features_of(tape, net, batch, state));
    const ad::Var target = tape.constant(ad::Tensor(rows, 1, batch.targets));
    return tape.mean(tape.square(tape.sub(out, target)));
}

std::vector<double> batch_outputs(const MeanFieldNet& net, const MeasureBatch& batch) {
    ad::Tape tape;
    const auto params = constant_params(tape, net);
    const std::size_t rows = batch.grouping.rows();
    const ad::Var state = tape.constant(ad::Tensor(rows, 1, batch.samples));
    const ad::Var out = apply(tape, net, params, state, batch.grouping, features_of(tape, net, batch, state));
    return tape.value(out).data;
}

const BinGrid* net_grid(const MeanFieldNet& net) {
    return grid_of(net);
}

std::vector<MeasureBatch> heldout_batches(const TrainConfig& config, TargetCase target, const BinGrid* grid) {
    const std::vector<BinDensity> densities = heldout_densities(config);
    const std::size_t n = config.heldout_samples ? config.heldout_samples : config.samples;
    std::vector<MeasureBatch> out;
    for (std::size_t start = 0; start < densities.size(); start += kHeldoutChunk) {
        const std::size_t end = std::min(densities.size(), start + kHeldoutChunk);
        std::vector<BinDensity> part(densities.begin() + static_cast<std::ptrdiff_t>(start),
                                     densities.begin() + static_cast<std::ptrdiff_t>(end));
        out.push_back(make_batch(std::move(part), n, target, grid, [&](std::size_t m) {
            return make_rng(config.seed, {stream::heldout, start + m, 1});
        }));
    }
    return out;
}

double batches_mse(const MeanFieldNet& net, const std::vector<MeasureBatch>& batches, std::vector<double>* per_measure) {
    double total = 0.0;
    std::size_t count = 0;
    if (per_measure) per_measure->clear();
    for (const auto& b : batches) {
        const std::vector<double> y = batch_outputs(net, b);
        const std::size_t gs = b.grouping.group_size;
        for (std::size_t m = 0; m < b.grouping.groups; ++m) {
            double s = 0.0;
            for (std::size_t n = 0; n < gs; ++n) {
                const double d = y[m * gs + n] - b.targets[m * gs + n];
                s += d * d;
            }
            total += s / static_cast<double>(gs);
            if (per_measure) per_measure->push_back(s / static_cast<double>(gs));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

} // namespace

void TrainConfig::validate() const {
    auto positive = [](std::size_t v, const char* what) {
        if (v == 0) throw Error(ErrorKind::config_invalid, std::string(what) + " must be >= 1");
    };
    positive(batch_measures, "batch_measures");
    positive(samples, "samples");
    positive(eval_every, "eval_every");
    positive(heldout, "heldout");
    if (fixed_pool) positive(pool_size, "pool_size");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw Error(ErrorKind::config_invalid, "lr must be > 0");
    arch.validate();
    if (arch.state_dim != 1) throw Error(ErrorKind::config_invalid, "static learning uses a scalar state");
}

MeasureBatch make_batch(std::vector<BinDensity> densities, std::size_t samples, TargetCase target,
                        const BinGrid* grid, const std::function<Rng(std::size_t)>& rng_for) {
    MeasureBatch b;
    const std::size_t groups = densities.size();
    b.grouping = ad::Grouping{groups, samples};
    b.samples.resize(groups * samples);
    b.targets.resize(groups * samples);
    std::vector<Rng> rngs;
    rngs.reserve(groups);
    for (std::size_t m = 0; m < groups; ++m) rngs.push_back(rng_for(m));
    const auto count = static_cast<std::ptrdiff_t>(groups);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        const auto m = static_cast<std::size_t>(i);
        std::span<double> xs(b.samples.data() + m * samples, samples);
        sample_into(densities[m], xs, rngs[m]);
        eval_target_batch(target, xs, densities[m], std::span<double>(b.targets.data() + m * samples, samples));
    }
    if (grid) b.bins = bin_levels(densities, *grid);
    b.densities = std::move(densities);
    return b;
}

ad::Var loss_bin(ad::Tape& tape, const MeanFieldNet& net, std::span<const ad::Var> params, const MeasureBatch& batch) {
    if (arch_of(net) == Arch::cylindrical) {
        throw Error(ErrorKind::unsupported_primitive, "loss_bin needs a bin or DeepONet network");
    }
    return squared_error(tape, net, params, batch);
}

ad::Var loss_cyl(ad::Tape& tape, const MeanFieldNet& net, std::span<const ad::Var> params, const MeasureBatch& batch) {
    if (arch_of(net) != Arch::cylindrical) {
        throw Error(ErrorKind::unsupported_primitive, "loss_cyl needs a cylindrical network");
    }
    return squared_error(tape, net, params, batch);
}

ad::Var batch_loss(ad::Tape& tape, const MeanFieldNet& net, std::span<const ad::Var> params, const MeasureBatch& batch) {
    return arch_of(net) == Arch::cylindrical ? loss_cyl(tape, net, params, batch) : loss_bin(tape, net, params, batch);
}

double batch_mse(const MeanFieldNet& net, const MeasureBatch& batch) {
    return batches_mse(net, {batch}, nullptr);
}

std::vector<BinDensity> heldout_densities(const TrainConfig& config) {
    std::vector<BinDensity> out;
    out.reserve(config.heldout);
    for (std::size_t j = 0; j < config.heldout; ++j) {
        Rng rng = make_rng(config.seed, {stream::heldout, j, 0});
        out.push_back(random_bin_density(config.training_grid(), rng));
    }
    return out;
}

double heldout_mse(const MeanFieldNet& net, const TrainConfig& config, TargetCase target,
                   std::vector<double>* per_measure) {
    return batches_mse(net, heldout_batches(config, target, net_grid(net)), per_measure);
}

TrainResult train(const TrainConfig& config, TargetCase target, const TrainObserver& observer) {
    config.validate();
    Rng init = make_rng(config.seed, {stream::init});
    TrainResult result{make_net(config.arch, config.grid, init), {}, {}};
    MeanFieldNet& net = result.net;
    if (config.iterations == 0) return result;

    ad::ParameterSet set(components(net));
    ad::AdamState adam(set.size(), ad::AdamConfig{config.lr});
    std::vector<double> theta = set.gather();
    const BinGrid* grid = net_grid(net);
    const std::vector<MeasureBatch> heldout = heldout_batches(config, target, grid);

    std::vector<BinDensity> pool;
    if (config.fixed_pool) {
        for (std::size_t j = 0; j < config.pool_size; ++j) {
            Rng rng = make_rng(config.seed, {stream::pool, j});
            pool.push_back(random_bin_density(config.training_grid(), rng));
        }
    }

    double best = 0.0;
    auto record_heldout = [&](std::size_t it) {
        const double mse = batches_mse(net, heldout, nullptr);
        result.heldout_history.push_back({it, mse});
        if (!result.best_net || mse < best) {
            best = mse;
            result.best_net = net;
            result.best_iteration = it;
        }
        if (observer.on_heldout) observer.on_heldout(it, mse);
    };

    for (std::size_t it = 0; it < config.iterations; ++it) {
        if (it % config.eval_every == 0) record_heldout(it);

        std::vector<BinDensity> densities;
        densities.reserve(config.batch_measures);
        if (config.fixed_pool) {
            Rng pick = make_rng(config.seed, {stream::train_batch, it});
            std::uniform_int_distribution<std::size_t> index(0, pool.size() - 1);
            for (std::size_t m = 0; m < config.batch_measures; ++m) densities.push_back(pool[index(pick)]);
        } else {
            for (std::size_t m = 0; m < config.batch_measures; ++m) {
                Rng rng = make_rng(config.seed, {stream::train_batch, it, m, 0});
                densities.push_back(random_bin_density(config.training_grid(), rng));
            }
        }
        const MeasureBatch batch = make_batch(std::move(densities), config.samples, target, grid, [&](std::size_t m) {
            return make_rng(config.seed, {stream::train_batch, it, m, 1});
        });

        const ad::ValueAndGrad vg = ad::value_and_grad(
            set, [&](ad::Tape& tape, std::span<const ad::Var> params) { return batch_loss(tape, net, params, batch); });
        if (!std::isfinite(vg.value)) {
            throw Error(ErrorKind::divergence, "training loss is not finite at iteration " + std::to_string(it));
        }
        result.loss_history.push_back({it, vg.value});
        if (observer.on_loss) observer.on_loss(it, vg.value);
        ad::adam_step(adam, theta, vg.grad);
        set.scatter(theta);
    }
    if (result.heldout_history.back().iteration != config.iterations) record_heldout(config.iterations);
    return result;
}

double generalization_error(const MeanFieldNet& net, TargetCase target, int which_test, std::size_t samples,
                            std::uint64_t seed, const GeneralizationOptions& options) {
    if (samples == 0) throw Error(ErrorKind::invalid_domain, "generalization error needs N >= 1");
    if (state_dim_of(net) != 1 || output_dim_of(net) != 1) {
        throw Error(ErrorKind::dimension_mismatch, "generalization error needs a scalar state and output");
    }
    const TestDistribution law(which_test, options.test2);
    Rng rng = make_rng(seed, {stream::test_eval, static_cast<std::uint64_t>(which_test)});
    std::vector<double> xs(samples);
    law.sample_into(xs, rng);

    const ad::Grouping one{1, samples};
    ad::Tensor bins;
    if (const BinGrid* grid = grid_of(net)) {
        const BinDensity est = estimate_bins(*grid, xs);
        bins = ad::Tensor(1, grid->size(), std::vector<double>(est.levels().begin(), est.levels().end()));
    }
    const std::vector<double> y = evaluate(net, ad::Tensor(samples, 1, xs), one, one, xs, bins);

    std::vector<double> v(samples);
    if (moment_based(target)) {
        const Moments m = law.exact_moments();
        for (std::size_t n = 0; n < samples; ++n) v[n] = eval_target(target, xs[n], m);
    } else {
        Rng ref_rng = make_rng(seed, {stream::reference, static_cast<std::uint64_t>(which_test)});
        std::vector<double> ref(options.reference_samples);
        law.sample_into(ref, ref_rng);
        const SortedSample sorted(ref);
        for (std::size_t n = 0; n < samples; ++n) v[n] = eval_target(target, xs[n], sorted);
    }
    double s = 0.0;
    for (std::size_t n = 0; n < samples; ++n) s += (y[n] - v[n]) * (y[n] - v[n]);
    return s / static_cast<double>(samples);
}

} // namespace mfnn
