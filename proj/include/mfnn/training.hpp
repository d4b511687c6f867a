#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mfnn/autodiff/tape.hpp"
#include "mfnn/measures.hpp"
#include "mfnn/networks.hpp"
#include "mfnn/targets.hpp"

namespace mfnn {

struct TrainConfig {
    std::size_t batch_measures = 20;
    std::size_t samples = 5000;
    std::size_t iterations = 5000;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    /// Grid of the bin architectures (ignored by cylindrical nets).
    BinGrid grid{-1.0, 1.0, 100};
    /// Grid of the random training densities; defaults to `grid`. When the
    /// two differ the bin nets see the exact re-binned levels.
    std::optional<BinGrid> law_grid;
    ArchitectureConfig arch;
    std::size_t eval_every = 100;
    std::size_t heldout = 1000;
    /// Samples per held-out measure; 0 means `samples`.
    std::size_t heldout_samples = 0;
    /// Draw batches from a fixed pool of `pool_size` densities instead of
    /// fresh ones.
    bool fixed_pool = false;
    std::size_t pool_size = 1000;

    const BinGrid& training_grid() const noexcept { return law_grid ? *law_grid : grid; }
    void validate() const;
};

struct HistoryPoint {
    std::size_t iteration = 0;
    double value = 0.0;

    bool operator==(const HistoryPoint&) const = default;
};

struct TrainResult {
    MeanFieldNet net;
    std::vector<HistoryPoint> loss_history;
    std::vector<HistoryPoint> heldout_history;
    /// Parameters at the lowest recorded held-out MSE (first one on ties).
    std::optional<MeanFieldNet> best_net;
    std::size_t best_iteration = 0;
};

/// M measures with N samples each, the values of the target at the samples
/// and the net-grid bin levels of each measure.
struct MeasureBatch {
    ad::Grouping grouping;
    std::vector<BinDensity> densities;
    std::vector<double> samples;
    std::vector<double> targets;
    /// groups x K column-major on the net grid; empty for cylindrical nets.
    ad::Tensor bins;
};

/// Fills samples, bin levels (exact, re-binned to `net_grid` when needed)
/// and targets for the given densities. Measure m uses the generator
/// `rng_for(m)`.
MeasureBatch make_batch(std::vector<BinDensity> densities, std::size_t samples, TargetCase target,
                        const BinGrid* net_grid, const std::function<Rng(std::size_t)>& rng_for);

/// Mean over the batch of |V - Phi(x, p)|^2.
ad::Var loss_bin(ad::Tape& tape, const MeanFieldNet& net, std::span<const ad::Var> params, const MeasureBatch& batch);
/// Mean over the batch of |V - Psi(x, mean phi)|^2, the latent mean taken
/// over the same samples.
ad::Var loss_cyl(ad::Tape& tape, const MeanFieldNet& net, std::span<const ad::Var> params, const MeasureBatch& batch);
/// Dispatches on the architecture.
ad::Var batch_loss(ad::Tape& tape, const MeanFieldNet& net, std::span<const ad::Var> params, const MeasureBatch& batch);

/// Loss of the current parameters on the batch, no gradient.
double batch_mse(const MeanFieldNet& net, const MeasureBatch& batch);

/// Receives every history point as it is produced, so that callers keep the
/// partial histories when a run diverges.
struct TrainObserver {
    std::function<void(std::size_t iteration, double loss)> on_loss;
    std::function<void(std::size_t iteration, double mse)> on_heldout;
};

/// Throws numerical-divergence when the loss or its gradient stops being
/// finite.
TrainResult train(const TrainConfig& config, TargetCase target, const TrainObserver& observer = {});

/// The fixed held-out densities of a config.
std::vector<BinDensity> heldout_densities(const TrainConfig& config);
/// Mean held-out MSE of `net`, and the per-measure errors if requested.
double heldout_mse(const MeanFieldNet& net, const TrainConfig& config, TargetCase target,
                   std::vector<double>* per_measure = nullptr);

struct GeneralizationOptions {
    Test2Variant test2 = Test2Variant::bimodal;
    /// Sample size of the Monte-Carlo reference used for cases D and E.
    std::size_t reference_samples = 1000000;
};

/// Squared error of the net on N samples of a test law. Bin nets use the
/// estimated bins of the sample, cylindrical nets its latent mean.
double generalization_error(const MeanFieldNet& net, TargetCase target, int which_test, std::size_t samples,
                            std::uint64_t seed, const GeneralizationOptions& options = {});

} // namespace mfnn
