#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mfnn/autodiff/mlp.hpp"

namespace mfnn::ad {

/// Rows of a batch are split into `groups` consecutive blocks of
/// `group_size` rows; group m owns rows [m * group_size, (m + 1) * group_size).
struct Grouping {
    std::size_t groups = 1;
    std::size_t group_size = 0;

    std::size_t rows() const noexcept { return groups * group_size; }
    std::size_t group_of(std::size_t row) const noexcept { return row / group_size; }
    bool operator==(const Grouping&) const = default;
};

/// Input of a batched network evaluation. Row r is the concatenation of its
/// per-row features and the per-group features of its group. Both matrices
/// are column-major (feature f of row r at [f * rows + r]).
struct BatchInput {
    std::span<const double> sample;
    std::size_t sample_dim = 0;
    std::span<const double> group;
    std::size_t group_dim = 0;
    Grouping grouping;
};

/// Post-activation values of every hidden layer, column-major rows x width.
struct ActivationCache {
    std::vector<std::vector<double>> hidden;
};

/// Destinations for backward_batch; each is accumulated into (+=) and may
/// be left empty when not needed.
struct BatchGradients {
    std::span<double> params;
    std::span<double> sample;
    std::span<double> group;
};

/// Checks the shapes of `input` against the network. Throws dimension-mismatch.
void check_batch(const Mlp& net, const BatchInput& input);

// Parallel kernels. Rows are cut into fixed blocks that never straddle a
// group; per-block partial gradients are reduced in block order, so results
// are bit-identical for any thread count.
void forward_batch(const Mlp& net, const BatchInput& input, std::span<double> out, ActivationCache* cache);
void backward_batch(const Mlp& net, const BatchInput& input, const ActivationCache& cache,
                    std::span<const double> d_out, const BatchGradients& grads);

// Serial per-row reference implementation, kept for testing the kernels.
namespace reference {
void forward_batch(const Mlp& net, const BatchInput& input, std::span<double> out, ActivationCache* cache);
void backward_batch(const Mlp& net, const BatchInput& input, const ActivationCache& cache,
                    std::span<const double> d_out, const BatchGradients& grads);
} // namespace reference

int max_threads() noexcept;

} // namespace mfnn::ad
