#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mfnn/autodiff/mlp.hpp"
#include "mfnn/autodiff/tape.hpp"
#include "mfnn/measures.hpp"

namespace mfnn {

enum class Arch { bin, deeponet, cylindrical };

Arch parse_arch(const std::string& name);
std::string to_string(Arch arch);

/// Phi(x, p): the state is concatenated with the bin levels of the measure.
struct BinDensityNet {
    BinGrid grid;
    ad::Mlp phi;
    std::size_t state_dim = 1;
};

/// sum_l branch(p)_l * trunk(x)_l.
struct DeepOnetNet {
    BinGrid grid;
    ad::Mlp branch;
    ad::Mlp trunk;
    std::size_t state_dim = 1;
};

/// Psi(x, <phi, mu>): the inner net sees the samples of the measure, the
/// outer net sees the state and the latent mean.
struct CylindricalNet {
    ad::Mlp inner;
    ad::Mlp outer;
    std::size_t state_dim = 1;
};

using MeanFieldNet = std::variant<BinDensityNet, DeepOnetNet, CylindricalNet>;

struct ArchitectureConfig {
    Arch arch = Arch::cylindrical;
    ad::Activation activation = ad::Activation::tanh;
    std::vector<std::size_t> hidden{20, 20, 20};
    std::size_t deeponet_width = 20;
    std::vector<std::size_t> inner_hidden{20};
    std::size_t latent = 20;
    std::vector<std::size_t> outer_hidden{10, 10};
    std::size_t output_dim = 1;
    /// 1 for x, 2 for (x, t/T).
    std::size_t state_dim = 1;

    void validate() const;
};

/// Builds a Glorot-initialized network. `grid` is ignored by the
/// cylindrical architecture.
MeanFieldNet make_net(const ArchitectureConfig& config, const BinGrid& grid, Rng& rng);

Arch arch_of(const MeanFieldNet& net) noexcept;
std::size_t state_dim_of(const MeanFieldNet& net) noexcept;
std::size_t output_dim_of(const MeanFieldNet& net) noexcept;
/// Bin grid used by bin and DeepONet nets; nullptr for cylindrical nets.
const BinGrid* grid_of(const MeanFieldNet& net) noexcept;

/// Component networks in a fixed order (phi | branch, trunk | inner, outer).
std::vector<ad::Mlp*> components(MeanFieldNet& net);
std::vector<const ad::Mlp*> components(const MeanFieldNet& net);

std::vector<double> eval_bin(const BinDensityNet& net, double x, const BinDensity& density);
double eval_deeponet(const DeepOnetNet& net, double x, const BinDensity& density);
std::vector<double> eval_cyl(const CylindricalNet& net, double x, const EmpiricalSample& xs);

/// Measure descriptors for a batch of `grouping.groups` measures. Bin
/// architectures read `bins` (groups x K); cylindrical nets read `samples`
/// ((groups * group_size) x 1, the samples of measure m in block m).
struct MeasureFeatures {
    ad::Grouping grouping;
    ad::Var samples;
    ad::Var bins;
};

/// Batched evaluation on a tape. `params` holds one parameter column per
/// component; `state` is (groups * query_size) x state_dim with the queries
/// of measure m in block m. Output: rows x output_dim.
ad::Var apply(ad::Tape& tape, const MeanFieldNet& net, std::span<const ad::Var> params, ad::Var state,
              ad::Grouping query, const MeasureFeatures& features);

/// Parameter columns of the components as tape constants.
std::vector<ad::Var> constant_params(ad::Tape& tape, const MeanFieldNet& net);

/// Plain batched evaluation, no gradients. `state` and `samples` are
/// column-major; `bins` is groups x K column-major; unused inputs may be
/// empty.
std::vector<double> evaluate(const MeanFieldNet& net, const ad::Tensor& state, ad::Grouping query,
                             ad::Grouping measure, std::span<const double> samples, const ad::Tensor& bins);

/// Binary checkpoint: 8-byte magic "MFNNCKPT", little-endian uint64 header
/// length, UTF-8 JSON header, then every component's parameters as
/// little-endian float64 in component order.
void write_checkpoint(std::ostream& out, const MeanFieldNet& net);
MeanFieldNet read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const MeanFieldNet& net);
MeanFieldNet load_checkpoint(const std::string& path);

/// Cylindrical composition with arbitrary callables, left-to-right mean.
template <class Inner, class Outer>
auto eval_cylindrical(const Inner& inner, const Outer& outer, double x, std::span<const double> xs) {
    auto z = inner(xs[0]);
    for (std::size_t n = 1; n < xs.size(); ++n) {
        const auto v = inner(xs[n]);
        for (std::size_t j = 0; j < z.size(); ++j) z[j] += v[j];
    }
    for (auto& v : z) v /= static_cast<double>(xs.size());
    return outer(x, z);
}

} // namespace mfnn
