#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mfnn/autodiff/fast_math.hpp"
#include "mfnn/random.hpp"

namespace mfnn::ad {

enum class Activation { tanh, relu };

Activation parse_activation(const std::string& name);
std::string to_string(Activation activation);

/// Layer widths of a feedforward network. Hidden layers apply the
/// activation; the output layer is affine.
struct MlpSpec {
    std::size_t input_dim = 1;
    std::vector<std::size_t> hidden;
    std::size_t output_dim = 1;
    Activation activation = Activation::tanh;

    std::size_t layer_count() const noexcept { return hidden.size() + 1; }
    std::size_t layer_input(std::size_t layer) const noexcept;
    std::size_t layer_output(std::size_t layer) const noexcept;
    std::size_t max_width() const noexcept;
    /// sum over layers of (fan_in + 1) * fan_out.
    std::size_t parameter_count() const noexcept;
    void validate() const;

    bool operator==(const MlpSpec&) const = default;
};

/// Feedforward network with a flat parameter vector. Layout is layer-major;
/// within a layer the row-major weight matrix W[out][in] comes first, then
/// the bias vector. This layout is part of the checkpoint format.
class Mlp {
public:
    explicit Mlp(MlpSpec spec);
    Mlp(MlpSpec spec, std::vector<double> params);

    const MlpSpec& spec() const noexcept { return spec_; }
    std::span<const double> params() const noexcept { return params_; }
    std::span<double> params() noexcept { return params_; }

    std::size_t weight_offset(std::size_t layer) const noexcept { return offsets_[layer]; }
    std::size_t bias_offset(std::size_t layer) const noexcept {
        return offsets_[layer] + spec_.layer_input(layer) * spec_.layer_output(layer);
    }
    const double* weights(std::size_t layer) const noexcept { return params_.data() + weight_offset(layer); }
    const double* bias(std::size_t layer) const noexcept { return params_.data() + bias_offset(layer); }

    /// Single-sample evaluation.
    std::vector<double> forward(std::span<const double> x) const;

private:
    MlpSpec spec_;
    std::vector<double> params_;
    std::vector<std::size_t> offsets_;
};

/// Uniform Glorot range +-sqrt(6 / (fan_in + fan_out)) for weights, zero biases.
void glorot_init(Mlp& net, Rng& rng);
Mlp make_mlp(MlpSpec spec, Rng& rng);

inline double activate(Activation a, double z) noexcept {
    return a == Activation::tanh ? fast_tanh(z) : (z > 0.0 ? z : 0.0);
}

/// Derivative expressed through the post-activation value.
inline double activation_slope(Activation a, double post) noexcept {
    return a == Activation::tanh ? 1.0 - post * post : (post > 0.0 ? 1.0 : 0.0);
}

} // namespace mfnn::ad
