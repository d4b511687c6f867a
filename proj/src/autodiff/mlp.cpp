#include "mfnn/autodiff/mlp.hpp"

#include <algorithm>
#include <cmath>

#include "mfnn/error.hpp"

namespace mfnn::ad {

Activation parse_activation(const std::string& name) {
    if (name == "tanh") return Activation::tanh;
    if (name == "relu") return Activation::relu;
    throw Error(ErrorKind::config_invalid, "unknown activation '" + name + "'");
}

std::string to_string(Activation activation) {
    return activation == Activation::tanh ? "tanh" : "relu";
}

std::size_t MlpSpec::layer_input(std::size_t layer) const noexcept {
    return layer == 0 ? input_dim : hidden[layer - 1];
}

std::size_t MlpSpec::layer_output(std::size_t layer) const noexcept {
    return layer < hidden.size() ? hidden[layer] : output_dim;
}

std::size_t MlpSpec::max_width() const noexcept {
    std::size_t w = std::max(input_dim, output_dim);
    for (const auto h : hidden) w = std::max(w, h);
    return w;
}

std::size_t MlpSpec::parameter_count() const noexcept {
    std::size_t n = 0;
    for (std::size_t l = 0; l < layer_count(); ++l) n += (layer_input(l) + 1) * layer_output(l);
    return n;
}

void MlpSpec::validate() const {
    if (input_dim == 0 || output_dim == 0) {
        throw Error(ErrorKind::config_invalid, "network input and output widths must be >= 1");
    }
    for (const auto h : hidden) {
        if (h == 0) throw Error(ErrorKind::config_invalid, "hidden layer widths must be >= 1");
    }
}

Mlp::Mlp(MlpSpec spec) : Mlp(spec, std::vector<double>(spec.parameter_count(), 0.0)) {}

Mlp::Mlp(MlpSpec spec, std::vector<double> params) : spec_(std::move(spec)), params_(std::move(params)) {
    spec_.validate();
    if (params_.size() != spec_.parameter_count()) {
        throw Error(ErrorKind::dimension_mismatch,
                    "network expects " + std::to_string(spec_.parameter_count()) + " parameters, got " +
                        std::to_string(params_.size()));
    }
    offsets_.resize(spec_.layer_count());
    std::size_t offset = 0;
    for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
        offsets_[l] = offset;
        offset += (spec_.layer_input(l) + 1) * spec_.layer_output(l);
    }
}

std::vector<double> Mlp::forward(std::span<const double> x) const {
    if (x.size() != spec_.input_dim) {
        throw Error(ErrorKind::dimension_mismatch,
                    "network input has dimension " + std::to_string(x.size()) + ", expected " +
                        std::to_string(spec_.input_dim));
    }
    std::vector<double> a(x.begin(), x.end());
    std::vector<double> z;
    for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
        const std::size_t in = spec_.layer_input(l);
        const std::size_t out = spec_.layer_output(l);
        const double* w = weights(l);
        const double* b = bias(l);
        z.assign(out, 0.0);
        for (std::size_t j = 0; j < out; ++j) {
            double acc = b[j];
            for (std::size_t i = 0; i < in; ++i) acc += w[j * in + i] * a[i];
            z[j] = l + 1 < spec_.layer_count() ? activate(spec_.activation, acc) : acc;
        }
        a.swap(z);
    }
    return a;
}

void glorot_init(Mlp& net, Rng& rng) {
    const MlpSpec& spec = net.spec();
    auto params = net.params();
    for (std::size_t l = 0; l < spec.layer_count(); ++l) {
        const std::size_t in = spec.layer_input(l);
        const std::size_t out = spec.layer_output(l);
        const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
        std::uniform_real_distribution<double> u(-limit, limit);
        double* w = params.data() + net.weight_offset(l);
        for (std::size_t i = 0; i < in * out; ++i) w[i] = u(rng);
        double* b = params.data() + net.bias_offset(l);
        std::fill(b, b + out, 0.0);
    }
}

Mlp make_mlp(MlpSpec spec, Rng& rng) {
    Mlp net(std::move(spec));
    glorot_init(net, rng);
    return net;
}

} // namespace mfnn::ad
