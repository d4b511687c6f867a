#include "mfnn/autodiff/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mfnn/error.hpp"

namespace mfnn::ad {

namespace {

constexpr std::size_t kChunk = 128;  // rows processed together, sized for L1
constexpr std::size_t kBlock = 1024; // rows per parallel work item

struct WorkItem {
    std::size_t group;
    std::size_t row0;
    std::size_t rows;
};

std::vector<WorkItem> make_items(const Grouping& g) {
    std::vector<WorkItem> items;
    items.reserve(g.groups * ((g.group_size + kBlock - 1) / kBlock));
    for (std::size_t m = 0; m < g.groups; ++m) {
        for (std::size_t s = 0; s < g.group_size; s += kBlock) {
            items.push_back({m, m * g.group_size + s, std::min(kBlock, g.group_size - s)});
        }
    }
    return items;
}

// b0[j] + sum_k W0[j][ds + k] * group[k][m], row-major groups x out0.
std::vector<double> group_bias(const Mlp& net, const BatchInput& in) {
    const MlpSpec& spec = net.spec();
    const std::size_t out0 = spec.layer_output(0);
    const std::size_t in0 = spec.layer_input(0);
    const std::size_t groups = in.grouping.groups;
    const double* w = net.weights(0);
    const double* b = net.bias(0);
    std::vector<double> gb(groups * out0);
    for (std::size_t m = 0; m < groups; ++m) {
        for (std::size_t j = 0; j < out0; ++j) {
            double acc = b[j];
            for (std::size_t k = 0; k < in.group_dim; ++k) {
                acc += w[j * in0 + in.sample_dim + k] * in.group[k * groups + m];
            }
            gb[m * out0 + j] = acc;
        }
    }
    return gb;
}

inline void apply_activation(Activation act, double* z, std::size_t n) {
    if (act == Activation::tanh) {
#pragma omp simd
        for (std::size_t c = 0; c < n; ++c) z[c] = fast_tanh(z[c]);
    } else {
#pragma omp simd
        for (std::size_t c = 0; c < n; ++c) z[c] = z[c] > 0.0 ? z[c] : 0.0;
    }
}

void forward_chunk(const Mlp& net, const BatchInput& in, const double* gbias, std::size_t row0, std::size_t n,
                   std::span<double> out, ActivationCache* cache, double* buf_a, double* buf_b) {
    const MlpSpec& spec = net.spec();
    const std::size_t layers = spec.layer_count();
    const std::size_t rows = in.grouping.rows();
    double* prev = buf_a;
    double* cur = buf_b;
    for (std::size_t l = 0; l < layers; ++l) {
        const std::size_t fan_in = spec.layer_input(l);
        const std::size_t fan_out = spec.layer_output(l);
        const double* w = net.weights(l);
        const double* b = net.bias(l);
        const bool last = l + 1 == layers;
        for (std::size_t j = 0; j < fan_out; ++j) {
            double acc[kChunk];
            const double b0 = l == 0 ? gbias[j] : b[j];
#pragma omp simd
            for (std::size_t c = 0; c < n; ++c) acc[c] = b0;
            if (l == 0) {
                for (std::size_t i = 0; i < in.sample_dim; ++i) {
                    const double wij = w[j * fan_in + i];
                    const double* x = in.sample.data() + i * rows + row0;
#pragma omp simd
                    for (std::size_t c = 0; c < n; ++c) acc[c] += wij * x[c];
                }
            } else {
                for (std::size_t i = 0; i < fan_in; ++i) {
                    const double wij = w[j * fan_in + i];
                    const double* x = prev + i * kChunk;
#pragma omp simd
                    for (std::size_t c = 0; c < n; ++c) acc[c] += wij * x[c];
                }
            }
            if (last) {
                double* o = out.data() + j * rows + row0;
                for (std::size_t c = 0; c < n; ++c) o[c] = acc[c];
            } else {
                apply_activation(spec.activation, acc, n);
                double* z = cur + j * kChunk;
                for (std::size_t c = 0; c < n; ++c) z[c] = acc[c];
                if (cache) {
                    double* dst = cache->hidden[l].data() + j * rows + row0;
                    for (std::size_t c = 0; c < n; ++c) dst[c] = acc[c];
                }
            }
        }
        std::swap(prev, cur);
    }
}

void backward_chunk(const Mlp& net, const BatchInput& in, const ActivationCache& cache, std::span<const double> d_out,
                    std::size_t row0, std::size_t n, double* grad_params, double* group_delta,
                    std::span<double> d_sample, double* buf_a, double* buf_b) {
    const MlpSpec& spec = net.spec();
    const std::size_t layers = spec.layer_count();
    const std::size_t rows = in.grouping.rows();
    double* cur = buf_a;
    double* next = buf_b;
    const std::size_t out_dim = spec.output_dim;
    for (std::size_t j = 0; j < out_dim; ++j) {
        const double* src = d_out.data() + j * rows + row0;
        std::copy(src, src + n, cur + j * kChunk);
    }
    for (std::size_t l = layers; l-- > 0;) {
        const std::size_t fan_in = spec.layer_input(l);
        const std::size_t fan_out = spec.layer_output(l);
        const double* w = net.weights(l);
        const std::size_t own_inputs = l == 0 ? in.sample_dim : fan_in;
        auto input_column = [&](std::size_t i) -> const double* {
            return l == 0 ? in.sample.data() + i * rows + row0 : cache.hidden[l - 1].data() + i * rows + row0;
        };

        if (grad_params) {
            double* gw = grad_params + net.weight_offset(l);
            double* gb = grad_params + net.bias_offset(l);
            for (std::size_t j = 0; j < fan_out; ++j) {
                const double* d = cur + j * kChunk;
                double sb = 0.0;
#pragma omp simd reduction(+ : sb)
                for (std::size_t c = 0; c < n; ++c) sb += d[c];
                gb[j] += sb;
                for (std::size_t i = 0; i < own_inputs; ++i) {
                    const double* a = input_column(i);
                    double s = 0.0;
#pragma omp simd reduction(+ : s)
                    for (std::size_t c = 0; c < n; ++c) s += d[c] * a[c];
                    gw[j * fan_in + i] += s;
                }
            }
        }

        if (l == 0) {
            if (group_delta) {
                for (std::size_t j = 0; j < fan_out; ++j) {
                    const double* d = cur + j * kChunk;
                    double sb = 0.0;
#pragma omp simd reduction(+ : sb)
                    for (std::size_t c = 0; c < n; ++c) sb += d[c];
                    group_delta[j] += sb;
                }
            }
            if (!d_sample.empty()) {
                for (std::size_t i = 0; i < in.sample_dim; ++i) {
                    double* s = d_sample.data() + i * rows + row0;
                    for (std::size_t j = 0; j < fan_out; ++j) {
                        const double wji = w[j * fan_in + i];
                        const double* d = cur + j * kChunk;
#pragma omp simd
                        for (std::size_t c = 0; c < n; ++c) s[c] += wji * d[c];
                    }
                }
            }
            break;
        }

        for (std::size_t i = 0; i < fan_in; ++i) {
            double acc[kChunk];
#pragma omp simd
            for (std::size_t c = 0; c < n; ++c) acc[c] = 0.0;
            for (std::size_t j = 0; j < fan_out; ++j) {
                const double wji = w[j * fan_in + i];
                const double* d = cur + j * kChunk;
#pragma omp simd
                for (std::size_t c = 0; c < n; ++c) acc[c] += wji * d[c];
            }
            const double* a = input_column(i);
            double* dst = next + i * kChunk;
            if (spec.activation == Activation::tanh) {
#pragma omp simd
                for (std::size_t c = 0; c < n; ++c) dst[c] = acc[c] * (1.0 - a[c] * a[c]);
            } else {
#pragma omp simd
                for (std::size_t c = 0; c < n; ++c) dst[c] = a[c] > 0.0 ? acc[c] : 0.0;
            }
        }
        std::swap(cur, next);
    }
}

} // namespace

int max_threads() noexcept {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void check_batch(const Mlp& net, const BatchInput& in) {
    const MlpSpec& spec = net.spec();
    if (in.sample_dim + in.group_dim != spec.input_dim) {
        throw Error(ErrorKind::dimension_mismatch,
                    "batch feeds " + std::to_string(in.sample_dim + in.group_dim) + " features to a network with input " +
                        std::to_string(spec.input_dim));
    }
    if (in.sample.size() != in.grouping.rows() * in.sample_dim) {
        throw Error(ErrorKind::dimension_mismatch, "per-row input has the wrong size");
    }
    if (in.group.size() != in.grouping.groups * in.group_dim) {
        throw Error(ErrorKind::dimension_mismatch, "per-group input has the wrong size");
    }
}

void forward_batch(const Mlp& net, const BatchInput& in, std::span<double> out, ActivationCache* cache) {
    check_batch(net, in);
    const MlpSpec& spec = net.spec();
    const std::size_t rows = in.grouping.rows();
    if (out.size() != rows * spec.output_dim) {
        throw Error(ErrorKind::dimension_mismatch, "network output buffer has the wrong size");
    }
    if (cache) {
        cache->hidden.resize(spec.hidden.size());
        for (std::size_t l = 0; l < spec.hidden.size(); ++l) cache->hidden[l].resize(rows * spec.hidden[l]);
    }
    if (rows == 0) return;
    const std::vector<double> gb = group_bias(net, in);
    const std::vector<WorkItem> items = make_items(in.grouping);
    const std::size_t out0 = spec.layer_output(0);
    const std::size_t width = spec.max_width();
    const auto count = static_cast<std::ptrdiff_t>(items.size());

#pragma omp parallel
    {
        std::vector<double> buf_a(width * kChunk);
        std::vector<double> buf_b(width * kChunk);
#pragma omp for schedule(static)
        for (std::ptrdiff_t t = 0; t < count; ++t) {
            const WorkItem& item = items[static_cast<std::size_t>(t)];
            for (std::size_t s = 0; s < item.rows; s += kChunk) {
                forward_chunk(net, in, gb.data() + item.group * out0, item.row0 + s, std::min(kChunk, item.rows - s),
                              out, cache, buf_a.data(), buf_b.data());
            }
        }
    }
}

void backward_batch(const Mlp& net, const BatchInput& in, const ActivationCache& cache,
                    std::span<const double> d_out, const BatchGradients& grads) {
    check_batch(net, in);
    const MlpSpec& spec = net.spec();
    const std::size_t rows = in.grouping.rows();
    const std::size_t groups = in.grouping.groups;
    const std::size_t params = spec.parameter_count();
    if (d_out.size() != rows * spec.output_dim) {
        throw Error(ErrorKind::dimension_mismatch, "output gradient has the wrong size");
    }
    if (!grads.params.empty() && grads.params.size() != params) {
        throw Error(ErrorKind::dimension_mismatch, "parameter gradient has the wrong size");
    }
    if (!grads.sample.empty() && grads.sample.size() != in.sample.size()) {
        throw Error(ErrorKind::dimension_mismatch, "per-row input gradient has the wrong size");
    }
    if (!grads.group.empty() && grads.group.size() != in.group.size()) {
        throw Error(ErrorKind::dimension_mismatch, "per-group input gradient has the wrong size");
    }
    if (rows == 0) return;

    const std::vector<WorkItem> items = make_items(in.grouping);
    const std::size_t out0 = spec.layer_output(0);
    const std::size_t in0 = spec.layer_input(0);
    const bool want_params = !grads.params.empty();
    const bool want_group = in.group_dim > 0 && (want_params || !grads.group.empty());
    std::vector<double> partial(want_params ? items.size() * params : 0, 0.0);
    std::vector<double> group_delta(want_group ? items.size() * out0 : 0, 0.0);
    const std::size_t width = spec.max_width();
    const auto count = static_cast<std::ptrdiff_t>(items.size());

#pragma omp parallel
    {
        std::vector<double> buf_a(width * kChunk);
        std::vector<double> buf_b(width * kChunk);
#pragma omp for schedule(static)
        for (std::ptrdiff_t t = 0; t < count; ++t) {
            const auto idx = static_cast<std::size_t>(t);
            const WorkItem& item = items[idx];
            double* gp = want_params ? partial.data() + idx * params : nullptr;
            double* gd = want_group ? group_delta.data() + idx * out0 : nullptr;
            for (std::size_t s = 0; s < item.rows; s += kChunk) {
                backward_chunk(net, in, cache, d_out, item.row0 + s, std::min(kChunk, item.rows - s), gp, gd,
                               grads.sample, buf_a.data(), buf_b.data());
            }
        }
    }

    const double* w0 = net.weights(0);
    for (std::size_t idx = 0; idx < items.size(); ++idx) {
        if (want_params) {
            const double* gp = partial.data() + idx * params;
            for (std::size_t p = 0; p < params; ++p) grads.params[p] += gp[p];
        }
        if (want_group) {
            const std::size_t m = items[idx].group;
            const double* gd = group_delta.data() + idx * out0;
            for (std::size_t j = 0; j < out0; ++j) {
                for (std::size_t k = 0; k < in.group_dim; ++k) {
                    const std::size_t col = in.sample_dim + k;
                    if (want_params) grads.params[j * in0 + col] += gd[j] * in.group[k * groups + m];
                    if (!grads.group.empty()) grads.group[k * groups + m] += w0[j * in0 + col] * gd[j];
                }
            }
        }
    }
}

namespace reference {

namespace {

std::vector<double> row_input(const BatchInput& in, std::size_t r) {
    const std::size_t rows = in.grouping.rows();
    const std::size_t m = in.grouping.group_of(r);
    std::vector<double> x(in.sample_dim + in.group_dim);
    for (std::size_t i = 0; i < in.sample_dim; ++i) x[i] = in.sample[i * rows + r];
    for (std::size_t k = 0; k < in.group_dim; ++k) x[in.sample_dim + k] = in.group[k * in.grouping.groups + m];
    return x;
}

double reference_activation(Activation a, double z) {
    return a == Activation::tanh ? std::tanh(z) : std::max(z, 0.0);
}

} // namespace

void forward_batch(const Mlp& net, const BatchInput& in, std::span<double> out, ActivationCache* cache) {
    check_batch(net, in);
    const MlpSpec& spec = net.spec();
    const std::size_t rows = in.grouping.rows();
    if (out.size() != rows * spec.output_dim) {
        throw Error(ErrorKind::dimension_mismatch, "network output buffer has the wrong size");
    }
    if (cache) {
        cache->hidden.resize(spec.hidden.size());
        for (std::size_t l = 0; l < spec.hidden.size(); ++l) cache->hidden[l].assign(rows * spec.hidden[l], 0.0);
    }
    for (std::size_t r = 0; r < rows; ++r) {
        std::vector<double> a = row_input(in, r);
        for (std::size_t l = 0; l < spec.layer_count(); ++l) {
            const std::size_t fan_in = spec.layer_input(l);
            const std::size_t fan_out = spec.layer_output(l);
            std::vector<double> z(fan_out);
            for (std::size_t j = 0; j < fan_out; ++j) {
                double acc = net.bias(l)[j];
                for (std::size_t i = 0; i < fan_in; ++i) acc += net.weights(l)[j * fan_in + i] * a[i];
                z[j] = l + 1 < spec.layer_count() ? reference_activation(spec.activation, acc) : acc;
                if (cache && l + 1 < spec.layer_count()) cache->hidden[l][j * rows + r] = z[j];
            }
            a = std::move(z);
        }
        for (std::size_t j = 0; j < spec.output_dim; ++j) out[j * rows + r] = a[j];
    }
}

void backward_batch(const Mlp& net, const BatchInput& in, const ActivationCache& cache,
                    std::span<const double> d_out, const BatchGradients& grads) {
    check_batch(net, in);
    const MlpSpec& spec = net.spec();
    const std::size_t rows = in.grouping.rows();
    const std::size_t layers = spec.layer_count();
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t m = in.grouping.group_of(r);
        std::vector<double> delta(spec.output_dim);
        for (std::size_t j = 0; j < spec.output_dim; ++j) delta[j] = d_out[j * rows + r];
        for (std::size_t l = layers; l-- > 0;) {
            const std::size_t fan_in = spec.layer_input(l);
            const std::size_t fan_out = spec.layer_output(l);
            std::vector<double> a(fan_in);
            if (l == 0) {
                a = row_input(in, r);
            } else {
                for (std::size_t i = 0; i < fan_in; ++i) a[i] = cache.hidden[l - 1][i * rows + r];
            }
            const double* w = net.weights(l);
            if (!grads.params.empty()) {
                for (std::size_t j = 0; j < fan_out; ++j) {
                    grads.params[net.bias_offset(l) + j] += delta[j];
                    for (std::size_t i = 0; i < fan_in; ++i) {
                        grads.params[net.weight_offset(l) + j * fan_in + i] += delta[j] * a[i];
                    }
                }
            }
            std::vector<double> back(fan_in, 0.0);
            for (std::size_t i = 0; i < fan_in; ++i) {
                for (std::size_t j = 0; j < fan_out; ++j) back[i] += w[j * fan_in + i] * delta[j];
            }
            if (l == 0) {
                if (!grads.sample.empty()) {
                    for (std::size_t i = 0; i < in.sample_dim; ++i) grads.sample[i * rows + r] += back[i];
                }
                if (!grads.group.empty()) {
                    for (std::size_t k = 0; k < in.group_dim; ++k) {
                        grads.group[k * in.grouping.groups + m] += back[in.sample_dim + k];
                    }
                }
            } else {
                for (std::size_t i = 0; i < fan_in; ++i) back[i] *= activation_slope(spec.activation, a[i]);
                delta = std::move(back);
            }
        }
    }
}

} // namespace reference

} // namespace mfnn::ad
