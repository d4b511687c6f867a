#include "mfnn/autodiff/tape.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "mfnn/error.hpp"

namespace mfnn::ad {

namespace {

enum BinaryOp { op_add = 0, op_sub = 1, op_mul = 2 };

std::string shape(const Tensor& t) {
    return std::to_string(t.rows) + "x" + std::to_string(t.cols);
}

void accumulate(std::vector<double>& dst, std::span<const double> src) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

} // namespace

Tensor::Tensor(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) {
        throw Error(ErrorKind::dimension_mismatch, "tensor data does not match its shape");
    }
}

Tensor Tensor::column(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(n, 1, std::move(values));
}

std::size_t Tape::check(Var v) const {
    if (!v.valid() || v.tape() != this || v.id() >= nodes_.size()) {
        throw Error(ErrorKind::unsupported_primitive, "value does not belong to this tape");
    }
    return v.id();
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
}

Var Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&, std::size_t)> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
    return push(std::move(value), false, nullptr);
}

Var Tape::variable(Tensor value) {
    return push(std::move(value), true, nullptr);
}

const Tensor& Tape::value(Var v) const {
    return node(v).value;
}

double Tape::scalar(Var v) const {
    const Tensor& t = value(v);
    if (t.size() != 1) throw Error(ErrorKind::dimension_mismatch, "expected a 1x1 value, got " + shape(t));
    return t.data[0];
}

Tensor Tape::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) return Tensor(n.value.rows, n.value.cols);
    return Tensor(n.value.rows, n.value.cols, n.grad);
}

void Tape::backward(Var loss) {
    const std::size_t root = check(loss);
    if (nodes_[root].value.size() != 1) {
        throw Error(ErrorKind::dimension_mismatch, "backward needs a scalar loss, got " + shape(nodes_[root].value));
    }
    for (auto& n : nodes_) n.grad.clear();
    if (!nodes_[root].needs_grad) return;
    grad_buffer(root)[0] = 1.0;
    for (std::size_t id = root + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (n.back && !n.grad.empty()) n.back(*this, id);
    }
}

Var Tape::mlp(const MlpSpec& spec, Var params, Var sample, Var group, Grouping grouping) {
    const std::size_t pid = check(params);
    const Tensor& theta = nodes_[pid].value;
    if (theta.cols != 1 || theta.rows != spec.parameter_count()) {
        throw Error(ErrorKind::dimension_mismatch,
                    "network parameters are " + shape(theta) + ", expected " + std::to_string(spec.parameter_count()) +
                        "x1");
    }
    const std::size_t rows = grouping.rows();
    BatchInput in;
    in.grouping = grouping;
    bool needs = nodes_[pid].needs_grad;
    std::size_t sid = 0;
    std::size_t gid = 0;
    if (sample.valid()) {
        sid = check(sample);
        const Tensor& s = nodes_[sid].value;
        if (s.rows != rows) {
            throw Error(ErrorKind::dimension_mismatch, "per-row input has " + std::to_string(s.rows) +
                                                           " rows, grouping has " + std::to_string(rows));
        }
        in.sample = s.data;
        in.sample_dim = s.cols;
        needs = needs || nodes_[sid].needs_grad;
    }
    if (group.valid()) {
        gid = check(group);
        const Tensor& g = nodes_[gid].value;
        if (g.rows != grouping.groups) {
            throw Error(ErrorKind::dimension_mismatch, "per-group input has " + std::to_string(g.rows) +
                                                           " rows, grouping has " +
                                                           std::to_string(grouping.groups) + " groups");
        }
        in.group = g.data;
        in.group_dim = g.cols;
        needs = needs || nodes_[gid].needs_grad;
    }
    auto net = std::make_shared<const Mlp>(spec, theta.data);
    auto cache = needs ? std::make_shared<ActivationCache>() : nullptr;
    Tensor out(rows, spec.output_dim);
    forward_batch(*net, in, out.data, cache.get());

    const bool has_sample = sample.valid();
    const bool has_group = group.valid();
    return push(std::move(out), needs, [=](Tape& t, std::size_t self) {
        BatchInput bin;
        bin.grouping = grouping;
        if (has_sample) {
            bin.sample = t.nodes_[sid].value.data;
            bin.sample_dim = t.nodes_[sid].value.cols;
        }
        if (has_group) {
            bin.group = t.nodes_[gid].value.data;
            bin.group_dim = t.nodes_[gid].value.cols;
        }
        BatchGradients g;
        if (t.nodes_[pid].needs_grad) g.params = t.grad_buffer(pid);
        if (has_sample && t.nodes_[sid].needs_grad) g.sample = t.grad_buffer(sid);
        if (has_group && t.nodes_[gid].needs_grad) g.group = t.grad_buffer(gid);
        backward_batch(*net, bin, *cache, t.nodes_[self].grad, g);
    });
}

Var Tape::binary(Var a, Var b, int op) {
    const std::size_t ia = check(a);
    const std::size_t ib = check(b);
    const Tensor& va = nodes_[ia].value;
    const Tensor& vb = nodes_[ib].value;
    const bool sa = va.size() == 1;
    const bool sb = vb.size() == 1;
    if (!(sa || sb) && (va.rows != vb.rows || va.cols != vb.cols)) {
        throw Error(ErrorKind::dimension_mismatch, "elementwise operands " + shape(va) + " and " + shape(vb));
    }
    const Tensor& big = sa && !sb ? vb : va;
    Tensor out(big.rows, big.cols);
    const std::size_t n = out.size();
    const double* pa = va.data.data();
    const double* pb = vb.data.data();
    const std::size_t stride_a = sa ? 0 : 1;
    const std::size_t stride_b = sb ? 0 : 1;
    for (std::size_t i = 0; i < n; ++i) {
        const double x = pa[i * stride_a];
        const double y = pb[i * stride_b];
        out.data[i] = op == op_add ? x + y : op == op_sub ? x - y : x * y;
    }
    const bool needs = nodes_[ia].needs_grad || nodes_[ib].needs_grad;
    return push(std::move(out), needs, [=](Tape& t, std::size_t self) {
        const std::vector<double>& g = t.nodes_[self].grad;
        for (int side = 0; side < 2; ++side) {
            const std::size_t id = side == 0 ? ia : ib;
            if (!t.nodes_[id].needs_grad) continue;
            const std::size_t other = side == 0 ? ib : ia;
            const std::size_t stride_self = (side == 0 ? stride_a : stride_b);
            const std::size_t stride_other = (side == 0 ? stride_b : stride_a);
            std::vector<double>& dst = t.grad_buffer(id);
            const std::vector<double>& ov = t.nodes_[other].value.data;
            for (std::size_t i = 0; i < g.size(); ++i) {
                double d = g[i];
                if (op == op_sub && side == 1) d = -d;
                if (op == op_mul) d *= ov[i * stride_other];
                dst[i * stride_self] += d;
            }
        }
    });
}

Var Tape::add(Var a, Var b) { return binary(a, b, op_add); }
Var Tape::sub(Var a, Var b) { return binary(a, b, op_sub); }
Var Tape::mul(Var a, Var b) { return binary(a, b, op_mul); }

Var Tape::scale(Var a, double c) {
    const std::size_t ia = check(a);
    Tensor out = nodes_[ia].value;
    for (auto& v : out.data) v *= c;
    return push(std::move(out), nodes_[ia].needs_grad, [=](Tape& t, std::size_t self) {
        const std::vector<double>& g = t.nodes_[self].grad;
        std::vector<double>& dst = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += c * g[i];
    });
}

Var Tape::shift(Var a, double c) {
    const std::size_t ia = check(a);
    Tensor out = nodes_[ia].value;
    for (auto& v : out.data) v += c;
    return push(std::move(out), nodes_[ia].needs_grad, [=](Tape& t, std::size_t self) {
        accumulate(t.grad_buffer(ia), t.nodes_[self].grad);
    });
}

Var Tape::square(Var a) {
    const std::size_t ia = check(a);
    Tensor out = nodes_[ia].value;
    for (auto& v : out.data) v *= v;
    return push(std::move(out), nodes_[ia].needs_grad, [=](Tape& t, std::size_t self) {
        const std::vector<double>& g = t.nodes_[self].grad;
        const std::vector<double>& x = t.nodes_[ia].value.data;
        std::vector<double>& dst = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += 2.0 * x[i] * g[i];
    });
}

Var Tape::tanh(Var a) {
    const std::size_t ia = check(a);
    Tensor out = nodes_[ia].value;
    for (auto& v : out.data) v = fast_tanh(v);
    return push(std::move(out), nodes_[ia].needs_grad, [=](Tape& t, std::size_t self) {
        const std::vector<double>& g = t.nodes_[self].grad;
        const std::vector<double>& y = t.nodes_[self].value.data;
        std::vector<double>& dst = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += (1.0 - y[i] * y[i]) * g[i];
    });
}

Var Tape::relu(Var a) {
    const std::size_t ia = check(a);
    Tensor out = nodes_[ia].value;
    for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
    return push(std::move(out), nodes_[ia].needs_grad, [=](Tape& t, std::size_t self) {
        const std::vector<double>& g = t.nodes_[self].grad;
        const std::vector<double>& x = t.nodes_[ia].value.data;
        std::vector<double>& dst = t.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += x[i] > 0.0 ? g[i] : 0.0;
    });
}

Var Tape::sum(Var a) {
    const std::size_t ia = check(a);
    double s = 0.0;
    for (const double v : nodes_[ia].value.data) s += v;
    return push(Tensor::scalar(s), nodes_[ia].needs_grad, [=](Tape& t, std::size_t self) {
        const double g = t.nodes_[self].grad[0];
        for (auto& d : t.grad_buffer(ia)) d += g;
    });
}

Var Tape::mean(Var a) {
    const std::size_t n = value(a).size();
    if (n == 0) throw Error(ErrorKind::dimension_mismatch, "mean of an empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var Tape::group_mean(Var a, Grouping grouping) {
    const std::size_t ia = check(a);
    const Tensor& x = nodes_[ia].value;
    if (x.rows != grouping.rows() || grouping.group_size == 0) {
        throw Error(ErrorKind::dimension_mismatch, "group_mean of " + shape(x) + " over " +
                                                       std::to_string(grouping.groups) + " groups of " +
                                                       std::to_string(grouping.group_size));
    }
    const std::size_t gs = grouping.group_size;
    const double inv = 1.0 / static_cast<double>(gs);
    Tensor out(grouping.groups, x.cols);
    for (std::size_t c = 0; c < x.cols; ++c) {
        for (std::size_t m = 0; m < grouping.groups; ++m) {
            const double* col = x.data.data() + c * x.rows + m * gs;
            double s = 0.0;
            for (std::size_t n = 0; n < gs; ++n) s += col[n];
            out(m, c) = s * inv;
        }
    }
    return push(std::move(out), nodes_[ia].needs_grad, [=](Tape& t, std::size_t self) {
        const Tensor& gv = t.nodes_[self].value;
        const std::vector<double>& g = t.nodes_[self].grad;
        std::vector<double>& dst = t.grad_buffer(ia);
        const std::size_t rows = grouping.rows();
        for (std::size_t c = 0; c < gv.cols; ++c) {
            for (std::size_t m = 0; m < grouping.groups; ++m) {
                const double d = g[c * gv.rows + m] * inv;
                double* col = dst.data() + c * rows + m * gs;
                for (std::size_t n = 0; n < gs; ++n) col[n] += d;
            }
        }
    });
}

Var Tape::broadcast(Var a, Grouping grouping) {
    const std::size_t ia = check(a);
    const Tensor& x = nodes_[ia].value;
    if (x.rows != grouping.groups) {
        throw Error(ErrorKind::dimension_mismatch,
                    "broadcast of " + shape(x) + " over " + std::to_string(grouping.groups) + " groups");
    }
    const std::size_t gs = grouping.group_size;
    const std::size_t rows = grouping.rows();
    Tensor out(rows, x.cols);
    for (std::size_t c = 0; c < x.cols; ++c) {
        for (std::size_t m = 0; m < grouping.groups; ++m) {
            const double v = x(m, c);
            double* col = out.data.data() + c * rows + m * gs;
            for (std::size_t n = 0; n < gs; ++n) col[n] = v;
        }
    }
    return push(std::move(out), nodes_[ia].needs_grad, [=](Tape& t, std::size_t self) {
        const std::vector<double>& g = t.nodes_[self].grad;
        std::vector<double>& dst = t.grad_buffer(ia);
        const std::size_t cols = t.nodes_[ia].value.cols;
        for (std::size_t c = 0; c < cols; ++c) {
            for (std::size_t m = 0; m < grouping.groups; ++m) {
                const double* col = g.data() + c * rows + m * gs;
                double s = 0.0;
                for (std::size_t n = 0; n < gs; ++n) s += col[n];
                dst[c * grouping.groups + m] += s;
            }
        }
    });
}

Var Tape::row_dot(Var a, Var b) {
    const std::size_t ia = check(a);
    const std::size_t ib = check(b);
    const Tensor& x = nodes_[ia].value;
    const Tensor& y = nodes_[ib].value;
    if (x.rows != y.rows || x.cols != y.cols) {
        throw Error(ErrorKind::dimension_mismatch, "row_dot operands " + shape(x) + " and " + shape(y));
    }
    Tensor out(x.rows, 1);
    for (std::size_t c = 0; c < x.cols; ++c) {
        for (std::size_t r = 0; r < x.rows; ++r) out.data[r] += x(r, c) * y(r, c);
    }
    const bool needs = nodes_[ia].needs_grad || nodes_[ib].needs_grad;
    return push(std::move(out), needs, [=](Tape& t, std::size_t self) {
        const std::vector<double>& g = t.nodes_[self].grad;
        for (int side = 0; side < 2; ++side) {
            const std::size_t id = side == 0 ? ia : ib;
            if (!t.nodes_[id].needs_grad) continue;
            const Tensor& other = t.nodes_[side == 0 ? ib : ia].value;
            std::vector<double>& dst = t.grad_buffer(id);
            for (std::size_t c = 0; c < other.cols; ++c) {
                for (std::size_t r = 0; r < other.rows; ++r) dst[c * other.rows + r] += g[r] * other(r, c);
            }
        }
    });
}

Var Tape::concat_cols(Var a, Var b) {
    const std::size_t ia = check(a);
    const std::size_t ib = check(b);
    const Tensor& x = nodes_[ia].value;
    const Tensor& y = nodes_[ib].value;
    if (x.rows != y.rows) {
        throw Error(ErrorKind::dimension_mismatch, "concat_cols operands " + shape(x) + " and " + shape(y));
    }
    Tensor out(x.rows, x.cols + y.cols);
    std::copy(x.data.begin(), x.data.end(), out.data.begin());
    std::copy(y.data.begin(), y.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(x.size()));
    const std::size_t split = x.size();
    const bool needs = nodes_[ia].needs_grad || nodes_[ib].needs_grad;
    return push(std::move(out), needs, [=](Tape& t, std::size_t self) {
        const std::vector<double>& g = t.nodes_[self].grad;
        if (t.nodes_[ia].needs_grad) accumulate(t.grad_buffer(ia), std::span(g).subspan(0, split));
        if (t.nodes_[ib].needs_grad) accumulate(t.grad_buffer(ib), std::span(g).subspan(split));
    });
}

Var Tape::slice(Var a, std::size_t offset, std::size_t count) {
    const std::size_t ia = check(a);
    const Tensor& x = nodes_[ia].value;
    if (x.cols != 1 || offset + count > x.rows) {
        throw Error(ErrorKind::dimension_mismatch, "slice [" + std::to_string(offset) + ", " +
                                                       std::to_string(offset + count) + ") of " + shape(x));
    }
    Tensor out(count, 1);
    std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(offset), count, out.data.begin());
    return push(std::move(out), nodes_[ia].needs_grad, [=](Tape& t, std::size_t self) {
        const std::vector<double>& g = t.nodes_[self].grad;
        std::vector<double>& dst = t.grad_buffer(ia);
        for (std::size_t i = 0; i < count; ++i) dst[offset + i] += g[i];
    });
}

ValueAndGrad value_and_grad(const LossClosure& loss, std::span<const double> params) {
    Tape tape;
    const Var theta = tape.variable(Tensor::column(std::vector<double>(params.begin(), params.end())));
    const Var out = loss(tape, theta);
    ValueAndGrad r;
    r.value = tape.scalar(out);
    tape.backward(out);
    r.grad = tape.grad(theta).data;
    return r;
}

std::vector<double> grad(const LossClosure& loss, std::span<const double> params) {
    return value_and_grad(loss, params).grad;
}

ParameterSet::ParameterSet(std::vector<Mlp*> nets) : nets_(std::move(nets)) {
    offsets_.reserve(nets_.size());
    for (const Mlp* n : nets_) {
        offsets_.push_back(total_);
        total_ += n->params().size();
    }
}

std::vector<double> ParameterSet::gather() const {
    std::vector<double> flat(total_);
    for (std::size_t i = 0; i < nets_.size(); ++i) {
        const auto p = nets_[i]->params();
        std::copy(p.begin(), p.end(), flat.begin() + static_cast<std::ptrdiff_t>(offsets_[i]));
    }
    return flat;
}

void ParameterSet::scatter(std::span<const double> flat) {
    if (flat.size() != total_) {
        throw Error(ErrorKind::dimension_mismatch, "parameter vector has the wrong length");
    }
    for (std::size_t i = 0; i < nets_.size(); ++i) {
        auto p = nets_[i]->params();
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offsets_[i]), p.size(), p.begin());
    }
}

ValueAndGrad value_and_grad(const ParameterSet& set, const NetsLossClosure& loss) {
    return value_and_grad(
        [&](Tape& tape, Var theta) {
            std::vector<Var> parts;
            parts.reserve(set.count());
            for (std::size_t i = 0; i < set.count(); ++i) {
                parts.push_back(tape.slice(theta, set.offset(i), set.net(i).params().size()));
            }
            return loss(tape, parts);
        },
        set.gather());
}

} // namespace mfnn::ad
