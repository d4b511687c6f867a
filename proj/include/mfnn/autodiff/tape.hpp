#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mfnn/autodiff/kernels.hpp"
#include "mfnn/autodiff/mlp.hpp"

namespace mfnn::ad {

/// Dense column-major matrix; entry (r, c) at data[c * rows + r].
struct Tensor {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
    Tensor(std::size_t r, std::size_t c, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor(1, 1, v); }
    static Tensor column(std::vector<double> values);

    std::size_t size() const noexcept { return data.size(); }
    double& operator()(std::size_t r, std::size_t c) noexcept { return data[c * rows + r]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data[c * rows + r]; }
};

class Tape;

/// Handle to a node of a Tape. A default-constructed Var is "absent".
class Var {
public:
    Var() = default;

    bool valid() const noexcept { return tape_ != nullptr; }
    std::size_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Reverse-mode tape over the small set of primitives the networks and the
/// losses need. Binary elementwise ops accept equal shapes or a 1x1 operand.
/// Passing a Var from another tape (or an absent Var where one is required)
/// raises unsupported-primitive.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var constant(double value) { return constant(Tensor::scalar(value)); }
    /// Differentiable input; after backward() its gradient is in grad(var).
    Var variable(Tensor value);

    /// Batched feedforward network. `params` is a column holding the flat
    /// parameter vector of `spec`. Row r of the input is the r-th row of
    /// `sample` followed by the row of `group` belonging to r's group; either
    /// may be absent. Output: rows x output_dim.
    Var mlp(const MlpSpec& spec, Var params, Var sample, Var group, Grouping grouping);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double c);
    Var shift(Var a, double c);
    Var square(Var a);
    Var tanh(Var a);
    Var relu(Var a);

    /// Mean / sum of all entries, 1x1.
    Var mean(Var a);
    Var sum(Var a);
    /// rows x c -> groups x c: average over the rows of each group.
    Var group_mean(Var a, Grouping grouping);
    /// groups x c -> rows x c: repeat each group's row over its rows.
    Var broadcast(Var a, Grouping grouping);
    /// Row-wise inner product of two equal-shape matrices, rows x 1.
    Var row_dot(Var a, Var b);
    Var concat_cols(Var a, Var b);
    /// Entries [offset, offset + count) of a column, count x 1.
    Var slice(Var a, std::size_t offset, std::size_t count);

    const Tensor& value(Var v) const;
    double scalar(Var v) const;
    /// Gradient after backward(); zeros if the node received none.
    Tensor grad(Var v) const;

    /// Reverse sweep from a 1x1 node.
    void backward(Var loss);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        bool needs_grad = false;
        std::function<void(Tape&, std::size_t)> back;
    };

    std::size_t check(Var v) const;
    Node& node(Var v) { return nodes_[check(v)]; }
    const Node& node(Var v) const { return nodes_[check(v)]; }
    std::vector<double>& grad_buffer(std::size_t id);
    Var push(Tensor value, bool needs_grad, std::function<void(Tape&, std::size_t)> back);
    Var binary(Var a, Var b, int op);

    std::vector<Node> nodes_;
};

using LossClosure = std::function<Var(Tape&, Var params)>;

struct ValueAndGrad {
    double value = 0.0;
    std::vector<double> grad;
};

/// Exact reverse-mode gradient of a scalar closure of a flat parameter
/// column.
ValueAndGrad value_and_grad(const LossClosure& loss, std::span<const double> params);
std::vector<double> grad(const LossClosure& loss, std::span<const double> params);

/// Several networks viewed as one flat parameter vector (concatenated in
/// order).
class ParameterSet {
public:
    explicit ParameterSet(std::vector<Mlp*> nets);

    std::size_t size() const noexcept { return total_; }
    std::size_t count() const noexcept { return nets_.size(); }
    std::size_t offset(std::size_t i) const noexcept { return offsets_[i]; }
    const Mlp& net(std::size_t i) const noexcept { return *nets_[i]; }

    std::vector<double> gather() const;
    void scatter(std::span<const double> flat);

private:
    std::vector<Mlp*> nets_;
    std::vector<std::size_t> offsets_;
    std::size_t total_ = 0;
};

/// The closure receives one parameter column per network of the set.
using NetsLossClosure = std::function<Var(Tape&, std::span<const Var> params)>;
ValueAndGrad value_and_grad(const ParameterSet& set, const NetsLossClosure& loss);

} // namespace mfnn::ad
