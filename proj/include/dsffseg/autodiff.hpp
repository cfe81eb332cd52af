// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dsffseg/tensor.hpp"

#include <functional>
#include <memory>
#include <span>

namespace dsffseg {

namespace detail {

struct Node {
    Tensor value;
    Eigen::VectorXd grad; // empty until something flows in
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads this node's grad and accumulates into inputs that require grad.
    std::function<void(Node&)> backward;

    Eigen::VectorXd& grad_buffer()
    {
        if (grad.size() != value.size()) grad = Eigen::VectorXd::Zero(value.size());
        return grad;
    }
};

} // namespace detail

/// Handle to a value in the computation graph. Copies share the node.
class Var {
public:
    Var() = default;

    /// Non-differentiable input.
    static Var constant(Tensor value);
    /// Trainable leaf; its gradient buffer starts at zero.
    static Var leaf(Tensor value, bool requires_grad = true);

    bool defined() const noexcept { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    /// In-place access for optimizers and tests; does not touch the graph.
    Tensor& mutable_value() { return node_->value; }
    const Dims& dims() const { return node_->value.dims(); }
    Index dim(Index axis) const { return node_->value.dim(axis); }
    Index size() const { return node_->value.size(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    /// Accumulated gradient; zeros when nothing reached this node.
    Eigen::VectorXd grad() const;
    Tensor grad_tensor() const { return Tensor(dims(), grad()); }
    void zero_grad();

    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    explicit Var(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    friend Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(detail::Node&)> backward);

    std::shared_ptr<detail::Node> node_;
};

/// Define-by-run operation record.
///
/// Operations are appended while a Tape::Recording scope is active on the
/// current thread. Outside such a scope every op produces a constant, which
/// is what inference wants.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    class Recording {
    public:
        explicit Recording(Tape& tape);
        ~Recording();
        Recording(const Recording&) = delete;
        Recording& operator=(const Recording&) = delete;

    private:
        Tape* previous_;
    };

    static Tape* active() noexcept;

    std::size_t size() const noexcept { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    /// Propagates d(loss)/d(.) to every recorded node and every leaf,
    /// visiting recorded ops in reverse order exactly once.
    void backward(const Var& loss);

private:
    friend Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(detail::Node&)> backward);
    std::vector<std::shared_ptr<detail::Node>> nodes_;
};

inline void backward(Tape& tape, const Var& loss) { tape.backward(loss); }

/// Builds an op output. Records it when any input requires grad and a tape is
/// recording; otherwise the result is a plain constant.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(detail::Node&)> backward);

// ---- operations -----------------------------------------------------------

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var sigmoid(const Var& a);
/// Requires strictly positive input.
Var log(const Var& a);
Var clamp(const Var& a, double lo, double hi);

Var sum(const Var& a);
Var mean(const Var& a);
Var softmax_rows(const Var& a);

Var reshape(const Var& a, Dims dims);
Var concat_channels(std::span<const Var> xs);
Var slice_channels(const Var& a, Index begin, Index count);
Var slice_rows(const Var& a, Index begin, Index count);
/// Picks flat elements by index into a 1-D result.
Var gather(const Var& a, std::span<const Index> indices);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

// ---- finite differences ---------------------------------------------------

/// Central-difference gradient of a scalar function.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps);

/// max_i |a_i - b_i| / max(|a_i|, |b_i|, floor).
double max_relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-3);

} // namespace dsffseg
