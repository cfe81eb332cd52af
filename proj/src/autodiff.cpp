// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsffseg/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace dsffseg {

namespace {

thread_local Tape* g_active_tape = nullptr;

using detail::Node;

void require_same_dims(const Var& a, const Var& b, const char* op)
{
    if (a.dims() != b.dims())
        throw ShapeError(std::string(op) + ": shape mismatch " + format_dims(a.dims()) + " vs " + format_dims(b.dims()));
}

void require_rank2(const Var& a, const char* op)
{
    if (a.value().rank() != 2) throw ShapeError(std::string(op) + ": expected rank-2, got " + format_dims(a.dims()));
}

Node& in(Node& n, std::size_t i) { return *n.inputs[i]; }

} // namespace

Var Var::constant(Tensor value)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
}

Var Var::leaf(Tensor value, bool requires_grad)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    if (requires_grad) n->grad = Eigen::VectorXd::Zero(n->value.size());
    return Var(std::move(n));
}

Eigen::VectorXd Var::grad() const
{
    if (node_->grad.size() == node_->value.size()) return node_->grad;
    return Eigen::VectorXd::Zero(node_->value.size());
}

void Var::zero_grad()
{
    if (node_->requires_grad) node_->grad = Eigen::VectorXd::Zero(node_->value.size());
}

Tape::Recording::Recording(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Recording::~Recording() { g_active_tape = previous_; }

Tape* Tape::active() noexcept { return g_active_tape; }

void Tape::backward(const Var& loss)
{
    if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got " + format_dims(loss.dims()));
    if (!loss.requires_grad()) return;
    loss.node()->grad_buffer()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& n = **it;
        if (n.grad.size() == 0 || !n.backward) continue;
        n.backward(n);
    }
}

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward)
{
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    Tape* tape = g_active_tape;
    const bool needs = std::any_of(inputs.begin(), inputs.end(), [](const Var& v) { return v.requires_grad(); });
    if (tape && needs) {
        n->requires_grad = true;
        n->inputs.reserve(inputs.size());
        for (auto& v : inputs) n->inputs.push_back(v.node());
        n->backward = std::move(backward);
        tape->nodes_.push_back(n);
    }
    return Var(std::move(n));
}

Var matmul(const Var& a, const Var& b)
{
    require_rank2(a, "matmul");
    require_rank2(b, "matmul");
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul: inner dims differ, " + format_dims(a.dims()) + " x " + format_dims(b.dims()));
    Tensor out({a.dim(0), b.dim(1)});
    out.matrix().noalias() = a.value().matrix() * b.value().matrix();
    return make_result(std::move(out), {a, b}, [](Node& n) {
        Node& A = in(n, 0);
        Node& B = in(n, 1);
        const auto dC = Eigen::Map<const RowMatrixXd>(n.grad.data(), n.value.dim(0), n.value.dim(1));
        if (A.requires_grad)
            Eigen::Map<RowMatrixXd>(A.grad_buffer().data(), A.value.dim(0), A.value.dim(1)).noalias() +=
                dC * B.value.matrix().transpose();
        if (B.requires_grad)
            Eigen::Map<RowMatrixXd>(B.grad_buffer().data(), B.value.dim(0), B.value.dim(1)).noalias() +=
                A.value.matrix().transpose() * dC;
    });
}

Var transpose(const Var& a)
{
    require_rank2(a, "transpose");
    Tensor out({a.dim(1), a.dim(0)});
    out.matrix() = a.value().matrix().transpose();
    return make_result(std::move(out), {a}, [](Node& n) {
        Node& A = in(n, 0);
        if (!A.requires_grad) return;
        const auto dC = Eigen::Map<const RowMatrixXd>(n.grad.data(), n.value.dim(0), n.value.dim(1));
        Eigen::Map<RowMatrixXd>(A.grad_buffer().data(), A.value.dim(0), A.value.dim(1)) += dC.transpose();
    });
}

Var add(const Var& a, const Var& b)
{
    require_same_dims(a, b, "add");
    Tensor out(a.dims(), a.value().data() + b.value().data());
    return make_result(std::move(out), {a, b}, [](Node& n) {
        for (std::size_t i = 0; i < 2; ++i)
            if (in(n, i).requires_grad) in(n, i).grad_buffer() += n.grad;
    });
}

Var sub(const Var& a, const Var& b)
{
    require_same_dims(a, b, "sub");
    Tensor out(a.dims(), a.value().data() - b.value().data());
    return make_result(std::move(out), {a, b}, [](Node& n) {
        if (in(n, 0).requires_grad) in(n, 0).grad_buffer() += n.grad;
        if (in(n, 1).requires_grad) in(n, 1).grad_buffer() -= n.grad;
    });
}

Var mul(const Var& a, const Var& b)
{
    require_same_dims(a, b, "mul");
    Tensor out(a.dims(), a.value().data().cwiseProduct(b.value().data()));
    return make_result(std::move(out), {a, b}, [](Node& n) {
        Node& A = in(n, 0);
        Node& B = in(n, 1);
        if (A.requires_grad) A.grad_buffer() += n.grad.cwiseProduct(B.value.data());
        if (B.requires_grad) B.grad_buffer() += n.grad.cwiseProduct(A.value.data());
    });
}

Var scale(const Var& a, double s)
{
    Tensor out(a.dims(), a.value().data() * s);
    return make_result(std::move(out), {a}, [s](Node& n) { in(n, 0).grad_buffer() += s * n.grad; });
}

Var add_scalar(const Var& a, double s)
{
    Tensor out(a.dims(), a.value().data().array() + s);
    return make_result(std::move(out), {a}, [](Node& n) { in(n, 0).grad_buffer() += n.grad; });
}

Var sigmoid(const Var& a)
{
    Tensor out(a.dims());
    const auto& x = a.value().data();
    for (Index i = 0; i < x.size(); ++i) {
        // Split by sign so exp never overflows.
        const double v = x[i];
        if (v >= 0) {
            out[i] = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            out[i] = e / (1.0 + e);
        }
    }
    return make_result(std::move(out), {a}, [](Node& n) {
        const auto& y = n.value.data().array();
        in(n, 0).grad_buffer().array() += n.grad.array() * y * (1.0 - y);
    });
}

Var log(const Var& a)
{
    if ((a.value().data().array() <= 0.0).any()) throw std::domain_error("log: non-positive input");
    Tensor out(a.dims(), a.value().data().array().log().matrix());
    return make_result(std::move(out), {a}, [](Node& n) {
        Node& A = in(n, 0);
        A.grad_buffer().array() += n.grad.array() / A.value.data().array();
    });
}

Var clamp(const Var& a, double lo, double hi)
{
    Tensor out(a.dims(), a.value().data().cwiseMax(lo).cwiseMin(hi));
    return make_result(std::move(out), {a}, [lo, hi](Node& n) {
        Node& A = in(n, 0);
        auto& g = A.grad_buffer();
        const auto& x = A.value.data();
        for (Index i = 0; i < x.size(); ++i)
            if (x[i] >= lo && x[i] <= hi) g[i] += n.grad[i];
    });
}

Var sum(const Var& a)
{
    return make_result(Tensor::scalar(a.value().data().sum()), {a},
                       [](Node& n) { in(n, 0).grad_buffer().array() += n.grad[0]; });
}

Var mean(const Var& a)
{
    const double count = static_cast<double>(a.size());
    return make_result(Tensor::scalar(a.value().data().sum() / count), {a},
                       [count](Node& n) { in(n, 0).grad_buffer().array() += n.grad[0] / count; });
}

Var softmax_rows(const Var& a)
{
    require_rank2(a, "softmax_rows");
    Tensor out(a.dims());
    const auto x = a.value().matrix();
    auto y = out.matrix();
    for (Index r = 0; r < x.rows(); ++r) {
        const double m = x.row(r).maxCoeff();
        y.row(r) = (x.row(r).array() - m).exp().matrix();
        y.row(r) /= y.row(r).sum();
    }
    return make_result(std::move(out), {a}, [](Node& n) {
        const auto y = n.value.matrix();
        const auto dy = Eigen::Map<const RowMatrixXd>(n.grad.data(), y.rows(), y.cols());
        Node& A = in(n, 0);
        auto dx = Eigen::Map<RowMatrixXd>(A.grad_buffer().data(), y.rows(), y.cols());
        for (Index r = 0; r < y.rows(); ++r) {
            const double dot = dy.row(r).dot(y.row(r));
            dx.row(r).array() += y.row(r).array() * (dy.row(r).array() - dot);
        }
    });
}

Var reshape(const Var& a, Dims dims)
{
    Tensor out = a.value().reshaped(std::move(dims));
    return make_result(std::move(out), {a}, [](Node& n) { in(n, 0).grad_buffer() += n.grad; });
}

Var concat_channels(std::span<const Var> xs)
{
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    const Dims& first = xs[0].dims();
    if (first.size() != 3) throw ShapeError("concat_channels: expected CxHxW, got " + format_dims(first));
    Index channels = 0;
    for (const auto& x : xs) {
        if (x.dims().size() != 3 || x.dim(1) != first[1] || x.dim(2) != first[2])
            throw ShapeError("concat_channels: spatial mismatch " + format_dims(first) + " vs " + format_dims(x.dims()));
        channels += x.dim(0);
    }
    Tensor out({channels, first[1], first[2]});
    Index offset = 0;
    std::vector<Index> offsets;
    for (const auto& x : xs) {
        offsets.push_back(offset);
        out.data().segment(offset, x.size()) = x.value().data();
        offset += x.size();
    }
    std::vector<Var> inputs(xs.begin(), xs.end());
    return make_result(std::move(out), std::move(inputs), [offsets](Node& n) {
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
            Node& X = in(n, i);
            if (X.requires_grad) X.grad_buffer() += n.grad.segment(offsets[i], X.value.size());
        }
    });
}

Var slice_channels(const Var& a, Index begin, Index count)
{
    if (a.dims().size() != 3 || begin < 0 || count <= 0 || begin + count > a.dim(0))
        throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", +" + std::to_string(count) +
                         ") invalid for " + format_dims(a.dims()));
    const Index plane = a.dim(1) * a.dim(2);
    Tensor out({count, a.dim(1), a.dim(2)}, a.value().data().segment(begin * plane, count * plane));
    return make_result(std::move(out), {a}, [begin, plane](Node& n) {
        in(n, 0).grad_buffer().segment(begin * plane, n.value.size()) += n.grad;
    });
}

Var slice_rows(const Var& a, Index begin, Index count)
{
    require_rank2(a, "slice_rows");
    if (begin < 0 || count <= 0 || begin + count > a.dim(0))
        throw ShapeError("slice_rows: range invalid for " + format_dims(a.dims()));
    const Index cols = a.dim(1);
    Tensor out({count, cols}, a.value().data().segment(begin * cols, count * cols));
    return make_result(std::move(out), {a}, [begin, cols](Node& n) {
        in(n, 0).grad_buffer().segment(begin * cols, n.value.size()) += n.grad;
    });
}

Var gather(const Var& a, std::span<const Index> indices)
{
    Tensor out({static_cast<Index>(indices.size())});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] < 0 || indices[i] >= a.size()) throw ShapeError("gather: index out of range");
        out[static_cast<Index>(i)] = a.value()[indices[i]];
    }
    std::vector<Index> idx(indices.begin(), indices.end());
    return make_result(std::move(out), {a}, [idx = std::move(idx)](Node& n) {
        auto& g = in(n, 0).grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += n.grad[static_cast<Index>(i)];
    });
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps)
{
    Tensor grad(x.dims());
    Tensor probe = x;
    for (Index i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double up = f(probe);
        probe[i] = orig - eps;
        const double down = f(probe);
        probe[i] = orig;
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

double max_relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor)
{
    if (a.size() != b.size()) throw ShapeError("max_relative_error: length mismatch");
    double worst = 0.0;
    for (Index i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

} // namespace dsffseg
