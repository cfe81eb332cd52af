// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace dsffseg {

using Index = Eigen::Index;
using Dims = std::vector<Index>;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Thrown whenever operand extents are incompatible with an operation.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

std::string format_dims(const Dims& dims);
Index dims_product(const Dims& dims);

/// Dense row-major array of doubles.
///
/// Feature maps are (channels, height, width); token sequences are
/// (tokens, channels). The flat buffer is an Eigen vector so any rank-2 view
/// can be mapped straight into Eigen expressions without copying.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Dims dims);
    Tensor(Dims dims, Eigen::VectorXd data);
    Tensor(Dims dims, std::initializer_list<double> values);

    static Tensor zeros(Dims dims) { return Tensor(std::move(dims)); }
    static Tensor full(Dims dims, double value);
    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    const Dims& dims() const noexcept { return dims_; }
    Index rank() const noexcept { return static_cast<Index>(dims_.size()); }
    Index dim(Index axis) const { return dims_.at(static_cast<std::size_t>(axis)); }
    Index size() const noexcept { return data_.size(); }

    Eigen::VectorXd& data() noexcept { return data_; }
    const Eigen::VectorXd& data() const noexcept { return data_; }

    double& operator[](Index i) { return data_[i]; }
    double operator[](Index i) const { return data_[i]; }

    double& at(Index c, Index h, Index w) { return data_[(c * dims_[1] + h) * dims_[2] + w]; }
    double at(Index c, Index h, Index w) const { return data_[(c * dims_[1] + h) * dims_[2] + w]; }

    /// Row-major view of the buffer as a rows x cols matrix.
    Eigen::Map<RowMatrixXd> matrix(Index rows, Index cols);
    Eigen::Map<const RowMatrixXd> matrix(Index rows, Index cols) const;
    /// Rank-2 tensors only.
    Eigen::Map<RowMatrixXd> matrix();
    Eigen::Map<const RowMatrixXd> matrix() const;

    Tensor reshaped(Dims dims) const;

    bool all_finite() const { return data_.allFinite(); }

    friend bool operator==(const Tensor& a, const Tensor& b)
    {
        return a.dims_ == b.dims_ && a.data_ == b.data_;
    }

private:
    Dims dims_;
    Eigen::VectorXd data_;
};

/// SplitMix64 generator. The stream depends only on the seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    bool bernoulli(double p) { return uniform() < p; }

    /// Independent generator keyed by (current seed state, stream id).
    Rng fork(std::uint64_t stream) const;

    std::uint64_t state() const noexcept { return state_; }

private:
    std::uint64_t state_;
};

/// Stateless SplitMix64 finalizer, used for seed derivation.
std::uint64_t mix64(std::uint64_t x);

Tensor uniform_tensor(Rng& rng, Dims dims, double lo, double hi);

// DSFT container: "DSFT", u32 version, u32 rank, rank x u32 dims,
// product(dims) x f64 payload. All integers and floats little-endian.
inline constexpr std::uint32_t kDsftVersion = 1;

void write_dsft(std::ostream& os, const Tensor& t);
Tensor read_dsft(std::istream& is);
std::string encode_dsft(const Tensor& t);
Tensor decode_dsft(const std::string& bytes);

} // namespace dsffseg
