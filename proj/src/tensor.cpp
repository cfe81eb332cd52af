// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "dsffseg/tensor.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>

namespace dsffseg {

std::string format_dims(const Dims& dims)
{
    std::string s = "[";
    for (std::size_t i = 0; i < dims.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(dims[i]);
    }
    return s + "]";
}

Index dims_product(const Dims& dims)
{
    Index n = 1;
    for (Index d : dims) {
        if (d <= 0) throw ShapeError("non-positive extent in " + format_dims(dims));
        n *= d;
    }
    return n;
}

Tensor::Tensor(Dims dims) : dims_(std::move(dims)), data_(Eigen::VectorXd::Zero(dims_product(dims_))) {}

Tensor::Tensor(Dims dims, Eigen::VectorXd data) : dims_(std::move(dims)), data_(std::move(data))
{
    if (dims_product(dims_) != data_.size())
        throw ShapeError("tensor " + format_dims(dims_) + " given " + std::to_string(data_.size()) + " values");
}

Tensor::Tensor(Dims dims, std::initializer_list<double> values) : dims_(std::move(dims)), data_(values.size())
{
    if (dims_product(dims_) != static_cast<Index>(values.size()))
        throw ShapeError("tensor " + format_dims(dims_) + " given " + std::to_string(values.size()) + " values");
    Index i = 0;
    for (double v : values) data_[i++] = v;
}

Tensor Tensor::full(Dims dims, double value)
{
    Tensor t(std::move(dims));
    t.data_.setConstant(value);
    return t;
}

Eigen::Map<RowMatrixXd> Tensor::matrix(Index rows, Index cols)
{
    if (rows * cols != size()) throw ShapeError("cannot view " + format_dims(dims_) + " as matrix");
    return {data_.data(), rows, cols};
}

Eigen::Map<const RowMatrixXd> Tensor::matrix(Index rows, Index cols) const
{
    if (rows * cols != size()) throw ShapeError("cannot view " + format_dims(dims_) + " as matrix");
    return {data_.data(), rows, cols};
}

Eigen::Map<RowMatrixXd> Tensor::matrix()
{
    if (rank() != 2) throw ShapeError("expected rank-2 tensor, got " + format_dims(dims_));
    return matrix(dims_[0], dims_[1]);
}

Eigen::Map<const RowMatrixXd> Tensor::matrix() const
{
    if (rank() != 2) throw ShapeError("expected rank-2 tensor, got " + format_dims(dims_));
    return matrix(dims_[0], dims_[1]);
}

Tensor Tensor::reshaped(Dims dims) const
{
    if (dims_product(dims) != size())
        throw ShapeError("cannot reshape " + format_dims(dims_) + " to " + format_dims(dims));
    return Tensor(std::move(dims), data_);
}

std::uint64_t mix64(std::uint64_t z)
{
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t Rng::next_u64()
{
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix64(state_);
}

double Rng::uniform()
{
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n)
{
    if (n == 0) throw std::invalid_argument("Rng::below(0)");
    // Rejection keeps the draw unbiased.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

Rng Rng::fork(std::uint64_t stream) const
{
    return Rng(mix64(state_ ^ mix64(stream + 0x632BE59BD9B4E019ULL)));
}

Tensor uniform_tensor(Rng& rng, Dims dims, double lo, double hi)
{
    Tensor t(std::move(dims));
    for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v)
{
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is)
{
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("DSFT: truncated header");
    return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
}

void put_f64(std::ostream& os, double v)
{
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    os.write(b, 8);
}

} // namespace

void write_dsft(std::ostream& os, const Tensor& t)
{
    os.write("DSFT", 4);
    put_u32(os, kDsftVersion);
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.dims()) put_u32(os, static_cast<std::uint32_t>(d));
    for (Index i = 0; i < t.size(); ++i) put_f64(os, t[i]);
}

Tensor read_dsft(std::istream& is)
{
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "DSFT", 4) != 0) throw std::runtime_error("DSFT: bad magic");
    const std::uint32_t version = get_u32(is);
    if (version != kDsftVersion) throw std::runtime_error("DSFT: unsupported version " + std::to_string(version));
    const std::uint32_t rank = get_u32(is);
    if (rank == 0 || rank > 8) throw std::runtime_error("DSFT: invalid rank " + std::to_string(rank));
    Dims dims(rank);
    for (auto& d : dims) d = get_u32(is);
    Tensor t(dims);
    std::vector<unsigned char> buf(static_cast<std::size_t>(t.size()) * 8);
    if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
        throw std::runtime_error("DSFT: truncated payload");
    for (Index i = 0; i < t.size(); ++i) {
        std::uint64_t bits = 0;
        for (int k = 0; k < 8; ++k) bits |= std::uint64_t{buf[static_cast<std::size_t>(i * 8 + k)]} << (8 * k);
        t[i] = std::bit_cast<double>(bits);
    }
    return t;
}

std::string encode_dsft(const Tensor& t)
{
    std::ostringstream os(std::ios::binary);
    write_dsft(os, t);
    return std::move(os).str();
}

Tensor decode_dsft(const std::string& bytes)
{
    std::istringstream is(bytes, std::ios::binary);
    return read_dsft(is);
}

} // namespace dsffseg
