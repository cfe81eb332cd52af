// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dsffseg/autodiff.hpp"

#include "doctest.h"

#include <cmath>
#include <vector>

namespace dsffseg::test {

inline Tensor vec(std::initializer_list<double> v) { return Tensor({static_cast<Index>(v.size())}, v); }

inline double max_abs_diff(const Tensor& a, const Tensor& b)
{
    REQUIRE(a.dims() == b.dims());
    return a.size() == 0 ? 0.0 : (a.data() - b.data()).cwiseAbs().maxCoeff();
}

inline void check_close(const Tensor& got, std::initializer_list<double> want, double tol)
{
    REQUIRE(got.size() == static_cast<Index>(want.size()));
    Index i = 0;
    for (double w : want) {
        CHECK(std::abs(got[i] - w) <= tol);
        ++i;
    }
}

} // namespace dsffseg::test
