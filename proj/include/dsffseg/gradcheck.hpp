// Copyright 2026 The dsffseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dsffseg/autodiff.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dsffseg {

/// One differentiable computation with its trainable inputs. `forward` reads
/// the leaves' current values, so perturbing them in place changes its result.
struct GradCase {
    std::vector<Var> leaves;
    std::function<Var()> forward;
};

/// Largest relative error between reverse-mode and central-difference
/// gradients of sum(forward() * probe) over every leaf element.
double gradcheck_case(const GradCase& c, Rng& rng, double eps = 1e-5);

struct GradCheckResult {
    std::string op;
    int instance = 0;
    double max_rel_error = 0.0;
};

/// Names of the operations covered by run_gradcheck, in run order.
std::vector<std::string> gradcheck_ops();

/// Builds `instances` random cases per op from `seed` and checks each.
std::vector<GradCheckResult> run_gradcheck(std::uint64_t seed, int instances = 3, double eps = 1e-5);

} // namespace dsffseg
