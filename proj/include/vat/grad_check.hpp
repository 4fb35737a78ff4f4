#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vat/tensor.hpp"

namespace vat {

struct GradCheckOptions {
    double eps = 3e-4;            // central-difference step, must lie in [1e-7, 1e-3]
    int64_t max_entries = 10000;  // above this, a seeded subsample of entries is checked
    uint64_t sample_seed = 0x5eedULL;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    int64_t entries_checked = 0;
    std::string worst_param;
    int64_t worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Compares analytic gradients of the scalar function f against central
// finite differences (f(p+eps) - f(p-eps)) / (2 eps) for every entry of
// every named parameter (or a seeded subsample when the total entry count
// exceeds max_entries; every parameter tensor keeps at least a few probes).
// Relative error uses denominator max(|analytic|, |numeric|, 1e-8).
// f must be deterministic; two baseline evaluations are compared bitwise
// and a mismatch raises ContractError.
GradCheckReport grad_check(const std::function<Tensor(Tape*)>& f,
                           const std::vector<std::pair<std::string, Tensor>>& params,
                           const GradCheckOptions& opt = {});

}  // namespace vat
