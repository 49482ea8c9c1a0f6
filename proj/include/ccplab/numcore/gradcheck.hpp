#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ccplab/numcore/tensor.hpp"

namespace ccplab::nc {

struct BlockGradError {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    bool flagged = false;
};

struct GradCheckReport {
    std::vector<BlockGradError> blocks;
    double max_rel_error = 0.0;
    bool passed = true;
};

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    // Denominator floor so entries whose true gradient is ~0 are judged on
    // absolute error.
    double abs_floor = 1e-5;
};

using LossFn = std::function<Tensor<double>()>;

// Compares `analytic` against central differences (f(p+h) - f(p-h)) / 2h.
// Relative error per entry is |a - n| / max(|a|, |n|, abs_floor).
GradCheckReport compare_with_finite_differences(const LossFn& loss_fn, std::span<Tensor<double>> params,
                                                const std::vector<std::vector<double>>& analytic,
                                                const GradCheckOptions& options = {},
                                                std::span<const std::string> names = {});

// Runs one backward pass of loss_fn for the analytic gradients, then compares.
// loss_fn must be deterministic given the parameter values.
GradCheckReport finite_diff_check(const LossFn& loss_fn, std::span<Tensor<double>> params,
                                  const GradCheckOptions& options = {}, std::span<const std::string> names = {});

}  // namespace ccplab::nc
