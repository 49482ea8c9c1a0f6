#include "ccplab/numcore/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace ccplab::nc {
namespace {

double probe(const LossFn& loss_fn) {
    const double v = loss_fn().item();
    if (!std::isfinite(v)) throw NonFiniteError("finite_diff_check: loss is not finite while probing");
    return v;
}

}  // namespace

GradCheckReport compare_with_finite_differences(const LossFn& loss_fn, std::span<Tensor<double>> params,
                                                const std::vector<std::vector<double>>& analytic,
                                                const GradCheckOptions& options,
                                                std::span<const std::string> names) {
    if (analytic.size() != params.size()) throw ShapeError("finite_diff_check: one analytic block per parameter");
    GradCheckReport report;
    for (std::size_t b = 0; b < params.size(); ++b) {
        auto values = params[b].mutable_values();
        if (analytic[b].size() != values.size()) throw ShapeError("finite_diff_check: analytic block size mismatch");
        BlockGradError block;
        block.name = b < names.size() ? names[b] : "param" + std::to_string(b);
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double saved = values[i];
            values[i] = saved + options.step;
            const double up = probe(loss_fn);
            values[i] = saved - options.step;
            const double down = probe(loss_fn);
            values[i] = saved;
            const double numeric = (up - down) / (2.0 * options.step);
            const double a = analytic[b][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
            const double err = std::abs(a - numeric) / denom;
            if (err > block.max_rel_error) {
                block.max_rel_error = err;
                block.worst_index = i;
            }
        }
        block.flagged = block.max_rel_error > options.tolerance;
        report.max_rel_error = std::max(report.max_rel_error, block.max_rel_error);
        report.passed = report.passed && !block.flagged;
        report.blocks.push_back(std::move(block));
    }
    return report;
}

GradCheckReport finite_diff_check(const LossFn& loss_fn, std::span<Tensor<double>> params,
                                  const GradCheckOptions& options, std::span<const std::string> names) {
    for (auto& p : params) p.zero_grad();
    const Tensor<double> loss = loss_fn();
    if (!std::isfinite(loss.item())) throw NonFiniteError("finite_diff_check: loss is not finite");
    loss.backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) {
        auto g = p.grad();
        analytic.emplace_back(g.empty() ? std::vector<double>(p.numel(), 0.0) : std::vector<double>(g.begin(), g.end()));
        p.zero_grad();
    }
    return compare_with_finite_differences(loss_fn, params, analytic, options, names);
}

}  // namespace ccplab::nc
