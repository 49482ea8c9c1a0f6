#include <atomic>
#include <exception>
#include <limits>
#include <mutex>
#include <thread>

#include <fmt/format.h>

#include "ccplab/pipeline/pipeline.hpp"

namespace ccplab::pipeline {

namespace {

struct Table5Row {
    const char* label;
    const char* bank;
    bool l2;
    const char* bn;
};

// bank / L2 / batch-norm rows; "none" keeps the head's BN on its initial running statistics
constexpr Table5Row kTable5[] = {
    {"mb=1 l2=0 bn=none", "language_specific", false, "symmetric_eval"},
    {"mb=1 l2=1 bn=none", "language_specific", true, "symmetric_eval"},
    {"mb=1 l2=0 bn=abn", "language_specific", false, "asymmetric"},
    {"mb=1 l2=1 bn=abn", "language_specific", true, "asymmetric"},
    {"mb=0 l2=1 bn=abn", "off", true, "asymmetric"},
    {"mb=1 l2=1 bn=vanilla", "language_specific", true, "symmetric_train"},
};

constexpr double kTemperatures[] = {0.001, 0.01, 0.1, 1.0};

double mean_over_pairs(const std::vector<PairEvaluation>& evals, double evaluation::RetrievalReport::*field,
                       evaluation::RetrievalReport PairEvaluation::*report) {
    double s = 0.0;
    for (const auto& e : evals) s += e.*report.*field;
    return evals.empty() ? std::numeric_limits<double>::quiet_NaN() : s / double(evals.size());
}

}  // namespace

std::vector<AblationCell> ablation_grid(const std::string& name, std::span<const std::uint64_t> seeds) {
    std::vector<AblationCell> cells;
    auto add = [&](std::string label, std::vector<std::string> overrides) {
        for (auto seed : seeds) cells.push_back({name, label, overrides, seed});
    };
    if (name == "table5") {
        for (const auto& row : kTable5)
            for (double tau : kTemperatures)
                add(fmt::format("{} tau={}", row.label, tau),
                    {fmt::format("ccp.bank_mode={}", row.bank), fmt::format("ccp.l2_normalize={}", row.l2),
                     fmt::format("ccp.bn_mode={}", row.bn), fmt::format("ccp.temperature={}", tau)});
    } else if (name == "table6") {
        for (std::size_t w : {2, 3, 5})
            for (std::size_t b : {8, 16, 32, 64})
                add(fmt::format("w={} batch={}", w, b),
                    {fmt::format("ccp.window={}", w), fmt::format("ccp.pairs_per_batch={}", b)});
    } else if (name == "bank") {
        for (const char* mode : {"language_specific", "shared", "off"})
            add(fmt::format("bank={}", mode), {fmt::format("ccp.bank_mode={}", mode)});
    } else {
        throw ConfigError("unknown ablation grid '" + name + "' (table5, table6, bank)");
    }
    return cells;
}

AblationResult run_cell(const RunConfig& base, const AblationCell& cell) {
    RunConfig config = base;
    for (const auto& o : cell.overrides) apply_override(config, o);
    config.seed = cell.seed;
    config.corpus.seed = cell.seed;
    config.validate();

    const auto r = run_pipeline(config);
    AblationResult out;
    out.cell = cell;
    out.steps = r.training.steps_done;
    out.final_loss = r.training.final_loss;
    out.diverged = r.training.diverged;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    if (r.training.diverged) {
        out.top1_raw = out.top1_shifted = out.top1_avg = out.top1_oracle = nan;
        out.note = r.training.divergence;
        return out;
    }
    using RR = evaluation::RetrievalReport;
    out.top1_raw = mean_over_pairs(r.unsupervised, &RR::top1_avg, &PairEvaluation::raw);
    out.top1_shifted = mean_over_pairs(r.unsupervised, &RR::top1_avg, &PairEvaluation::shifted);
    out.top1_avg = mean_over_pairs(r.unsupervised, &RR::top1_avg, &PairEvaluation::calibrated);
    out.top1_oracle = mean_over_pairs(r.oracle, &RR::top1_avg, &PairEvaluation::calibrated);
    for (const auto& w : r.warnings) out.note += (out.note.empty() ? "" : "; ") + w;
    return out;
}

std::vector<AblationResult> run_ablation(const RunConfig& base, const std::vector<AblationCell>& cells, std::size_t threads,
                                         const std::function<void(const AblationResult&)>& on_done) {
    std::vector<AblationResult> results(cells.size());
    std::atomic<std::size_t> next{0};
    std::mutex mu;
    std::exception_ptr failure;
    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            try {
                results[i] = run_cell(base, cells[i]);
                if (on_done) {
                    std::lock_guard lock(mu);
                    on_done(results[i]);
                }
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure) failure = std::current_exception();
                next = cells.size();
            }
        }
    };
    threads = std::max<std::size_t>(1, std::min(threads, cells.size()));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    return results;
}

std::vector<std::string> ablation_header() {
    return {"grid", "label", "seed", "steps", "final_loss", "diverged", "top1_raw", "top1_shifted", "top1_avg", "top1_oracle",
            "note"};
}

std::vector<std::string> ablation_row(const AblationResult& r) {
    return {r.cell.grid,
            r.cell.label,
            std::to_string(r.cell.seed),
            std::to_string(r.steps),
            format_number(r.final_loss),
            r.diverged ? "true" : "false",
            format_number(r.top1_raw),
            format_number(r.top1_shifted),
            format_number(r.top1_avg),
            format_number(r.top1_oracle),
            r.note};
}

}  // namespace ccplab::pipeline
