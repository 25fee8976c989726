#pragma once

#include <span>
#include <string>

#include "capsules/execution.hpp"

namespace capsules {

struct ReportOptions {
    // Judge minimum detectable differences (reporting concept only; never
    // gates control flow). Deltas below `judge_mdd` are annotated as
    // statistically null; `judge_mdd_strict` is printed for context.
    double judge_mdd = 0.030;
    double judge_mdd_strict = 0.065;
};

// Renders the cross-run report: token-savings table with separate achievable
// and gate-adjusted columns, quality deltas annotated against the MDD, and a
// per-group mode-decision timeline. Byte-stable for identical inputs.
std::string render_report(std::span<const RunResult> results, const ReportOptions& options = {});

}  // namespace capsules
