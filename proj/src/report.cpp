#include "capsules/report.hpp"

#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <vector>

#include "capsules/errors.hpp"

namespace capsules {

namespace {

struct GroupAggregate {
    long achievable = 0;
    long realized = 0;
    std::vector<double> fine_quality;
    std::vector<double> compound_quality;
    std::vector<std::string> timeline;
};

double mean_or_nan(const std::vector<double>& xs) {
    if (xs.empty()) return std::nan("");
    return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

}  // namespace

std::string render_report(std::span<const RunResult> results, const ReportOptions& options) {
    if (results.empty())
        throw CapsuleError(ErrorCode::InvalidArgument, "report requires at least one result");

    std::map<std::string, GroupAggregate> groups;
    int run_index = 0;
    for (const RunResult& result : results) {
        ++run_index;
        for (const auto& [name, group] : result.per_group) {
            GroupAggregate& agg = groups[name];
            agg.achievable += group.achievable_savings_tokens;
            agg.realized += group.realized_savings_tokens;
            if (group.quality) {
                (group.mode_used == Mode::COMPOUND ? agg.compound_quality : agg.fine_quality)
                    .push_back(*group.quality);
            }
            for (const ModeDecision& d : group.decisions) {
                std::ostringstream line;
                line << "    result " << run_index << " run " << d.run_id << ": "
                     << to_string(d.mode);
                if (d.tier) line << "/" << to_string(*d.tier);
                line << " (" << to_string(d.reason) << ")";
                agg.timeline.push_back(line.str());
            }
        }
    }

    std::ostringstream os;
    os << std::fixed << std::setprecision(3);
    os << "Run report over " << results.size() << " result(s)\n\n";

    os << "Token savings (input tokens, vs fine-equivalent compilation)\n";
    os << "  group                       achievable  gate-adjusted\n";
    for (const auto& [name, agg] : groups) {
        os << "  " << std::left << std::setw(28) << name << std::right << std::setw(10)
           << agg.achievable << "  " << std::setw(13) << agg.realized << "\n";
    }
    os << "  (gate-adjusted savings are zero for any run the quality gate blocked or "
          "reverted)\n\n";

    os << "Quality by mode (judge MDD " << options.judge_mdd << " relaxed / "
       << options.judge_mdd_strict << " strict)\n";
    for (const auto& [name, agg] : groups) {
        const double fine_mean = mean_or_nan(agg.fine_quality);
        const double compound_mean = mean_or_nan(agg.compound_quality);
        os << "  " << name << ": fine=";
        if (std::isnan(fine_mean)) os << "n/a";
        else os << fine_mean;
        os << " compound=";
        if (std::isnan(compound_mean)) os << "n/a";
        else os << compound_mean;
        if (!std::isnan(fine_mean) && !std::isnan(compound_mean)) {
            const double delta = compound_mean - fine_mean;
            os << " delta=" << delta;
            if (std::fabs(delta) < options.judge_mdd) os << " [statistical null]";
        }
        os << "\n";
    }
    os << "\nMode-decision timeline\n";
    for (const auto& [name, agg] : groups) {
        os << "  " << name << "\n";
        for (const auto& line : agg.timeline) os << line << "\n";
    }
    return os.str();
}

}  // namespace capsules
