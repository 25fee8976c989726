#pragma once

#include <deque>
#include <span>
#include <string>
#include <vector>

#include "capsules/policy.hpp"

namespace capsules {

// The four behavioral signals, measured from FINE-mode observations.
struct CompositionSignals {
    double overhead_ratio = 0.0;  // r_oh in [0,1]
    int agent_count = 1;          // n >= 1
    double mean_tool_calls = 0.0; // t-bar
    int dependency_depth = 0;     // d
};

// s = 0.45*r + 0.25*min(n/4,1) + 0.25*min(t/3,1) - 0.05*min(d/max(n-1,1),1).
// Raw value, no clamp.
double composition_score(const CompositionSignals& sig);

// Checked-in coordination lexicon; one pattern per line, '#' comments,
// '*' wildcards, case-insensitive. A matched line contributes all its tokens.
class OverheadLexicon {
public:
    static const OverheadLexicon& builtin();
    static OverheadLexicon from_file(const std::string& path);
    static OverheadLexicon from_lines(const std::vector<std::string>& patterns);

    bool matches_line(std::string_view line) const;
    std::size_t size() const { return patterns_.size(); }

private:
    std::vector<std::string> patterns_;  // lowercased
};

// Estimator tokens on lexicon-matched lines across the given outputs.
long matched_overhead_tokens(std::span<const std::string> per_agent_outputs,
                             const OverheadLexicon& lexicon = OverheadLexicon::builtin());

// (lexicon-matched tokens) / (total output tokens); 0 when total is 0.
double overhead_ratio(std::span<const std::string> per_agent_outputs,
                      const OverheadLexicon& lexicon = OverheadLexicon::builtin());

enum class ComposeSignal { stay, compose_candidate, decompose_candidate };
const char* to_string(ComposeSignal s);

struct ComposeDecision {
    ComposeSignal signal = ComposeSignal::stay;
    double confidence = 0.0;  // fraction of the window clearing the threshold
};

ComposeDecision should_compose(const std::deque<double>& score_window,
                               const ControllerPolicy& policy, bool currently_compound);

}  // namespace capsules
