#include "capsules/composition.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "capsules/errors.hpp"
#include "capsules/tokens.hpp"

namespace capsules {

double composition_score(const CompositionSignals& sig) {
    const double n = static_cast<double>(sig.agent_count);
    const double d = static_cast<double>(sig.dependency_depth);
    return 0.45 * sig.overhead_ratio
         + 0.25 * std::min(n / 4.0, 1.0)
         + 0.25 * std::min(sig.mean_tool_calls / 3.0, 1.0)
         - 0.05 * std::min(d / std::max(n - 1.0, 1.0), 1.0);
}

namespace {

std::string lowercase(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return out;
}

// '*'-wildcard match over lowercased haystack.
bool glob_match(std::string_view pattern, std::string_view text) {
    std::size_t p = 0, t = 0, star = std::string_view::npos, mark = 0;
    while (t < text.size()) {
        if (p < pattern.size() && (pattern[p] == text[t])) {
            ++p, ++t;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = t;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            t = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

const std::vector<std::string> kBuiltinPatterns = {
    "as the * agent*",
    "*passing this to*",
    "*handing off to*",
    "*hand this off*",
    "*i will now pass*",
    "*i am the * agent*",
    "the task asks*",
    "*restating the task*",
    "*to summarize my role*",
    "*my role in this pipeline*",
    "*per my instructions*",
    "[agent:*",
    "===*",
};

}  // namespace

const OverheadLexicon& OverheadLexicon::builtin() {
    static const OverheadLexicon lex = from_lines(kBuiltinPatterns);
    return lex;
}

OverheadLexicon OverheadLexicon::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CapsuleError(ErrorCode::ParseError, "cannot open lexicon '" + path + "'");
    std::vector<std::string> patterns;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        patterns.push_back(line);
    }
    return from_lines(patterns);
}

OverheadLexicon OverheadLexicon::from_lines(const std::vector<std::string>& patterns) {
    OverheadLexicon lex;
    for (const auto& p : patterns) lex.patterns_.push_back(lowercase(p));
    return lex;
}

bool OverheadLexicon::matches_line(std::string_view line) const {
    const std::string lower = lowercase(line);
    return std::any_of(patterns_.begin(), patterns_.end(),
                       [&](const std::string& p) { return glob_match(p, lower); });
}

long matched_overhead_tokens(std::span<const std::string> per_agent_outputs,
                             const OverheadLexicon& lexicon) {
    long matched = 0;
    for (const auto& output : per_agent_outputs) {
        std::size_t pos = 0;
        while (pos <= output.size()) {
            std::size_t nl = output.find('\n', pos);
            std::string_view line = (nl == std::string::npos)
                                        ? std::string_view(output).substr(pos)
                                        : std::string_view(output).substr(pos, nl - pos);
            const std::size_t toks = estimate_line_tokens(line);
            if (toks > 0 && lexicon.matches_line(line)) matched += static_cast<long>(toks);
            if (nl == std::string::npos) break;
            pos = nl + 1;
        }
    }
    return matched;
}

double overhead_ratio(std::span<const std::string> per_agent_outputs,
                      const OverheadLexicon& lexicon) {
    std::size_t total = 0;
    for (const auto& output : per_agent_outputs) total += estimate_tokens(output);
    if (total == 0) return 0.0;
    return static_cast<double>(matched_overhead_tokens(per_agent_outputs, lexicon)) /
           static_cast<double>(total);
}

const char* to_string(ComposeSignal s) {
    switch (s) {
        case ComposeSignal::stay: return "stay";
        case ComposeSignal::compose_candidate: return "compose_candidate";
        case ComposeSignal::decompose_candidate: return "decompose_candidate";
    }
    return "?";
}

ComposeDecision should_compose(const std::deque<double>& score_window,
                               const ControllerPolicy& policy, bool currently_compound) {
    ComposeDecision out;
    const std::size_t len = score_window.size();
    if (len == 0 || len < static_cast<std::size_t>(policy.min_observations)) return out;
    if (!currently_compound) {
        const auto hits = std::count_if(score_window.begin(), score_window.end(),
                                        [&](double s) { return s >= policy.compose_at; });
        out.confidence = static_cast<double>(hits) / static_cast<double>(len);
        if (out.confidence >= policy.confidence) out.signal = ComposeSignal::compose_candidate;
    } else {
        const auto hits = std::count_if(score_window.begin(), score_window.end(),
                                        [&](double s) { return s < policy.decompose_at; });
        out.confidence = static_cast<double>(hits) / static_cast<double>(len);
        if (out.confidence >= policy.confidence) out.signal = ComposeSignal::decompose_candidate;
    }
    return out;
}

}  // namespace capsules
