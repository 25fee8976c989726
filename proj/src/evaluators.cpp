#include "capsules/evaluators.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <regex>
#include <set>
#include <sstream>

#include "capsules/errors.hpp"

namespace capsules {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

std::string combined_output(const EvalContext& ctx) {
    std::string out;
    for (const auto& agent : ctx.declared_agents) {
        auto it = ctx.outputs.find(agent);
        if (it == ctx.outputs.end()) continue;
        if (!out.empty()) out += "\n\n";
        out += it->second;
    }
    return out;
}

std::set<std::string> token_set(const std::string& text) {
    std::set<std::string> out;
    std::istringstream in(text);
    std::string word;
    while (in >> word) {
        std::transform(word.begin(), word.end(), word.begin(),
                       [](unsigned char c) { return std::tolower(c); });
        out.insert(word);
    }
    return out;
}

double jaccard(const std::set<std::string>& a, const std::set<std::string>& b) {
    if (a.empty() && b.empty()) return 1.0;
    std::size_t inter = 0;
    for (const auto& w : a) inter += b.count(w);
    const std::size_t uni = a.size() + b.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

std::string judge_rubric_prompt(const std::string& task, const std::string& combined) {
    // Byte-stable by golden test: judge variance must never hide harness drift.
    return "You are a strict evaluator. Score the response to the task below on three "
           "criteria: factual completeness, reasoning depth, and coherence.\n"
           "\n"
           "Task:\n" +
           task +
           "\n"
           "\n"
           "Response:\n" +
           combined +
           "\n"
           "\n"
           "Reply with a single decimal number between 0 and 1.\n";
}

std::optional<double> parse_judge_score(const std::string& reply) {
    static const std::regex number(R"([0-9]+(\.[0-9]+)?|\.[0-9]+)");
    std::smatch m;
    if (!std::regex_search(reply, m, number)) return std::nullopt;
    return clamp01(std::stod(m.str()));
}

JudgeEvaluator::JudgeEvaluator(std::shared_ptr<Adapter> judge_adapter, std::string judge_model)
    : adapter_(std::move(judge_adapter)), model_(std::move(judge_model)) {
    if (!adapter_) throw CapsuleError(ErrorCode::EvaluatorMissing, "judge adapter not configured");
}

std::optional<QualityScore> JudgeEvaluator::evaluate(const EvalContext& ctx) {
    AdapterRequest req;
    req.model = model_;
    req.user_text = judge_rubric_prompt(ctx.task, combined_output(ctx));
    req.meta.pipeline = ctx.pipeline;
    req.meta.group = ctx.group;
    req.meta.run_id = ctx.run_id;
    req.meta.judge = true;
    const AdapterResponse resp = adapter_->complete(req);
    const auto score = parse_judge_score(resp.text);
    if (!score) return std::nullopt;  // JudgeUnparseable: gate skips this run
    return QualityScore{*score, "judge", resp.text};
}

QualityScore schema_compliance(const std::map<std::string, std::string>& outputs,
                               std::span<const std::string> required_sections) {
    QualityScore q;
    q.evaluator = "schema";
    if (required_sections.empty()) {
        q.value = 1.0;  // vacuous truth
        return q;
    }
    std::size_t present = 0;
    std::string missing;
    for (const auto& section : required_sections) {
        auto it = outputs.find(section);
        if (it != outputs.end() && !it->second.empty()) {
            ++present;
        } else {
            if (!missing.empty()) missing += ", ";
            missing += section;
        }
    }
    q.value = static_cast<double>(present) / static_cast<double>(required_sections.size());
    if (!missing.empty()) q.detail = "missing: " + missing;
    return q;
}

SchemaComplianceEvaluator::SchemaComplianceEvaluator(std::vector<std::string> required_override)
    : required_override_(std::move(required_override)) {}

std::optional<QualityScore> SchemaComplianceEvaluator::evaluate(const EvalContext& ctx) {
    const std::vector<std::string>& required =
        required_override_.empty() ? ctx.declared_agents : required_override_;
    return schema_compliance(ctx.outputs, required);
}

QualityScore consistency_evaluate(std::span<const std::string> history) {
    if (history.size() < 2)
        throw CapsuleError(ErrorCode::InsufficientHistory,
                           "consistency needs >= 2 outputs, got " +
                               std::to_string(history.size()));
    std::vector<std::set<std::string>> sets;
    sets.reserve(history.size());
    for (const auto& text : history) sets.push_back(token_set(text));
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < sets.size(); ++i)
        for (std::size_t j = i + 1; j < sets.size(); ++j) {
            total += jaccard(sets[i], sets[j]);
            ++pairs;
        }
    QualityScore q;
    q.evaluator = "consistency";
    q.value = clamp01(total / static_cast<double>(pairs));
    q.detail = "pairs=" + std::to_string(pairs);
    return q;
}

ConsistencyEvaluator::ConsistencyEvaluator(int k) : k_(k) {
    if (k < 2) throw CapsuleError(ErrorCode::InvalidArgument, "consistency k must be >= 2");
}

std::optional<QualityScore> ConsistencyEvaluator::evaluate(const EvalContext& ctx) {
    std::vector<std::string> window(ctx.prior_group_outputs.begin(),
                                    ctx.prior_group_outputs.end());
    window.push_back(combined_output(ctx));
    if (window.size() < 2) return std::nullopt;  // first run: no history yet
    if (window.size() > static_cast<std::size_t>(k_))
        window.erase(window.begin(),
                     window.begin() + static_cast<std::ptrdiff_t>(window.size() -
                                                                  static_cast<std::size_t>(k_)));
    return consistency_evaluate(window);
}

ScriptedProfileEvaluator::ScriptedProfileEvaluator(ScriptedProfile profile, std::uint64_t seed)
    : profile_(std::move(profile)), seed_(seed) {}

std::optional<QualityScore> ScriptedProfileEvaluator::evaluate(const EvalContext& ctx) {
    if (ctx.declared_agents.empty()) return std::nullopt;
    double total = 0.0;
    for (const auto& agent : ctx.declared_agents)
        total += profile_.quality_for(agent, ctx.mode, ctx.tier);
    double value = total / static_cast<double>(ctx.declared_agents.size());
    if (profile_.quality_noise > 0.0) {
        const std::string salt = "quality|" + ctx.pipeline + "|" + ctx.group + "|" +
                                 std::to_string(ctx.run_id) + "|" +
                                 (ctx.mode == Mode::FINE ? "fine" : to_string(ctx.tier));
        value += (2.0 * scripted_uniform(seed_, salt) - 1.0) * profile_.quality_noise;
    }
    QualityScore q;
    q.evaluator = "scripted";
    q.value = clamp01(value);
    return q;
}

}  // namespace capsules
