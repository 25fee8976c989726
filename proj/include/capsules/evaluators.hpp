#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "capsules/adapter.hpp"
#include "capsules/scripted.hpp"

namespace capsules {

struct QualityScore {
    double value = 0.0;  // clamped to [0,1]
    std::string evaluator;
    std::string detail;
};

// Everything an evaluator may look at for one group-run.
struct EvalContext {
    std::string pipeline;
    std::string group;
    std::string task;
    std::uint64_t run_id = 0;
    Mode mode = Mode::FINE;
    CompoundTier tier = CompoundTier::standard;
    std::map<std::string, std::string> outputs;       // agent -> text
    std::vector<std::string> missing_sections;        // merged parse shortfalls
    std::vector<std::string> declared_agents;         // declaration order
    std::vector<std::string> prior_group_outputs;     // oldest-first combined texts
};

class Evaluator {
public:
    virtual ~Evaluator() = default;
    // nullopt = no verdict for this run (gate skips it with a warning).
    virtual std::optional<QualityScore> evaluate(const EvalContext& ctx) = 0;
    virtual std::string name() const = 0;
};

// The exact rubric prompt sent to the judge (byte-stable golden contract).
std::string judge_rubric_prompt(const std::string& task, const std::string& combined_output);
// First well-formed decimal in the judge's reply, clamped; nullopt when none.
std::optional<double> parse_judge_score(const std::string& reply);

class JudgeEvaluator : public Evaluator {
public:
    JudgeEvaluator(std::shared_ptr<Adapter> judge_adapter, std::string judge_model);
    std::optional<QualityScore> evaluate(const EvalContext& ctx) override;
    std::string name() const override { return "judge"; }

private:
    std::shared_ptr<Adapter> adapter_;
    std::string model_;
};

// Pure scoring core: present / required; required == 0 scores 1.0.
QualityScore schema_compliance(const std::map<std::string, std::string>& outputs,
                               std::span<const std::string> required_sections);

class SchemaComplianceEvaluator : public Evaluator {
public:
    // Empty override = one required section per declared agent.
    explicit SchemaComplianceEvaluator(std::vector<std::string> required_override = {});
    std::optional<QualityScore> evaluate(const EvalContext& ctx) override;
    std::string name() const override { return "schema"; }

private:
    std::vector<std::string> required_override_;
};

// Mean pairwise token-set Jaccard over the last k outputs.
QualityScore consistency_evaluate(std::span<const std::string> history);  // throws k<2

class ConsistencyEvaluator : public Evaluator {
public:
    explicit ConsistencyEvaluator(int k = 3);
    std::optional<QualityScore> evaluate(const EvalContext& ctx) override;
    std::string name() const override { return "consistency"; }

private:
    int k_;
};

// Reads the run's quality straight off the scripted profile (per-agent tier
// scores averaged, plus seeded noise); the offline stand-in for a live judge.
class ScriptedProfileEvaluator : public Evaluator {
public:
    ScriptedProfileEvaluator(ScriptedProfile profile, std::uint64_t seed);
    std::optional<QualityScore> evaluate(const EvalContext& ctx) override;
    std::string name() const override { return "scripted"; }

private:
    ScriptedProfile profile_;
    std::uint64_t seed_;
};

}  // namespace capsules
