#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "capsules/adapter.hpp"
#include "capsules/composition.hpp"
#include "capsules/controller.hpp"
#include "capsules/evaluators.hpp"
#include "capsules/pipeline.hpp"
#include "capsules/prompt.hpp"
#include "capsules/store.hpp"

namespace capsules {

// One adapter dispatch as accounted in RunResult. Tool-loop iterations fold
// into their logical call; `agent` is empty for merged calls.
struct CallRecord {
    std::string group;
    std::string agent;
    Mode mode = Mode::FINE;
    CompoundTier tier = CompoundTier::standard;
    std::string purpose;  // fine | merged | gather | merge | sequential | shadow
    Usage usage;
    long wall_clock_ms = 0;
    int tool_calls = 0;
    bool shadow = false;
};

void to_json(nlohmann::json& j, const CallRecord& c);
void from_json(const nlohmann::json& j, CallRecord& c);

struct GroupExecution {
    std::map<std::string, std::string> outputs;  // agent -> text
    Observation observation;
    std::vector<CallRecord> calls;
    std::vector<std::string> missing_sections;  // merged parse shortfalls
};

struct GroupRunReport {
    Mode mode_used = Mode::FINE;
    std::optional<CompoundTier> tier;
    double confidence = 0.0;
    std::optional<double> quality;
    std::vector<ModeDecision> decisions;
    long achievable_savings_tokens = 0;  // fine-equivalent input minus actual input
    long realized_savings_tokens = 0;    // zero unless the quality gate passed
    double behavioral_stability = 1.0;
};

void to_json(nlohmann::json& j, const GroupRunReport& r);
void from_json(const nlohmann::json& j, GroupRunReport& r);

struct RunResult {
    std::string pipeline;
    std::string task;
    std::map<std::string, GroupRunReport> per_group;
    std::map<std::string, std::string> outputs;  // "group.agent" -> text
    Usage token_usage;                           // totals over per-call records
    long latency_ms = 0;
    std::vector<CallRecord> calls;

    nlohmann::json to_json_canonical() const;
    static RunResult from_json_canonical(const nlohmann::json& j);
};

// Executes one group in one concrete mode/tier. `upstream_context` is the
// previous group's framed output, injected into root-agent user turns.
GroupExecution execute_group(const std::string& pipeline_name, const GroupSpec& group,
                             Mode mode, CompoundTier tier, const std::string& task,
                             const std::string& upstream_context, Adapter& adapter,
                             const ControllerPolicy& policy, const GroupStats& stats,
                             std::uint64_t run_id,
                             const OverheadLexicon& lexicon = OverheadLexicon::builtin());

struct RuntimeOptions {
    ControllerMode controller_mode_override = ControllerMode::auto_select;
    bool use_mode_override = false;
    std::function<std::int64_t()> clock;  // default: system UTC millis
    const OverheadLexicon* lexicon = nullptr;
    std::string audit_path;  // ndjson decision/observation log, appended
    int cas_retries = 10;
};

// Orchestrates decide -> execute (+shadow) -> evaluate -> gate -> persist for
// every group in declaration order.
class PipelineRuntime {
public:
    PipelineRuntime(PipelineSpec pipeline, std::shared_ptr<Adapter> adapter,
                    std::shared_ptr<Evaluator> evaluator,  // may be null (gate inactive)
                    std::shared_ptr<Backend> backend, RuntimeOptions options = {});

    RunResult run(const std::string& task);

    const PipelineSpec& pipeline() const { return pipeline_; }
    TelemetryStore& store() { return store_; }

private:
    const ControllerPolicy& policy_for(const GroupSpec& group) const;
    void audit(const nlohmann::json& record);

    PipelineSpec pipeline_;
    std::shared_ptr<Adapter> adapter_;
    std::shared_ptr<Evaluator> evaluator_;
    TelemetryStore store_;
    RuntimeOptions options_;
    // session-local output history per group, for the consistency evaluator
    std::map<std::string, std::vector<std::string>> output_history_;
    bool warned_ungated_ = false;
};

}  // namespace capsules
