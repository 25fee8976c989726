#pragma once

#include <optional>
#include <vector>

#include <json.hpp>

#include "capsules/composition.hpp"
#include "capsules/pipeline.hpp"
#include "capsules/store.hpp"

namespace capsules {

enum class DecisionReason {
    insufficient_observations,
    below_threshold,
    shadow_pending,
    shadow_blocked,
    committed,
    reverted,
    escalated,
    deescalated,
    locked,
    observe_only,
    single_agent_guard,
};
const char* to_string(DecisionReason r);
DecisionReason reason_from_name(const std::string& name);

// Decision audit record, one per controller event.
struct ModeDecision {
    std::string group;
    std::uint64_t run_id = 0;
    Mode mode = Mode::FINE;
    std::optional<CompoundTier> tier;
    DecisionReason reason = DecisionReason::observe_only;
    double confidence = 0.0;
};

void to_json(nlohmann::json& j, const ModeDecision& d);
void from_json(const nlohmann::json& j, ModeDecision& d);

// Base tier selection. An explicit compound_execution_model wins outright;
// auto starts tool-using groups at two_phase, tool-free at standard, and
// bumps verbose groups (high observed overhead ratio) to sequential.
CompoundTier select_compound_strategy(const GroupSpec& group, const GroupStats& stats,
                                      const ControllerPolicy& policy);

// Pre-execution mode choice for one run. Mutates state (confidence,
// shadow_pending, immediate un-gated commits).
ModeDecision decide(GroupControllerState& state, const GroupStats& stats, const GroupSpec& group,
                    const ControllerPolicy& policy, ControllerMode controller_mode,
                    bool evaluator_configured);

enum class ShadowVerdict { commit_compound, block };
ShadowVerdict shadow_gate(double compound_quality, const ControllerPolicy& policy);

// Applies a shadow run's compound quality to the state. A missing quality
// (no evaluator / unparseable judge) commits un-gated, per the opt-in gate.
ModeDecision apply_shadow_result(GroupControllerState& state,
                                 std::optional<double> compound_quality,
                                 const ControllerPolicy& policy, const GroupSpec& group);

enum class GateResult { pass, failure_step };
GateResult quality_gate(GroupControllerState& state, const GroupStats& stats,
                        const ControllerPolicy& policy);

ModeDecision escalate_or_revert(GroupControllerState& state, const ControllerPolicy& policy,
                                const GroupSpec& group);
std::optional<ModeDecision> deescalate(GroupControllerState& state, const ControllerPolicy& policy,
                                       const GroupSpec& group);

// Full post-run gate pass for a committed COMPOUND run: rolling-mean gate,
// then escalation / revert / de-escalation as the counters dictate.
std::vector<ModeDecision> apply_quality_outcome(GroupControllerState& state,
                                                const GroupStats& stats, const GroupSpec& group,
                                                const ControllerPolicy& policy);

// compound tool calls per agent / fine tool calls per agent; 1.0 when the
// fine baseline has no tool behavior to destabilize.
double behavioral_stability_index(double fine_calls_per_agent, double compound_calls_per_agent);

}  // namespace capsules
