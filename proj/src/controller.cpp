#include "capsules/controller.hpp"

#include "capsules/errors.hpp"

namespace capsules {

const char* to_string(DecisionReason r) {
    switch (r) {
        case DecisionReason::insufficient_observations: return "insufficient_observations";
        case DecisionReason::below_threshold: return "below_threshold";
        case DecisionReason::shadow_pending: return "shadow_pending";
        case DecisionReason::shadow_blocked: return "shadow_blocked";
        case DecisionReason::committed: return "committed";
        case DecisionReason::reverted: return "reverted";
        case DecisionReason::escalated: return "escalated";
        case DecisionReason::deescalated: return "deescalated";
        case DecisionReason::locked: return "locked";
        case DecisionReason::observe_only: return "observe_only";
        case DecisionReason::single_agent_guard: return "single_agent_guard";
    }
    return "?";
}

DecisionReason reason_from_name(const std::string& name) {
    for (int i = 0; i <= static_cast<int>(DecisionReason::single_agent_guard); ++i) {
        const auto r = static_cast<DecisionReason>(i);
        if (name == to_string(r)) return r;
    }
    throw CapsuleError(ErrorCode::SerializationError, "bad decision reason '" + name + "'");
}

void to_json(nlohmann::json& j, const ModeDecision& d) {
    j = nlohmann::json{
        {"group", d.group},
        {"run_id", d.run_id},
        {"mode", to_string(d.mode)},
        {"reason", to_string(d.reason)},
        {"confidence", d.confidence},
    };
    if (d.tier) j["tier"] = to_string(*d.tier);
}

void from_json(const nlohmann::json& j, ModeDecision& d) {
    d = ModeDecision{};
    d.group = j.at("group").get<std::string>();
    d.run_id = j.at("run_id").get<std::uint64_t>();
    d.mode = mode_from_name(j.at("mode").get<std::string>());
    d.reason = reason_from_name(j.at("reason").get<std::string>());
    d.confidence = j.at("confidence").get<double>();
    if (j.contains("tier")) d.tier = tier_from_name(j.at("tier").get<std::string>());
}

CompoundTier select_compound_strategy(const GroupSpec& group, const GroupStats& stats,
                                      const ControllerPolicy& policy) {
    switch (policy.compound_execution_model) {
        case CompoundExecutionModel::standard: return CompoundTier::standard;
        case CompoundExecutionModel::two_phase: return CompoundTier::two_phase;
        case CompoundExecutionModel::sequential: return CompoundTier::sequential;
        case CompoundExecutionModel::auto_select: break;
    }
    CompoundTier base = group.has_tools() ? CompoundTier::two_phase : CompoundTier::standard;
    if (!stats.fine_overhead_ratio_obs.empty() &&
        stats.mean_overhead_ratio() >= policy.verbosity_overhead_threshold)
        base = CompoundTier::sequential;
    return base;
}

namespace {

ModeDecision make_decision(const GroupSpec& group, const GroupControllerState& state, Mode mode,
                           std::optional<CompoundTier> tier, DecisionReason reason) {
    ModeDecision d;
    d.group = group.name;
    d.run_id = state.last_run_id + 1;  // the run this decision governs
    d.mode = mode;
    d.tier = tier;
    d.reason = reason;
    d.confidence = state.confidence;
    return d;
}

CompoundTier next_tier(CompoundTier t) {
    return t == CompoundTier::standard ? CompoundTier::two_phase : CompoundTier::sequential;
}

CompoundTier prev_tier(CompoundTier t) {
    return t == CompoundTier::sequential ? CompoundTier::two_phase : CompoundTier::standard;
}

void reset_quality_window(GroupControllerState& state) {
    state.quality_window_floor_run = state.last_run_id;
    state.consecutive_below_floor = 0;
    state.consecutive_above_floor = 0;
}

void revert_to_fine(GroupControllerState& state) {
    state.mode = Mode::FINE;
    state.score_window_floor_run = state.last_run_id;  // reset composition score window
    reset_quality_window(state);
    state.shadow_pending = false;
    state.shadow_block_failures = 0;
    state.burned_tiers = 0;
    state.candidate_tier = state.base_tier;
}

}  // namespace

ModeDecision decide(GroupControllerState& state, const GroupStats& stats, const GroupSpec& group,
                    const ControllerPolicy& policy, ControllerMode controller_mode,
                    bool evaluator_configured) {
    state.base_tier = select_compound_strategy(group, stats, policy);
    if (state.mode == Mode::FINE && !state.shadow_pending &&
        state.candidate_tier < state.base_tier)
        state.candidate_tier = state.base_tier;

    switch (controller_mode) {
        case ControllerMode::fine:
            return make_decision(group, state, Mode::FINE, std::nullopt, DecisionReason::locked);
        case ControllerMode::compound:
            if (group.agents.size() < 2)  // merging needs something to merge
                return make_decision(group, state, Mode::FINE, std::nullopt,
                                     DecisionReason::single_agent_guard);
            if (state.mode != Mode::COMPOUND) {
                state.mode = Mode::COMPOUND;
                state.tier = state.base_tier;  // escalation state survives re-locks
            }
            return make_decision(group, state, Mode::COMPOUND, state.tier,
                                 DecisionReason::locked);
        case ControllerMode::observe:
            return make_decision(group, state, Mode::FINE, std::nullopt,
                                 DecisionReason::observe_only);
        case ControllerMode::auto_select:
            break;
    }

    if (group.agents.size() < 2)
        return make_decision(group, state, Mode::FINE, std::nullopt,
                             DecisionReason::single_agent_guard);

    if (state.mode == Mode::COMPOUND) {
        const auto cd = should_compose(stats.score_window, policy, /*currently_compound=*/true);
        state.confidence = cd.confidence;
        if (cd.signal == ComposeSignal::decompose_candidate) {
            revert_to_fine(state);
            return make_decision(group, state, Mode::FINE, std::nullopt,
                                 DecisionReason::reverted);
        }
        return make_decision(group, state, Mode::COMPOUND, state.tier,
                             DecisionReason::committed);
    }

    const auto cd = should_compose(stats.score_window, policy, /*currently_compound=*/false);
    state.confidence = cd.confidence;
    if (cd.signal == ComposeSignal::compose_candidate) {
        if (!evaluator_configured) {
            // No gate configured: the switch commits un-gated (warned upstream).
            state.mode = Mode::COMPOUND;
            state.tier = state.candidate_tier;
            reset_quality_window(state);
            return make_decision(group, state, Mode::COMPOUND, state.tier,
                                 DecisionReason::committed);
        }
        state.shadow_pending = true;
        return make_decision(group, state, Mode::FINE, state.candidate_tier,
                             DecisionReason::shadow_pending);
    }
    const auto reason = stats.score_window.size() <
                                static_cast<std::size_t>(policy.min_observations)
                            ? DecisionReason::insufficient_observations
                            : DecisionReason::below_threshold;
    return make_decision(group, state, Mode::FINE, std::nullopt, reason);
}

ShadowVerdict shadow_gate(double compound_quality, const ControllerPolicy& policy) {
    return compound_quality >= policy.quality_floor ? ShadowVerdict::commit_compound
                                                    : ShadowVerdict::block;
}

ModeDecision apply_shadow_result(GroupControllerState& state,
                                 std::optional<double> compound_quality,
                                 const ControllerPolicy& policy, const GroupSpec& group) {
    state.shadow_pending = false;
    if (!compound_quality || shadow_gate(*compound_quality, policy) == ShadowVerdict::commit_compound) {
        state.mode = Mode::COMPOUND;
        state.tier = state.candidate_tier;
        reset_quality_window(state);
        state.shadow_block_failures = 0;
        return make_decision(group, state, Mode::COMPOUND, state.tier,
                             DecisionReason::committed);
    }
    // Blocked: the candidate is cancelled; the score window keeps accumulating.
    ++state.shadow_block_failures;
    if (policy.escalation_enabled &&
        state.shadow_block_failures >= policy.escalation_min_failures &&
        state.candidate_tier < CompoundTier::sequential) {
        state.burn_tier(state.candidate_tier);
        state.candidate_tier = next_tier(state.candidate_tier);
        state.shadow_block_failures = 0;
    }
    return make_decision(group, state, Mode::FINE, state.candidate_tier,
                         DecisionReason::shadow_blocked);
}

GateResult quality_gate(GroupControllerState& state, const GroupStats& stats,
                        const ControllerPolicy& policy) {
    const auto mean = rolling_mean_quality(stats);
    if (!mean) return GateResult::pass;  // no evidence, no step
    if (*mean >= policy.quality_floor) {
        state.consecutive_below_floor = 0;
        ++state.consecutive_above_floor;
        return GateResult::pass;
    }
    ++state.consecutive_below_floor;
    state.consecutive_above_floor = 0;
    return GateResult::failure_step;
}

ModeDecision escalate_or_revert(GroupControllerState& state, const ControllerPolicy& policy,
                                const GroupSpec& group) {
    if (policy.escalation_enabled && state.tier < CompoundTier::sequential) {
        state.burn_tier(state.tier);
        state.tier = next_tier(state.tier);
        reset_quality_window(state);
        return make_decision(group, state, Mode::COMPOUND, state.tier,
                             DecisionReason::escalated);
    }
    revert_to_fine(state);
    return make_decision(group, state, Mode::FINE, std::nullopt, DecisionReason::reverted);
}

std::optional<ModeDecision> deescalate(GroupControllerState& state,
                                       const ControllerPolicy& policy, const GroupSpec& group) {
    if (state.consecutive_above_floor < policy.escalation_decay_window) return std::nullopt;
    if (state.tier <= state.base_tier) return std::nullopt;
    const CompoundTier lower = prev_tier(state.tier);
    if (lower < state.base_tier) return std::nullopt;
    // never step back into a tier the gate already burned
    if (state.tier_burned(lower)) return std::nullopt;
    state.tier = lower;
    reset_quality_window(state);
    return make_decision(group, state, Mode::COMPOUND, state.tier,
                         DecisionReason::deescalated);
}

std::vector<ModeDecision> apply_quality_outcome(GroupControllerState& state,
                                                const GroupStats& stats, const GroupSpec& group,
                                                const ControllerPolicy& policy) {
    std::vector<ModeDecision> out;
    const GateResult gate = quality_gate(state, stats, policy);
    if (gate == GateResult::failure_step) {
        if (state.consecutive_below_floor >= policy.escalation_min_failures)
            out.push_back(escalate_or_revert(state, policy, group));
    } else if (auto d = deescalate(state, policy, group)) {
        out.push_back(*d);
    }
    return out;
}

double behavioral_stability_index(double fine_calls_per_agent, double compound_calls_per_agent) {
    if (fine_calls_per_agent == 0.0) return 1.0;
    return compound_calls_per_agent / fine_calls_per_agent;
}

}  // namespace capsules
