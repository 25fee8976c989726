#include "capsules/execution.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>

#include "capsules/errors.hpp"
#include "capsules/tokens.hpp"

namespace capsules {

void to_json(nlohmann::json& j, const CallRecord& c) {
    j = nlohmann::json{
        {"group", c.group},
        {"agent", c.agent},
        {"mode", to_string(c.mode)},
        {"tier", to_string(c.tier)},
        {"purpose", c.purpose},
        {"input_tokens", c.usage.input_tokens},
        {"output_tokens", c.usage.output_tokens},
        {"cache_read_tokens", c.usage.cache_read_tokens},
        {"wall_clock_ms", c.wall_clock_ms},
        {"tool_calls", c.tool_calls},
        {"shadow", c.shadow},
    };
}

void to_json(nlohmann::json& j, const GroupRunReport& r) {
    j = nlohmann::json{
        {"mode_used", to_string(r.mode_used)},
        {"confidence", r.confidence},
        {"decisions", r.decisions},
        {"achievable_savings_tokens", r.achievable_savings_tokens},
        {"realized_savings_tokens", r.realized_savings_tokens},
        {"behavioral_stability", r.behavioral_stability},
    };
    if (r.tier) j["tier"] = to_string(*r.tier);
    if (r.quality) j["quality"] = *r.quality;
}

void from_json(const nlohmann::json& j, CallRecord& c) {
    c = CallRecord{};
    c.group = j.at("group").get<std::string>();
    c.agent = j.at("agent").get<std::string>();
    c.mode = mode_from_name(j.at("mode").get<std::string>());
    c.tier = tier_from_name(j.at("tier").get<std::string>());
    c.purpose = j.at("purpose").get<std::string>();
    c.usage.input_tokens = j.at("input_tokens").get<long>();
    c.usage.output_tokens = j.at("output_tokens").get<long>();
    c.usage.cache_read_tokens = j.at("cache_read_tokens").get<long>();
    c.wall_clock_ms = j.at("wall_clock_ms").get<long>();
    c.tool_calls = j.at("tool_calls").get<int>();
    c.shadow = j.at("shadow").get<bool>();
}

void from_json(const nlohmann::json& j, GroupRunReport& r) {
    r = GroupRunReport{};
    r.mode_used = mode_from_name(j.at("mode_used").get<std::string>());
    r.confidence = j.at("confidence").get<double>();
    r.decisions = j.at("decisions").get<std::vector<ModeDecision>>();
    r.achievable_savings_tokens = j.at("achievable_savings_tokens").get<long>();
    r.realized_savings_tokens = j.at("realized_savings_tokens").get<long>();
    r.behavioral_stability = j.at("behavioral_stability").get<double>();
    if (j.contains("tier")) r.tier = tier_from_name(j.at("tier").get<std::string>());
    if (j.contains("quality")) r.quality = j.at("quality").get<double>();
}

RunResult RunResult::from_json_canonical(const nlohmann::json& j) {
    RunResult r;
    r.pipeline = j.at("pipeline").get<std::string>();
    r.task = j.at("task").get<std::string>();
    r.per_group = j.at("per_group").get<std::map<std::string, GroupRunReport>>();
    r.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    const auto& u = j.at("token_usage");
    r.token_usage.input_tokens = u.at("input_tokens").get<long>();
    r.token_usage.output_tokens = u.at("output_tokens").get<long>();
    r.token_usage.cache_read_tokens = u.at("cache_read_tokens").get<long>();
    r.latency_ms = j.at("latency_ms").get<long>();
    r.calls = j.at("calls").get<std::vector<CallRecord>>();
    return r;
}

nlohmann::json RunResult::to_json_canonical() const {
    return nlohmann::json{
        {"pipeline", pipeline},
        {"task", task},
        {"per_group", per_group},
        {"outputs", outputs},
        {"token_usage",
         {{"input_tokens", token_usage.input_tokens},
          {"output_tokens", token_usage.output_tokens},
          {"cache_read_tokens", token_usage.cache_read_tokens}}},
        {"latency_ms", latency_ms},
        {"calls", calls},
    };
}

namespace {

std::vector<int> topo_order(const GroupSpec& group) {
    std::vector<int> order;
    for (const auto& level : topo_levels(group))
        for (int idx : level) order.push_back(idx);
    return order;
}

RequestMeta make_meta(const std::string& pipeline, const GroupSpec& group,
                      const std::string& agent, Mode mode, CompoundTier tier,
                      std::uint64_t run_id) {
    RequestMeta m;
    m.pipeline = pipeline;
    m.group = group.name;
    m.agent = agent;
    m.mode = mode;
    m.tier = tier;
    m.run_id = run_id;
    return m;
}

void prepend_upstream(PromptBundle& bundle, const std::string& upstream) {
    if (!upstream.empty()) bundle.user_text = upstream + bundle.user_text;
}

// Per-agent dispatch for FINE and sequential (identical plumbing, different
// context-injection strategy and accounting labels).
GroupExecution run_per_agent(const std::string& pipeline_name, const GroupSpec& group, Mode mode,
                             CompoundTier tier, const std::string& task,
                             const std::string& upstream, Adapter& adapter,
                             const ControllerPolicy& policy, ResolvedGuidance guidance,
                             ContextInjection strategy, std::uint64_t run_id,
                             const char* purpose) {
    GroupExecution exec;
    const std::size_t n = group.agents.size();
    std::vector<long> input(n, 0), output(n, 0), tools(n, 0);
    for (int idx : topo_order(group)) {
        const AgentSpec& agent = group.agents[static_cast<std::size_t>(idx)];
        PromptBundle bundle =
            compile_fine(pipeline_name, group, idx, task, exec.outputs, strategy, guidance,
                         policy.cache_aligned_prompts);
        if (group.deps[static_cast<std::size_t>(idx)].empty())
            prepend_upstream(bundle, upstream);
        AdapterRequest req = request_from_bundle(
            bundle, make_meta(pipeline_name, group, agent.name, mode, tier, run_id),
            adapter.model_name());
        ToolLoopResult loop = run_tool_loop(adapter, std::move(req));
        exec.outputs[agent.name] = loop.response.text;
        input[static_cast<std::size_t>(idx)] = loop.response.usage.input_tokens;
        output[static_cast<std::size_t>(idx)] =
            static_cast<long>(estimate_tokens(loop.response.text));
        tools[static_cast<std::size_t>(idx)] = loop.tool_calls;
        exec.calls.push_back({group.name, agent.name, mode, tier, purpose, loop.response.usage,
                              loop.response.wall_clock_ms, loop.tool_calls, false});
    }
    exec.observation.per_agent_input_tokens = std::move(input);
    exec.observation.per_agent_output_tokens = std::move(output);
    exec.observation.per_agent_tool_calls = std::move(tools);
    return exec;
}

std::vector<long> split_evenly(long total, std::size_t n) {
    if (n == 0) return {};
    const long base = total / static_cast<long>(n);
    std::vector<long> out(n, base);
    out[0] += total - base * static_cast<long>(n);
    return out;
}

}  // namespace

GroupExecution execute_group(const std::string& pipeline_name, const GroupSpec& group, Mode mode,
                             CompoundTier tier, const std::string& task,
                             const std::string& upstream_context, Adapter& adapter,
                             const ControllerPolicy& policy, const GroupStats& stats,
                             std::uint64_t run_id, const OverheadLexicon& lexicon) {
    const ResolvedGuidance guidance = select_output_guidance(policy, stats);
    GroupExecution exec;
    const std::size_t n = group.agents.size();

    if (mode == Mode::FINE || n < 2) {
        // single-agent groups always run in fine framing, whatever the label
        exec = run_per_agent(pipeline_name, group, Mode::FINE, tier, task, upstream_context,
                             adapter, policy, guidance, policy.context_injection, run_id, "fine");
        mode = Mode::FINE;
    } else if (mode == Mode::COMPOUND && tier == CompoundTier::sequential) {
        exec = run_per_agent(pipeline_name, group, Mode::COMPOUND, tier, task, upstream_context,
                             adapter, policy, guidance, ContextInjection::full, run_id,
                             "sequential");
    } else if (mode == Mode::COMPOUND && tier == CompoundTier::standard) {
        PromptBundle bundle = compile_standard_compound(pipeline_name, group, task, guidance,
                                                        policy.cache_aligned_prompts);
        apply_structural_hint(bundle, group, stats, policy);
        prepend_upstream(bundle, upstream_context);
        AdapterRequest req = request_from_bundle(
            bundle, make_meta(pipeline_name, group, "", mode, tier, run_id),
            adapter.model_name());
        const AdapterResponse resp = adapter.complete(req);
        ParsedMerged parsed = parse_merged_output(resp.text, bundle.agent_span_map);
        exec.outputs = strip_terminal_labels(std::move(parsed.outputs), group);
        exec.missing_sections = std::move(parsed.missing);
        exec.calls.push_back({group.name, "", mode, tier, "merged", resp.usage,
                              resp.wall_clock_ms, 0, false});
        exec.observation.per_agent_input_tokens = split_evenly(resp.usage.input_tokens, n);
        exec.observation.per_agent_tool_calls.assign(n, 0);
        for (const auto& agent : group.agents)
            exec.observation.per_agent_output_tokens.push_back(
                static_cast<long>(estimate_tokens(exec.outputs[agent.name])));
    } else {  // two_phase
        std::vector<GatherResult> gathers;
        std::vector<long> gather_tools(n, 0), gather_input(n, 0);
        auto bundles = compile_two_phase_gather(pipeline_name, group, task,
                                                policy.cache_aligned_prompts);
        for (std::size_t i = 0; i < n; ++i) {
            prepend_upstream(bundles[i], upstream_context);
            RequestMeta meta =
                make_meta(pipeline_name, group, group.agents[i].name, mode, tier, run_id);
            meta.gather_phase = true;
            AdapterRequest req = request_from_bundle(bundles[i], meta, adapter.model_name());
            ToolLoopResult loop = run_tool_loop(adapter, std::move(req));
            gathers.push_back({group.agents[i].name, loop.response.text, loop.tool_calls});
            gather_tools[i] = loop.tool_calls;
            gather_input[i] = loop.response.usage.input_tokens;
            exec.calls.push_back({group.name, group.agents[i].name, mode, tier, "gather",
                                  loop.response.usage, loop.response.wall_clock_ms,
                                  loop.tool_calls, false});
        }
        PromptBundle merge = compile_two_phase_merge(pipeline_name, group, task, gathers,
                                                     guidance, policy.cache_aligned_prompts);
        apply_structural_hint(merge, group, stats, policy);
        AdapterRequest req = request_from_bundle(
            merge, make_meta(pipeline_name, group, "", mode, tier, run_id),
            adapter.model_name());
        const AdapterResponse resp = adapter.complete(req);
        ParsedMerged parsed = parse_merged_output(resp.text, merge.agent_span_map);
        exec.outputs = strip_terminal_labels(std::move(parsed.outputs), group);
        exec.missing_sections = std::move(parsed.missing);
        exec.calls.push_back({group.name, "", mode, tier, "merge", resp.usage,
                              resp.wall_clock_ms, 0, false});
        const std::vector<long> merge_input = split_evenly(resp.usage.input_tokens, n);
        for (std::size_t i = 0; i < n; ++i)
            exec.observation.per_agent_input_tokens.push_back(gather_input[i] + merge_input[i]);
        exec.observation.per_agent_tool_calls = std::move(gather_tools);
        for (const auto& agent : group.agents)
            exec.observation.per_agent_output_tokens.push_back(
                static_cast<long>(estimate_tokens(exec.outputs[agent.name])));
    }

    Observation& obs = exec.observation;
    obs.pipeline = pipeline_name;
    obs.group = group.name;
    obs.run_id = run_id;
    obs.mode = mode;
    obs.tier = tier;
    obs.total_output_tokens = std::accumulate(obs.per_agent_output_tokens.begin(),
                                              obs.per_agent_output_tokens.end(), 0L);
    std::vector<std::string> texts;
    for (const auto& agent : group.agents) texts.push_back(exec.outputs[agent.name]);
    obs.overhead_tokens =
        std::min(matched_overhead_tokens(texts, lexicon), obs.total_output_tokens);
    obs.latency_ms = 0;
    for (const auto& call : exec.calls) obs.latency_ms += call.wall_clock_ms;
    return exec;
}

// ------------------------------------------------------------------ runtime

PipelineRuntime::PipelineRuntime(PipelineSpec pipeline, std::shared_ptr<Adapter> adapter,
                                 std::shared_ptr<Evaluator> evaluator,
                                 std::shared_ptr<Backend> backend, RuntimeOptions options)
    : pipeline_(std::move(pipeline)),
      adapter_(std::move(adapter)),
      evaluator_(std::move(evaluator)),
      store_(std::move(backend)),
      options_(std::move(options)) {
    if (!adapter_) throw CapsuleError(ErrorCode::AdapterError, "runtime requires an adapter");
    if (!options_.clock)
        options_.clock = [] {
            return std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                .count();
        };
}

const ControllerPolicy& PipelineRuntime::policy_for(const GroupSpec& group) const {
    return group.policy_override ? *group.policy_override : pipeline_.pipeline_policy;
}

void PipelineRuntime::audit(const nlohmann::json& record) {
    if (options_.audit_path.empty()) return;
    std::ofstream out(options_.audit_path, std::ios::app);
    if (!out)
        throw CapsuleError(ErrorCode::SerializationError,
                           "cannot append audit log: " + options_.audit_path);
    out << record.dump() << "\n";
}

RunResult PipelineRuntime::run(const std::string& task) {
    RunResult result;
    result.pipeline = pipeline_.name;
    result.task = task;
    const OverheadLexicon& lexicon =
        options_.lexicon ? *options_.lexicon : OverheadLexicon::builtin();
    const ControllerMode mode_override = options_.use_mode_override
                                             ? options_.controller_mode_override
                                             : pipeline_.controller_mode;
    std::string upstream;

    for (const GroupSpec& group : pipeline_.groups) {
        const ControllerPolicy& policy = policy_for(group);
        const int depth = dependency_depth(group);
        const int agent_count = static_cast<int>(group.agents.size());
        GroupRunReport report;

        bool persisted = false;
        GroupExecution exec;
        for (int attempt = 0; attempt < options_.cas_retries && !persisted; ++attempt) {
            auto loaded = store_.load_state(pipeline_.name, group.name);
            GroupControllerState state =
                loaded ? loaded->first : GroupControllerState{};
            std::optional<std::string> witness =
                loaded ? std::optional<std::string>(loaded->second) : std::nullopt;
            const auto log = store_.load_observations(pipeline_.name, group.name);
            GroupStats stats =
                build_group_stats(log, state, agent_count, depth, policy.window_size);

            report = GroupRunReport{};
            ModeDecision decision = decide(state, stats, group, policy, mode_override,
                                           evaluator_ != nullptr);
            if (decision.reason == DecisionReason::committed && !evaluator_ &&
                !warned_ungated_) {
                warned_ungated_ = true;
                std::fprintf(stderr,
                             "warning: no evaluator configured; compound switch for group "
                             "'%s' commits without a quality gate\n",
                             group.name.c_str());
            }
            report.decisions.push_back(decision);
            const std::uint64_t run_id = decision.run_id;

            // ---- execute
            const Mode exec_mode = decision.mode;
            const CompoundTier exec_tier = decision.tier.value_or(state.tier);
            exec = execute_group(pipeline_.name, group, exec_mode, exec_tier, task, upstream,
                                 *adapter_, policy, stats, run_id, lexicon);

            EvalContext ctx;
            ctx.pipeline = pipeline_.name;
            ctx.group = group.name;
            ctx.task = task;
            ctx.run_id = run_id;
            ctx.mode = exec.observation.mode;
            ctx.tier = exec_tier;
            ctx.outputs = exec.outputs;
            ctx.missing_sections = exec.missing_sections;
            for (const auto& agent : group.agents) ctx.declared_agents.push_back(agent.name);
            ctx.prior_group_outputs = output_history_[group.name];

            if (evaluator_) {
                if (auto q = evaluator_->evaluate(ctx)) {
                    exec.observation.quality = q->value;
                } else {
                    std::fprintf(stderr,
                                 "warning: evaluator '%s' produced no verdict for group '%s' "
                                 "run %llu; quality gate skips this run\n",
                                 evaluator_->name().c_str(), group.name.c_str(),
                                 static_cast<unsigned long long>(run_id));
                }
            }

            // ---- shadow dual execution: fine output is returned, the
            // candidate tier runs alongside and only its quality matters.
            if (decision.reason == DecisionReason::shadow_pending) {
                GroupExecution shadow =
                    execute_group(pipeline_.name, group, Mode::COMPOUND, state.candidate_tier,
                                  task, upstream, *adapter_, policy, stats, run_id, lexicon);
                for (auto& call : shadow.calls) {
                    call.shadow = true;
                    call.purpose = "shadow:" + call.purpose;
                    exec.calls.push_back(call);
                }
                std::optional<double> shadow_quality;
                if (evaluator_) {
                    EvalContext sctx = ctx;
                    sctx.mode = Mode::COMPOUND;
                    sctx.tier = state.candidate_tier;
                    sctx.outputs = shadow.outputs;
                    sctx.missing_sections = shadow.missing_sections;
                    if (auto q = evaluator_->evaluate(sctx)) shadow_quality = q->value;
                }
                report.decisions.push_back(
                    apply_shadow_result(state, shadow_quality, policy, group));
            }

            exec.observation.timestamp_ms = options_.clock();

            // ---- post-run quality gate for committed compound runs
            state.last_run_id = run_id;
            if (exec.observation.mode == Mode::COMPOUND) {
                GroupStats after = stats;
                after.observe(exec.observation, state, agent_count, depth, policy.window_size);
                for (auto& d : apply_quality_outcome(state, after, group, policy))
                    report.decisions.push_back(d);
            }

            if (store_.cas_state(pipeline_.name, group.name, witness, state)) {
                store_.record_observation(exec.observation);
                persisted = true;
            }
            report.mode_used = exec.observation.mode;
            if (exec.observation.mode == Mode::COMPOUND) report.tier = exec.observation.tier;
            report.confidence = state.confidence;
            report.quality = exec.observation.quality;
            report.behavioral_stability = behavioral_stability_index(
                stats.fine_tool_calls_per_agent(), stats.compound_tool_calls_per_agent());
        }
        if (!persisted)
            throw CapsuleError(ErrorCode::BackendUnavailable,
                               "state CAS for group '" + group.name +
                                   "' failed after retries (concurrent writers)");

        // ---- savings accounting (achievable vs gate-adjusted, per run)
        if (exec.observation.mode == Mode::COMPOUND) {
            long fine_equivalent = 0;
            const ResolvedGuidance guidance = ResolvedGuidance::none;
            for (std::size_t i = 0; i < group.agents.size(); ++i) {
                PromptBundle b = compile_fine(pipeline_.name, group, static_cast<int>(i), task,
                                              exec.outputs, policy.context_injection, guidance,
                                              policy.cache_aligned_prompts);
                fine_equivalent += static_cast<long>(bundle_input_tokens(b));
            }
            long actual = 0;
            for (const auto& call : exec.calls)
                if (!call.shadow) actual += call.usage.input_tokens;
            report.achievable_savings_tokens = fine_equivalent - actual;
            const bool gate_ok =
                !exec.observation.quality || *exec.observation.quality >= policy.quality_floor;
            report.realized_savings_tokens = gate_ok ? report.achievable_savings_tokens : 0;
        }

        // ---- assemble
        std::string combined;
        std::string framed;
        for (const auto& agent : group.agents) {
            const std::string& text = exec.outputs[agent.name];
            result.outputs[group.name + "." + agent.name] = text;
            if (!combined.empty()) combined += "\n\n";
            combined += text;
            framed += "[from " + agent.name + "]\n" + text + "\n";
        }
        auto& history = output_history_[group.name];
        history.push_back(combined);
        if (history.size() > 8) history.erase(history.begin());
        upstream = framed;

        for (const auto& call : exec.calls) {
            result.token_usage += call.usage;
            result.latency_ms += call.wall_clock_ms;
            result.calls.push_back(call);
        }
        for (const auto& d : report.decisions) audit(nlohmann::json(d));
        audit(nlohmann::json(exec.observation));
        result.per_group[group.name] = std::move(report);
    }
    return result;
}

}  // namespace capsules
