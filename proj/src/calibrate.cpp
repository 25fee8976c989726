#include "capsules/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "capsules/errors.hpp"

namespace capsules {

double percentile(std::vector<double> values, double p) {
    if (values.empty())
        throw CapsuleError(ErrorCode::InsufficientData, "percentile of empty sample");
    std::sort(values.begin(), values.end());
    const double rank = std::ceil(p / 100.0 * static_cast<double>(values.size()));
    const auto idx = static_cast<std::size_t>(std::clamp(
        rank - 1.0, 0.0, static_cast<double>(values.size() - 1)));
    return values[idx];
}

Distribution summarize(std::vector<double> values) {
    if (values.empty())
        throw CapsuleError(ErrorCode::InsufficientData, "summarize of empty sample");
    Distribution d;
    d.count = static_cast<int>(values.size());
    d.mean = std::accumulate(values.begin(), values.end(), 0.0) /
             static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - d.mean) * (v - d.mean);
    d.stddev = std::sqrt(var / static_cast<double>(values.size()));
    std::sort(values.begin(), values.end());
    d.min = values.front();
    d.max = values.back();
    d.median = percentile(values, 50.0);
    d.p95 = percentile(values, 95.0);
    return d;
}

namespace {

struct Leg {
    ControllerMode mode;
    CompoundExecutionModel model;
    const char* label;
};

const Leg kLegs[] = {
    {ControllerMode::fine, CompoundExecutionModel::auto_select, "fine"},
    {ControllerMode::compound, CompoundExecutionModel::standard, "standard"},
    {ControllerMode::compound, CompoundExecutionModel::two_phase, "two_phase"},
    {ControllerMode::compound, CompoundExecutionModel::sequential, "sequential"},
};

// Runs one locked leg over every task on a fresh store; returns the runtime's
// telemetry store for harvesting.
std::shared_ptr<Backend> run_leg(const PipelineSpec& pipeline, const Leg& leg,
                                 const std::vector<std::string>& tasks,
                                 const AdapterFactory& adapters,
                                 const EvaluatorFactory& evaluators, int runs_per_mode) {
    PipelineSpec locked = pipeline;
    locked.controller_mode = leg.mode;
    locked.pipeline_policy.compound_execution_model = leg.model;
    for (auto& group : locked.groups)
        if (group.policy_override)
            group.policy_override->compound_execution_model = leg.model;
    auto backend = std::make_shared<MemoryBackend>();
    RuntimeOptions options;
    options.clock = [] { return 0; };
    PipelineRuntime runtime(locked, adapters(), evaluators(), backend, options);
    for (int r = 0; r < runs_per_mode; ++r)
        for (const auto& task : tasks) runtime.run(task);
    return backend;
}

}  // namespace

CalibrationReport calibrate(const PipelineSpec& pipeline, const std::vector<std::string>& tasks,
                            const AdapterFactory& adapters, const EvaluatorFactory& evaluators,
                            int runs_per_mode) {
    if (tasks.empty())
        throw CapsuleError(ErrorCode::InvalidArgument, "calibrate requires at least one task");
    if (runs_per_mode < 1)
        throw CapsuleError(ErrorCode::InvalidArgument, "runs_per_mode must be >= 1");
    if (!evaluators || !evaluators())
        throw CapsuleError(ErrorCode::EvaluatorMissing, "calibrate requires an evaluator");

    CalibrationReport report;
    std::map<std::string, std::vector<double>> scores_by_group;
    std::map<std::string, std::map<std::string, std::vector<double>>> quality_by_group_tier;
    std::map<std::string, std::map<std::string, std::vector<double>>> outputs_by_group_agent;

    for (const Leg& leg : kLegs) {
        auto backend = run_leg(pipeline, leg, tasks, adapters, evaluators, runs_per_mode);
        TelemetryStore store(backend);
        for (const auto& group : pipeline.groups) {
            const ControllerPolicy& policy =
                group.policy_override ? *group.policy_override : pipeline.pipeline_policy;
            const auto log = store.load_observations(pipeline.name, group.name);
            auto& cal = report.groups[group.name];
            for (const Observation& obs : log) {
                const char* tier_label =
                    obs.mode == Mode::FINE ? "fine" : to_string(obs.tier);
                if (obs.quality)
                    quality_by_group_tier[group.name][tier_label].push_back(*obs.quality);
                if (obs.mode == Mode::FINE) {
                    GroupControllerState fresh;
                    GroupStats one;
                    one.observe(obs, fresh, static_cast<int>(group.agents.size()),
                                dependency_depth(group), policy.window_size);
                    if (!one.score_window.empty())
                        scores_by_group[group.name].push_back(one.score_window.back());
                    for (std::size_t i = 0; i < group.agents.size() &&
                                            i < obs.per_agent_output_tokens.size();
                         ++i)
                        outputs_by_group_agent[group.name][group.agents[i].name].push_back(
                            static_cast<double>(obs.per_agent_output_tokens[i]));
                    ++cal.evidence_runs;
                }
            }
        }
    }

    std::vector<double> all_scores, all_quality, all_outputs;
    for (auto& [group_name, cal] : report.groups) {
        auto& scores = scores_by_group[group_name];
        if (scores.empty())
            throw CapsuleError(ErrorCode::InsufficientData,
                               "no FINE-mode scores for group '" + group_name + "'");
        cal.scores = summarize(scores);
        all_scores.insert(all_scores.end(), scores.begin(), scores.end());
        const GroupSpec* group = pipeline.find_group(group_name);
        const bool single_agent = group && group->agents.size() < 2;
        for (const Leg& leg : kLegs) {
            // single-agent groups always run fine framing; no tier evidence exists
            if (single_agent && std::string(leg.label) != "fine") continue;
            auto& samples = quality_by_group_tier[group_name][leg.label];
            if (samples.empty())
                throw CapsuleError(ErrorCode::InsufficientData,
                                   "tier '" + std::string(leg.label) +
                                       "' produced no scorable runs for group '" + group_name +
                                       "'");
            cal.mean_quality_by_tier[leg.label] =
                std::accumulate(samples.begin(), samples.end(), 0.0) /
                static_cast<double>(samples.size());
            all_quality.insert(all_quality.end(), samples.begin(), samples.end());
        }
        for (auto& [agent, lengths] : outputs_by_group_agent[group_name]) {
            cal.output_tokens_by_agent[agent] = summarize(lengths);
            all_outputs.insert(all_outputs.end(), lengths.begin(), lengths.end());
        }
    }

    // Recommendation rules: median - 1 std for compose_at, clamped to the
    // observed range; 5th-percentile quality for the floor; p95 per-agent
    // output for the verbosity threshold.
    const Distribution score_dist = summarize(all_scores);
    ControllerPolicy rec = pipeline.pipeline_policy;
    rec.compose_at =
        std::clamp(score_dist.median - score_dist.stddev, score_dist.min, score_dist.max);
    rec.quality_floor = percentile(all_quality, 5.0);
    if (!all_outputs.empty())
        rec.verbosity_output_threshold =
            static_cast<int>(std::llround(percentile(all_outputs, 95.0)));
    report.recommended = rec;
    return report;
}

nlohmann::json CalibrationReport::to_json() const {
    nlohmann::json groups_json = nlohmann::json::object();
    auto dist_json = [](const Distribution& d) {
        return nlohmann::json{{"min", d.min},     {"median", d.median}, {"p95", d.p95},
                              {"max", d.max},     {"mean", d.mean},     {"stddev", d.stddev},
                              {"count", d.count}};
    };
    for (const auto& [name, cal] : groups) {
        nlohmann::json outputs = nlohmann::json::object();
        for (const auto& [agent, dist] : cal.output_tokens_by_agent)
            outputs[agent] = dist_json(dist);
        groups_json[name] = {{"scores", dist_json(cal.scores)},
                             {"mean_quality_by_tier", cal.mean_quality_by_tier},
                             {"output_tokens_by_agent", outputs},
                             {"evidence_runs", cal.evidence_runs}};
    }
    nlohmann::json policy_json;
    capsules::to_json(policy_json, recommended);
    return nlohmann::json{{"groups", groups_json}, {"recommended_policy", policy_json}};
}

std::string CalibrationReport::render_text() const {
    std::ostringstream os;
    os << "Calibration report (advisory)\n";
    for (const auto& [name, cal] : groups) {
        os << "\ngroup " << name << " (" << cal.evidence_runs << " fine runs)\n";
        os << "  score min/median/p95: " << cal.scores.min << " / " << cal.scores.median
           << " / " << cal.scores.p95 << "\n";
        os << "  mean quality by tier:";
        for (const auto& [tier, q] : cal.mean_quality_by_tier) os << " " << tier << "=" << q;
        os << "\n  per-agent output tokens (mean):";
        for (const auto& [agent, dist] : cal.output_tokens_by_agent)
            os << " " << agent << "=" << dist.mean;
        os << "\n";
    }
    nlohmann::json policy_json;
    capsules::to_json(policy_json, recommended);
    os << "\nrecommended policy block:\n" << policy_json.dump(2) << "\n";
    return os.str();
}

std::vector<SweepPoint> sweep(const PipelineSpec& pipeline,
                              const std::vector<std::string>& tasks,
                              const AdapterFactory& adapters,
                              const EvaluatorFactory& evaluators,
                              const std::vector<double>& grid, int runs_per_task) {
    if (grid.empty()) throw CapsuleError(ErrorCode::InvalidArgument, "sweep grid is empty");
    if (!std::is_sorted(grid.begin(), grid.end()))
        throw CapsuleError(ErrorCode::InvalidArgument, "sweep grid must ascend");
    if (tasks.empty()) throw CapsuleError(ErrorCode::InvalidArgument, "sweep requires tasks");

    std::vector<SweepPoint> out;
    for (double compose_at : grid) {
        PipelineSpec tuned = pipeline;
        tuned.pipeline_policy.compose_at = compose_at;
        for (auto& group : tuned.groups)
            if (group.policy_override) group.policy_override->compose_at = compose_at;

        // fresh store per point: no cross-contaminated windows
        auto backend = std::make_shared<MemoryBackend>();
        RuntimeOptions options;
        options.clock = [] { return 0; };
        PipelineRuntime runtime(tuned, adapters(), evaluators ? evaluators() : nullptr, backend,
                                options);

        SweepPoint point;
        point.compose_at = compose_at;
        std::vector<double> qualities;
        for (const auto& task : tasks)
            for (int r = 0; r < runs_per_task; ++r) {
                RunResult result = runtime.run(task);
                point.input_tokens += result.token_usage.input_tokens;
                point.output_tokens += result.token_usage.output_tokens;
                for (const auto& [group_name, group_report] : result.per_group) {
                    if (group_report.mode_used == Mode::COMPOUND) ++point.compound_fires;
                    if (group_report.quality) qualities.push_back(*group_report.quality);
                    for (const auto& d : group_report.decisions) {
                        if (d.reason == DecisionReason::shadow_blocked) ++point.blocks;
                        if (d.reason == DecisionReason::reverted) ++point.reverts;
                        if (d.reason == DecisionReason::escalated) ++point.escalations;
                    }
                }
            }
        if (!qualities.empty())
            point.mean_quality = std::accumulate(qualities.begin(), qualities.end(), 0.0) /
                                 static_cast<double>(qualities.size());
        out.push_back(point);
    }
    return out;
}

std::string sweep_csv(const std::vector<SweepPoint>& points) {
    std::ostringstream os;
    os << "compose_at,input_tokens,output_tokens,mean_quality,compound_fires,blocks,reverts,"
          "escalations\n";
    for (const auto& p : points) {
        os << p.compose_at << ',' << p.input_tokens << ',' << p.output_tokens << ','
           << p.mean_quality << ',' << p.compound_fires << ',' << p.blocks << ',' << p.reverts
           << ',' << p.escalations << '\n';
    }
    return os.str();
}

}  // namespace capsules
