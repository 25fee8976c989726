// Command-line surface: run, observe, calibrate, sweep, report. A thin shell
// over the library; every command maps to one library call with identical
// outputs. Exit codes: 0 success, 2 validation error, 3 execution error.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "capsules/calibrate.hpp"
#include "capsules/composition.hpp"
#include "capsules/errors.hpp"
#include "capsules/evaluators.hpp"
#include "capsules/execution.hpp"
#include "capsules/report.hpp"
#include "capsules/scripted.hpp"
#include "capsules/http_adapter.hpp"

namespace {

using namespace capsules;

constexpr int kOk = 0;
constexpr int kValidationError = 2;
constexpr int kExecutionError = 3;

struct CommonArgs {
    std::string pipeline_path;
    std::string task;
    std::vector<std::string> tasks;
    std::string tasks_path;
    std::string adapter_spec;
    std::string evaluator_name = "none";
    std::string judge_model;
    std::string sensitivity;
    std::vector<std::string> set_overrides;
    std::string store_spec = "memory";
    std::optional<std::uint64_t> seed;
    std::string audit_path;
    std::string out_path;
    std::string lexicon_path;
    int runs = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool needs_task) {
    cmd->add_option("--pipeline", args.pipeline_path, "pipeline declaration file (JSON)")
        ->required();
    if (needs_task) {
        cmd->add_option("--task", args.task, "task text")->required();
    } else {
        cmd->add_option("--task", args.tasks, "task text (repeatable)");
        cmd->add_option("--tasks", args.tasks_path, "file with one task per line");
    }
    cmd->add_option("--adapter", args.adapter_spec,
                    "adapter: scripted:<profile.json> or http:<config.json>")
        ->required();
    cmd->add_option("--evaluator", args.evaluator_name,
                    "quality evaluator: judge|schema|consistency|scripted|none");
    cmd->add_option("--judge-model", args.judge_model, "model name for the judge evaluator");
    cmd->add_option("--sensitivity", args.sensitivity,
                    "policy preset: aggressive|balanced|conservative");
    cmd->add_option("--set", args.set_overrides, "policy field override key=value (repeatable)");
    cmd->add_option("--store", args.store_spec, "telemetry store: memory or file:<dir>");
    cmd->add_option("--seed", args.seed, "deterministic seed (required for scripted adapters)");
    cmd->add_option("--audit", args.audit_path, "append-only ndjson audit log path");
    cmd->add_option("--out", args.out_path, "artifact output path (default: stdout)");
    cmd->add_option("--overhead-lexicon", args.lexicon_path, "overhead lexicon file");
}

struct Context {
    PipelineSpec pipeline;
    std::shared_ptr<Adapter> adapter;
    std::shared_ptr<Evaluator> evaluator;
    std::shared_ptr<Backend> backend;
    RuntimeOptions options;
    // factories for the calibrate/sweep workflows (fresh state per leg)
    AdapterFactory adapter_factory;
    EvaluatorFactory evaluator_factory;
    std::shared_ptr<OverheadLexicon> lexicon;  // owns options.lexicon's target
    std::vector<std::string> tasks;
};

std::vector<std::string> read_task_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw CapsuleError(ErrorCode::InvalidArgument, "cannot read tasks file: " + path);
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(line);
    return out;
}

Context build_context(const CommonArgs& args, bool needs_task) {
    Context ctx;
    ctx.pipeline = load_pipeline_file(args.pipeline_path);

    if (!args.sensitivity.empty())
        ctx.pipeline.pipeline_policy = preset(preset_from_name(args.sensitivity));
    for (const std::string& kv : args.set_overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw CapsuleError(ErrorCode::InvalidArgument,
                               "--set expects key=value, got '" + kv + "'");
        set_policy_field(ctx.pipeline.pipeline_policy, kv.substr(0, eq), kv.substr(eq + 1));
    }
    const auto violations = validate_policy(ctx.pipeline.pipeline_policy);
    if (!violations.empty())
        throw CapsuleError(ErrorCode::InvalidArgument, "invalid policy: " + violations.front());

    // ---- adapter
    const std::string& spec = args.adapter_spec;
    if (spec.rfind("scripted:", 0) == 0) {
        if (!args.seed)
            throw CapsuleError(ErrorCode::InvalidArgument,
                               "--seed is required for scripted adapters");
        const ScriptedProfile profile = load_profile_file(spec.substr(9));
        const std::uint64_t seed = *args.seed;
        ctx.adapter = std::make_shared<ScriptedAdapter>(profile, seed);
        ctx.adapter_factory = [profile, seed] {
            return std::make_shared<ScriptedAdapter>(profile, seed);
        };
        ctx.options.clock = [] { return 0; };  // scripted runs are fully deterministic
        if (args.evaluator_name == "scripted") {
            ctx.evaluator = std::make_shared<ScriptedProfileEvaluator>(profile, seed);
            ctx.evaluator_factory = [profile, seed] {
                return std::make_shared<ScriptedProfileEvaluator>(profile, seed);
            };
        }
    } else if (spec.rfind("http:", 0) == 0) {
        const HttpAdapterConfig config = load_http_config_file(spec.substr(5));
        ctx.adapter = std::make_shared<HttpMessagesAdapter>(config);
        ctx.adapter_factory = [adapter = ctx.adapter] { return adapter; };
        if (args.evaluator_name == "scripted")
            throw CapsuleError(ErrorCode::InvalidArgument,
                               "evaluator 'scripted' requires a scripted adapter");
    } else {
        throw CapsuleError(ErrorCode::InvalidArgument,
                           "adapter must be scripted:<path> or http:<path>, got '" + spec + "'");
    }

    // ---- evaluator
    const std::string& ev = args.evaluator_name;
    if (ev == "none" || ev == "scripted") {
        // scripted handled above; none stays null (gate inactive, warned at runtime)
    } else if (ev == "schema") {
        ctx.evaluator = std::make_shared<SchemaComplianceEvaluator>();
        ctx.evaluator_factory = [] { return std::make_shared<SchemaComplianceEvaluator>(); };
    } else if (ev == "consistency") {
        ctx.evaluator = std::make_shared<ConsistencyEvaluator>();
        ctx.evaluator_factory = [] { return std::make_shared<ConsistencyEvaluator>(); };
    } else if (ev == "judge") {
        const std::string model =
            args.judge_model.empty() ? ctx.adapter->model_name() : args.judge_model;
        ctx.evaluator = std::make_shared<JudgeEvaluator>(ctx.adapter, model);
        ctx.evaluator_factory = [adapter = ctx.adapter, model] {
            return std::make_shared<JudgeEvaluator>(adapter, model);
        };
    } else {
        throw CapsuleError(ErrorCode::InvalidArgument, "unknown evaluator '" + ev + "'");
    }

    // ---- store
    if (args.store_spec == "memory") {
        ctx.backend = std::make_shared<MemoryBackend>();
    } else if (args.store_spec.rfind("file:", 0) == 0) {
        ctx.backend = std::make_shared<FileBackend>(args.store_spec.substr(5));
    } else {
        throw CapsuleError(ErrorCode::InvalidArgument,
                           "store must be memory or file:<dir>, got '" + args.store_spec + "'");
    }

    if (!args.lexicon_path.empty()) {
        ctx.lexicon = std::make_shared<OverheadLexicon>(
            OverheadLexicon::from_file(args.lexicon_path));
        ctx.options.lexicon = ctx.lexicon.get();
    }
    ctx.options.audit_path = args.audit_path;

    // ---- tasks
    if (needs_task) {
        ctx.tasks = {args.task};
    } else {
        ctx.tasks = args.tasks;
        if (!args.tasks_path.empty())
            for (auto& t : read_task_lines(args.tasks_path)) ctx.tasks.push_back(std::move(t));
        if (ctx.tasks.empty())
            throw CapsuleError(ErrorCode::InvalidArgument,
                               "at least one --task or a --tasks file is required");
    }
    return ctx;
}

void write_artifact(const std::string& out_path, const std::string& content) {
    if (out_path.empty()) {
        std::cout << content;
        if (!content.empty() && content.back() != '\n') std::cout << '\n';
        return;
    }
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw CapsuleError(ErrorCode::SerializationError, "cannot write " + out_path);
    out << content;
}

void print_run_table(const RunResult& result) {
    std::ostringstream os;
    os << "pipeline " << result.pipeline << ": input " << result.token_usage.input_tokens
       << " output " << result.token_usage.output_tokens << " cache_read "
       << result.token_usage.cache_read_tokens << " tokens\n";
    for (const auto& [name, group] : result.per_group) {
        os << "  " << name << ": " << to_string(group.mode_used);
        if (group.tier) os << "/" << to_string(*group.tier);
        if (group.quality) os << " quality=" << *group.quality;
        os << " savings=" << group.realized_savings_tokens << "/"
           << group.achievable_savings_tokens;
        os << "\n";
    }
    std::cerr << os.str();
}

int cmd_run(const CommonArgs& args) {
    Context ctx = build_context(args, /*needs_task=*/true);
    PipelineRuntime runtime(ctx.pipeline, ctx.adapter, ctx.evaluator, ctx.backend, ctx.options);
    const RunResult result = runtime.run(ctx.tasks.front());
    print_run_table(result);
    write_artifact(args.out_path, result.to_json_canonical().dump(2) + "\n");
    return kOk;
}

int cmd_observe(const CommonArgs& args) {
    if (args.runs < 1)
        throw CapsuleError(ErrorCode::InvalidArgument, "--runs must be >= 1");
    Context ctx = build_context(args, /*needs_task=*/true);
    ctx.options.controller_mode_override = ControllerMode::observe;
    ctx.options.use_mode_override = true;
    PipelineRuntime runtime(ctx.pipeline, ctx.adapter, ctx.evaluator, ctx.backend, ctx.options);
    for (int i = 0; i < args.runs; ++i) runtime.run(ctx.tasks.front());

    // per-group score/quality baselines from the accumulated observations
    nlohmann::json baselines = nlohmann::json::object();
    TelemetryStore& store = runtime.store();
    for (const auto& group : ctx.pipeline.groups) {
        const ControllerPolicy& policy =
            group.policy_override ? *group.policy_override : ctx.pipeline.pipeline_policy;
        const auto log = store.load_observations(ctx.pipeline.name, group.name);
        std::vector<double> scores, qualities;
        GroupControllerState fresh;
        for (const auto& obs : log) {
            GroupStats one;
            one.observe(obs, fresh, static_cast<int>(group.agents.size()),
                        dependency_depth(group), policy.window_size);
            if (!one.score_window.empty()) scores.push_back(one.score_window.back());
            if (obs.quality) qualities.push_back(*obs.quality);
        }
        nlohmann::json entry{{"observations", log.size()}};
        if (!scores.empty()) {
            const Distribution d = summarize(scores);
            entry["score_mean"] = d.mean;
            entry["score_stddev"] = d.stddev;
        }
        if (!qualities.empty()) entry["quality_mean"] = summarize(qualities).mean;
        baselines[group.name] = std::move(entry);
    }
    write_artifact(args.out_path, baselines.dump(2) + "\n");
    return kOk;
}

int cmd_calibrate(const CommonArgs& args) {
    Context ctx = build_context(args, /*needs_task=*/false);
    const int runs = args.runs > 0 ? args.runs : 3;
    const CalibrationReport report = calibrate(ctx.pipeline, ctx.tasks, ctx.adapter_factory,
                                               ctx.evaluator_factory, runs);
    std::cerr << report.render_text();
    write_artifact(args.out_path, report.to_json().dump(2) + "\n");
    return kOk;
}

int cmd_sweep(const CommonArgs& args, const std::vector<double>& grid) {
    Context ctx = build_context(args, /*needs_task=*/false);
    const int runs = args.runs > 0 ? args.runs : 6;
    const auto points =
        sweep(ctx.pipeline, ctx.tasks, ctx.adapter_factory, ctx.evaluator_factory, grid, runs);
    write_artifact(args.out_path, sweep_csv(points));
    return kOk;
}

int cmd_report(const std::vector<std::string>& result_paths, const std::string& out_path,
               double mdd) {
    std::vector<RunResult> results;
    for (const std::string& path : result_paths) {
        std::ifstream in(path);
        if (!in) {
            std::cerr << "report: cannot read '" << path << "', skipped\n";
            continue;
        }
        try {
            nlohmann::json j;
            in >> j;
            results.push_back(RunResult::from_json_canonical(j));
        } catch (const std::exception& e) {
            std::cerr << "report: malformed result '" << path << "' (" << e.what()
                      << "), skipped\n";
        }
    }
    if (results.empty()) {
        std::cerr << "report: no readable results\n";
        return kExecutionError;
    }
    ReportOptions options;
    options.judge_mdd = mdd;
    write_artifact(out_path, render_report(results, options));
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"declarative multi-agent pipelines with adaptive compound execution"};
    app.require_subcommand(1);

    CommonArgs run_args, observe_args, calibrate_args, sweep_args;
    std::vector<double> grid;
    std::vector<std::string> report_paths;
    std::string report_out;
    double report_mdd = 0.030;

    CLI::App* run_cmd = app.add_subcommand("run", "execute the pipeline once");
    add_common(run_cmd, run_args, true);

    CLI::App* observe_cmd =
        app.add_subcommand("observe", "accumulate fine-mode baselines without switching");
    add_common(observe_cmd, observe_args, true);
    observe_cmd->add_option("--runs", observe_args.runs, "iterations")->default_val(5);

    CLI::App* calibrate_cmd =
        app.add_subcommand("calibrate", "profile all modes and recommend thresholds");
    add_common(calibrate_cmd, calibrate_args, false);
    calibrate_cmd->add_option("--runs", calibrate_args.runs, "runs per mode");

    CLI::App* sweep_cmd = app.add_subcommand("sweep", "sweep compose_at over a grid");
    add_common(sweep_cmd, sweep_args, false);
    sweep_cmd->add_option("--runs", sweep_args.runs, "runs per task per grid point");
    sweep_cmd->add_option("--grid", grid, "ascending compose_at values")->required();

    CLI::App* report_cmd = app.add_subcommand("report", "render a cross-run report");
    report_cmd->add_option("results", report_paths, "RunResult JSON files")->required();
    report_cmd->add_option("--out", report_out, "output path (default: stdout)");
    report_cmd->add_option("--judge-mdd", report_mdd, "judge minimum detectable difference");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kValidationError;
    }

    try {
        if (run_cmd->parsed()) return cmd_run(run_args);
        if (observe_cmd->parsed()) return cmd_observe(observe_args);
        if (calibrate_cmd->parsed()) return cmd_calibrate(calibrate_args);
        if (sweep_cmd->parsed()) return cmd_sweep(sweep_args, grid);
        if (report_cmd->parsed()) return cmd_report(report_paths, report_out, report_mdd);
    } catch (const CapsuleError& e) {
        std::cerr << "error: " << e.what() << "\n";
        switch (e.code()) {
            case ErrorCode::ParseError:
            case ErrorCode::ProfileError:
            case ErrorCode::InvalidArgument:
            case ErrorCode::EvaluatorMissing:
                return kValidationError;
            default:
                return kExecutionError;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExecutionError;
    }
    return kValidationError;
}
