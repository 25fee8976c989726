#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "capsules/execution.hpp"
#include "capsules/pipeline.hpp"
#include "capsules/scripted.hpp"

using namespace capsules;
namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
    static const fs::path dir = [] {
        fs::path d = fs::temp_directory_path() / "capsules_cli_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

void write_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    REQUIRE(out.good());
    out << content;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Runs the built CLI; returns the exit code, captures stdout/stderr to files.
int run_cli(const std::string& args, std::string* out = nullptr, std::string* err = nullptr) {
    const fs::path out_path = work_dir() / "stdout.txt";
    const fs::path err_path = work_dir() / "stderr.txt";
    const std::string cmd = std::string(CAPSULES_CLI_PATH) + " " + args + " >" +
                            out_path.string() + " 2>" + err_path.string();
    const int rc = std::system(cmd.c_str());
    if (out) *out = read_file(out_path);
    if (err) *err = read_file(err_path);
    REQUIRE(WIFEXITED(rc));
    return WEXITSTATUS(rc);
}

fs::path fixture_pipeline() {
    static const fs::path path = [] {
        PipelineSpec p = PipelineBuilder("brief")
                             .group("sources")
                             .agent("alpha", "Alpha charter.", {}, std::vector<std::string>{})
                             .agent("beta", "Beta charter.", {}, std::vector<std::string>{})
                             .agent("gamma", "Gamma charter.", {}, std::vector<std::string>{})
                             .build();
        const fs::path file = work_dir() / "pipeline.json";
        write_file(file, serialize_pipeline(p).dump(2));
        return file;
    }();
    return path;
}

fs::path fixture_profile() {
    static const fs::path path = [] {
        const nlohmann::json profile = {
            {"model", "scripted-v1"},
            {"agents",
             {{"default",
               {{"output_tokens", 400},
                {"overhead_fraction", 0.2},
                {"quality",
                 {{"fine", 0.85}, {"standard", 0.9}, {"two_phase", 0.9},
                  {"sequential", 0.9}}}}}}},
        };
        const fs::path file = work_dir() / "profile.json";
        write_file(file, profile.dump(2));
        return file;
    }();
    return path;
}

std::string base_run_args(const fs::path& out) {
    return "run --pipeline " + fixture_pipeline().string() +
           " --task tttt --adapter scripted:" + fixture_profile().string() +
           " --evaluator scripted --seed 7 --out " + out.string();
}

}  // namespace

TEST_CASE("run executes once and writes a canonical RunResult") {
    const fs::path out = work_dir() / "run1.json";
    std::string err;
    CHECK(run_cli(base_run_args(out), nullptr, &err) == 0);
    const nlohmann::json j = nlohmann::json::parse(read_file(out));
    const RunResult result = RunResult::from_json_canonical(j);
    CHECK(result.pipeline == "brief");
    CHECK(result.outputs.count("sources.alpha") == 1);
    CHECK(result.per_group.at("sources").mode_used == Mode::FINE);  // first run observes
    CHECK(err.find("sources") != std::string::npos);  // the per-group table
}

TEST_CASE("scripted runs are deterministic end to end") {
    const fs::path a = work_dir() / "det_a.json";
    const fs::path b = work_dir() / "det_b.json";
    CHECK(run_cli(base_run_args(a)) == 0);
    CHECK(run_cli(base_run_args(b)) == 0);
    CHECK(read_file(a) == read_file(b));
}

TEST_CASE("CLI output matches the library call byte for byte") {
    const fs::path out = work_dir() / "parity.json";
    CHECK(run_cli(base_run_args(out)) == 0);

    PipelineSpec p = load_pipeline_file(fixture_pipeline().string());
    const ScriptedProfile profile = load_profile_file(fixture_profile().string());
    auto adapter = std::make_shared<ScriptedAdapter>(profile, 7);
    auto evaluator = std::make_shared<ScriptedProfileEvaluator>(profile, 7);
    RuntimeOptions options;
    options.clock = [] { return 0; };
    PipelineRuntime runtime(p, adapter, evaluator, std::make_shared<MemoryBackend>(), options);
    const RunResult expected = runtime.run("tttt");
    CHECK(read_file(out) == expected.to_json_canonical().dump(2) + "\n");
}

TEST_CASE("validation failures exit 2 before any execution") {
    std::string err;
    SUBCASE("missing pipeline file") {
        CHECK(run_cli("run --pipeline /nonexistent.json --task t --adapter scripted:" +
                          fixture_profile().string() + " --seed 1",
                      nullptr, &err) == 2);
    }
    SUBCASE("scripted adapter without a seed") {
        CHECK(run_cli("run --pipeline " + fixture_pipeline().string() +
                          " --task t --adapter scripted:" + fixture_profile().string(),
                      nullptr, &err) == 2);
        CHECK(err.find("--seed") != std::string::npos);
    }
    SUBCASE("unknown adapter scheme") {
        CHECK(run_cli("run --pipeline " + fixture_pipeline().string() +
                          " --task t --adapter carrier-pigeon:x --seed 1",
                      nullptr, &err) == 2);
    }
    SUBCASE("bad policy override value") {
        CHECK(run_cli("run --pipeline " + fixture_pipeline().string() +
                          " --task t --adapter scripted:" + fixture_profile().string() +
                          " --seed 1 --set compose_at=abc",
                      nullptr, &err) == 2);
    }
    SUBCASE("inconsistent policy after overrides") {
        CHECK(run_cli("run --pipeline " + fixture_pipeline().string() +
                          " --task t --adapter scripted:" + fixture_profile().string() +
                          " --seed 1 --set compose_at=0.05",
                      nullptr, &err) == 2);
    }
    SUBCASE("missing required flag") {
        CHECK(run_cli("run --task t", nullptr, &err) == 2);
    }
    SUBCASE("unknown subcommand") {
        CHECK(run_cli("frobnicate", nullptr, &err) == 2);
    }
}

TEST_CASE("observe accumulates baselines without switching") {
    const fs::path out = work_dir() / "baselines.json";
    const fs::path store = work_dir() / "observe_store";
    std::string err;
    CHECK(run_cli("observe --pipeline " + fixture_pipeline().string() +
                      " --task tttt --adapter scripted:" + fixture_profile().string() +
                      " --evaluator scripted --seed 7 --runs 5 --store file:" +
                      store.string() + " --out " + out.string(),
                  nullptr, &err) == 0);
    const nlohmann::json baselines = nlohmann::json::parse(read_file(out));
    CHECK(baselines.at("sources").at("observations") == 5);
    CHECK(baselines.at("sources").at("score_mean").get<double>() > 0.0);
    CHECK(baselines.at("sources").at("quality_mean").get<double>() ==
          doctest::Approx(0.85));
    // zero iterations is a validation error
    CHECK(run_cli("observe --pipeline " + fixture_pipeline().string() +
                      " --task t --adapter scripted:" + fixture_profile().string() +
                      " --seed 7 --runs 0",
                  nullptr, &err) == 2);
}

TEST_CASE("calibrate and sweep emit their artifacts") {
    const fs::path cal_out = work_dir() / "calibration.json";
    std::string err;
    CHECK(run_cli("calibrate --pipeline " + fixture_pipeline().string() +
                      " --task tttt --adapter scripted:" + fixture_profile().string() +
                      " --evaluator scripted --seed 7 --runs 2 --out " + cal_out.string(),
                  nullptr, &err) == 0);
    const nlohmann::json cal = nlohmann::json::parse(read_file(cal_out));
    CHECK(cal.contains("recommended_policy"));
    CHECK(cal.at("groups").contains("sources"));
    CHECK(err.find("recommended policy block") != std::string::npos);

    const fs::path csv_out = work_dir() / "sweep.csv";
    CHECK(run_cli("sweep --pipeline " + fixture_pipeline().string() +
                      " --task tttt --adapter scripted:" + fixture_profile().string() +
                      " --evaluator scripted --seed 7 --runs 4 --grid 0.15 --grid 0.5 --out " +
                      csv_out.string(),
                  nullptr, &err) == 0);
    const std::string csv = read_file(csv_out);
    CHECK(csv.rfind("compose_at,input_tokens,output_tokens,mean_quality,compound_fires,"
                    "blocks,reverts,escalations\n",
                    0) == 0);
}

TEST_CASE("report renders savings, quality, and the decision timeline") {
    const fs::path store = work_dir() / "report_store";
    const fs::path audit = work_dir() / "audit.ndjson";
    std::vector<fs::path> result_files;
    for (int i = 0; i < 5; ++i) {
        const fs::path out = work_dir() / ("result" + std::to_string(i) + ".json");
        CHECK(run_cli("run --pipeline " + fixture_pipeline().string() +
                          " --task tttttttttttttttttttttttttttttttt --adapter scripted:" +
                          fixture_profile().string() +
                          " --evaluator scripted --seed 7 --store file:" + store.string() +
                          " --audit " + audit.string() + " --out " + out.string()) == 0);
        result_files.push_back(out);
    }
    std::string paths;
    for (const auto& f : result_files) paths += " " + f.string();

    std::string text;
    CHECK(run_cli("report" + paths, &text) == 0);
    CHECK(text.find("Token savings") != std::string::npos);
    CHECK(text.find("achievable") != std::string::npos);
    CHECK(text.find("gate-adjusted") != std::string::npos);
    CHECK(text.find("Mode-decision timeline") != std::string::npos);
    // across 5 persisted runs the controller switched to compound
    CHECK(text.find("COMPOUND/standard") != std::string::npos);

    // the audit trail recorded decisions and observations as ndjson
    std::istringstream audit_in(read_file(audit));
    std::string line;
    int audit_lines = 0;
    while (std::getline(audit_in, line)) {
        if (line.empty()) continue;
        CHECK_NOTHROW(nlohmann::json::parse(line));
        ++audit_lines;
    }
    CHECK(audit_lines >= 10);  // >= one decision + one observation per run

    SUBCASE("report is byte-stable across invocations") {
        std::string again;
        CHECK(run_cli("report" + paths, &again) == 0);
        CHECK(text == again);
    }
    SUBCASE("malformed results are skipped; all-skipped is an error") {
        const fs::path junk = work_dir() / "junk.json";
        write_file(junk, "not json at all");
        std::string err;
        CHECK(run_cli("report " + junk.string() + paths, nullptr, &err) == 0);
        CHECK(err.find("junk.json") != std::string::npos);
        CHECK(run_cli("report " + junk.string(), nullptr, &err) == 3);
        CHECK(run_cli("report", nullptr, &err) == 2);  // no inputs at all
    }
}
