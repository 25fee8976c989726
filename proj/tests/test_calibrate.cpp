#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <memory>

#include "capsules/calibrate.hpp"
#include "capsules/composition.hpp"
#include "capsules/errors.hpp"
#include "capsules/scripted.hpp"

using namespace capsules;

namespace {

PipelineSpec linear2() {
    return PipelineBuilder("p").group("g").agent("research", "r").agent("analysis", "a").build();
}

ScriptedProfile calibration_profile() {
    ScriptedProfile profile;
    AgentScript s;
    s.output_tokens = 400;
    s.overhead_fraction = 0.2;
    s.quality = {{"fine", 0.9}, {"standard", 0.8}, {"two_phase", 0.85}, {"sequential", 0.76}};
    profile.agents["default"] = s;
    return profile;
}

AdapterFactory adapters_for(const ScriptedProfile& profile, std::uint64_t seed) {
    return [profile, seed] { return std::make_shared<ScriptedAdapter>(profile, seed); };
}

EvaluatorFactory evaluators_for(const ScriptedProfile& profile, std::uint64_t seed) {
    return [profile, seed] { return std::make_shared<ScriptedProfileEvaluator>(profile, seed); };
}

struct NoVerdict : Evaluator {
    std::optional<QualityScore> evaluate(const EvalContext&) override { return std::nullopt; }
    std::string name() const override { return "mute"; }
};

}  // namespace

TEST_CASE("percentile is nearest-rank") {
    std::vector<double> v{10, 20, 30, 40, 50};
    CHECK(percentile(v, 50.0) == 30.0);
    CHECK(percentile(v, 95.0) == 50.0);
    CHECK(percentile(v, 5.0) == 10.0);
    CHECK(percentile(v, 40.0) == 20.0);  // ceil(0.4*5) = 2nd
    CHECK_THROWS_AS(percentile({}, 50.0), CapsuleError);
}

TEST_CASE("summarize computes the sample moments") {
    const Distribution d = summarize({2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0});
    CHECK(d.count == 8);
    CHECK(d.mean == doctest::Approx(5.0));
    CHECK(d.stddev == doctest::Approx(2.0));  // population stddev of the classic sample
    CHECK(d.min == 2.0);
    CHECK(d.max == 9.0);
    CHECK(d.median == 4.0);  // nearest-rank: ceil(0.5*8) = 4th
    CHECK_THROWS_AS(summarize({}), CapsuleError);
}

TEST_CASE("calibrate validates its arguments") {
    PipelineSpec p = linear2();
    const ScriptedProfile profile = calibration_profile();
    const auto adapters = adapters_for(profile, 1);
    const auto evaluators = evaluators_for(profile, 1);

    try {
        calibrate(p, {}, adapters, evaluators, 1);
        FAIL("expected InvalidArgument");
    } catch (const CapsuleError& e) {
        CHECK(e.code() == ErrorCode::InvalidArgument);
    }
    CHECK_THROWS_AS(calibrate(p, {"t"}, adapters, evaluators, 0), CapsuleError);
    try {
        calibrate(p, {"t"}, adapters, nullptr, 1);
        FAIL("expected EvaluatorMissing");
    } catch (const CapsuleError& e) {
        CHECK(e.code() == ErrorCode::EvaluatorMissing);
    }
}

TEST_CASE("calibrate recommendations follow the published estimators") {
    PipelineSpec p = linear2();
    const ScriptedProfile profile = calibration_profile();
    const CalibrationReport report =
        calibrate(p, {"task"}, adapters_for(profile, 1), evaluators_for(profile, 1), 2);

    // oracle: every fine observation is identical, so the score distribution
    // collapses onto one composition-score value
    const double s = composition_score(
        {.overhead_ratio = 0.2, .agent_count = 2, .mean_tool_calls = 0.0, .dependency_depth = 1});
    REQUIRE(report.groups.count("g") == 1);
    const GroupCalibration& cal = report.groups.at("g");
    CHECK(cal.evidence_runs == 2);  // the locked-fine leg only
    CHECK(cal.scores.median == doctest::Approx(s).epsilon(1e-12));
    CHECK(cal.scores.stddev == doctest::Approx(0.0));

    CHECK(cal.mean_quality_by_tier.at("fine") == doctest::Approx(0.9));
    CHECK(cal.mean_quality_by_tier.at("standard") == doctest::Approx(0.8));
    CHECK(cal.mean_quality_by_tier.at("two_phase") == doctest::Approx(0.85));
    CHECK(cal.mean_quality_by_tier.at("sequential") == doctest::Approx(0.76));

    CHECK(cal.output_tokens_by_agent.at("research").mean == doctest::Approx(400.0));

    // compose_at = clamp(median - stddev, min, max); floor = 5th pct quality;
    // verbosity threshold = p95 per-agent fine output
    CHECK(report.recommended.compose_at == doctest::Approx(s).epsilon(1e-12));
    CHECK(report.recommended.quality_floor == doctest::Approx(0.76));
    CHECK(report.recommended.verbosity_output_threshold == 400);

    SUBCASE("artifacts render and are deterministic") {
        const CalibrationReport again =
            calibrate(p, {"task"}, adapters_for(profile, 1), evaluators_for(profile, 1), 2);
        CHECK(report.to_json().dump() == again.to_json().dump());
        const std::string text = report.render_text();
        CHECK(text.find("recommended policy block") != std::string::npos);
        CHECK(text.find("advisory") != std::string::npos);
    }
}

TEST_CASE("degenerate all-perfect quality recommends a 1.0 floor") {
    PipelineSpec p = linear2();
    ScriptedProfile profile;
    profile.agents["default"] = AgentScript{};  // no quality map: everything 1.0
    const CalibrationReport report =
        calibrate(p, {"t"}, adapters_for(profile, 1), evaluators_for(profile, 1), 1);
    CHECK(report.recommended.quality_floor == doctest::Approx(1.0));
}

TEST_CASE("an evaluator with no verdicts cannot calibrate") {
    PipelineSpec p = linear2();
    const ScriptedProfile profile = calibration_profile();
    try {
        calibrate(p, {"t"}, adapters_for(profile, 1),
                  [] { return std::make_shared<NoVerdict>(); }, 1);
        FAIL("expected InsufficientData");
    } catch (const CapsuleError& e) {
        CHECK(e.code() == ErrorCode::InsufficientData);
    }
}

TEST_CASE("single-agent groups calibrate on fine evidence alone") {
    PipelineSpec p = PipelineBuilder("p").group("g").agent("solo", "s").build();
    const ScriptedProfile profile = calibration_profile();
    const CalibrationReport report =
        calibrate(p, {"t"}, adapters_for(profile, 1), evaluators_for(profile, 1), 1);
    const GroupCalibration& cal = report.groups.at("g");
    CHECK(cal.mean_quality_by_tier.size() == 1);
    CHECK(cal.mean_quality_by_tier.count("fine") == 1);
}

TEST_CASE("sweep validates the grid and tasks") {
    PipelineSpec p = linear2();
    const ScriptedProfile profile = calibration_profile();
    const auto adapters = adapters_for(profile, 1);
    const auto evaluators = evaluators_for(profile, 1);
    CHECK_THROWS_AS(sweep(p, {"t"}, adapters, evaluators, {}), CapsuleError);
    CHECK_THROWS_AS(sweep(p, {"t"}, adapters, evaluators, {0.3, 0.2}), CapsuleError);
    CHECK_THROWS_AS(sweep(p, {}, adapters, evaluators, {0.2}), CapsuleError);
}

TEST_CASE("sweep: lower thresholds fire compound at least as often") {
    PipelineSpec p = linear2();
    const ScriptedProfile profile = calibration_profile();  // fine score 0.165
    const auto points = sweep(p, {"task"}, adapters_for(profile, 1),
                              evaluators_for(profile, 1), {0.12, 0.30}, 6);
    REQUIRE(points.size() == 2);
    CHECK(points[0].compose_at == 0.12);
    CHECK(points[0].compound_fires > 0);   // 0.165 clears the low threshold
    CHECK(points[1].compound_fires == 0);  // but not the high one
    CHECK(points[0].compound_fires >= points[1].compound_fires);
    CHECK(points[0].mean_quality > 0.0);
    CHECK(points[0].input_tokens > 0);

    SUBCASE("csv header and rows are stable") {
        const std::string csv = sweep_csv(points);
        CHECK(csv.rfind("compose_at,input_tokens,output_tokens,mean_quality,compound_fires,"
                        "blocks,reverts,escalations\n",
                        0) == 0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    }
    SUBCASE("sweep is deterministic") {
        const auto again = sweep(p, {"task"}, adapters_for(profile, 1),
                                 evaluators_for(profile, 1), {0.12, 0.30}, 6);
        CHECK(sweep_csv(points) == sweep_csv(again));
    }
}
