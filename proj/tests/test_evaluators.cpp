#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <memory>
#include <vector>

#include "capsules/errors.hpp"
#include "capsules/evaluators.hpp"
#include "capsules/scripted.hpp"

using namespace capsules;

namespace {

EvalContext basic_ctx() {
    EvalContext ctx;
    ctx.pipeline = "p";
    ctx.group = "g";
    ctx.task = "the task";
    ctx.run_id = 1;
    ctx.declared_agents = {"research", "analysis"};
    ctx.outputs = {{"research", "alpha beta"}, {"analysis", "gamma delta"}};
    return ctx;
}

}  // namespace

TEST_CASE("judge rubric prompt is byte-stable") {
    CHECK(judge_rubric_prompt("T", "R") ==
          "You are a strict evaluator. Score the response to the task below on three "
          "criteria: factual completeness, reasoning depth, and coherence.\n"
          "\n"
          "Task:\nT\n"
          "\n"
          "Response:\nR\n"
          "\n"
          "Reply with a single decimal number between 0 and 1.\n");
}

TEST_CASE("judge score parsing") {
    CHECK(parse_judge_score("0.82") == doctest::Approx(0.82));
    CHECK(parse_judge_score("I'd rate this 0.7 overall") == doctest::Approx(0.7));
    CHECK(parse_judge_score(".5") == doctest::Approx(0.5));
    CHECK(parse_judge_score("score: 3") == doctest::Approx(1.0));    // clamped
    CHECK(parse_judge_score("1.75 out of 1") == doctest::Approx(1.0));
    CHECK_FALSE(parse_judge_score("no verdict here").has_value());
    CHECK_FALSE(parse_judge_score("").has_value());
}

TEST_CASE("judge evaluator sends the rubric and reports the parsed score") {
    std::string seen_prompt;
    auto adapter = std::make_shared<FunctionAdapter>([&](const AdapterRequest& req) {
        seen_prompt = req.user_text;
        CHECK(req.meta.judge);
        AdapterResponse r;
        r.text = "0.66 — solid but shallow";
        return r;
    });
    JudgeEvaluator judge(adapter, "judge-model");
    EvalContext ctx = basic_ctx();
    const auto score = judge.evaluate(ctx);
    REQUIRE(score.has_value());
    CHECK(score->value == doctest::Approx(0.66));
    CHECK(score->evaluator == "judge");
    CHECK(seen_prompt == judge_rubric_prompt("the task", "alpha beta\n\ngamma delta"));
}

TEST_CASE("unparseable judge replies yield no verdict, not zero") {
    auto adapter = std::make_shared<FunctionAdapter>([](const AdapterRequest&) {
        AdapterResponse r;
        r.text = "the response seems fine to me";
        return r;
    });
    JudgeEvaluator judge(adapter, "judge-model");
    CHECK_FALSE(judge.evaluate(basic_ctx()).has_value());
}

TEST_CASE("judge evaluator refuses a null adapter") {
    try {
        JudgeEvaluator judge(nullptr, "m");
        FAIL("expected EvaluatorMissing");
    } catch (const CapsuleError& e) {
        CHECK(e.code() == ErrorCode::EvaluatorMissing);
    }
}

TEST_CASE("schema compliance fractions") {
    std::map<std::string, std::string> outputs{
        {"a", "text"}, {"b", ""}, {"c", "more"}};

    std::vector<std::string> all{"a", "b", "c"};
    const QualityScore q = schema_compliance(outputs, all);
    CHECK(q.value == doctest::Approx(2.0 / 3.0));
    CHECK(q.detail == "missing: b");  // empty body counts as missing

    std::vector<std::string> none;
    CHECK(schema_compliance(outputs, none).value == 1.0);

    std::vector<std::string> absent{"z"};
    CHECK(schema_compliance(outputs, absent).value == 0.0);

    // permutation invariance of the required list
    std::vector<std::string> shuffled{"c", "a", "b"};
    CHECK(schema_compliance(outputs, shuffled).value == doctest::Approx(2.0 / 3.0));

    // adding a satisfied requirement never lowers the score of a full set
    std::vector<std::string> subset{"a"};
    std::vector<std::string> superset{"a", "c"};
    CHECK(schema_compliance(outputs, superset).value >=
          schema_compliance(outputs, subset).value - 1e-12);
}

TEST_CASE("schema evaluator defaults to declared agents") {
    SchemaComplianceEvaluator eval;
    EvalContext ctx = basic_ctx();
    CHECK(eval.evaluate(ctx)->value == doctest::Approx(1.0));

    ctx.outputs.erase("analysis");
    CHECK(eval.evaluate(ctx)->value == doctest::Approx(0.5));

    SchemaComplianceEvaluator with_override({"research"});
    CHECK(with_override.evaluate(ctx)->value == doctest::Approx(1.0));
}

TEST_CASE("consistency core: Jaccard over lowercased token sets") {
    std::vector<std::string> identical{"The quick Fox", "the QUICK fox"};
    CHECK(consistency_evaluate(identical).value == doctest::Approx(1.0));

    std::vector<std::string> disjoint{"alpha beta", "gamma delta"};
    CHECK(consistency_evaluate(disjoint).value == doctest::Approx(0.0));

    std::vector<std::string> both_empty{"", ""};
    CHECK(consistency_evaluate(both_empty).value == doctest::Approx(1.0));

    // {a,b} vs {b,c}: intersection 1, union 3
    std::vector<std::string> partial{"a b", "b c"};
    CHECK(consistency_evaluate(partial).value == doctest::Approx(1.0 / 3.0));

    // three-way mean over pairs
    std::vector<std::string> trio{"a b", "a b", "c d"};
    CHECK(consistency_evaluate(trio).value == doctest::Approx((1.0 + 0.0 + 0.0) / 3.0));

    try {
        std::vector<std::string> one{"solo"};
        consistency_evaluate(one);
        FAIL("expected InsufficientHistory");
    } catch (const CapsuleError& e) {
        CHECK(e.code() == ErrorCode::InsufficientHistory);
    }
}

TEST_CASE("consistency evaluator windows history and skips the first run") {
    CHECK_THROWS_AS(ConsistencyEvaluator(1), CapsuleError);

    ConsistencyEvaluator eval(3);
    EvalContext ctx = basic_ctx();
    CHECK_FALSE(eval.evaluate(ctx).has_value());  // no history yet

    ctx.prior_group_outputs = {"alpha beta\n\ngamma delta"};
    const auto q = eval.evaluate(ctx);
    REQUIRE(q.has_value());
    CHECK(q->value == doctest::Approx(1.0));  // identical to the prior run

    // only the last k=3 outputs count: two stale junk entries roll out
    ctx.prior_group_outputs = {"junk one", "junk two", "alpha beta\n\ngamma delta",
                               "alpha beta\n\ngamma delta"};
    const auto windowed = eval.evaluate(ctx);
    REQUIRE(windowed.has_value());
    CHECK(windowed->value == doctest::Approx(1.0));
}

TEST_CASE("scripted profile evaluator averages per-agent tier scores") {
    ScriptedProfile profile;
    AgentScript research;
    research.quality = {{"fine", 0.9}, {"standard", 0.5}};
    AgentScript analysis;
    analysis.quality = {{"fine", 0.7}};  // missing tiers default to 1.0
    profile.agents["research"] = research;
    profile.agents["analysis"] = analysis;

    ScriptedProfileEvaluator eval(profile, 1);
    EvalContext ctx = basic_ctx();
    ctx.mode = Mode::FINE;
    CHECK(eval.evaluate(ctx)->value == doctest::Approx(0.8));

    ctx.mode = Mode::COMPOUND;
    ctx.tier = CompoundTier::standard;
    CHECK(eval.evaluate(ctx)->value == doctest::Approx(0.75));  // (0.5 + 1.0) / 2

    SUBCASE("noise is seeded, bounded, and deterministic") {
        ScriptedProfile noisy = profile;
        noisy.quality_noise = 0.05;
        ScriptedProfileEvaluator a(noisy, 42), b(noisy, 42), c(noisy, 43);
        ctx.mode = Mode::FINE;
        const double va = a.evaluate(ctx)->value;
        CHECK(va == b.evaluate(ctx)->value);
        CHECK(va != c.evaluate(ctx)->value);
        CHECK(va >= 0.75);
        CHECK(va <= 0.85);
    }
}

TEST_CASE("evaluators are substitutable behind the protocol") {
    std::vector<std::shared_ptr<Evaluator>> evals{
        std::make_shared<SchemaComplianceEvaluator>(),
        std::make_shared<ConsistencyEvaluator>(3),
        std::make_shared<ScriptedProfileEvaluator>(
            [] {
                ScriptedProfile p;
                p.agents["default"] = AgentScript{};
                return p;
            }(),
            1),
    };
    EvalContext ctx = basic_ctx();
    ctx.prior_group_outputs = {"alpha beta\n\ngamma delta"};
    for (const auto& e : evals) {
        const auto q = e->evaluate(ctx);
        REQUIRE(q.has_value());
        CHECK(q->value >= 0.0);
        CHECK(q->value <= 1.0);
        CHECK_FALSE(e->name().empty());
    }
}
