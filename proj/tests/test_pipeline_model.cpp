#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "capsules/errors.hpp"
#include "capsules/pipeline.hpp"

using namespace capsules;

namespace {

PipelineSpec diamond_pipeline() {
    return PipelineBuilder("review")
        .group("analysis")
        .agent("seed", "Seed the review.")
        .agent("sec", "Security.", {}, std::vector<std::string>{"seed"})
        .agent("perf", "Performance.", {}, std::vector<std::string>{"seed"})
        .agent("style", "Style.", {}, std::vector<std::string>{"seed"})
        .agent("synth", "Synthesize.", {}, std::vector<std::string>{"sec", "perf", "style"})
        .build();
}

}  // namespace

TEST_CASE("implicit dependencies form the declaration-order chain") {
    PipelineSpec p = PipelineBuilder("p")
                         .group("g")
                         .agent("research", "r")
                         .agent("analysis", "a")
                         .build();
    const GroupSpec& g = p.groups[0];
    CHECK(g.topology == Topology::linear);
    CHECK(g.deps[0].empty());
    REQUIRE(g.deps[1].size() == 1);
    CHECK(g.deps[1][0] == 0);
    CHECK(dependency_depth(g) == 1);
}

TEST_CASE("builder rejects the four declaration error classes") {
    SUBCASE("duplicate agent name") {
        try {
            PipelineBuilder b2("p");
            b2.group("g").agent("a", "x").agent("a", "y");
            FAIL("expected DuplicateAgentName");
        } catch (const CapsuleError& e) {
            CHECK(e.code() == ErrorCode::DuplicateAgentName);
        }
    }
    SUBCASE("self dependency") {
        PipelineBuilder b("p");
        b.group("g");
        try {
            b.agent("a", "x", {}, std::vector<std::string>{"a"});
            FAIL("expected SelfDependency");
        } catch (const CapsuleError& e) {
            CHECK(e.code() == ErrorCode::SelfDependency);
        }
    }
    SUBCASE("unknown / forward dependency") {
        PipelineBuilder b("p");
        b.group("g").agent("a", "x");
        try {
            b.agent("b", "y", {}, std::vector<std::string>{"zzz"});
            FAIL("expected UnknownDependency");
        } catch (const CapsuleError& e) {
            CHECK(e.code() == ErrorCode::UnknownDependency);
        }
    }
    SUBCASE("cross-group dependency") {
        PipelineBuilder b("p");
        b.group("g1").agent("a", "x").group("g2");
        try {
            b.agent("b", "y", {}, std::vector<std::string>{"a"});
            FAIL("expected CrossGroupDependency");
        } catch (const CapsuleError& e) {
            CHECK(e.code() == ErrorCode::CrossGroupDependency);
        }
    }
    SUBCASE("duplicate group name") {
        PipelineBuilder b("p");
        b.group("g").agent("a", "x");
        try {
            b.group("g");
            FAIL("expected DuplicateGroupName");
        } catch (const CapsuleError& e) {
            CHECK(e.code() == ErrorCode::DuplicateGroupName);
        }
    }
}

TEST_CASE("topology classification matches the published examples") {
    SUBCASE("diamond: seed -> {sec,perf,style} -> synth") {
        PipelineSpec p = diamond_pipeline();
        CHECK(p.groups[0].topology == Topology::diamond);
        CHECK(dependency_depth(p.groups[0]) == 2);
    }
    SUBCASE("fan_out requires explicit empty lists") {
        PipelineSpec p = PipelineBuilder("p")
                             .group("g")
                             .agent("a", "x", {}, std::vector<std::string>{})
                             .agent("b", "y", {}, std::vector<std::string>{})
                             .agent("c", "z", {}, std::vector<std::string>{})
                             .build();
        CHECK(p.groups[0].topology == Topology::fan_out);
        CHECK(dependency_depth(p.groups[0]) == 0);
    }
    SUBCASE("parallel_convergent: 2 roots into one terminal") {
        PipelineSpec p =
            PipelineBuilder("p")
                .group("g")
                .agent("a", "x", {}, std::vector<std::string>{})
                .agent("b", "y", {}, std::vector<std::string>{})
                .agent("t", "z", {}, std::vector<std::string>{"a", "b"})
                .build();
        CHECK(p.groups[0].topology == Topology::parallel_convergent);
    }
    SUBCASE("single agent classifies linear") {
        PipelineSpec p = PipelineBuilder("p").group("g").agent("only", "x").build();
        CHECK(p.groups[0].topology == Topology::linear);
        CHECK(dependency_depth(p.groups[0]) == 0);
    }
    SUBCASE("everything else is general") {
        PipelineSpec p =
            PipelineBuilder("p")
                .group("g")
                .agent("a", "1", {}, std::vector<std::string>{})
                .agent("b", "2", {}, std::vector<std::string>{"a"})
                .agent("c", "3", {}, std::vector<std::string>{"a", "b"})
                .agent("d", "4", {}, std::vector<std::string>{"b"})
                .build();
        CHECK(p.groups[0].topology == Topology::general);
    }
}

TEST_CASE("classification is stable under agent renaming") {
    PipelineSpec original = diamond_pipeline();
    PipelineSpec renamed =
        PipelineBuilder("review")
            .group("analysis")
            .agent("alpha", "Seed the review.")
            .agent("beta", "Security.", {}, std::vector<std::string>{"alpha"})
            .agent("gamma", "Performance.", {}, std::vector<std::string>{"alpha"})
            .agent("delta", "Style.", {}, std::vector<std::string>{"alpha"})
            .agent("omega", "Synthesize.", {}, std::vector<std::string>{"beta", "gamma", "delta"})
            .build();
    CHECK(original.groups[0].topology == renamed.groups[0].topology);
}

TEST_CASE("implicit-linear depth law: n agents -> depth n-1") {
    for (int n = 1; n <= 8; ++n) {
        PipelineBuilder b("p");
        b.group("g");
        for (int i = 0; i < n; ++i) b.agent("a" + std::to_string(i), "x");
        CHECK(dependency_depth(b.build().groups[0]) == n - 1);
    }
}

TEST_CASE("topo levels put independent agents together") {
    PipelineSpec p = diamond_pipeline();
    const auto levels = topo_levels(p.groups[0]);
    REQUIRE(levels.size() == 3);
    CHECK(levels[0] == std::vector<int>{0});
    CHECK(levels[1] == std::vector<int>{1, 2, 3});
    CHECK(levels[2] == std::vector<int>{4});
}

TEST_CASE("dependency closure is the full upstream set in topo order") {
    PipelineSpec p = diamond_pipeline();
    CHECK(dependency_closure(p.groups[0], 4) == std::vector<int>{0, 1, 2, 3});
    CHECK(dependency_closure(p.groups[0], 1) == std::vector<int>{0});
    CHECK(dependency_closure(p.groups[0], 0).empty());
}

TEST_CASE("random DAG declarations accepted iff edges point backward") {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = std::uniform_int_distribution<int>(2, 6)(rng);
        const bool inject_bad = trial % 3 == 0;
        const int bad_at = std::uniform_int_distribution<int>(0, n - 1)(rng);
        bool threw = false;
        try {
            PipelineBuilder b("p");
            b.group("g");
            for (int i = 0; i < n; ++i) {
                std::vector<std::string> deps;
                for (int j = 0; j < i; ++j)
                    if (std::bernoulli_distribution(0.4)(rng))
                        deps.push_back("a" + std::to_string(j));
                if (inject_bad && i == bad_at) deps.push_back("a" + std::to_string(n + 1));
                b.agent("a" + std::to_string(i), "x", {}, deps);
            }
            b.build();
        } catch (const CapsuleError& e) {
            threw = true;
            CHECK(e.code() == ErrorCode::UnknownDependency);
        }
        CHECK(threw == inject_bad);
    }
}

TEST_CASE("serialize then load round-trips structurally") {
    PipelineSpec p = diamond_pipeline();
    p.pipeline_policy = preset(Preset::conservative);
    p.controller_mode = ControllerMode::observe;
    const nlohmann::json j = serialize_pipeline(p);
    const PipelineSpec back = load_pipeline(j);
    CHECK(back.name == p.name);
    CHECK(back.controller_mode == p.controller_mode);
    CHECK(back.pipeline_policy == p.pipeline_policy);
    REQUIRE(back.groups.size() == p.groups.size());
    CHECK(back.groups[0].topology == p.groups[0].topology);
    CHECK(back.groups[0].deps == p.groups[0].deps);
    REQUIRE(back.groups[0].agents.size() == p.groups[0].agents.size());
    for (std::size_t i = 0; i < p.groups[0].agents.size(); ++i) {
        CHECK(back.groups[0].agents[i].name == p.groups[0].agents[i].name);
        CHECK(back.groups[0].agents[i].system_prompt == p.groups[0].agents[i].system_prompt);
    }
    // second round-trip is byte-stable
    CHECK(serialize_pipeline(back).dump() == j.dump());
}

TEST_CASE("load_pipeline validates structure") {
    CHECK_THROWS_AS(load_pipeline(nlohmann::json{{"name", "p"},
                                                 {"groups", nlohmann::json::array()}}),
                    CapsuleError);
    nlohmann::json ok = {
        {"name", "p"},
        {"groups",
         {{{"name", "g"},
           {"agents",
            {{{"name", "research"},
              {"system_prompt", "r"},
              {"tools",
               {{{"name", "web_search"},
                 {"description", "Search"},
                 {"input_schema", {{"query", "string"}}}}}}},
             {{"name", "analysis"}, {"system_prompt", "a"}}}}}}},
    };
    const PipelineSpec p = load_pipeline(ok);
    CHECK(p.groups[0].topology == Topology::linear);
    CHECK(p.groups[0].agents[0].tools.size() == 1);
    CHECK(p.groups[0].has_tools());
}

TEST_CASE("tool registry binds handlers by name at load") {
    ToolRegistry registry;
    registry["web_search"] = [](const nlohmann::json&) { return std::string("hit"); };
    nlohmann::json j = {
        {"name", "p"},
        {"groups",
         {{{"name", "g"},
           {"agents",
            {{{"name", "a"},
              {"system_prompt", "x"},
              {"tools",
               {{{"name", "web_search"}, {"description", "d"},
                 {"input_schema", {{"query", "string"}}}}}}},
             {{"name", "b"}, {"system_prompt", "y"}}}}}}},
    };
    const PipelineSpec p = load_pipeline(j, registry);
    REQUIRE(p.groups[0].agents[0].tools.size() == 1);
    CHECK(p.groups[0].agents[0].tools[0].handler);
    CHECK(p.groups[0].agents[0].tools[0].handler(nlohmann::json::object()) == "hit");
}

TEST_CASE("identifier validation") {
    CHECK(valid_identifier("research_2"));
    CHECK(valid_identifier("_x"));
    CHECK_FALSE(valid_identifier("2x"));
    CHECK_FALSE(valid_identifier(""));
    CHECK_FALSE(valid_identifier("has space"));
}
