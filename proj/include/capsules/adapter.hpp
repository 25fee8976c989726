#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "capsules/prompt.hpp"
#include "capsules/store.hpp"

namespace capsules {

struct Usage {
    long input_tokens = 0;
    long output_tokens = 0;
    long cache_read_tokens = 0;

    Usage& operator+=(const Usage& other) {
        input_tokens += other.input_tokens;
        output_tokens += other.output_tokens;
        cache_read_tokens += other.cache_read_tokens;
        return *this;
    }
};

struct ToolInvocation {
    std::string tool;
    nlohmann::json arguments;
    std::string result;
};

struct ToolUseRequest {
    std::string id;
    std::string tool;
    nlohmann::json arguments;
};

// Side metadata the runtime attaches to every request. Adapters that do not
// need it (HTTP) ignore it; the scripted adapter keys its deterministic
// behavior off it.
struct RequestMeta {
    std::string pipeline;
    std::string group;
    std::string agent;  // empty for merged calls
    Mode mode = Mode::FINE;
    CompoundTier tier = CompoundTier::standard;
    bool merged = false;
    bool gather_phase = false;
    bool judge = false;
    std::uint64_t run_id = 0;
    int tool_iteration = 0;
};

struct AdapterRequest {
    std::string model;
    std::vector<SystemBlock> system_blocks;
    std::string user_text;
    std::vector<ToolSpec> tool_specs;
    int max_tool_iterations = 8;
    std::vector<std::string> agent_span_map;  // mirrors the bundle, no reordering
    // conversation so far within a tool loop (provider-neutral messages)
    std::vector<nlohmann::json> transcript;
    RequestMeta meta;
};

struct AdapterResponse {
    std::string text;
    std::vector<ToolInvocation> tool_invocations;
    std::vector<ToolUseRequest> tool_requests;  // non-empty: the model wants tools run
    Usage usage;
    long wall_clock_ms = 0;
    bool usage_reported = true;  // false when usage was synthesized from the estimator
};

class Adapter {
public:
    virtual ~Adapter() = default;
    virtual AdapterResponse complete(const AdapterRequest& request) = 0;
    virtual std::string model_name() const { return "unknown"; }
};

AdapterRequest request_from_bundle(const PromptBundle& bundle, RequestMeta meta,
                                   const std::string& model, int max_tool_iterations = 8);

// Iterates model -> tools -> model until the model stops requesting tools or
// the iteration cap is hit. Returns the final response (usage accumulated
// across iterations) plus the tool call count.
struct ToolLoopResult {
    AdapterResponse response;
    int tool_calls = 0;
    bool iteration_limit_hit = false;
};

ToolLoopResult run_tool_loop(Adapter& adapter, AdapterRequest request);

}  // namespace capsules
