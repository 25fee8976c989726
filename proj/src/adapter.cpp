#include "capsules/adapter.hpp"

#include <algorithm>

#include "capsules/errors.hpp"

namespace capsules {

AdapterRequest request_from_bundle(const PromptBundle& bundle, RequestMeta meta,
                                   const std::string& model, int max_tool_iterations) {
    AdapterRequest req;
    req.model = model;
    req.system_blocks = bundle.system_blocks;
    req.user_text = bundle.user_text;
    req.tool_specs = bundle.tool_specs;
    req.agent_span_map = bundle.agent_span_map;
    req.max_tool_iterations = max_tool_iterations;
    meta.merged = bundle.merged();
    req.meta = std::move(meta);
    return req;
}

ToolLoopResult run_tool_loop(Adapter& adapter, AdapterRequest request) {
    ToolLoopResult out;
    request.meta.tool_iteration = 0;
    Usage total;
    long wall = 0;
    for (;;) {
        AdapterResponse resp = adapter.complete(request);
        total += resp.usage;
        wall += resp.wall_clock_ms;
        if (resp.tool_requests.empty()) {
            out.response = std::move(resp);
            break;
        }
        if (request.meta.tool_iteration >= request.max_tool_iterations) {
            out.iteration_limit_hit = true;
            out.response = std::move(resp);
            break;
        }
        for (const auto& call : resp.tool_requests) {
            auto it = std::find_if(request.tool_specs.begin(), request.tool_specs.end(),
                                   [&](const ToolSpec& s) { return s.name == call.tool; });
            if (it == request.tool_specs.end() || !it->handler)
                throw CapsuleError(ErrorCode::ToolHandlerError,
                                   "no bound handler for tool '" + call.tool + "'");
            std::string result;
            try {
                result = it->handler(call.arguments);
            } catch (const CapsuleError&) {
                throw;
            } catch (const std::exception& e) {
                throw CapsuleError(ErrorCode::ToolHandlerError,
                                   "tool '" + call.tool + "' failed: " + e.what());
            }
            ++out.tool_calls;
            request.transcript.push_back(
                {{"role", "tool"}, {"tool", call.tool}, {"text", result}});
        }
        ++request.meta.tool_iteration;
    }
    out.response.usage = total;
    out.response.wall_clock_ms = wall;
    return out;
}

}  // namespace capsules
