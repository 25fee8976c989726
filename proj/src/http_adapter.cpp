#include "capsules/http_adapter.hpp"

#include <cstdlib>
#include <fstream>

#include <httplib.h>

#include "capsules/errors.hpp"
#include "capsules/tokens.hpp"

namespace capsules {

HttpAdapterConfig load_http_config(const nlohmann::json& j) {
    HttpAdapterConfig cfg;
    cfg.model = j.value("model", cfg.model);
    cfg.endpoint_env = j.value("endpoint_env", cfg.endpoint_env);
    cfg.api_key_env = j.value("api_key_env", cfg.api_key_env);
    cfg.max_tokens = j.value("max_tokens", cfg.max_tokens);
    cfg.timeout_seconds = j.value("timeout_seconds", cfg.timeout_seconds);
    return cfg;
}

HttpAdapterConfig load_http_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CapsuleError(ErrorCode::ParseError, "cannot read http config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw CapsuleError(ErrorCode::ParseError, "http config parse error: " + std::string(e.what()));
    }
    return load_http_config(j);
}

nlohmann::json render_messages_body(const AdapterRequest& request,
                                    const HttpAdapterConfig& cfg) {
    nlohmann::json system = nlohmann::json::array();
    for (std::size_t i = 0; i < request.system_blocks.size(); ++i) {
        nlohmann::json block = {{"type", "text"}, {"text", request.system_blocks[i].text}};
        if (i == 0 && request.system_blocks[i].cacheable)
            block["cache_control"] = {{"type", "ephemeral"}};
        system.push_back(std::move(block));
    }
    nlohmann::json tools = nlohmann::json::array();
    for (const auto& spec : request.tool_specs) {
        nlohmann::json properties = nlohmann::json::object();
        for (const auto& [param, type] : spec.input_schema)
            properties[param] = {{"type", type}};
        tools.push_back({{"name", spec.name},
                         {"description", spec.description},
                         {"input_schema",
                          {{"type", "object"}, {"properties", properties}}}});
    }
    nlohmann::json messages = nlohmann::json::array();
    messages.push_back({{"role", "user"}, {"content", request.user_text}});
    for (const auto& entry : request.transcript) messages.push_back(entry);
    nlohmann::json body = {{"model", cfg.model.empty() ? request.model : cfg.model},
                           {"max_tokens", cfg.max_tokens},
                           {"system", system},
                           {"messages", messages}};
    if (!tools.empty()) body["tools"] = tools;
    return body;
}

AdapterResponse parse_messages_response(const nlohmann::json& body,
                                        const AdapterRequest& request) {
    AdapterResponse resp;
    if (body.contains("content")) {
        for (const auto& block : body["content"]) {
            const std::string type = block.value("type", "text");
            if (type == "text") {
                resp.text += block.value("text", "");
            } else if (type == "tool_use") {
                ToolUseRequest t;
                t.id = block.value("id", "");
                t.tool = block.value("name", "");
                t.arguments = block.value("input", nlohmann::json::object());
                resp.tool_requests.push_back(std::move(t));
            }
        }
    }
    if (body.contains("usage")) {
        const auto& u = body["usage"];
        resp.usage.input_tokens = u.value("input_tokens", 0L);
        resp.usage.output_tokens = u.value("output_tokens", 0L);
        resp.usage.cache_read_tokens = u.value("cache_read_input_tokens", 0L);
    } else {
        // UsageMissing fallback: estimator keeps comparisons well-defined
        long input = 0;
        for (const auto& block : request.system_blocks)
            input += static_cast<long>(estimate_tokens(block.text));
        input += static_cast<long>(estimate_tokens(request.user_text));
        resp.usage.input_tokens = input;
        resp.usage.output_tokens = static_cast<long>(estimate_tokens(resp.text));
        resp.usage_reported = false;
    }
    if (resp.usage.input_tokens < 0 || resp.usage.output_tokens < 0 ||
        resp.usage.cache_read_tokens < 0 ||
        resp.usage.cache_read_tokens > resp.usage.input_tokens)
        throw CapsuleError(ErrorCode::ProviderError, "provider returned inconsistent usage");
    return resp;
}

HttpMessagesAdapter::HttpMessagesAdapter(HttpAdapterConfig config)
    : config_(std::move(config)) {
    const char* endpoint = std::getenv(config_.endpoint_env.c_str());
    if (!endpoint)
        throw CapsuleError(ErrorCode::TransportError,
                           "endpoint environment variable not set: " + config_.endpoint_env);
    endpoint_ = endpoint;
    if (const char* key = std::getenv(config_.api_key_env.c_str())) api_key_ = key;
}

AdapterResponse HttpMessagesAdapter::complete(const AdapterRequest& request) {
    // split endpoint into origin + path
    std::string origin = endpoint_, path = "/";
    const auto scheme = endpoint_.find("://");
    const auto slash = endpoint_.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (slash != std::string::npos) {
        origin = endpoint_.substr(0, slash);
        path = endpoint_.substr(slash);
    }
    httplib::Client client(origin);
    client.set_read_timeout(config_.timeout_seconds, 0);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("x-api-key", api_key_);

    const auto started = std::chrono::steady_clock::now();
    auto result = client.Post(path, headers,
                              render_messages_body(request, config_).dump(),
                              "application/json");
    if (!result)
        throw CapsuleError(ErrorCode::TransportError,
                           "request to " + endpoint_ + " failed: " +
                               httplib::to_string(result.error()));
    if (result->status < 200 || result->status >= 300)
        throw CapsuleError(ErrorCode::ProviderError,
                           "provider status " + std::to_string(result->status) + ": " +
                               result->body.substr(0, 200));
    nlohmann::json body;
    try {
        body = nlohmann::json::parse(result->body);
    } catch (const nlohmann::json::exception& e) {
        throw CapsuleError(ErrorCode::ProviderError,
                           "unparseable provider body: " + std::string(e.what()));
    }
    AdapterResponse resp = parse_messages_response(body, request);
    resp.wall_clock_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::steady_clock::now() - started)
                             .count();
    return resp;
}

}  // namespace capsules
