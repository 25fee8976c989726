#pragma once

#include <memory>
#include <string>

#include <json.hpp>

#include "capsules/adapter.hpp"

namespace capsules {

// Live messages-style endpoint configuration. Endpoint and key come from the
// environment so config files stay credential-free.
struct HttpAdapterConfig {
    std::string model = "default";
    std::string endpoint_env = "CAPSULES_ENDPOINT";  // e.g. https://host/v1/messages
    std::string api_key_env = "CAPSULES_API_KEY";
    long max_tokens = 4096;
    int timeout_seconds = 120;
};

HttpAdapterConfig load_http_config(const nlohmann::json& j);
HttpAdapterConfig load_http_config_file(const std::string& path);

// Request body for one AdapterRequest (exposed for golden tests): system
// block array with an ephemeral cache-control marker on a cacheable block 0,
// tools array, user message.
nlohmann::json render_messages_body(const AdapterRequest& request, const HttpAdapterConfig& cfg);

// Parses a messages-style response body into an AdapterResponse. A missing
// usage object synthesizes token counts from the estimator and clears
// `usage_reported`.
AdapterResponse parse_messages_response(const nlohmann::json& body,
                                        const AdapterRequest& request);

class HttpMessagesAdapter : public Adapter {
public:
    explicit HttpMessagesAdapter(HttpAdapterConfig config);
    AdapterResponse complete(const AdapterRequest& request) override;
    std::string model_name() const override { return config_.model; }

private:
    HttpAdapterConfig config_;
    std::string endpoint_;
    std::string api_key_;
};

}  // namespace capsules
