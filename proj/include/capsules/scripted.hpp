#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "capsules/adapter.hpp"

namespace capsules {

// Per-agent behavioral script. `quality` keys are tier names ("fine",
// "standard", "two_phase", "sequential").
struct AgentScript {
    double tools_per_agent = 0.0;
    long output_tokens = 400;
    double overhead_fraction = 0.0;
    std::map<std::string, double> quality;
    bool suppress_tools_when_merged = false;
    bool compress_when_merged = false;
};

struct ScriptedProfile {
    std::string model = "scripted-v1";
    double quality_noise = 0.0;
    std::map<std::string, AgentScript> agents;  // "default" is the fallback entry

    const AgentScript& script_for(const std::string& agent) const;  // ProfileError when absent
    double quality_for(const std::string& agent, Mode mode, CompoundTier tier) const;
};

ScriptedProfile load_profile(const nlohmann::json& j);
ScriptedProfile load_profile_file(const std::string& path);

// Deterministic hash-derived uniform in [0,1); all scripted randomness flows
// through this so call order and concurrency cannot change transcripts.
double scripted_uniform(std::uint64_t seed, const std::string& salt);

// Planned tool calls for one (agent, run): floor(t) plus a per-run Bernoulli
// top-up with probability frac(t).
int scripted_tool_count(const AgentScript& script, std::uint64_t seed, const std::string& agent,
                        std::uint64_t run_id);

// Deterministic text hitting the token estimator's count exactly:
// `overhead_tokens` land on lexicon-matching lines, the rest on neutral ones.
std::string scripted_text(long total_tokens, long overhead_tokens, std::uint64_t seed,
                          const std::string& salt);

// Fully deterministic offline adapter driven by a ScriptedProfile. Behavior
// depends only on (profile, seed, request); safe for concurrent calls.
class ScriptedAdapter : public Adapter {
public:
    ScriptedAdapter(ScriptedProfile profile, std::uint64_t seed);

    AdapterResponse complete(const AdapterRequest& request) override;
    std::string model_name() const override { return profile_.model; }

    const ScriptedProfile& profile() const { return profile_; }
    std::uint64_t seed() const { return seed_; }

private:
    AdapterResponse respond_single(const AdapterRequest& request);
    AdapterResponse respond_merged(const AdapterRequest& request);
    long account_cache(const AdapterRequest& request);

    ScriptedProfile profile_;
    std::uint64_t seed_ = 0;
    std::mutex mu_;
    std::set<std::string> warm_prefixes_;  // cacheable block-0 bodies seen before
};

// Test/bridge adapter: delegates to a plain function.
class FunctionAdapter : public Adapter {
public:
    using Fn = std::function<AdapterResponse(const AdapterRequest&)>;
    explicit FunctionAdapter(Fn fn, std::string model = "function")
        : fn_(std::move(fn)), model_(std::move(model)) {}
    AdapterResponse complete(const AdapterRequest& request) override { return fn_(request); }
    std::string model_name() const override { return model_; }

private:
    Fn fn_;
    std::string model_;
};

}  // namespace capsules
