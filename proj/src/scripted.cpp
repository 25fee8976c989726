#include "capsules/scripted.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "capsules/errors.hpp"
#include "capsules/tokens.hpp"

namespace capsules {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
    return h;
}

std::string hex16(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

// One line of exactly 4*token_count characters starting with `head`.
std::string exact_line(std::string head, long token_count, std::uint64_t fill_seed) {
    const std::size_t target = static_cast<std::size_t>(token_count) * 4;
    if (head.size() > target) head.resize(target);
    std::string fill = hex16(fill_seed);
    while (head.size() < target) head += fill[head.size() % fill.size()];
    return head;
}

constexpr long kMaxLineTokens = 120;

std::string meta_salt(const RequestMeta& m, const char* purpose) {
    std::ostringstream os;
    os << m.pipeline << '|' << m.group << '|' << m.agent << '|' << m.run_id << '|'
       << to_string(m.tier) << '|' << (m.merged ? "m" : "s") << '|' << purpose;
    return os.str();
}

long transcript_tokens(const std::vector<nlohmann::json>& transcript) {
    long total = 0;
    for (const auto& entry : transcript)
        total += static_cast<long>(estimate_tokens(entry.value("text", std::string())));
    return total;
}

}  // namespace

double scripted_uniform(std::uint64_t seed, const std::string& salt) {
    const std::uint64_t mix = splitmix64(seed ^ fnv1a(salt));
    return static_cast<double>(mix >> 11) * (1.0 / 9007199254740992.0);
}

int scripted_tool_count(const AgentScript& script, std::uint64_t seed, const std::string& agent,
                        std::uint64_t run_id) {
    if (script.tools_per_agent <= 0.0) return 0;
    const double base = std::floor(script.tools_per_agent);
    const double frac = script.tools_per_agent - base;
    int count = static_cast<int>(base);
    if (frac > 0.0 &&
        scripted_uniform(seed, "tools|" + agent + "|" + std::to_string(run_id)) < frac)
        ++count;
    return count;
}

std::string scripted_text(long total_tokens, long overhead_tokens, std::uint64_t seed,
                          const std::string& salt) {
    if (total_tokens <= 0) return "";
    overhead_tokens = std::clamp(overhead_tokens, 0L, total_tokens);
    std::vector<std::string> lines;
    std::uint64_t line_seed = splitmix64(seed ^ fnv1a(salt));
    long remaining = overhead_tokens;
    while (remaining > 0) {
        const long k = std::min(remaining, kMaxLineTokens);
        // "===" prefix puts the whole line's tokens in the overhead lexicon.
        lines.push_back(exact_line("=== ", k, line_seed = splitmix64(line_seed)));
        remaining -= k;
    }
    remaining = total_tokens - overhead_tokens;
    while (remaining > 0) {
        const long k = std::min(remaining, kMaxLineTokens);
        line_seed = splitmix64(line_seed);
        lines.push_back(exact_line(hex16(line_seed) + " ", k, line_seed));
        remaining -= k;
    }
    std::string out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (i) out += '\n';
        out += lines[i];
    }
    return out;
}

const AgentScript& ScriptedProfile::script_for(const std::string& agent) const {
    auto it = agents.find(agent);
    if (it != agents.end()) return it->second;
    it = agents.find("default");
    if (it != agents.end()) return it->second;
    throw CapsuleError(ErrorCode::ProfileError,
                       "no script for agent '" + agent + "' and no default entry");
}

double ScriptedProfile::quality_for(const std::string& agent, Mode mode,
                                    CompoundTier tier) const {
    const AgentScript& s = script_for(agent);
    const std::string key = mode == Mode::FINE ? "fine" : to_string(tier);
    auto it = s.quality.find(key);
    return it != s.quality.end() ? it->second : 1.0;
}

ScriptedProfile load_profile(const nlohmann::json& j) {
    if (!j.is_object()) throw CapsuleError(ErrorCode::ProfileError, "profile must be an object");
    ScriptedProfile p;
    p.model = j.value("model", p.model);
    p.quality_noise = j.value("quality_noise", 0.0);
    if (p.quality_noise < 0.0)
        throw CapsuleError(ErrorCode::ProfileError, "quality_noise must be >= 0");
    if (!j.contains("agents") || !j["agents"].is_object())
        throw CapsuleError(ErrorCode::ProfileError, "profile requires an 'agents' object");
    for (const auto& [name, spec] : j["agents"].items()) {
        AgentScript s;
        s.tools_per_agent = spec.value("tools_per_agent", 0.0);
        s.output_tokens = spec.value("output_tokens", 400L);
        s.overhead_fraction = spec.value("overhead_fraction", 0.0);
        s.suppress_tools_when_merged = spec.value("suppress_tools_when_merged", false);
        s.compress_when_merged = spec.value("compress_when_merged", false);
        if (spec.contains("quality"))
            for (const auto& [tier, q] : spec["quality"].items())
                s.quality[tier] = q.get<double>();
        if (s.tools_per_agent < 0.0 || s.output_tokens < 0 || s.overhead_fraction < 0.0 ||
            s.overhead_fraction > 1.0)
            throw CapsuleError(ErrorCode::ProfileError, "invalid script for agent '" + name + "'");
        for (const auto& [tier, q] : s.quality)
            if (q < 0.0 || q > 1.0)
                throw CapsuleError(ErrorCode::ProfileError,
                                   "quality out of [0,1] for agent '" + name + "'");
        p.agents[name] = std::move(s);
    }
    if (p.agents.empty()) throw CapsuleError(ErrorCode::ProfileError, "profile has no agents");
    return p;
}

ScriptedProfile load_profile_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CapsuleError(ErrorCode::ProfileError, "cannot read profile file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw CapsuleError(ErrorCode::ProfileError, "profile parse error: " + std::string(e.what()));
    }
    return load_profile(j);
}

ScriptedAdapter::ScriptedAdapter(ScriptedProfile profile, std::uint64_t seed)
    : profile_(std::move(profile)), seed_(seed) {}

long ScriptedAdapter::account_cache(const AdapterRequest& request) {
    if (request.system_blocks.empty() || !request.system_blocks[0].cacheable) return 0;
    const std::string& prefix = request.system_blocks[0].text;
    std::lock_guard<std::mutex> lock(mu_);
    if (warm_prefixes_.count(prefix))
        return static_cast<long>(estimate_tokens(prefix));
    warm_prefixes_.insert(prefix);
    return 0;
}

AdapterResponse ScriptedAdapter::complete(const AdapterRequest& request) {
    return request.meta.merged ? respond_merged(request) : respond_single(request);
}

AdapterResponse ScriptedAdapter::respond_single(const AdapterRequest& request) {
    const RequestMeta& meta = request.meta;
    const AgentScript& script = profile_.script_for(meta.agent);

    AdapterResponse r;
    long input = 0;
    for (const auto& block : request.system_blocks)
        input += static_cast<long>(estimate_tokens(block.text));
    input += static_cast<long>(estimate_tokens(request.user_text));
    input += transcript_tokens(request.transcript);
    r.usage.input_tokens = input;
    r.usage.cache_read_tokens = account_cache(request);

    const bool tools_allowed = !request.tool_specs.empty() &&
                               !(meta.merged && script.suppress_tools_when_merged);
    const int planned =
        tools_allowed ? scripted_tool_count(script, seed_, meta.agent, meta.run_id) : 0;
    if (meta.tool_iteration < planned) {
        // one tool per round-trip, cycling through the declared specs
        const ToolSpec& spec =
            request.tool_specs[static_cast<std::size_t>(meta.tool_iteration) %
                               request.tool_specs.size()];
        ToolUseRequest t;
        t.id = "call-" + std::to_string(meta.tool_iteration);
        t.tool = spec.name;
        t.arguments = {{"query", meta_salt(meta, "toolarg")}};
        r.tool_requests.push_back(std::move(t));
        r.text = "";
        r.usage.output_tokens = 2;  // tool-call stub
        r.wall_clock_ms = 1;
        return r;
    }

    long target = script.output_tokens;
    if (meta.gather_phase) target = std::max(target / 4, 8L);
    const long overhead = std::llround(script.overhead_fraction * static_cast<double>(target));
    r.text = scripted_text(target, overhead, seed_, meta_salt(meta, "body"));
    r.usage.output_tokens = static_cast<long>(estimate_tokens(r.text));
    r.wall_clock_ms = 1 + r.usage.output_tokens / 100;
    return r;
}

AdapterResponse ScriptedAdapter::respond_merged(const AdapterRequest& request) {
    const RequestMeta& meta = request.meta;
    AdapterResponse r;
    long input = 0;
    for (const auto& block : request.system_blocks)
        input += static_cast<long>(estimate_tokens(block.text));
    input += static_cast<long>(estimate_tokens(request.user_text));
    input += transcript_tokens(request.transcript);
    r.usage.input_tokens = input;
    r.usage.cache_read_tokens = account_cache(request);

    std::string text;
    for (std::size_t i = 0; i < request.agent_span_map.size(); ++i) {
        const std::string& agent = request.agent_span_map[i];
        const AgentScript& script = profile_.script_for(agent);
        long target = script.output_tokens;
        if (script.compress_when_merged)
            // merged framing shortens later sections, the paper's compression failure
            target = std::max(std::llround(static_cast<double>(target) *
                                           std::pow(0.6, static_cast<double>(i))),
                              40LL);
        const long overhead =
            std::llround(script.overhead_fraction * static_cast<double>(target));
        RequestMeta section_meta = meta;
        section_meta.agent = agent;
        if (!text.empty()) text += '\n';
        text += "[AGENT: " + agent + "]\n";
        text += scripted_text(target, overhead, seed_, meta_salt(section_meta, "body"));
    }
    r.text = std::move(text);
    r.usage.output_tokens = static_cast<long>(estimate_tokens(r.text));
    r.wall_clock_ms = 1 + r.usage.output_tokens / 100;
    return r;
}

}  // namespace capsules
