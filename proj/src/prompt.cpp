#include "capsules/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "capsules/errors.hpp"
#include "capsules/tokens.hpp"

namespace capsules {

const char* const kConciseGuidance = "Be concise. Aim for 300–400 words.";
const char* const kGatherInstruction =
    "Gather phase: use your tools to collect the facts your role needs, then write a "
    "concise gather summary of your findings.";
const char* const kToollessGatherInstruction =
    "Gather phase: write a brief preliminary note covering the facts your role needs.";

std::string render_shared_prefix(const std::string& pipeline_name, const GroupSpec& group,
                                 const std::string& task) {
    return "Pipeline '" + pipeline_name + "', group '" + group.name + "'.\nTask:\n" + task + "\n";
}

std::string agent_marker(const std::string& agent_name) {
    return "[AGENT: " + agent_name + "]";
}

namespace {

std::string agent_section(const AgentSpec& agent, ResolvedGuidance guidance) {
    std::string s = agent.system_prompt;
    if (guidance == ResolvedGuidance::concise) {
        s += "\n";
        s += kConciseGuidance;
    }
    return s;
}

// Body lines that would collide with a marker line are escaped on render.
std::string escape_markers(const std::string& body) {
    std::string out;
    std::istringstream in(body);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!first) out += '\n';
        first = false;
        if (line.rfind("[AGENT:", 0) == 0) out += '\\';
        out += line;
    }
    if (!body.empty() && body.back() == '\n') out += '\n';
    return out;
}

std::string unescape_marker_line(const std::string& line) {
    if (line.rfind("\\[AGENT:", 0) == 0) return line.substr(1);
    return line;
}

std::vector<int> context_sources(const GroupSpec& group, int agent_index,
                                 ContextInjection strategy) {
    if (group.topology == Topology::fan_out) return {};
    if (strategy == ContextInjection::predecessor_only) return group.deps[agent_index];
    return dependency_closure(group, agent_index);
}

PromptBundle base_bundle(const std::string& pipeline_name, const GroupSpec& group,
                         const std::string& task) {
    PromptBundle b;
    b.system_blocks.push_back({render_shared_prefix(pipeline_name, group, task), true});
    return b;
}

}  // namespace

std::string inject_context(const AgentSpec& agent, const GroupSpec& group,
                           const std::map<std::string, std::string>& prior_outputs,
                           ContextInjection strategy) {
    const int idx = group.agent_index(agent.name);
    if (idx < 0)
        throw CapsuleError(ErrorCode::InvalidArgument,
                           "agent '" + agent.name + "' not in group '" + group.name + "'");
    std::string out;
    for (int src : context_sources(group, idx, strategy)) {
        const std::string& name = group.agents[src].name;
        auto it = prior_outputs.find(name);
        if (it == prior_outputs.end())
            throw CapsuleError(ErrorCode::MissingDependencyOutput,
                               agent.name + " needs output of " + name);
        out += "[from " + name + "]\n" + it->second + "\n";
    }
    return out;
}

ResolvedGuidance select_output_guidance(const ControllerPolicy& policy, const GroupStats& stats) {
    switch (policy.output_guidance) {
        case OutputGuidanceMode::concise: return ResolvedGuidance::concise;
        case OutputGuidanceMode::none: return ResolvedGuidance::none;
        case OutputGuidanceMode::auto_select: break;
    }
    // No FINE evidence yet means the group counts as terse: stay silent.
    if (stats.fine_output_per_agent_obs.empty()) return ResolvedGuidance::none;
    return stats.mean_fine_output_per_agent() > policy.verbosity_output_threshold
               ? ResolvedGuidance::concise
               : ResolvedGuidance::none;
}

PromptBundle compile_fine(const std::string& pipeline_name, const GroupSpec& group,
                          int agent_index, const std::string& task,
                          const std::map<std::string, std::string>& prior_outputs,
                          ContextInjection strategy, ResolvedGuidance guidance,
                          bool cache_aligned) {
    const AgentSpec& agent = group.agents[agent_index];
    PromptBundle b = base_bundle(pipeline_name, group, task);
    b.system_blocks.push_back({agent_section(agent, guidance), false});
    b.user_text = inject_context(agent, group, prior_outputs, strategy);
    b.tool_specs = agent.tools;
    return align_cache_prefix(std::move(b), cache_aligned);
}

PromptBundle compile_standard_compound(const std::string& pipeline_name, const GroupSpec& group,
                                       const std::string& task, ResolvedGuidance guidance,
                                       bool cache_aligned) {
    if (group.agents.size() < 2)
        throw CapsuleError(ErrorCode::SingleAgentGroup, group.name);
    PromptBundle b = base_bundle(pipeline_name, group, task);
    std::string body;
    for (const auto& agent : group.agents) {
        body += agent_marker(agent.name) + "\n";
        body += escape_markers(agent_section(agent, guidance)) + "\n";
        b.agent_span_map.push_back(agent.name);
    }
    b.user_text = std::move(body);
    // standard compound carries no tools; that loss is its documented failure mode
    return align_cache_prefix(std::move(b), cache_aligned);
}

PromptBundle& apply_structural_hint(PromptBundle& bundle, const GroupSpec& group,
                                    const GroupStats& stats, const ControllerPolicy& policy) {
    if (policy.merged_output_structure != MergedOutputStructure::budgeted) return bundle;
    if (!bundle.merged()) return bundle;
    std::string hints;
    for (const auto& name : bundle.agent_span_map) {
        long budget = 400;
        const int idx = group.agent_index(name);
        if (idx >= 0) {
            if (auto mean_tokens = stats.mean_fine_output_tokens_for_agent(idx)) {
                const long words = static_cast<long>(
                    words_from_tokens(static_cast<std::size_t>(std::llround(*mean_tokens))));
                budget = std::clamp(words, 150L, 800L);
            }
        }
        hints += "Produce a full section of approximately " + std::to_string(budget) +
                 " words for " + agent_marker(name) + "\n";
    }
    bundle.user_text += hints;
    return bundle;
}

std::vector<PromptBundle> compile_two_phase_gather(const std::string& pipeline_name,
                                                   const GroupSpec& group,
                                                   const std::string& task, bool cache_aligned) {
    if (group.agents.size() < 2)
        throw CapsuleError(ErrorCode::SingleAgentGroup, group.name);
    std::vector<PromptBundle> out;
    for (const auto& agent : group.agents) {
        PromptBundle b = base_bundle(pipeline_name, group, task);
        const char* instruction =
            agent.tools.empty() ? kToollessGatherInstruction : kGatherInstruction;
        b.system_blocks.push_back({std::string(instruction) + "\n" + agent.system_prompt, false});
        b.tool_specs = agent.tools;
        out.push_back(align_cache_prefix(std::move(b), cache_aligned));
    }
    return out;
}

PromptBundle compile_two_phase_merge(const std::string& pipeline_name, const GroupSpec& group,
                                     const std::string& task,
                                     std::span<const GatherResult> gathers,
                                     ResolvedGuidance guidance, bool cache_aligned) {
    if (group.agents.size() < 2)
        throw CapsuleError(ErrorCode::SingleAgentGroup, group.name);
    PromptBundle b = base_bundle(pipeline_name, group, task);
    std::string body;
    for (const auto& agent : group.agents) {
        body += agent_marker(agent.name) + "\n";
        body += escape_markers(agent_section(agent, guidance)) + "\n";
        auto it = std::find_if(gathers.begin(), gathers.end(),
                               [&](const GatherResult& g) { return g.agent == agent.name; });
        if (it != gathers.end()) {
            body += "Gather summary:\n";
            body += escape_markers(it->summary) + "\n";
        }
        b.agent_span_map.push_back(agent.name);
    }
    b.user_text = std::move(body);
    // Phase B merges only the reasoning step; tools stay in Phase A.
    return align_cache_prefix(std::move(b), cache_aligned);
}

PromptBundle compile_sequential_step(const std::string& pipeline_name, const GroupSpec& group,
                                     int agent_index, const std::string& task,
                                     const std::map<std::string, std::string>& accumulated,
                                     ContextInjection strategy, ResolvedGuidance guidance,
                                     bool cache_aligned) {
    return compile_fine(pipeline_name, group, agent_index, task, accumulated, strategy, guidance,
                        cache_aligned);
}

PromptBundle align_cache_prefix(PromptBundle bundle, bool cache_aligned) {
    if (bundle.system_blocks.empty()) return bundle;
    if (cache_aligned) {
        bundle.system_blocks[0].cacheable = true;
        for (std::size_t i = 1; i < bundle.system_blocks.size(); ++i)
            bundle.system_blocks[i].cacheable = false;
        return bundle;
    }
    std::string merged;
    for (std::size_t i = 0; i < bundle.system_blocks.size(); ++i) {
        if (i) merged += '\n';
        merged += bundle.system_blocks[i].text;
    }
    bundle.system_blocks = {{std::move(merged), false}};
    return bundle;
}

ParsedMerged parse_merged_output(const std::string& text,
                                 std::span<const std::string> agent_span_map) {
    ParsedMerged out;
    if (agent_span_map.empty()) return out;
    std::set<std::string> declared(agent_span_map.begin(), agent_span_map.end());

    std::string current = agent_span_map.front();  // pre-marker text goes to the first agent
    std::map<std::string, std::vector<std::string>> lines_by_agent;
    bool saw_marker_for_current = false;
    std::set<std::string> seen;

    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        bool is_marker = false;
        if (line.rfind("[AGENT: ", 0) == 0 && !line.empty() && line.back() == ']') {
            const std::string name = line.substr(8, line.size() - 9);
            if (declared.count(name)) {
                current = name;
                seen.insert(name);
                is_marker = true;
                (void)saw_marker_for_current;
            }
        }
        if (!is_marker) lines_by_agent[current].push_back(unescape_marker_line(line));
    }

    for (const auto& name : agent_span_map) {
        std::string body;
        auto it = lines_by_agent.find(name);
        if (it != lines_by_agent.end()) {
            for (std::size_t i = 0; i < it->second.size(); ++i) {
                if (i) body += '\n';
                body += it->second[i];
            }
        }
        const bool has_content = !body.empty();
        out.outputs[name] = std::move(body);
        if (!seen.count(name) && !(name == agent_span_map.front() && has_content))
            out.missing.push_back(name);
    }
    return out;
}

std::string render_merged_sections(
    std::span<const std::pair<std::string, std::string>> sections) {
    std::string out;
    for (const auto& [name, body] : sections) {
        out += agent_marker(name) + "\n";
        out += escape_markers(body);
        out += "\n";
    }
    return out;
}

std::map<std::string, std::string> strip_terminal_labels(
    std::map<std::string, std::string> outputs, const GroupSpec& group) {
    // terminal agents: no other agent depends on them
    std::vector<bool> has_dependent(group.agents.size(), false);
    for (const auto& edges : group.deps)
        for (int d : edges) has_dependent[d] = true;
    std::vector<int> terminals;
    for (std::size_t i = 0; i < group.agents.size(); ++i)
        if (!has_dependent[i]) terminals.push_back(static_cast<int>(i));
    if (terminals.size() < 2) return outputs;

    for (int t : terminals) {
        const std::string& name = group.agents[t].name;
        auto it = outputs.find(name);
        if (it == outputs.end()) continue;
        const std::string echo = agent_marker(name);
        std::string& body = it->second;
        while (body.rfind(echo, 0) == 0) {
            std::size_t cut = echo.size();
            if (cut < body.size() && body[cut] == '\n') ++cut;
            body.erase(0, cut);
        }
    }
    return outputs;
}

std::size_t bundle_input_tokens(const PromptBundle& bundle) {
    std::size_t total = 0;
    for (const auto& block : bundle.system_blocks) total += estimate_tokens(block.text);
    total += estimate_tokens(bundle.user_text);
    return total;
}

}  // namespace capsules
