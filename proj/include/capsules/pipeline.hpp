#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "capsules/policy.hpp"

namespace capsules {

using ToolHandler = std::function<std::string(const nlohmann::json& args)>;
using ToolRegistry = std::map<std::string, ToolHandler>;

struct ToolSpec {
    std::string name;
    std::string description;
    std::map<std::string, std::string> input_schema;  // param name -> scalar type name
    ToolHandler handler;                              // bound by name at load time
};

struct AgentSpec {
    std::string name;
    std::string system_prompt;
    std::vector<ToolSpec> tools;
    // Absent means the implicit linear predecessor; an explicit empty list
    // declares a root agent.
    std::optional<std::vector<std::string>> depends_on;
};

enum class Topology { linear, fan_out, diamond, parallel_convergent, general };
const char* to_string(Topology t);

struct GroupSpec {
    std::string name;
    std::vector<AgentSpec> agents;
    std::optional<ControllerPolicy> policy_override;
    Topology topology = Topology::linear;
    // Resolved dependency edges by agent index (implicit edges materialized).
    std::vector<std::vector<int>> deps;

    int agent_index(const std::string& agent_name) const;  // -1 when absent
    bool has_tools() const;
};

enum class ControllerMode { auto_select, observe, fine, compound };
const char* to_string(ControllerMode m);
ControllerMode controller_mode_from_name(const std::string& name);

struct PipelineSpec {
    std::string name;
    std::vector<GroupSpec> groups;
    ControllerPolicy pipeline_policy;
    ControllerMode controller_mode = ControllerMode::auto_select;

    const GroupSpec* find_group(const std::string& group_name) const;
};

// Pure functions of the validated edge set.
Topology classify_topology(const GroupSpec& group);
int dependency_depth(const GroupSpec& group);
// Agent indices grouped by topological level; same-level agents are
// independent and eligible for concurrent dispatch.
std::vector<std::vector<int>> topo_levels(const GroupSpec& group);
// Dependency closure of agent `index`, in topological (declaration) order.
std::vector<int> dependency_closure(const GroupSpec& group, int index);

// Fluent declarative builder. Single-threaded; validation happens at each
// declaration, so errors carry the offending name.
class PipelineBuilder {
public:
    explicit PipelineBuilder(std::string name);

    PipelineBuilder& policy(const ControllerPolicy& p);
    PipelineBuilder& sensitivity(Preset p);
    PipelineBuilder& controller_mode(ControllerMode m);
    PipelineBuilder& group(std::string name,
                           std::optional<ControllerPolicy> override_policy = std::nullopt);
    PipelineBuilder& agent(std::string name, std::string system_prompt,
                           std::vector<ToolSpec> tools = {},
                           std::optional<std::vector<std::string>> depends_on = std::nullopt);

    // Finalizes topology classification and pipeline-level invariants.
    PipelineSpec build();

private:
    PipelineSpec spec_;
    bool group_open_ = false;
};

// Declaration-file interface. Unknown tool names fall back to `registry`
// misses only at execution time; loading binds what it can.
PipelineSpec load_pipeline(const nlohmann::json& j, const ToolRegistry& registry = {});
PipelineSpec load_pipeline_file(const std::string& path, const ToolRegistry& registry = {});
nlohmann::json serialize_pipeline(const PipelineSpec& spec);

bool valid_identifier(const std::string& s);

}  // namespace capsules
