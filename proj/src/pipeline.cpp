#include "capsules/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "capsules/errors.hpp"

namespace capsules {

const char* to_string(Topology t) {
    switch (t) {
        case Topology::linear: return "linear";
        case Topology::fan_out: return "fan_out";
        case Topology::diamond: return "diamond";
        case Topology::parallel_convergent: return "parallel_convergent";
        case Topology::general: return "general";
    }
    return "?";
}

const char* to_string(ControllerMode m) {
    switch (m) {
        case ControllerMode::auto_select: return "auto";
        case ControllerMode::observe: return "observe";
        case ControllerMode::fine: return "fine";
        case ControllerMode::compound: return "compound";
    }
    return "?";
}

ControllerMode controller_mode_from_name(const std::string& name) {
    if (name == "auto") return ControllerMode::auto_select;
    if (name == "observe") return ControllerMode::observe;
    if (name == "fine") return ControllerMode::fine;
    if (name == "compound") return ControllerMode::compound;
    throw CapsuleError(ErrorCode::InvalidArgument, "unknown controller mode '" + name + "'");
}

bool valid_identifier(const std::string& s) {
    if (s.empty()) return false;
    auto head = [](char c) { return c == '_' || std::isalpha(static_cast<unsigned char>(c)); };
    auto tail = [&](char c) { return c == '_' || std::isalnum(static_cast<unsigned char>(c)); };
    if (!head(s[0])) return false;
    return std::all_of(s.begin() + 1, s.end(), tail);
}

int GroupSpec::agent_index(const std::string& agent_name) const {
    for (std::size_t i = 0; i < agents.size(); ++i)
        if (agents[i].name == agent_name) return static_cast<int>(i);
    return -1;
}

bool GroupSpec::has_tools() const {
    return std::any_of(agents.begin(), agents.end(),
                       [](const AgentSpec& a) { return !a.tools.empty(); });
}

const GroupSpec* PipelineSpec::find_group(const std::string& group_name) const {
    for (const auto& g : groups)
        if (g.name == group_name) return &g;
    return nullptr;
}

Topology classify_topology(const GroupSpec& group) {
    const auto& deps = group.deps;
    const int n = static_cast<int>(group.agents.size());

    auto is_chain = [&] {
        for (int i = 0; i < n; ++i) {
            if (i == 0) {
                if (!deps[i].empty()) return false;
            } else if (deps[i].size() != 1 || deps[i][0] != i - 1) {
                return false;
            }
        }
        return true;
    };
    if (is_chain()) return Topology::linear;

    auto all_roots = [&] {
        return std::all_of(deps.begin(), deps.end(),
                           [](const auto& d) { return d.empty(); });
    };
    if (n >= 2 && all_roots()) return Topology::fan_out;

    std::vector<int> roots;
    for (int i = 0; i < n; ++i)
        if (deps[i].empty()) roots.push_back(i);

    auto deps_equal = [&](int i, const std::vector<int>& expect) {
        std::vector<int> d = deps[i];
        std::sort(d.begin(), d.end());
        return d == expect;
    };

    // diamond: one root, >=2 mids each depending only on the root, one
    // terminal depending on exactly the mids.
    if (roots.size() == 1 && n >= 4) {
        int root = roots[0];
        std::vector<int> mids;
        std::vector<int> terminals;
        for (int i = 0; i < n; ++i) {
            if (i == root) continue;
            if (deps[i].size() == 1 && deps[i][0] == root) mids.push_back(i);
            else terminals.push_back(i);
        }
        if (mids.size() >= 2 && terminals.size() == 1) {
            std::vector<int> expect = mids;
            std::sort(expect.begin(), expect.end());
            if (deps_equal(terminals[0], expect)) return Topology::diamond;
        }
    }

    // parallel_convergent: >=2 independent roots all feeding one terminal.
    if (roots.size() >= 2 && n == static_cast<int>(roots.size()) + 1) {
        int terminal = -1;
        for (int i = 0; i < n; ++i)
            if (!deps[i].empty()) terminal = i;
        if (terminal >= 0) {
            std::vector<int> expect = roots;
            std::sort(expect.begin(), expect.end());
            if (deps_equal(terminal, expect)) return Topology::parallel_convergent;
        }
    }

    return Topology::general;
}

int dependency_depth(const GroupSpec& group) {
    const int n = static_cast<int>(group.agents.size());
    std::vector<int> depth(n, 0);
    int best = 0;
    for (int i = 0; i < n; ++i) {
        for (int d : group.deps[i]) depth[i] = std::max(depth[i], depth[d] + 1);
        best = std::max(best, depth[i]);
    }
    return best;
}

std::vector<std::vector<int>> topo_levels(const GroupSpec& group) {
    const int n = static_cast<int>(group.agents.size());
    std::vector<int> level(n, 0);
    int max_level = 0;
    for (int i = 0; i < n; ++i) {
        for (int d : group.deps[i]) level[i] = std::max(level[i], level[d] + 1);
        max_level = std::max(max_level, level[i]);
    }
    std::vector<std::vector<int>> out(max_level + 1);
    for (int i = 0; i < n; ++i) out[level[i]].push_back(i);
    return out;
}

std::vector<int> dependency_closure(const GroupSpec& group, int index) {
    std::set<int> seen;
    std::vector<int> stack{index};
    while (!stack.empty()) {
        int cur = stack.back();
        stack.pop_back();
        for (int d : group.deps[cur])
            if (seen.insert(d).second) stack.push_back(d);
    }
    return {seen.begin(), seen.end()};  // ascending == declaration/topological order
}

namespace {

void validate_tools(const std::string& where, const std::vector<ToolSpec>& tools) {
    std::set<std::string> names;
    for (const auto& t : tools) {
        if (t.name.empty())
            throw CapsuleError(ErrorCode::InvalidArgument, where + ": tool with empty name");
        if (!names.insert(t.name).second)
            throw CapsuleError(ErrorCode::InvalidArgument,
                               where + ": duplicate tool '" + t.name + "'");
        for (const auto& [param, type] : t.input_schema)
            if (type.empty())
                throw CapsuleError(ErrorCode::InvalidArgument,
                                   where + ": tool '" + t.name + "' parameter '" + param +
                                       "' has empty type");
    }
}

}  // namespace

PipelineBuilder::PipelineBuilder(std::string name) {
    spec_.name = std::move(name);
}

PipelineBuilder& PipelineBuilder::policy(const ControllerPolicy& p) {
    spec_.pipeline_policy = p;
    return *this;
}

PipelineBuilder& PipelineBuilder::sensitivity(Preset p) {
    spec_.pipeline_policy = preset(p);
    return *this;
}

PipelineBuilder& PipelineBuilder::controller_mode(ControllerMode m) {
    spec_.controller_mode = m;
    return *this;
}

PipelineBuilder& PipelineBuilder::group(std::string name,
                                        std::optional<ControllerPolicy> override_policy) {
    if (group_open_ && spec_.groups.back().agents.empty())
        throw CapsuleError(ErrorCode::ParseError,
                           "group '" + spec_.groups.back().name + "' has no agents");
    if (!valid_identifier(name))
        throw CapsuleError(ErrorCode::ParseError, "bad group name '" + name + "'");
    for (const auto& g : spec_.groups)
        if (g.name == name)
            throw CapsuleError(ErrorCode::DuplicateGroupName, name);
    GroupSpec g;
    g.name = std::move(name);
    g.policy_override = std::move(override_policy);
    spec_.groups.push_back(std::move(g));
    group_open_ = true;
    return *this;
}

PipelineBuilder& PipelineBuilder::agent(std::string name, std::string system_prompt,
                                        std::vector<ToolSpec> tools,
                                        std::optional<std::vector<std::string>> depends_on) {
    if (!group_open_)
        throw CapsuleError(ErrorCode::ParseError, "agent '" + name + "' declared outside a group");
    GroupSpec& g = spec_.groups.back();
    if (!valid_identifier(name))
        throw CapsuleError(ErrorCode::ParseError, "bad agent name '" + name + "'");
    if (g.agent_index(name) >= 0)
        throw CapsuleError(ErrorCode::DuplicateAgentName, g.name + "." + name);
    validate_tools("agent '" + name + "'", tools);

    std::vector<int> edges;
    if (depends_on) {
        std::set<std::string> seen;
        for (const auto& dep : *depends_on) {
            if (dep == name) throw CapsuleError(ErrorCode::SelfDependency, name);
            if (!seen.insert(dep).second)
                throw CapsuleError(ErrorCode::UnknownDependency,
                                   "duplicate dependency '" + dep + "' on agent '" + name + "'");
            int idx = g.agent_index(dep);
            if (idx < 0) {
                // distinguish a reference into another group from an unknown name
                for (const auto& other : spec_.groups)
                    if (&other != &g && other.agent_index(dep) >= 0)
                        throw CapsuleError(ErrorCode::CrossGroupDependency,
                                           name + " -> " + other.name + "." + dep);
                throw CapsuleError(ErrorCode::UnknownDependency, name + " -> " + dep);
            }
            edges.push_back(idx);
        }
    } else if (!g.agents.empty()) {
        edges.push_back(static_cast<int>(g.agents.size()) - 1);  // implicit linear predecessor
    }

    AgentSpec a;
    a.name = std::move(name);
    a.system_prompt = std::move(system_prompt);
    a.tools = std::move(tools);
    a.depends_on = std::move(depends_on);
    g.agents.push_back(std::move(a));
    g.deps.push_back(std::move(edges));
    return *this;
}

PipelineSpec PipelineBuilder::build() {
    if (spec_.groups.empty())
        throw CapsuleError(ErrorCode::ParseError, "pipeline '" + spec_.name + "' has no groups");
    if (spec_.groups.back().agents.empty())
        throw CapsuleError(ErrorCode::ParseError,
                           "group '" + spec_.groups.back().name + "' has no agents");
    for (auto& g : spec_.groups) g.topology = classify_topology(g);
    return spec_;
}

PipelineSpec load_pipeline(const nlohmann::json& j, const ToolRegistry& registry) {
    try {
        PipelineBuilder b(j.at("name").get<std::string>());
        if (j.contains("controller_mode"))
            b.controller_mode(controller_mode_from_name(j.at("controller_mode").get<std::string>()));
        if (j.contains("policy")) b.policy(j.at("policy").get<ControllerPolicy>());
        if (j.contains("sensitivity"))
            b.sensitivity(preset_from_name(j.at("sensitivity").get<std::string>()));
        for (const auto& gj : j.at("groups")) {
            std::optional<ControllerPolicy> override_policy;
            if (gj.contains("policy")) override_policy = gj.at("policy").get<ControllerPolicy>();
            b.group(gj.at("name").get<std::string>(), override_policy);
            for (const auto& aj : gj.at("agents")) {
                std::vector<ToolSpec> tools;
                if (aj.contains("tools")) {
                    for (const auto& tj : aj.at("tools")) {
                        ToolSpec t;
                        t.name = tj.at("name").get<std::string>();
                        t.description = tj.value("description", std::string{});
                        if (tj.contains("input_schema"))
                            t.input_schema =
                                tj.at("input_schema").get<std::map<std::string, std::string>>();
                        if (auto it = registry.find(t.name); it != registry.end())
                            t.handler = it->second;
                        tools.push_back(std::move(t));
                    }
                }
                std::optional<std::vector<std::string>> depends_on;
                if (aj.contains("depends_on"))
                    depends_on = aj.at("depends_on").get<std::vector<std::string>>();
                b.agent(aj.at("name").get<std::string>(),
                        aj.value("system_prompt", std::string{}), std::move(tools),
                        std::move(depends_on));
            }
        }
        return b.build();
    } catch (const nlohmann::json::exception& e) {
        throw CapsuleError(ErrorCode::ParseError, e.what());
    }
}

PipelineSpec load_pipeline_file(const std::string& path, const ToolRegistry& registry) {
    std::ifstream in(path);
    if (!in) throw CapsuleError(ErrorCode::ParseError, "cannot open '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw CapsuleError(ErrorCode::ParseError, std::string(e.what()) + " in " + path);
    }
    return load_pipeline(j, registry);
}

nlohmann::json serialize_pipeline(const PipelineSpec& spec) {
    nlohmann::json j;
    j["name"] = spec.name;
    j["controller_mode"] = to_string(spec.controller_mode);
    j["policy"] = spec.pipeline_policy;
    j["groups"] = nlohmann::json::array();
    for (const auto& g : spec.groups) {
        nlohmann::json gj;
        gj["name"] = g.name;
        if (g.policy_override) gj["policy"] = *g.policy_override;
        gj["agents"] = nlohmann::json::array();
        for (const auto& a : g.agents) {
            nlohmann::json aj;
            aj["name"] = a.name;
            aj["system_prompt"] = a.system_prompt;
            if (!a.tools.empty()) {
                aj["tools"] = nlohmann::json::array();
                for (const auto& t : a.tools)
                    aj["tools"].push_back({{"name", t.name},
                                           {"description", t.description},
                                           {"input_schema", t.input_schema}});
            }
            if (a.depends_on) aj["depends_on"] = *a.depends_on;
            gj["agents"].push_back(std::move(aj));
        }
        j["groups"].push_back(std::move(gj));
    }
    return j;
}

}  // namespace capsules
