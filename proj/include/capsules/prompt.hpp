#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "capsules/pipeline.hpp"
#include "capsules/store.hpp"

namespace capsules {

struct SystemBlock {
    std::string text;
    bool cacheable = false;
};

struct PromptBundle {
    std::vector<SystemBlock> system_blocks;
    std::string user_text;
    std::vector<ToolSpec> tool_specs;
    // Merged bundles only: agent names expected in the output, declaration order.
    std::vector<std::string> agent_span_map;

    bool merged() const { return !agent_span_map.empty(); }
};

struct GatherResult {
    std::string agent;
    std::string summary;
    int tool_calls = 0;
};

enum class ResolvedGuidance { none, concise };

// The exact sentence injected by concise guidance.
extern const char* const kConciseGuidance;
// Fixed two-phase gather instruction templates (part of the external contract).
extern const char* const kGatherInstruction;
extern const char* const kToollessGatherInstruction;

// Run-invariant shared prefix (pipeline task + group charter); identical
// bytes for every agent and mode within one (pipeline, group, task) scope.
std::string render_shared_prefix(const std::string& pipeline_name, const GroupSpec& group,
                                 const std::string& task);

std::string agent_marker(const std::string& agent_name);

// Context injection by topology and strategy. fan_out groups receive no
// cross-agent context regardless of strategy.
std::string inject_context(const AgentSpec& agent, const GroupSpec& group,
                           const std::map<std::string, std::string>& prior_outputs,
                           ContextInjection strategy);

ResolvedGuidance select_output_guidance(const ControllerPolicy& policy, const GroupStats& stats);

PromptBundle compile_fine(const std::string& pipeline_name, const GroupSpec& group,
                          int agent_index, const std::string& task,
                          const std::map<std::string, std::string>& prior_outputs,
                          ContextInjection strategy, ResolvedGuidance guidance,
                          bool cache_aligned);

PromptBundle compile_standard_compound(const std::string& pipeline_name, const GroupSpec& group,
                                       const std::string& task, ResolvedGuidance guidance,
                                       bool cache_aligned);

PromptBundle& apply_structural_hint(PromptBundle& bundle, const GroupSpec& group,
                                    const GroupStats& stats, const ControllerPolicy& policy);

std::vector<PromptBundle> compile_two_phase_gather(const std::string& pipeline_name,
                                                   const GroupSpec& group,
                                                   const std::string& task, bool cache_aligned);

PromptBundle compile_two_phase_merge(const std::string& pipeline_name, const GroupSpec& group,
                                     const std::string& task,
                                     std::span<const GatherResult> gathers,
                                     ResolvedGuidance guidance, bool cache_aligned);

PromptBundle compile_sequential_step(const std::string& pipeline_name, const GroupSpec& group,
                                     int agent_index, const std::string& task,
                                     const std::map<std::string, std::string>& accumulated,
                                     ContextInjection strategy, ResolvedGuidance guidance,
                                     bool cache_aligned);

// Hoists / collapses the shared prefix according to the cache policy without
// changing content order.
PromptBundle align_cache_prefix(PromptBundle bundle, bool cache_aligned);

struct ParsedMerged {
    std::map<std::string, std::string> outputs;
    std::vector<std::string> missing;  // declared agents without a section
};

ParsedMerged parse_merged_output(const std::string& text,
                                 std::span<const std::string> agent_span_map);

// Inverse of parse_merged_output for marker-free bodies.
std::string render_merged_sections(
    std::span<const std::pair<std::string, std::string>> sections);

std::map<std::string, std::string> strip_terminal_labels(
    std::map<std::string, std::string> outputs, const GroupSpec& group);

std::size_t bundle_input_tokens(const PromptBundle& bundle);

}  // namespace capsules
