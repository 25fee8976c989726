#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace capsules {

enum class CompoundTier { standard, two_phase, sequential };

enum class CompoundExecutionModel { auto_select, standard, two_phase, sequential };
enum class OutputGuidanceMode { auto_select, concise, none };
enum class ContextInjection { full, predecessor_only };
enum class MergedOutputStructure { budgeted, none };

const char* to_string(CompoundTier tier);
const char* to_string(CompoundExecutionModel m);
const char* to_string(OutputGuidanceMode m);
const char* to_string(ContextInjection m);
const char* to_string(MergedOutputStructure m);

// Every tunable threshold the controller consumes. Immutable value type;
// per-group overrides are whole-policy replacements, never field merges.
struct ControllerPolicy {
    double compose_at = 0.23;
    double decompose_at = 0.10;
    double confidence = 0.80;
    int min_observations = 3;
    int window_size = 10;
    double quality_floor = 0.75;
    CompoundExecutionModel compound_execution_model = CompoundExecutionModel::auto_select;
    OutputGuidanceMode output_guidance = OutputGuidanceMode::auto_select;
    ContextInjection context_injection = ContextInjection::predecessor_only;
    MergedOutputStructure merged_output_structure = MergedOutputStructure::budgeted;
    bool cache_aligned_prompts = true;
    bool escalation_enabled = true;
    int escalation_min_failures = 2;
    int escalation_decay_window = 5;
    int verbosity_output_threshold = 1500;
    double verbosity_overhead_threshold = 0.5;

    bool operator==(const ControllerPolicy&) const = default;
};

enum class Preset { aggressive, balanced, conservative };

ControllerPolicy preset(Preset name);
Preset preset_from_name(const std::string& name);

// Returns every invariant violation; empty means the policy is valid.
std::vector<std::string> validate_policy(const ControllerPolicy& p);

// `--set key=value` support; throws InvalidArgument on unknown key or bad value.
void set_policy_field(ControllerPolicy& p, const std::string& key, const std::string& value);

void to_json(nlohmann::json& j, const ControllerPolicy& p);
void from_json(const nlohmann::json& j, ControllerPolicy& p);

}  // namespace capsules
