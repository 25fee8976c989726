#include "capsules/policy.hpp"

#include <cstdlib>
#include <stdexcept>

#include "capsules/errors.hpp"

namespace capsules {

const char* to_string(CompoundTier tier) {
    switch (tier) {
        case CompoundTier::standard: return "standard";
        case CompoundTier::two_phase: return "two_phase";
        case CompoundTier::sequential: return "sequential";
    }
    return "?";
}

const char* to_string(CompoundExecutionModel m) {
    switch (m) {
        case CompoundExecutionModel::auto_select: return "auto";
        case CompoundExecutionModel::standard: return "standard";
        case CompoundExecutionModel::two_phase: return "two_phase";
        case CompoundExecutionModel::sequential: return "sequential";
    }
    return "?";
}

const char* to_string(OutputGuidanceMode m) {
    switch (m) {
        case OutputGuidanceMode::auto_select: return "auto";
        case OutputGuidanceMode::concise: return "concise";
        case OutputGuidanceMode::none: return "none";
    }
    return "?";
}

const char* to_string(ContextInjection m) {
    return m == ContextInjection::full ? "full" : "predecessor_only";
}

const char* to_string(MergedOutputStructure m) {
    return m == MergedOutputStructure::budgeted ? "budgeted" : "none";
}

ControllerPolicy preset(Preset name) {
    ControllerPolicy p;  // defaults already carry the shared fields
    switch (name) {
        case Preset::aggressive:
            p.compose_at = 0.18;
            p.confidence = 0.65;
            p.min_observations = 2;
            break;
        case Preset::balanced:
            p.compose_at = 0.23;
            p.confidence = 0.80;
            p.min_observations = 3;
            break;
        case Preset::conservative:
            p.compose_at = 0.35;
            p.confidence = 0.90;
            p.min_observations = 5;
            break;
    }
    return p;
}

Preset preset_from_name(const std::string& name) {
    if (name == "aggressive") return Preset::aggressive;
    if (name == "balanced") return Preset::balanced;
    if (name == "conservative") return Preset::conservative;
    throw CapsuleError(ErrorCode::InvalidArgument, "unknown preset '" + name + "'");
}

std::vector<std::string> validate_policy(const ControllerPolicy& p) {
    std::vector<std::string> v;
    if (!(p.decompose_at < p.compose_at)) v.push_back("decompose_at < compose_at");
    if (p.compose_at < 0.0 || p.compose_at > 1.0) v.push_back("compose_at in [0,1]");
    if (p.decompose_at < 0.0 || p.decompose_at > 1.0) v.push_back("decompose_at in [0,1]");
    if (!(p.confidence > 0.0 && p.confidence <= 1.0)) v.push_back("confidence in (0,1]");
    if (p.min_observations < 1) v.push_back("min_observations >= 1");
    if (p.window_size < 1) v.push_back("window_size >= 1");
    if (p.window_size < p.min_observations) v.push_back("window_size >= min_observations");
    if (p.quality_floor < 0.0 || p.quality_floor > 1.0) v.push_back("quality_floor in [0,1]");
    if (p.escalation_min_failures < 1) v.push_back("escalation_min_failures >= 1");
    if (p.escalation_decay_window < 1) v.push_back("escalation_decay_window >= 1");
    if (p.verbosity_output_threshold < 1) v.push_back("verbosity_output_threshold >= 1");
    if (p.verbosity_overhead_threshold < 0.0 || p.verbosity_overhead_threshold > 1.0)
        v.push_back("verbosity_overhead_threshold in [0,1]");
    return v;
}

namespace {

CompoundExecutionModel exec_model_from(const std::string& s) {
    if (s == "auto") return CompoundExecutionModel::auto_select;
    if (s == "standard") return CompoundExecutionModel::standard;
    if (s == "two_phase") return CompoundExecutionModel::two_phase;
    if (s == "sequential") return CompoundExecutionModel::sequential;
    throw CapsuleError(ErrorCode::InvalidArgument, "bad compound_execution_model '" + s + "'");
}

OutputGuidanceMode guidance_from(const std::string& s) {
    if (s == "auto") return OutputGuidanceMode::auto_select;
    if (s == "concise") return OutputGuidanceMode::concise;
    if (s == "none") return OutputGuidanceMode::none;
    throw CapsuleError(ErrorCode::InvalidArgument, "bad output_guidance '" + s + "'");
}

ContextInjection context_from(const std::string& s) {
    if (s == "full") return ContextInjection::full;
    if (s == "predecessor_only") return ContextInjection::predecessor_only;
    throw CapsuleError(ErrorCode::InvalidArgument, "bad context_injection '" + s + "'");
}

MergedOutputStructure structure_from(const std::string& s) {
    if (s == "budgeted") return MergedOutputStructure::budgeted;
    if (s == "none") return MergedOutputStructure::none;
    throw CapsuleError(ErrorCode::InvalidArgument, "bad merged_output_structure '" + s + "'");
}

bool bool_from(const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw CapsuleError(ErrorCode::InvalidArgument, "bad boolean '" + s + "'");
}

}  // namespace

void set_policy_field(ControllerPolicy& p, const std::string& key, const std::string& value) {
    try {
        if (key == "compose_at") p.compose_at = std::stod(value);
        else if (key == "decompose_at") p.decompose_at = std::stod(value);
        else if (key == "confidence") p.confidence = std::stod(value);
        else if (key == "min_observations") p.min_observations = std::stoi(value);
        else if (key == "window_size") p.window_size = std::stoi(value);
        else if (key == "quality_floor") p.quality_floor = std::stod(value);
        else if (key == "compound_execution_model") p.compound_execution_model = exec_model_from(value);
        else if (key == "output_guidance") p.output_guidance = guidance_from(value);
        else if (key == "context_injection") p.context_injection = context_from(value);
        else if (key == "merged_output_structure") p.merged_output_structure = structure_from(value);
        else if (key == "cache_aligned_prompts") p.cache_aligned_prompts = bool_from(value);
        else if (key == "escalation_enabled") p.escalation_enabled = bool_from(value);
        else if (key == "escalation_min_failures") p.escalation_min_failures = std::stoi(value);
        else if (key == "escalation_decay_window") p.escalation_decay_window = std::stoi(value);
        else if (key == "verbosity_output_threshold") p.verbosity_output_threshold = std::stoi(value);
        else if (key == "verbosity_overhead_threshold") p.verbosity_overhead_threshold = std::stod(value);
        else throw CapsuleError(ErrorCode::InvalidArgument, "unknown policy field '" + key + "'");
    } catch (const std::invalid_argument&) {
        throw CapsuleError(ErrorCode::InvalidArgument, "bad value for '" + key + "': " + value);
    }
}

void to_json(nlohmann::json& j, const ControllerPolicy& p) {
    j = nlohmann::json{
        {"compose_at", p.compose_at},
        {"decompose_at", p.decompose_at},
        {"confidence", p.confidence},
        {"min_observations", p.min_observations},
        {"window_size", p.window_size},
        {"quality_floor", p.quality_floor},
        {"compound_execution_model", to_string(p.compound_execution_model)},
        {"output_guidance", to_string(p.output_guidance)},
        {"context_injection", to_string(p.context_injection)},
        {"merged_output_structure", to_string(p.merged_output_structure)},
        {"cache_aligned_prompts", p.cache_aligned_prompts},
        {"escalation_enabled", p.escalation_enabled},
        {"escalation_min_failures", p.escalation_min_failures},
        {"escalation_decay_window", p.escalation_decay_window},
        {"verbosity_output_threshold", p.verbosity_output_threshold},
        {"verbosity_overhead_threshold", p.verbosity_overhead_threshold},
    };
}

void from_json(const nlohmann::json& j, ControllerPolicy& p) {
    p = ControllerPolicy{};
    if (j.contains("compose_at")) p.compose_at = j.at("compose_at").get<double>();
    if (j.contains("decompose_at")) p.decompose_at = j.at("decompose_at").get<double>();
    if (j.contains("confidence")) p.confidence = j.at("confidence").get<double>();
    if (j.contains("min_observations")) p.min_observations = j.at("min_observations").get<int>();
    if (j.contains("window_size")) p.window_size = j.at("window_size").get<int>();
    if (j.contains("quality_floor")) p.quality_floor = j.at("quality_floor").get<double>();
    if (j.contains("compound_execution_model"))
        p.compound_execution_model = exec_model_from(j.at("compound_execution_model").get<std::string>());
    if (j.contains("output_guidance"))
        p.output_guidance = guidance_from(j.at("output_guidance").get<std::string>());
    if (j.contains("context_injection"))
        p.context_injection = context_from(j.at("context_injection").get<std::string>());
    if (j.contains("merged_output_structure"))
        p.merged_output_structure = structure_from(j.at("merged_output_structure").get<std::string>());
    if (j.contains("cache_aligned_prompts")) p.cache_aligned_prompts = j.at("cache_aligned_prompts").get<bool>();
    if (j.contains("escalation_enabled")) p.escalation_enabled = j.at("escalation_enabled").get<bool>();
    if (j.contains("escalation_min_failures"))
        p.escalation_min_failures = j.at("escalation_min_failures").get<int>();
    if (j.contains("escalation_decay_window"))
        p.escalation_decay_window = j.at("escalation_decay_window").get<int>();
    if (j.contains("verbosity_output_threshold"))
        p.verbosity_output_threshold = j.at("verbosity_output_threshold").get<int>();
    if (j.contains("verbosity_overhead_threshold"))
        p.verbosity_overhead_threshold = j.at("verbosity_overhead_threshold").get<double>();
}

}  // namespace capsules
