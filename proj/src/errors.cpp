#include "capsules/errors.hpp"

namespace capsules {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::DuplicateAgentName: return "DuplicateAgentName";
        case ErrorCode::UnknownDependency: return "UnknownDependency";
        case ErrorCode::SelfDependency: return "SelfDependency";
        case ErrorCode::CrossGroupDependency: return "CrossGroupDependency";
        case ErrorCode::DuplicateGroupName: return "DuplicateGroupName";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::BackendUnavailable: return "BackendUnavailable";
        case ErrorCode::StaleRunId: return "StaleRunId";
        case ErrorCode::SerializationError: return "SerializationError";
        case ErrorCode::SingleAgentGroup: return "SingleAgentGroup";
        case ErrorCode::MissingDependencyOutput: return "MissingDependencyOutput";
        case ErrorCode::ToolHandlerError: return "ToolHandlerError";
        case ErrorCode::IterationLimitReached: return "IterationLimitReached";
        case ErrorCode::AdapterError: return "AdapterError";
        case ErrorCode::TransportError: return "TransportError";
        case ErrorCode::ProviderError: return "ProviderError";
        case ErrorCode::UsageMissing: return "UsageMissing";
        case ErrorCode::ProfileError: return "ProfileError";
        case ErrorCode::EvaluatorMissing: return "EvaluatorMissing";
        case ErrorCode::InsufficientHistory: return "InsufficientHistory";
        case ErrorCode::InsufficientData: return "InsufficientData";
        case ErrorCode::JudgeUnparseable: return "JudgeUnparseable";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

}  // namespace capsules
