#pragma once

#include <stdexcept>
#include <string>

namespace capsules {

enum class ErrorCode {
    DuplicateAgentName,
    UnknownDependency,
    SelfDependency,
    CrossGroupDependency,
    DuplicateGroupName,
    ParseError,
    BackendUnavailable,
    StaleRunId,
    SerializationError,
    SingleAgentGroup,
    MissingDependencyOutput,
    ToolHandlerError,
    IterationLimitReached,
    AdapterError,
    TransportError,
    ProviderError,
    UsageMissing,
    ProfileError,
    EvaluatorMissing,
    InsufficientHistory,
    InsufficientData,
    JudgeUnparseable,
    InvalidArgument,
};

const char* error_code_name(ErrorCode code);

class CapsuleError : public std::runtime_error {
public:
    CapsuleError(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
          code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

}  // namespace capsules
