#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace popevo {

enum class ErrorCode {
    NonFiniteWeights,
    LineageMismatch,
    DimMismatch,
    OutOfRangeT,
    InvalidConfig,
    TooFewExperts,
    EmptyInput,
    NonFiniteFitness,
    UnevaluatedMember,
    MissingExperience,
    PoolTooSmall,
    KOutOfRange,
    EmptyTaskList,
    InvalidTask,
    NoPredictions,
    ExternalEvaluatorFailure,
    Timeout,
    ProtocolViolation,
    EvaluatorError,
    IoError,
    VersionMismatch,
    CorruptCheckpoint,
    DegenerateInput,
    RankDeficient,
    TooFewRows,
    Usage,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so that
/// callers (and tests) can branch on the kind rather than on message text.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code)
    {
    }

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace popevo
