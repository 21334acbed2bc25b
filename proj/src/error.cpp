#include "popevo/error.hpp"

namespace popevo {

std::string_view to_string(ErrorCode code) noexcept
{
    switch (code) {
    case ErrorCode::NonFiniteWeights: return "NonFiniteWeights";
    case ErrorCode::LineageMismatch: return "LineageMismatch";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::OutOfRangeT: return "OutOfRangeT";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::TooFewExperts: return "TooFewExperts";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::NonFiniteFitness: return "NonFiniteFitness";
    case ErrorCode::UnevaluatedMember: return "UnevaluatedMember";
    case ErrorCode::MissingExperience: return "MissingExperience";
    case ErrorCode::PoolTooSmall: return "PoolTooSmall";
    case ErrorCode::KOutOfRange: return "KOutOfRange";
    case ErrorCode::EmptyTaskList: return "EmptyTaskList";
    case ErrorCode::InvalidTask: return "InvalidTask";
    case ErrorCode::NoPredictions: return "NoPredictions";
    case ErrorCode::ExternalEvaluatorFailure: return "ExternalEvaluatorFailure";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::ProtocolViolation: return "ProtocolViolation";
    case ErrorCode::EvaluatorError: return "EvaluatorError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::TooFewRows: return "TooFewRows";
    case ErrorCode::Usage: return "Usage";
    }
    return "Unknown";
}

} // namespace popevo
