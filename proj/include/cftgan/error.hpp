#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cftgan {

enum class ErrorCode {
    EmptyCaption,
    DimensionMismatch,
    DegenerateCorpus,
    RankDeficient,
    ShapeMismatch,
    InvalidIteration,
    NonFiniteLoss,
    CorruptCheckpoint,
    ShapeOutOfBounds,
    MalformedClip,
    EmptyDataset,
    TooShort,
    TooSmall,
    EmptyVideo,
    BudgetExceeded,
    MissingModel,
    IOFailure,
    InvalidConfig,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

inline std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::EmptyCaption: return "EmptyCaption";
        case ErrorCode::DimensionMismatch: return "DimensionMismatch";
        case ErrorCode::DegenerateCorpus: return "DegenerateCorpus";
        case ErrorCode::RankDeficient: return "RankDeficient";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::InvalidIteration: return "InvalidIteration";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
        case ErrorCode::ShapeOutOfBounds: return "ShapeOutOfBounds";
        case ErrorCode::MalformedClip: return "MalformedClip";
        case ErrorCode::EmptyDataset: return "EmptyDataset";
        case ErrorCode::TooShort: return "TooShort";
        case ErrorCode::TooSmall: return "TooSmall";
        case ErrorCode::EmptyVideo: return "EmptyVideo";
        case ErrorCode::BudgetExceeded: return "BudgetExceeded";
        case ErrorCode::MissingModel: return "MissingModel";
        case ErrorCode::IOFailure: return "IOFailure";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
    }
    return "Unknown";
}

}  // namespace cftgan
