// SPDX-License-Identifier: Apache-2.0
#include "caninelab/error.hpp"

namespace caninelab {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DegenerateLine: return "DegenerateLine";
    case ErrorKind::DegenerateDirection: return "DegenerateDirection";
    case ErrorKind::AmbiguousGeometry: return "AmbiguousGeometry";
    case ErrorKind::InvalidLabel: return "InvalidLabel";
    case ErrorKind::InvalidMergeMap: return "InvalidMergeMap";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::ChanceDegenerate: return "ChanceDegenerate";
    case ErrorKind::UnequalRaterCount: return "UnequalRaterCount";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
    case ErrorKind::InvalidParameter: return "InvalidParameter";
    case ErrorKind::IncompleteStudy: return "IncompleteStudy";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::EmptyMatrix: return "EmptyMatrix";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::InvalidTemperature: return "InvalidTemperature";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::InvalidProportions: return "InvalidProportions";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::DuplicateStudyId: return "DuplicateStudyId";
    case ErrorKind::EmptyCaseList: return "EmptyCaseList";
    case ErrorKind::UnknownStudy: return "UnknownStudy";
    case ErrorKind::UnknownRater: return "UnknownRater";
    case ErrorKind::UnknownCase: return "UnknownCase";
    case ErrorKind::PhaseNotOpen: return "PhaseNotOpen";
    case ErrorKind::OutOfOrderRating: return "OutOfOrderRating";
    case ErrorKind::ConflictingRating: return "ConflictingRating";
    case ErrorKind::LabelSpaceMismatch: return "LabelSpaceMismatch";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace caninelab
