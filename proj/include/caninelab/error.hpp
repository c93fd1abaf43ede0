// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace caninelab {

enum class ErrorKind {
  // geometry
  DegenerateLine,
  DegenerateDirection,
  AmbiguousGeometry,
  InvalidLabel,
  InvalidMergeMap,
  // agreement
  EmptyInput,
  LengthMismatch,
  ChanceDegenerate,
  UnequalRaterCount,
  ZeroVariance,
  InvalidParameter,
  IncompleteStudy,
  // metrics
  LabelOutOfRange,
  EmptyMatrix,
  // distill
  ShapeMismatch,
  InvalidTemperature,
  EmptyDataset,
  NonFiniteLoss,
  InvalidProportions,
  InvalidConfig,
  // study
  DuplicateStudyId,
  EmptyCaseList,
  UnknownStudy,
  UnknownRater,
  UnknownCase,
  PhaseNotOpen,
  OutOfOrderRating,
  ConflictingRating,
  LabelSpaceMismatch,
  // io
  ParseError,
  IoError,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries one of the kinds above so
/// callers (the CLI, the HTTP service) can map it to an exit code or status.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind),
        message_(message) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// The message without the kind prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

}  // namespace caninelab
