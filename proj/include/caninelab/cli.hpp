// SPDX-License-Identifier: Apache-2.0
//
// The canine-lab command line. Exit codes: 0 success, 1 input error,
// 2 config error, 3 runtime or numeric failure.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>

#include "caninelab/distill.hpp"
#include "caninelab/error.hpp"

namespace caninelab::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

int exit_code(ErrorKind kind);

/// Output files of one distillation run, keyed by file name.
using Artifacts = std::map<std::string, std::string>;

/// Splits 80/20, trains the teacher, distills the student, and evaluates both
/// on the validation split. `config.seed` drives every random draw.
Artifacts distill_pipeline(const distill::Dataset& data, const distill::DistillConfig& config,
                           bool stratified = false);

/// Runs one invocation. Diagnostics go to `err`; results without --out go to `out`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace caninelab::cli
