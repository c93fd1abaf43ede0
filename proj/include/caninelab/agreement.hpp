// SPDX-License-Identifier: Apache-2.0
//
// Chance-corrected agreement statistics: Cohen's kappa for rater pairs,
// Fleiss' kappa for a fixed number of raters per item, z-tests between
// kappas, sample-size planning, and the study-level tables built from
// two-phase rating records.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "caninelab/geometry.hpp"

namespace caninelab::agreement {

using geometry::SectorLabel;
using geometry::Space;

enum class Phase { T0, T1, Trainer };

std::string_view to_string(Phase phase);
Phase parse_phase(std::string_view text);

struct RatingRecord {
  std::string study_id;
  std::string rater_id;
  Phase phase = Phase::T0;
  std::string case_id;
  SectorLabel label{Space::Three, 0};
  std::string ts;
  std::optional<double> elapsed_ms;
};

nlohmann::json to_json(const RatingRecord& r);
RatingRecord rating_from_json(const nlohmann::json& j);

/// One record per line; blank lines are skipped. Identical duplicates are
/// collapsed, conflicting duplicates raise ParseError naming the line.
std::vector<RatingRecord> parse_ratings_jsonl(std::string_view text);

// ---------------------------------------------------------------------------

enum class AgreementLabel { None, Slight, Fair, Moderate, Substantial, AlmostPerfect, Perfect };

std::string_view to_string(AgreementLabel label);

/// Banded interpretation: below 0.01 is no agreement, then slight up to and
/// including 0.20, fair to 0.40, moderate to 0.60, substantial to 0.80,
/// almost perfect below 1 and perfect at 1.
AgreementLabel label_agreement(double kappa);

enum class KappaMethod { Cohen, Fleiss };
enum class CiMethod { Analytic, Bootstrap };

std::string_view to_string(KappaMethod m);
std::string_view to_string(CiMethod m);

struct KappaResult {
  double kappa = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::size_t n_items = 0;
  AgreementLabel agreement_label = AgreementLabel::None;
  KappaMethod method = KappaMethod::Cohen;
  CiMethod ci_method = CiMethod::Analytic;
  double p_observed = 0.0;
  double p_expected = 0.0;
  // Bootstrap replicates whose kappa was undefined and were dropped.
  std::size_t dropped_replicates = 0;
};

nlohmann::json to_json(const KappaResult& r);

struct BootstrapOptions {
  int replicates = 1000;
  std::uint64_t seed = 0;
  double level = 0.95;
  /// Worker threads. The result does not depend on this value.
  unsigned workers = 1;
};

struct KappaOptions {
  CiMethod ci = CiMethod::Analytic;
  BootstrapOptions bootstrap{};
};

/// Labels are category indices in [0, k). Analytic SE is
/// sqrt(p_o(1-p_o) / (n(1-p_e)^2)); the CI is clamped to [-1, 1]. With a
/// bootstrap CI the SE is the standard deviation of the replicates.
KappaResult cohen_kappa(std::span<const int> rater_a, std::span<const int> rater_b, int k,
                        const KappaOptions& options = {});

/// Same statistic from a k x k table of pair counts (rows: rater A).
KappaResult cohen_kappa_from_table(const std::vector<std::vector<long>>& table,
                                   const KappaOptions& options = {});

/// `counts[i][j]` is the number of raters who put item i into category j;
/// every row must sum to `raters`. Analytic SE is Fleiss's large-sample
/// standard error. Bootstrap (resampling items) is the default CI.
KappaResult fleiss_kappa(const std::vector<std::vector<int>>& counts, int raters,
                         const KappaOptions& options = {.ci = CiMethod::Bootstrap});

struct KappaComparison {
  double z = 0.0;
  double p_value = 1.0;
  KappaResult first;
  KappaResult second;
};

nlohmann::json to_json(const KappaComparison& c);

/// Two-sided z-test of the difference between two independent kappas.
KappaComparison compare_kappas(const KappaResult& first, const KappaResult& second);

/// Items needed so that a two-rater binary kappa CI has half-width `margin`,
/// taking the worst-case observed agreement p_o = 0.5 and chance agreement
/// from the prevalence marginals p^2 + (1-p)^2.
std::size_t kappa_sample_size(double ci_level, double margin, double prevalence, int raters = 2,
                              int categories = 2);

/// Two-sided standard normal quantile for a confidence level (0.95 -> 1.96).
double z_for_level(double level);

// ---------------------------------------------------------------------------
// Study tables

/// rater id -> group name (e.g. orthodontist / general practitioner).
using Grouping = std::map<std::string, std::string>;

Grouping parse_grouping(std::string_view json_text);

struct StudyTablesOptions {
  /// Strict mode raises IncompleteStudy for any missing phase or coverage;
  /// otherwise only complete rater-phases enter the tables.
  bool strict = true;
  KappaOptions cohen{};
  KappaOptions fleiss{.ci = CiMethod::Bootstrap};
  /// When non-empty, the full case list: coverage is judged against it and
  /// records for other cases are rejected.
  std::vector<std::string> case_universe;
};

/// A kappa that may be undefined for the data at hand (e.g. both raters
/// constant); the reason is kept instead of dropping the cell.
struct KappaEntry {
  std::optional<KappaResult> result;
  std::string error;
};

struct GroupComparison {
  std::string first_group;
  std::string second_group;
  std::optional<KappaComparison> comparison;
  std::string error;
};

struct CalibrationRow {
  std::string rater;
  std::string group;
  Phase phase = Phase::T0;
  KappaEntry entry;
};

struct IntraRow {
  std::string rater;
  std::string group;
  KappaEntry entry;
};

struct PooledIntra {
  std::map<std::string, KappaEntry> by_group;
  KappaEntry overall;
  std::vector<GroupComparison> comparisons;
};

struct FleissPhase {
  Phase phase = Phase::T0;
  std::map<std::string, KappaEntry> by_group;
  KappaEntry overall;
  std::vector<GroupComparison> comparisons;
};

struct SpaceTables {
  Space space = Space::Three;
  std::size_t n_cases = 0;
  std::vector<CalibrationRow> calibration;  // examiner vs trainer, per phase
  std::vector<IntraRow> intra;              // T0 vs T1 per examiner
  PooledIntra pooled;                       // T0 vs T1 pooled per group
  std::vector<FleissPhase> fleiss;          // inter-examiner per phase
  std::vector<std::string> notes;
};

struct StudyTables {
  std::vector<SpaceTables> spaces;
};

StudyTables study_tables(std::span<const RatingRecord> records, const Grouping& grouping,
                         const StudyTablesOptions& options = {});

nlohmann::json to_json(const StudyTables& tables);
std::string render_text(const StudyTables& tables);

}  // namespace caninelab::agreement
