// SPDX-License-Identifier: Apache-2.0
//
// Two-phase rating studies. Every examiner rates the same cases twice (T0,
// then T1), each time in a seeded per-rater order; the trainer's labels are
// the calibration reference. State lives in an append-only JSON-lines event
// log and is rebuilt by replaying it.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "caninelab/agreement.hpp"
#include "caninelab/geometry.hpp"

namespace caninelab::study {

using agreement::Phase;
using agreement::RatingRecord;
using geometry::SectorLabel;
using geometry::Space;

enum class PhaseState { NotStarted, InProgress, Complete };
std::string_view to_string(PhaseState s);

struct CaseRef {
  std::string case_id;
  std::string asset_ref;
};

struct Rater {
  std::string id;
  std::string group;
};

struct StudySpec {
  std::string id;
  Space space = Space::Three;
  std::vector<CaseRef> cases;
  std::vector<Rater> raters;
  std::string trainer_id = "trainer";
  std::map<std::string, std::string> trainer_labels;  // case -> label name
  std::uint64_t seed = 0;
  int interval_weeks = 4;  // recorded only
};

StudySpec spec_from_json(const nlohmann::json& j);

struct NextItem {
  bool done = false;
  std::string case_id;
  std::string asset_ref;
  std::size_t position = 0;  // 1-based
  std::size_t total = 0;
};

nlohmann::json to_json(const NextItem& n);

/// Permutation of 0..n-1 derived from (seed, rater, phase, attempt).
std::vector<std::size_t> derive_ordering(std::uint64_t seed, const std::string& rater, Phase phase,
                                         std::size_t n, std::uint64_t attempt = 0);

using Clock = std::function<std::string()>;

struct RecordOutcome {
  RatingRecord record;
  bool appended = false;  // false for an identical re-submission
};

/// In-memory study state. Not synchronized; StudyStore serializes access.
class Study {
 public:
  /// Throws EmptyCaseList, InvalidParameter (no raters, duplicate ids).
  static Study create(StudySpec spec, std::string created_at);

  /// Rebuilds from a manifest and its event log by replaying every record.
  static Study replay(const nlohmann::json& manifest, const std::vector<RatingRecord>& events);

  const StudySpec& spec() const { return spec_; }
  const std::string& created_at() const { return created_at_; }
  const std::vector<std::size_t>& ordering(const std::string& rater, Phase phase) const;
  /// True when the rater's T0 and T1 orderings coincide (only for one case).
  bool orderings_identical(const std::string& rater) const;

  PhaseState state(const std::string& rater, Phase phase) const;
  std::size_t rated_count(const std::string& rater, Phase phase) const;

  /// Throws PhaseNotOpen, UnknownRater.
  NextItem next_item(const std::string& rater, Phase phase) const;

  /// Throws UnknownRater, UnknownCase, LabelSpaceMismatch, PhaseNotOpen,
  /// ConflictingRating, OutOfOrderRating.
  RecordOutcome record_rating(const std::string& rater, Phase phase, const std::string& case_id,
                              const SectorLabel& label, const std::string& ts,
                              std::optional<double> elapsed_ms = std::nullopt);

  const std::vector<RatingRecord>& log() const { return log_; }

  nlohmann::json manifest() const;
  nlohmann::json status() const;

  /// Agreement tables over the log. `strict` requires complete trainer
  /// labels and at least one completed examiner phase.
  nlohmann::json report(bool strict, int bootstrap_replicates = 1000) const;

 private:
  Study() = default;
  void build_index();
  bool is_examiner(const std::string& rater) const;
  const CaseRef& case_ref(std::size_t i) const { return spec_.cases[i]; }

  StudySpec spec_;
  std::string created_at_;
  std::map<std::string, std::size_t> case_index_;
  std::map<std::string, std::map<Phase, std::vector<std::size_t>>> orderings_;
  // rater -> phase -> case -> position in log_
  std::map<std::string, std::map<Phase, std::map<std::string, std::size_t>>> rated_;
  std::vector<RatingRecord> log_;
};

/// Directory-backed collection of studies: `<root>/<id>/manifest.json` and
/// `<root>/<id>/events.jsonl`. Reads may run concurrently; mutations of one
/// study are serialized; distinct studies are independent.
class StudyStore {
 public:
  explicit StudyStore(std::filesystem::path root, Clock clock = {});

  nlohmann::json create(StudySpec spec);
  nlohmann::json describe(const std::string& id);
  NextItem next_item(const std::string& id, const std::string& rater, Phase phase);
  RecordOutcome record_rating(const std::string& id, const std::string& rater, Phase phase,
                              const std::string& case_id, const std::string& label,
                              std::optional<double> elapsed_ms = std::nullopt);
  nlohmann::json report(const std::string& id, bool strict = false);
  std::vector<RatingRecord> events(const std::string& id);
  std::vector<std::string> list();

 private:
  struct Entry {
    std::shared_mutex mutex;
    std::optional<Study> study;
  };

  Entry& entry(const std::string& id);
  std::filesystem::path dir(const std::string& id) const { return root_ / id; }

  std::filesystem::path root_;
  Clock clock_;
  std::mutex map_mutex_;
  std::map<std::string, std::unique_ptr<Entry>> entries_;
};

/// Study ids become directory names: letters, digits, '.', '_' and '-' only.
bool valid_study_id(std::string_view id);

}  // namespace caninelab::study
