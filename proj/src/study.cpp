// SPDX-License-Identifier: Apache-2.0
#include "caninelab/study.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "caninelab/error.hpp"
#include "caninelab/io.hpp"
#include "caninelab/random.hpp"

namespace caninelab::study {

using nlohmann::json;

std::string_view to_string(PhaseState s) {
  switch (s) {
    case PhaseState::NotStarted: return "NOT_STARTED";
    case PhaseState::InProgress: return "IN_PROGRESS";
    case PhaseState::Complete: return "COMPLETE";
  }
  return "?";
}

bool valid_study_id(std::string_view id) {
  if (id.empty() || id.size() > 128 || id == "." || id == "..") return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' || c == '_' ||
           c == '-';
  });
}

StudySpec spec_from_json(const json& j) {
  try {
    StudySpec s;
    s.id = j.at("id").get<std::string>();
    s.space = geometry::parse_space(j.at("space").get<std::string>());
    for (const auto& c : j.at("cases")) {
      if (c.is_string()) {
        s.cases.push_back({c.get<std::string>(), ""});
      } else {
        s.cases.push_back({c.at("case").get<std::string>(), c.value("asset_ref", "")});
      }
    }
    for (const auto& r : j.at("raters")) {
      if (r.is_string()) {
        s.raters.push_back({r.get<std::string>(), ""});
      } else {
        s.raters.push_back({r.at("id").get<std::string>(), r.value("group", "")});
      }
    }
    if (j.contains("trainer")) {
      const auto& t = j["trainer"];
      s.trainer_id = t.value("id", s.trainer_id);
      if (t.contains("labels")) s.trainer_labels = t["labels"].get<std::map<std::string, std::string>>();
    }
    s.seed = j.value("seed", std::uint64_t{0});
    s.interval_weeks = j.value("interval_weeks", 4);
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("study definition: ") + e.what());
  }
}

json to_json(const NextItem& n) {
  if (n.done) return json{{"done", true}};
  return json{{"case", n.case_id}, {"asset_ref", n.asset_ref}, {"position", n.position}, {"total", n.total}};
}

std::vector<std::size_t> derive_ordering(std::uint64_t seed, const std::string& rater, Phase phase, std::size_t n,
                                         std::uint64_t attempt) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::uint64_t stream =
      stable_hash(rater) ^ mix_seed(static_cast<std::uint64_t>(phase) + 1) ^ mix_seed(attempt + 0x1000);
  Rng rng(derive_seed(seed, stream));
  rng.shuffle(order.begin(), order.end());
  return order;
}

// ---------------------------------------------------------------------------

void Study::build_index() {
  case_index_.clear();
  for (std::size_t i = 0; i < spec_.cases.size(); ++i) {
    if (!case_index_.emplace(spec_.cases[i].case_id, i).second) {
      throw Error(ErrorKind::InvalidParameter, "duplicate case id '" + spec_.cases[i].case_id + "'");
    }
  }
  std::set<std::string> ids{spec_.trainer_id};
  for (const auto& r : spec_.raters) {
    if (r.id.empty() || !ids.insert(r.id).second) {
      throw Error(ErrorKind::InvalidParameter, "rater ids must be non-empty, unique and differ from the trainer");
    }
  }
}

Study Study::create(StudySpec spec, std::string created_at) {
  if (!valid_study_id(spec.id)) throw Error(ErrorKind::InvalidParameter, "invalid study id '" + spec.id + "'");
  if (spec.cases.empty()) throw Error(ErrorKind::EmptyCaseList, "a study needs at least one case");
  if (spec.raters.empty()) throw Error(ErrorKind::InvalidParameter, "a study needs at least one rater");
  Study s;
  s.spec_ = std::move(spec);
  s.created_at_ = std::move(created_at);
  s.build_index();
  const auto n = s.spec_.cases.size();
  for (const auto& r : s.spec_.raters) {
    auto t0 = derive_ordering(s.spec_.seed, r.id, Phase::T0, n);
    auto t1 = derive_ordering(s.spec_.seed, r.id, Phase::T1, n);
    for (std::uint64_t attempt = 1; n >= 2 && t1 == t0; ++attempt) {
      t1 = derive_ordering(s.spec_.seed, r.id, Phase::T1, n, attempt);
    }
    s.orderings_[r.id][Phase::T0] = std::move(t0);
    s.orderings_[r.id][Phase::T1] = std::move(t1);
  }
  const auto trainer_labels = s.spec_.trainer_labels;
  for (const auto& [case_id, label] : trainer_labels) {
    s.record_rating(s.spec_.trainer_id, Phase::Trainer, case_id, SectorLabel::parse(label), s.created_at_);
  }
  return s;
}

Study Study::replay(const json& manifest, const std::vector<RatingRecord>& events) {
  Study s;
  try {
    s.spec_ = spec_from_json(manifest);
    s.created_at_ = manifest.value("created_at", "");
    s.build_index();
    const auto n = s.spec_.cases.size();
    for (const auto& r : s.spec_.raters) {
      for (Phase p : {Phase::T0, Phase::T1}) {
        const auto ids = manifest.at("orderings").at(r.id).at(std::string(agreement::to_string(p)))
                             .get<std::vector<std::string>>();
        std::vector<std::size_t> order;
        std::vector<bool> seen(n, false);
        for (const auto& id : ids) {
          auto it = s.case_index_.find(id);
          if (it == s.case_index_.end() || seen[it->second]) {
            throw Error(ErrorKind::ParseError, "ordering of '" + r.id + "' is not a permutation of the cases");
          }
          seen[it->second] = true;
          order.push_back(it->second);
        }
        if (order.size() != n) throw Error(ErrorKind::ParseError, "ordering of '" + r.id + "' is incomplete");
        s.orderings_[r.id][p] = std::move(order);
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, std::string("manifest: ") + e.what());
  }
  for (const auto& e : events) {
    if (e.study_id != s.spec_.id) throw Error(ErrorKind::ParseError, "event belongs to study '" + e.study_id + "'");
    s.record_rating(e.rater_id, e.phase, e.case_id, e.label, e.ts, e.elapsed_ms);
  }
  return s;
}

bool Study::is_examiner(const std::string& rater) const { return orderings_.contains(rater); }

const std::vector<std::size_t>& Study::ordering(const std::string& rater, Phase phase) const {
  auto it = orderings_.find(rater);
  if (it == orderings_.end() || phase == Phase::Trainer) {
    throw Error(ErrorKind::UnknownRater, "no ordering for rater '" + rater + "'");
  }
  return it->second.at(phase);
}

bool Study::orderings_identical(const std::string& rater) const {
  return ordering(rater, Phase::T0) == ordering(rater, Phase::T1);
}

std::size_t Study::rated_count(const std::string& rater, Phase phase) const {
  auto it = rated_.find(rater);
  if (it == rated_.end()) return 0;
  auto jt = it->second.find(phase);
  return jt == it->second.end() ? 0 : jt->second.size();
}

PhaseState Study::state(const std::string& rater, Phase phase) const {
  const auto rated = rated_count(rater, phase);
  if (rated == 0) return PhaseState::NotStarted;
  return rated == spec_.cases.size() ? PhaseState::Complete : PhaseState::InProgress;
}

NextItem Study::next_item(const std::string& rater, Phase phase) const {
  if (!is_examiner(rater)) throw Error(ErrorKind::UnknownRater, "unknown rater '" + rater + "'");
  if (phase == Phase::Trainer) throw Error(ErrorKind::PhaseNotOpen, "the trainer phase has no ordering");
  if (phase == Phase::T1 && state(rater, Phase::T0) != PhaseState::Complete) {
    throw Error(ErrorKind::PhaseNotOpen, "T1 opens after '" + rater + "' completes T0");
  }
  const auto& order = ordering(rater, phase);
  const auto done = rated_count(rater, phase);
  NextItem next;
  next.total = order.size();
  if (done >= order.size()) {
    next.done = true;
    next.position = order.size();
    return next;
  }
  const auto& ref = case_ref(order[done]);
  next.case_id = ref.case_id;
  next.asset_ref = ref.asset_ref;
  next.position = done + 1;
  return next;
}

RecordOutcome Study::record_rating(const std::string& rater, Phase phase, const std::string& case_id,
                                   const SectorLabel& label, const std::string& ts,
                                   std::optional<double> elapsed_ms) {
  const bool trainer = phase == Phase::Trainer;
  if (trainer ? rater != spec_.trainer_id : !is_examiner(rater)) {
    throw Error(ErrorKind::UnknownRater, "'" + rater + "' cannot rate phase " + std::string(agreement::to_string(phase)));
  }
  if (!case_index_.contains(case_id)) throw Error(ErrorKind::UnknownCase, "unknown case '" + case_id + "'");
  if (label.space() != spec_.space) {
    throw Error(ErrorKind::LabelSpaceMismatch, "label " + std::string(label.name()) + " is not in the " +
                                                   std::string(geometry::to_string(spec_.space)) + " space");
  }
  auto& done = rated_[rater][phase];
  if (auto it = done.find(case_id); it != done.end()) {
    const auto& existing = log_[it->second];
    if (existing.label == label) return {existing, false};
    throw Error(ErrorKind::ConflictingRating, "'" + rater + "' already rated '" + case_id + "' as " +
                                                  std::string(existing.label.name()));
  }
  if (!trainer) {
    const auto next = next_item(rater, phase);
    if (next.done || next.case_id != case_id) {
      throw Error(ErrorKind::OutOfOrderRating, "'" + rater + "' must rate '" + next.case_id + "' next");
    }
  }
  RatingRecord r{spec_.id, rater, phase, case_id, label, ts, elapsed_ms};
  done.emplace(case_id, log_.size());
  log_.push_back(r);
  return {std::move(r), true};
}

json Study::manifest() const {
  json cases = json::array(), raters = json::array(), orderings = json::object();
  for (const auto& c : spec_.cases) cases.push_back({{"case", c.case_id}, {"asset_ref", c.asset_ref}});
  for (const auto& r : spec_.raters) {
    raters.push_back({{"id", r.id}, {"group", r.group}});
    for (Phase p : {Phase::T0, Phase::T1}) {
      std::vector<std::string> ids;
      for (auto i : ordering(r.id, p)) ids.push_back(spec_.cases[i].case_id);
      orderings[r.id][std::string(agreement::to_string(p))] = ids;
    }
  }
  return json{{"id", spec_.id},
              {"space", geometry::to_string(spec_.space)},
              {"cases", cases},
              {"raters", raters},
              {"trainer", {{"id", spec_.trainer_id}, {"labels", spec_.trainer_labels}}},
              {"seed", spec_.seed},
              {"interval_weeks", spec_.interval_weeks},
              {"created_at", created_at_},
              {"orderings", orderings}};
}

json Study::status() const {
  json raters = json::array();
  json flags = json::array();
  const auto total = spec_.cases.size();
  for (const auto& r : spec_.raters) {
    json entry{{"id", r.id}, {"group", r.group}};
    for (Phase p : {Phase::T0, Phase::T1}) {
      entry[std::string(agreement::to_string(p))] = {
          {"state", to_string(state(r.id, p))}, {"rated", rated_count(r.id, p)}, {"total", total}};
    }
    raters.push_back(std::move(entry));
    if (orderings_identical(r.id)) flags.push_back({{"rater", r.id}, {"identical_orderings", true}});
  }
  return json{{"raters", raters},
              {"trainer", {{"id", spec_.trainer_id}, {"rated", rated_count(spec_.trainer_id, Phase::Trainer)},
                           {"total", total}}},
              {"ordering_flags", flags}};
}

json Study::report(bool strict, int bootstrap_replicates) const {
  if (strict) {
    if (rated_count(spec_.trainer_id, Phase::Trainer) != spec_.cases.size()) {
      throw Error(ErrorKind::IncompleteStudy, "trainer labels do not cover every case");
    }
    const bool any_complete = std::any_of(spec_.raters.begin(), spec_.raters.end(), [&](const Rater& r) {
      return state(r.id, Phase::T0) == PhaseState::Complete;
    });
    if (!any_complete) throw Error(ErrorKind::IncompleteStudy, "no examiner has completed a phase");
  }
  agreement::Grouping grouping;
  for (const auto& r : spec_.raters) grouping[r.id] = r.group.empty() ? "ungrouped" : r.group;
  agreement::StudyTablesOptions options;
  options.strict = false;
  options.fleiss.bootstrap.replicates = bootstrap_replicates;
  options.fleiss.bootstrap.seed = spec_.seed;
  for (const auto& c : spec_.cases) options.case_universe.push_back(c.case_id);
  const auto tables = agreement::study_tables(log_, grouping, options);
  return json{{"study", spec_.id},
              {"space", geometry::to_string(spec_.space)},
              {"status", status()},
              {"tables", agreement::to_json(tables)}};
}

// ---------------------------------------------------------------------------

StudyStore::StudyStore(std::filesystem::path root, Clock clock) : root_(std::move(root)), clock_(std::move(clock)) {
  if (!clock_) clock_ = io::utc_timestamp;
  std::error_code ec;
  std::filesystem::create_directories(root_, ec);
  if (!std::filesystem::is_directory(root_)) {
    throw Error(ErrorKind::IoError, "studies directory '" + root_.string() + "' is not usable");
  }
}

namespace {

void append_line(const std::filesystem::path& path, const std::string& line) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error(ErrorKind::IoError, "cannot append to '" + path.string() + "'");
  out << line << '\n';
  out.flush();
  if (!out) throw Error(ErrorKind::IoError, "write to '" + path.string() + "' failed");
}

}  // namespace

StudyStore::Entry& StudyStore::entry(const std::string& id) {
  if (!valid_study_id(id)) throw Error(ErrorKind::UnknownStudy, "invalid study id '" + id + "'");
  std::lock_guard lock(map_mutex_);
  auto& slot = entries_[id];
  if (!slot) slot = std::make_unique<Entry>();
  return *slot;
}

std::vector<std::string> StudyStore::list() {
  std::vector<std::string> ids;
  for (const auto& d : std::filesystem::directory_iterator(root_)) {
    if (d.is_directory() && std::filesystem::exists(d.path() / "manifest.json")) ids.push_back(d.path().filename());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

json StudyStore::create(StudySpec spec) {
  if (!valid_study_id(spec.id)) throw Error(ErrorKind::InvalidParameter, "invalid study id '" + spec.id + "'");
  Entry& e = entry(spec.id);
  std::unique_lock lock(e.mutex);
  const auto d = dir(spec.id);
  if (e.study || std::filesystem::exists(d / "manifest.json")) {
    throw Error(ErrorKind::DuplicateStudyId, "study '" + spec.id + "' already exists");
  }
  Study s = Study::create(std::move(spec), clock_());
  std::filesystem::create_directories(d);
  std::string events;
  for (const auto& r : s.log()) events += agreement::to_json(r).dump() + '\n';
  io::write_text_file((d / "events.jsonl").string(), events);
  io::write_text_file((d / "manifest.json").string(), s.manifest().dump(2) + '\n');
  auto m = s.manifest();
  e.study = std::move(s);
  return m;
}

namespace {

Study load_from_disk(const std::filesystem::path& d, const std::string& id) {
  const auto manifest_path = d / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) throw Error(ErrorKind::UnknownStudy, "no study '" + id + "'");
  json manifest;
  try {
    manifest = json::parse(io::read_text_file(manifest_path.string()));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, "manifest of '" + id + "': " + e.what());
  }
  std::vector<RatingRecord> events;
  if (std::filesystem::exists(d / "events.jsonl")) {
    events = agreement::parse_ratings_jsonl(io::read_text_file((d / "events.jsonl").string()));
  }
  return Study::replay(manifest, events);
}

}  // namespace

// Loads lazily under the exclusive lock, then calls `f` with the study.
#define CANINELAB_WITH_STUDY(lock_type, id, body)                   \
  Entry& e = entry(id);                                             \
  {                                                                 \
    std::unique_lock load_lock(e.mutex);                            \
    if (!e.study) e.study = load_from_disk(dir(id), id);            \
  }                                                                 \
  lock_type lock(e.mutex);                                          \
  Study& study = *e.study;                                          \
  body

json StudyStore::describe(const std::string& id) {
  CANINELAB_WITH_STUDY(std::shared_lock, id, {
    json j = study.manifest();
    j["status"] = study.status();
    return j;
  })
}

NextItem StudyStore::next_item(const std::string& id, const std::string& rater, Phase phase) {
  CANINELAB_WITH_STUDY(std::shared_lock, id, { return study.next_item(rater, phase); })
}

RecordOutcome StudyStore::record_rating(const std::string& id, const std::string& rater, Phase phase,
                                        const std::string& case_id, const std::string& label,
                                        std::optional<double> elapsed_ms) {
  CANINELAB_WITH_STUDY(std::unique_lock, id, {
    const auto parsed = SectorLabel::parse(label);
    auto outcome = study.record_rating(rater, phase, case_id, parsed, clock_(), elapsed_ms);
    if (outcome.appended) append_line(dir(id) / "events.jsonl", agreement::to_json(outcome.record).dump());
    return outcome;
  })
}

json StudyStore::report(const std::string& id, bool strict) {
  CANINELAB_WITH_STUDY(std::shared_lock, id, { return study.report(strict); })
}

std::vector<RatingRecord> StudyStore::events(const std::string& id) {
  CANINELAB_WITH_STUDY(std::shared_lock, id, { return study.log(); })
}

#undef CANINELAB_WITH_STUDY

}  // namespace caninelab::study
