// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "caninelab/agreement.hpp"
#include "caninelab/error.hpp"
#include "caninelab/random.hpp"

namespace caninelab::agreement {

using nlohmann::json;

namespace {

using CaseLabels = std::map<std::string, int>;

struct SpaceData {
  std::set<std::string> cases;
  CaseLabels trainer;
  std::map<std::string, std::map<Phase, CaseLabels>> examiners;
};

const std::string kUngrouped = "ungrouped";

bool covers(const CaseLabels& labels, const std::set<std::string>& cases) {
  return std::all_of(cases.begin(), cases.end(), [&](const auto& c) { return labels.contains(c); });
}

KappaOptions seeded(const KappaOptions& base, const std::string& key) {
  KappaOptions o = base;
  o.bootstrap.seed = derive_seed(base.bootstrap.seed, stable_hash(key));
  return o;
}

template <typename F>
KappaEntry guarded(F&& f) {
  KappaEntry e;
  try {
    e.result = f();
  } catch (const Error& err) {
    e.error = err.what();
  }
  return e;
}

std::vector<GroupComparison> compare_groups(const std::map<std::string, KappaEntry>& by_group) {
  std::vector<GroupComparison> out;
  for (auto a = by_group.begin(); a != by_group.end(); ++a) {
    for (auto b = std::next(a); b != by_group.end(); ++b) {
      GroupComparison gc;
      gc.first_group = a->first;
      gc.second_group = b->first;
      if (!a->second.result || !b->second.result) {
        gc.error = "kappa unavailable for one of the groups";
      } else {
        try {
          gc.comparison = compare_kappas(*a->second.result, *b->second.result);
        } catch (const Error& e) {
          gc.error = e.what();
        }
      }
      out.push_back(std::move(gc));
    }
  }
  return out;
}

KappaEntry fleiss_over(const std::vector<const CaseLabels*>& raters, const std::set<std::string>& cases,
                       int k, const KappaOptions& options) {
  if (raters.size() < 2) return KappaEntry{std::nullopt, "fewer than two complete raters"};
  std::vector<std::vector<int>> counts;
  counts.reserve(cases.size());
  for (const auto& c : cases) {
    std::vector<int> row(static_cast<std::size_t>(k), 0);
    for (const auto* r : raters) ++row[static_cast<std::size_t>(r->at(c))];
    counts.push_back(std::move(row));
  }
  return guarded([&] { return fleiss_kappa(counts, static_cast<int>(raters.size()), options); });
}

SpaceTables tables_for(Space space, const SpaceData& data, const Grouping& grouping,
                       const StudyTablesOptions& options) {
  SpaceTables t;
  t.space = space;
  t.n_cases = data.cases.size();
  const int k = geometry::class_count(space);
  const std::string space_key(geometry::to_string(space));

  auto group_of = [&](const std::string& rater) {
    auto it = grouping.find(rater);
    return it == grouping.end() ? kUngrouped : it->second;
  };
  auto complete = [&](const std::string& rater, Phase phase) {
    const auto& phases = data.examiners.at(rater);
    auto it = phases.find(phase);
    return it != phases.end() && covers(it->second, data.cases);
  };

  if (options.strict) {
    if (data.trainer.empty() || !covers(data.trainer, data.cases)) {
      throw Error(ErrorKind::IncompleteStudy, space_key + ": trainer labels do not cover every case");
    }
    for (const auto& [rater, _] : data.examiners) {
      for (Phase p : {Phase::T0, Phase::T1}) {
        if (!complete(rater, p)) {
          throw Error(ErrorKind::IncompleteStudy, space_key + ": rater '" + rater + "' has not completed " +
                                                      std::string(to_string(p)));
        }
      }
      if (!grouping.contains(rater)) {
        throw Error(ErrorKind::IncompleteStudy, space_key + ": rater '" + rater + "' has no group");
      }
    }
  }

  // Examiner vs trainer.
  for (const auto& [rater, phases] : data.examiners) {
    for (Phase p : {Phase::T0, Phase::T1}) {
      if (!complete(rater, p)) continue;
      std::vector<int> a, b;
      for (const auto& c : data.cases) {
        auto it = data.trainer.find(c);
        if (it == data.trainer.end()) continue;
        a.push_back(phases.at(p).at(c));
        b.push_back(it->second);
      }
      if (a.size() < data.cases.size()) {
        t.notes.push_back(fmt::format("calibration of {} at {} uses {} of {} cases (trainer incomplete)",
                                      rater, to_string(p), a.size(), data.cases.size()));
      }
      t.calibration.push_back(CalibrationRow{
          rater, group_of(rater), p, guarded([&] {
            return cohen_kappa(a, b, k, seeded(options.cohen, space_key + "/cal/" + rater + "/" +
                                                                  std::string(to_string(p))));
          })});
    }
  }

  // Intra-rater T0 vs T1, per examiner and pooled per group.
  std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> pooled;
  std::pair<std::vector<int>, std::vector<int>> overall;
  for (const auto& [rater, phases] : data.examiners) {
    if (!complete(rater, Phase::T0) || !complete(rater, Phase::T1)) continue;
    std::vector<int> a, b;
    for (const auto& c : data.cases) {
      a.push_back(phases.at(Phase::T0).at(c));
      b.push_back(phases.at(Phase::T1).at(c));
    }
    const auto group = group_of(rater);
    auto& [ga, gb] = pooled[group];
    ga.insert(ga.end(), a.begin(), a.end());
    gb.insert(gb.end(), b.begin(), b.end());
    overall.first.insert(overall.first.end(), a.begin(), a.end());
    overall.second.insert(overall.second.end(), b.begin(), b.end());
    t.intra.push_back(IntraRow{rater, group, guarded([&] {
                                 return cohen_kappa(a, b, k, seeded(options.cohen, space_key + "/intra/" + rater));
                               })});
  }
  for (const auto& [group, seqs] : pooled) {
    t.pooled.by_group[group] = guarded([&] {
      return cohen_kappa(seqs.first, seqs.second, k, seeded(options.cohen, space_key + "/pooled/" + group));
    });
  }
  if (overall.first.empty()) {
    t.pooled.overall = KappaEntry{std::nullopt, "no rater completed both phases"};
  } else {
    t.pooled.overall = guarded([&] {
      return cohen_kappa(overall.first, overall.second, k, seeded(options.cohen, space_key + "/pooled/*"));
    });
  }
  t.pooled.comparisons = compare_groups(t.pooled.by_group);

  // Inter-examiner Fleiss per phase.
  for (Phase p : {Phase::T0, Phase::T1}) {
    FleissPhase fp;
    fp.phase = p;
    std::map<std::string, std::vector<const CaseLabels*>> by_group;
    std::vector<const CaseLabels*> everyone;
    for (const auto& [rater, phases] : data.examiners) {
      if (!complete(rater, p)) continue;
      by_group[group_of(rater)].push_back(&phases.at(p));
      everyone.push_back(&phases.at(p));
    }
    const std::string pk = space_key + "/fleiss/" + std::string(to_string(p)) + "/";
    for (const auto& [group, raters] : by_group) {
      fp.by_group[group] = fleiss_over(raters, data.cases, k, seeded(options.fleiss, pk + group));
    }
    fp.overall = fleiss_over(everyone, data.cases, k, seeded(options.fleiss, pk + "*"));
    fp.comparisons = compare_groups(fp.by_group);
    t.fleiss.push_back(std::move(fp));
  }
  return t;
}

json entry_json(const KappaEntry& e) {
  if (e.result) return to_json(*e.result);
  return json{{"error", e.error}};
}

json comparisons_json(const std::vector<GroupComparison>& cs) {
  json out = json::array();
  for (const auto& c : cs) {
    json j{{"groups", {c.first_group, c.second_group}}};
    if (c.comparison) {
      j["z"] = c.comparison->z;
      j["p_value"] = c.comparison->p_value;
    } else {
      j["error"] = c.error;
    }
    out.push_back(std::move(j));
  }
  return out;
}

std::string cell(const KappaEntry& e) {
  if (!e.result) return "n/a (" + e.error + ")";
  const auto& r = *e.result;
  return fmt::format("{:.2f} ({:.2f}-{:.2f}) {}", r.kappa, r.ci_low, r.ci_high, to_string(r.agreement_label));
}

std::string comparison_line(const GroupComparison& c) {
  if (!c.comparison) return fmt::format("  {} vs {}: n/a ({})", c.first_group, c.second_group, c.error);
  return fmt::format("  {} vs {}: z = {:.3f}, p = {:.3f}", c.first_group, c.second_group,
                     c.comparison->z, c.comparison->p_value);
}

}  // namespace

StudyTables study_tables(std::span<const RatingRecord> records, const Grouping& grouping,
                         const StudyTablesOptions& options) {
  std::map<Space, SpaceData> by_space;
  for (const auto& r : records) {
    auto& d = by_space[r.label.space()];
    d.cases.insert(r.case_id);
    CaseLabels& target = r.phase == Phase::Trainer ? d.trainer : d.examiners[r.rater_id][r.phase];
    auto [it, inserted] = target.emplace(r.case_id, r.label.index());
    if (!inserted && it->second != r.label.index()) {
      throw Error(ErrorKind::ParseError, "conflicting labels for rater '" + r.rater_id + "', case '" +
                                             r.case_id + "'");
    }
  }
  if (!options.case_universe.empty()) {
    const std::set<std::string> universe(options.case_universe.begin(), options.case_universe.end());
    for (auto& [space, d] : by_space) {
      for (const auto& c : d.cases) {
        if (!universe.contains(c)) throw Error(ErrorKind::UnknownCase, "case '" + c + "' is not in the case list");
      }
      d.cases = universe;
    }
  }
  if (options.strict && by_space.empty()) throw Error(ErrorKind::IncompleteStudy, "no rating records");

  StudyTables out;
  for (const auto& [space, data] : by_space) {
    if (options.strict && data.examiners.empty()) {
      throw Error(ErrorKind::IncompleteStudy, "no examiner ratings in " + std::string(geometry::to_string(space)));
    }
    out.spaces.push_back(tables_for(space, data, grouping, options));
  }
  return out;
}

json to_json(const StudyTables& tables) {
  json spaces = json::array();
  for (const auto& t : tables.spaces) {
    json cal = json::array();
    for (const auto& row : t.calibration) {
      cal.push_back({{"rater", row.rater}, {"group", row.group}, {"phase", to_string(row.phase)},
                     {"kappa", entry_json(row.entry)}});
    }
    json intra = json::array();
    for (const auto& row : t.intra) {
      intra.push_back({{"rater", row.rater}, {"group", row.group}, {"kappa", entry_json(row.entry)}});
    }
    json pooled_groups = json::object();
    for (const auto& [g, e] : t.pooled.by_group) pooled_groups[g] = entry_json(e);
    json fleiss = json::array();
    for (const auto& fp : t.fleiss) {
      json groups = json::object();
      for (const auto& [g, e] : fp.by_group) groups[g] = entry_json(e);
      fleiss.push_back({{"phase", to_string(fp.phase)},
                        {"groups", groups},
                        {"overall", entry_json(fp.overall)},
                        {"comparisons", comparisons_json(fp.comparisons)}});
    }
    spaces.push_back({{"space", geometry::to_string(t.space)},
                      {"n_cases", t.n_cases},
                      {"trainer_calibration", cal},
                      {"intra_examiner", intra},
                      {"intra_by_group",
                       {{"groups", pooled_groups},
                        {"overall", entry_json(t.pooled.overall)},
                        {"comparisons", comparisons_json(t.pooled.comparisons)}}},
                      {"inter_examiner", fleiss},
                      {"notes", t.notes}});
  }
  return json{{"spaces", spaces}};
}

std::string render_text(const StudyTables& tables) {
  std::string out;
  auto line = [&](const std::string& s) {
    out += s;
    out += '\n';
  };
  for (const auto& t : tables.spaces) {
    line(fmt::format("== {} sectors, {} cases ==", geometry::class_count(t.space), t.n_cases));
    line("Examiner vs trainer (Cohen):");
    for (const auto& row : t.calibration) {
      line(fmt::format("  {:<12} {:<10} {:<3} {}", row.rater, row.group, to_string(row.phase), cell(row.entry)));
    }
    line("Intra-examiner T0 vs T1 (Cohen):");
    for (const auto& row : t.intra) line(fmt::format("  {:<12} {:<10} {}", row.rater, row.group, cell(row.entry)));
    line("Intra-examiner by group (Cohen, pooled):");
    for (const auto& [g, e] : t.pooled.by_group) line(fmt::format("  {:<23} {}", g, cell(e)));
    line(fmt::format("  {:<23} {}", "overall", cell(t.pooled.overall)));
    for (const auto& c : t.pooled.comparisons) line(comparison_line(c));
    line("Inter-examiner (Fleiss):");
    for (const auto& fp : t.fleiss) {
      for (const auto& [g, e] : fp.by_group) line(fmt::format("  {:<3} {:<19} {}", to_string(fp.phase), g, cell(e)));
      line(fmt::format("  {:<3} {:<19} {}", to_string(fp.phase), "overall", cell(fp.overall)));
      for (const auto& c : fp.comparisons) line(comparison_line(c));
    }
    for (const auto& n : t.notes) line("note: " + n);
  }
  return out;
}

}  // namespace caninelab::agreement
