// SPDX-License-Identifier: Apache-2.0
#include "caninelab/agreement.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <thread>

#include <boost/math/distributions/normal.hpp>
#include <nlohmann/json.hpp>

#include "caninelab/error.hpp"
#include "caninelab/io.hpp"
#include "caninelab/random.hpp"

namespace caninelab::agreement {

using nlohmann::json;

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::T0: return "T0";
    case Phase::T1: return "T1";
    case Phase::Trainer: return "TRAINER";
  }
  return "?";
}

Phase parse_phase(std::string_view text) {
  if (text == "T0") return Phase::T0;
  if (text == "T1") return Phase::T1;
  if (text == "TRAINER") return Phase::Trainer;
  throw Error(ErrorKind::ParseError, "phase must be T0, T1 or TRAINER, got '" + std::string(text) + "'");
}

json to_json(const RatingRecord& r) {
  json j{{"study", r.study_id}, {"rater", r.rater_id}, {"phase", to_string(r.phase)},
         {"case", r.case_id},   {"label", r.label.name()}, {"ts", r.ts}};
  if (r.elapsed_ms) j["elapsed_ms"] = *r.elapsed_ms;
  return j;
}

RatingRecord rating_from_json(const json& j) {
  try {
    RatingRecord r{
        .study_id = j.at("study").get<std::string>(),
        .rater_id = j.at("rater").get<std::string>(),
        .phase = parse_phase(j.at("phase").get<std::string>()),
        .case_id = j.at("case").get<std::string>(),
        .label = SectorLabel::parse(j.at("label").get<std::string>()),
        .ts = j.value("ts", ""),
        .elapsed_ms = std::nullopt,
    };
    if (j.contains("elapsed_ms") && j["elapsed_ms"].is_number()) {
      r.elapsed_ms = j["elapsed_ms"].get<double>();
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::ParseError, e.what());
  }
}

std::vector<RatingRecord> parse_ratings_jsonl(std::string_view text) {
  std::vector<RatingRecord> out;
  std::map<std::tuple<std::string, std::string, Phase, std::string>, std::size_t> seen;
  const auto lines = io::split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].find_first_not_of(" \t") == std::string::npos) continue;
    RatingRecord r;
    try {
      r = rating_from_json(json::parse(lines[i]));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(i + 1) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorKind::ParseError, "line " + std::to_string(i + 1) + ": " + e.message());
    }
    auto key = std::make_tuple(r.study_id, r.rater_id, r.phase, r.case_id);
    if (auto it = seen.find(key); it != seen.end()) {
      if (!(out[it->second].label == r.label)) {
        throw Error(ErrorKind::ParseError, "line " + std::to_string(i + 1) +
                                               ": conflicting rating for case '" + r.case_id + "'");
      }
      continue;
    }
    seen.emplace(std::move(key), out.size());
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string_view to_string(AgreementLabel label) {
  switch (label) {
    case AgreementLabel::None: return "no agreement";
    case AgreementLabel::Slight: return "slight";
    case AgreementLabel::Fair: return "fair";
    case AgreementLabel::Moderate: return "moderate";
    case AgreementLabel::Substantial: return "substantial";
    case AgreementLabel::AlmostPerfect: return "almost perfect";
    case AgreementLabel::Perfect: return "perfect";
  }
  return "?";
}

AgreementLabel label_agreement(double kappa) {
  if (kappa >= 1.0) return AgreementLabel::Perfect;
  if (kappa < 0.01) return AgreementLabel::None;
  if (kappa <= 0.20) return AgreementLabel::Slight;
  if (kappa <= 0.40) return AgreementLabel::Fair;
  if (kappa <= 0.60) return AgreementLabel::Moderate;
  if (kappa <= 0.80) return AgreementLabel::Substantial;
  return AgreementLabel::AlmostPerfect;
}

std::string_view to_string(KappaMethod m) { return m == KappaMethod::Cohen ? "cohen" : "fleiss"; }
std::string_view to_string(CiMethod m) { return m == CiMethod::Analytic ? "analytic" : "bootstrap"; }

json to_json(const KappaResult& r) {
  return json{{"kappa", r.kappa},
              {"se", r.se},
              {"ci", {r.ci_low, r.ci_high}},
              {"n_items", r.n_items},
              {"agreement", to_string(r.agreement_label)},
              {"method", to_string(r.method)},
              {"ci_method", to_string(r.ci_method)},
              {"p_observed", r.p_observed},
              {"p_expected", r.p_expected}};
}

double z_for_level(double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw Error(ErrorKind::InvalidParameter, "confidence level must lie in (0, 1)");
  }
  const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, 0.5 + level / 2.0);
}

namespace {

struct PointEstimate {
  double kappa;
  double p_observed;
  double p_expected;
};

// Cohen's kappa over item indices; integer arithmetic keeps exact cases exact.
std::optional<PointEstimate> cohen_point(std::span<const int> a, std::span<const int> b, int k,
                                         std::span<const std::size_t> items) {
  std::vector<std::int64_t> ra(static_cast<std::size_t>(k)), cb(static_cast<std::size_t>(k));
  std::int64_t agree = 0;
  for (auto i : items) {
    ++ra[static_cast<std::size_t>(a[i])];
    ++cb[static_cast<std::size_t>(b[i])];
    agree += a[i] == b[i];
  }
  const auto n = static_cast<std::int64_t>(items.size());
  __int128 chance = 0;
  for (int c = 0; c < k; ++c) chance += static_cast<__int128>(ra[c]) * cb[c];
  const __int128 n2 = static_cast<__int128>(n) * n;
  if (chance == n2) return std::nullopt;
  const __int128 num = static_cast<__int128>(agree) * n - chance;
  const __int128 den = n2 - chance;
  return PointEstimate{static_cast<double>(num) / static_cast<double>(den),
                       static_cast<double>(agree) / static_cast<double>(n),
                       static_cast<double>(chance) / static_cast<double>(n2)};
}

std::optional<PointEstimate> fleiss_point(const std::vector<std::vector<int>>& counts, int raters,
                                          std::span<const std::size_t> items) {
  const std::size_t k = counts.front().size();
  std::vector<std::int64_t> column(k);
  __int128 squares = 0;
  for (auto i : items) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::int64_t c = counts[i][j];
      column[j] += c;
      squares += static_cast<__int128>(c) * c;
    }
  }
  const auto n = static_cast<std::int64_t>(items.size());
  const std::int64_t r = raters;
  const __int128 total = static_cast<__int128>(n) * r;  // N
  const __int128 agree = squares - total;               // sum_i (sum_j n_ij^2 - r)
  __int128 chance = 0;                                  // sum_j c_j^2
  for (auto c : column) chance += static_cast<__int128>(c) * c;
  if (chance == total * total) return std::nullopt;
  // kappa = (A*N - B*(r-1)) / ((r-1)(N^2 - B))
  const __int128 num = agree * total - chance * (r - 1);
  const __int128 den = static_cast<__int128>(r - 1) * (total * total - chance);
  return PointEstimate{static_cast<double>(num) / static_cast<double>(den),
                       static_cast<double>(agree) / static_cast<double>(total * (r - 1)),
                       static_cast<double>(chance) / static_cast<double>(total * total)};
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

template <typename Statistic>
void apply_bootstrap(KappaResult& result, std::size_t n_items, const BootstrapOptions& opts,
                     Statistic&& statistic) {
  if (opts.replicates < 2) throw Error(ErrorKind::InvalidParameter, "bootstrap needs >= 2 replicates");
  const auto b = static_cast<std::size_t>(opts.replicates);
  std::vector<std::optional<double>> values(b);
  auto run = [&](unsigned worker, unsigned stride) {
    std::vector<std::size_t> items(n_items);
    for (std::size_t rep = worker; rep < b; rep += stride) {
      Rng rng(derive_seed(opts.seed, rep));
      for (auto& it : items) it = static_cast<std::size_t>(rng.below(n_items));
      if (auto est = statistic(std::span<const std::size_t>(items))) values[rep] = est->kappa;
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(opts.workers, static_cast<unsigned>(b)));
  if (workers == 1) {
    run(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run, w, workers);
  }
  std::vector<double> kept;
  kept.reserve(b);
  for (const auto& v : values)
    if (v) kept.push_back(*v);
  result.ci_method = CiMethod::Bootstrap;
  result.dropped_replicates = b - kept.size();
  if (kept.size() < 2) {
    result.se = 0.0;
    result.ci_low = result.ci_high = result.kappa;
    return;
  }
  const double mean = std::accumulate(kept.begin(), kept.end(), 0.0) / static_cast<double>(kept.size());
  double ss = 0.0;
  for (double v : kept) ss += (v - mean) * (v - mean);
  result.se = std::sqrt(ss / static_cast<double>(kept.size() - 1));
  std::sort(kept.begin(), kept.end());
  const double tail = (1.0 - opts.level) / 2.0;
  result.ci_low = quantile_sorted(kept, tail);
  result.ci_high = quantile_sorted(kept, 1.0 - tail);
}

void set_analytic_ci(KappaResult& r, double level) {
  const double z = z_for_level(level);
  r.ci_method = CiMethod::Analytic;
  r.ci_low = std::max(-1.0, r.kappa - z * r.se);
  r.ci_high = std::min(1.0, r.kappa + z * r.se);
}

std::vector<std::size_t> all_items(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace

KappaResult cohen_kappa(std::span<const int> rater_a, std::span<const int> rater_b, int k,
                        const KappaOptions& options) {
  if (rater_a.size() != rater_b.size()) {
    throw Error(ErrorKind::LengthMismatch, "rater sequences differ in length");
  }
  if (rater_a.size() < 2) throw Error(ErrorKind::EmptyInput, "Cohen's kappa needs at least 2 items");
  if (k < 1) throw Error(ErrorKind::InvalidParameter, "category count must be positive");
  for (std::size_t i = 0; i < rater_a.size(); ++i) {
    if (rater_a[i] < 0 || rater_a[i] >= k || rater_b[i] < 0 || rater_b[i] >= k) {
      throw Error(ErrorKind::LabelOutOfRange, "label outside 0.." + std::to_string(k - 1));
    }
  }
  const auto items = all_items(rater_a.size());
  const auto est = cohen_point(rater_a, rater_b, k, items);
  if (!est) throw Error(ErrorKind::ChanceDegenerate, "expected agreement is 1; kappa undefined");

  KappaResult r;
  r.method = KappaMethod::Cohen;
  r.kappa = est->kappa;
  r.p_observed = est->p_observed;
  r.p_expected = est->p_expected;
  r.n_items = rater_a.size();
  r.agreement_label = label_agreement(r.kappa);
  const double n = static_cast<double>(r.n_items);
  const double q = 1.0 - r.p_expected;
  r.se = std::sqrt(r.p_observed * (1.0 - r.p_observed) / (n * q * q));
  if (options.ci == CiMethod::Analytic) {
    set_analytic_ci(r, options.bootstrap.level);
  } else {
    apply_bootstrap(r, r.n_items, options.bootstrap, [&](std::span<const std::size_t> idx) {
      return cohen_point(rater_a, rater_b, k, idx);
    });
  }
  return r;
}

KappaResult cohen_kappa_from_table(const std::vector<std::vector<long>>& table,
                                   const KappaOptions& options) {
  const auto k = table.size();
  std::vector<int> a, b;
  for (std::size_t i = 0; i < k; ++i) {
    if (table[i].size() != k) throw Error(ErrorKind::ShapeMismatch, "pair table must be square");
    for (std::size_t j = 0; j < k; ++j) {
      if (table[i][j] < 0) throw Error(ErrorKind::InvalidParameter, "negative pair count");
      a.insert(a.end(), static_cast<std::size_t>(table[i][j]), static_cast<int>(i));
      b.insert(b.end(), static_cast<std::size_t>(table[i][j]), static_cast<int>(j));
    }
  }
  return cohen_kappa(a, b, static_cast<int>(k), options);
}

KappaResult fleiss_kappa(const std::vector<std::vector<int>>& counts, int raters,
                         const KappaOptions& options) {
  if (counts.size() < 2) throw Error(ErrorKind::EmptyInput, "Fleiss' kappa needs at least 2 items");
  if (raters < 2) throw Error(ErrorKind::InvalidParameter, "Fleiss' kappa needs at least 2 raters");
  const std::size_t k = counts.front().size();
  if (k == 0) throw Error(ErrorKind::InvalidParameter, "no categories");
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i].size() != k) throw Error(ErrorKind::ShapeMismatch, "ragged count matrix");
    long sum = 0;
    for (int c : counts[i]) {
      if (c < 0) throw Error(ErrorKind::InvalidParameter, "negative count");
      sum += c;
    }
    if (sum != raters) {
      throw Error(ErrorKind::UnequalRaterCount, "item " + std::to_string(i) + " has " +
                                                    std::to_string(sum) + " ratings, expected " +
                                                    std::to_string(raters));
    }
  }
  const auto items = all_items(counts.size());
  const auto est = fleiss_point(counts, raters, items);
  if (!est) throw Error(ErrorKind::ChanceDegenerate, "expected agreement is 1; kappa undefined");

  KappaResult r;
  r.method = KappaMethod::Fleiss;
  r.kappa = est->kappa;
  r.p_observed = est->p_observed;
  r.p_expected = est->p_expected;
  r.n_items = counts.size();
  r.agreement_label = label_agreement(r.kappa);

  const double n = static_cast<double>(r.n_items);
  const double m = raters;
  std::vector<double> p(k, 0.0);
  for (const auto& row : counts)
    for (std::size_t j = 0; j < k; ++j) p[j] += row[j];
  double s = 0.0, t = 0.0;
  for (auto& pj : p) {
    pj /= n * m;
    const double qj = 1.0 - pj;
    s += pj * qj;
    t += pj * qj * (qj - pj);
  }
  r.se = std::sqrt(2.0 / (n * m * (m - 1.0))) * std::sqrt(std::max(0.0, s * s - t)) / s;

  if (options.ci == CiMethod::Analytic) {
    set_analytic_ci(r, options.bootstrap.level);
  } else {
    apply_bootstrap(r, r.n_items, options.bootstrap, [&](std::span<const std::size_t> idx) {
      return fleiss_point(counts, raters, idx);
    });
  }
  return r;
}

json to_json(const KappaComparison& c) {
  return json{{"z", c.z}, {"p_value", c.p_value}, {"first", to_json(c.first)},
              {"second", to_json(c.second)}};
}

KappaComparison compare_kappas(const KappaResult& first, const KappaResult& second) {
  if (!(first.se > 0.0) || !(second.se > 0.0)) {
    throw Error(ErrorKind::ZeroVariance, "both kappas need a positive standard error");
  }
  KappaComparison c{.z = 0.0, .p_value = 1.0, .first = first, .second = second};
  c.z = (first.kappa - second.kappa) / std::sqrt(first.se * first.se + second.se * second.se);
  c.p_value = std::erfc(std::abs(c.z) / std::numbers::sqrt2);
  return c;
}

std::size_t kappa_sample_size(double ci_level, double margin, double prevalence, int raters,
                              int categories) {
  if (!(margin > 0.0 && margin < 1.0)) throw Error(ErrorKind::InvalidParameter, "margin must lie in (0, 1)");
  if (!(prevalence > 0.0 && prevalence < 1.0)) {
    throw Error(ErrorKind::InvalidParameter, "prevalence must lie in (0, 1)");
  }
  if (raters != 2 || categories != 2) {
    throw Error(ErrorKind::InvalidParameter, "only two raters and two categories are supported");
  }
  const double z = z_for_level(ci_level);
  constexpr double worst_po = 0.5;
  const double pe = prevalence * prevalence + (1.0 - prevalence) * (1.0 - prevalence);
  const double n = z * z * worst_po * (1.0 - worst_po) / (margin * margin * (1.0 - pe) * (1.0 - pe));
  return static_cast<std::size_t>(std::ceil(n - 1e-9));
}

Grouping parse_grouping(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::ParseError, e.what());
  }
  if (!doc.is_object()) throw Error(ErrorKind::ParseError, "grouping must be an object rater -> group");
  Grouping g;
  for (const auto& [rater, group] : doc.items()) {
    if (!group.is_string()) throw Error(ErrorKind::ParseError, "group of '" + rater + "' is not a string");
    g.emplace(rater, group.get<std::string>());
  }
  return g;
}

}  // namespace caninelab::agreement
