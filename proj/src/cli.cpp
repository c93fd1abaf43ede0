// SPDX-License-Identifier: Apache-2.0
#include "caninelab/cli.hpp"

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "caninelab/agreement.hpp"
#include "caninelab/geometry.hpp"
#include "caninelab/io.hpp"
#include "caninelab/metrics.hpp"
#include "caninelab/random.hpp"
#include "caninelab/service.hpp"

namespace caninelab::cli {

using nlohmann::json;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidConfig:
    case ErrorKind::InvalidTemperature:
    case ErrorKind::InvalidParameter:
    case ErrorKind::InvalidProportions:
    case ErrorKind::InvalidMergeMap:
      return kExitConfig;
    case ErrorKind::NonFiniteLoss:
    case ErrorKind::ChanceDegenerate:
    case ErrorKind::ZeroVariance:
    case ErrorKind::AmbiguousGeometry:
    case ErrorKind::ShapeMismatch:
      return kExitRuntime;
    default:
      return kExitInput;
  }
}

namespace {

const std::vector<std::string> kThreeNames{"A", "B", "C"};

json parse_json_file(const std::string& path, ErrorKind kind) {
  try {
    return json::parse(io::read_text_file(path));
  } catch (const json::exception& e) {
    throw Error(kind, "'" + path + "': " + e.what());
  }
}

void emit(const std::string& out_path, const std::string& content, std::ostream& out) {
  if (out_path.empty()) {
    out << content;
  } else {
    io::write_text_file(out_path, content);
  }
}

json evaluation(const distill::TrainedModel& m, const distill::Dataset& validation) {
  std::vector<int> truth;
  for (const auto& s : validation) truth.push_back(s.label);
  const auto pred = distill::predict_labels(m, validation);
  const auto cm = metrics::confusion(truth, pred, distill::kClasses, kThreeNames);
  return json{{"confusion", metrics::to_json(cm)}, {"metrics", metrics::to_json(metrics::evaluate(cm))}};
}

}  // namespace

Artifacts distill_pipeline(const distill::Dataset& data, const distill::DistillConfig& config, bool stratified) {
  config.validate();
  const distill::SplitSpec split_spec{0.8, stratified, derive_seed(config.seed, 1)};
  const auto [train, validation] = distill::split(data, split_spec);

  const auto teacher = distill::train_teacher(train, validation, config);
  const auto student = distill::distill_student(teacher, train, validation, config);

  std::string log = json{{"event", "split"},
                         {"train", train.size()},
                         {"validation", validation.size()},
                         {"stratified", stratified},
                         {"seed", config.seed}}
                        .dump() +
                    '\n';
  for (const auto* m : {&teacher, &student}) {
    for (const auto& e : m->log) {
      log += json{{"event", "epoch"},
                  {"role", distill::to_string(m->role)},
                  {"epoch", e.epoch},
                  {"train_loss", e.train_loss},
                  {"val_accuracy", e.val_accuracy}}
                 .dump() +
             '\n';
    }
    log += json{{"event", "best"}, {"role", distill::to_string(m->role)}, {"epoch", m->best_epoch}}.dump() + '\n';
  }

  std::string predictions;
  const auto student_pred = distill::predict_labels(student, validation);
  for (std::size_t i = 0; i < validation.size(); ++i) {
    predictions += json{{"case", validation[i].case_id},
                        {"true", kThreeNames[static_cast<std::size_t>(validation[i].label)]},
                        {"pred", kThreeNames[static_cast<std::size_t>(student_pred[i])]}}
                       .dump() +
                   '\n';
  }

  const json report{{"config", distill::to_json(config)},
                    {"split", {{"train", train.size()}, {"validation", validation.size()}}},
                    {"teacher", evaluation(teacher, validation)},
                    {"student", evaluation(student, validation)}};

  return {{"teacher.json", distill::model_archive(teacher, config).dump(2) + '\n'},
          {"student.json", distill::model_archive(student, config).dump(2) + '\n'},
          {"training_log.jsonl", log},
          {"predictions.jsonl", predictions},
          {"report.json", report.dump(2) + '\n'}};
}

namespace {

std::atomic<bool> g_stop_requested{false};

extern "C" void on_stop_signal(int) { g_stop_requested = true; }

struct Options {
  std::string in;
  std::string out;
  std::string space = "all";
  std::string preset = "mesial-risk";
  std::string config;
  std::string reference;
  std::string static_dir;
  std::string host = "127.0.0.1";
  std::uint64_t seed = 0;
  bool seed_given = false;
  int port = 8080;
  int replicates = 1000;
  bool lenient = false;
  bool text = false;
  bool stratified = false;
};

int cmd_classify(const Options& o, std::ostream& out, std::ostream& err) {
  const auto radiograph = geometry::load_annotations(o.in);
  const auto map = geometry::MergeMap3::preset(o.preset);
  std::vector<geometry::Space> spaces;
  if (o.space == "all") {
    spaces = {geometry::Space::Five, geometry::Space::Four, geometry::Space::Three};
  } else {
    spaces = {geometry::parse_space(o.space)};
  }
  std::string lines;
  std::size_t failed = 0;
  for (const auto& c : radiograph.cases) {
    try {
      const auto boundaries = geometry::build_boundaries(c);
      if (!geometry::side_consistent(c, boundaries)) {
        err << "warning: case '" << c.case_id << "': side tag " << geometry::to_string(c.side)
            << " disagrees with the incisor geometry\n";
      }
      const auto five = geometry::classify5(c.canine_point, boundaries);
      for (auto space : spaces) {
        const auto label = space == geometry::Space::Five   ? five
                           : space == geometry::Space::Four ? geometry::merge_to4(five)
                                                            : geometry::merge_to3(five, map);
        lines += json{{"radiograph", radiograph.radiograph_id},
                      {"case", c.case_id},
                      {"space", geometry::to_string(space)},
                      {"sector", label.name()}}
                     .dump() +
                 '\n';
      }
    } catch (const Error& e) {
      ++failed;
      err << "error: case '" << c.case_id << "': " << e.what() << '\n';
      lines += json{{"radiograph", radiograph.radiograph_id},
                    {"case", c.case_id},
                    {"error", to_string(e.kind())},
                    {"message", e.message()}}
                   .dump() +
               '\n';
    }
  }
  emit(o.out, lines, out);
  if (failed > 0) err << failed << " of " << radiograph.cases.size() << " cases could not be classified\n";
  return kExitOk;
}

int cmd_kappa(const Options& o, std::ostream& out, std::ostream&) {
  const auto records = agreement::parse_ratings_jsonl(io::read_text_file(o.in));
  agreement::Grouping grouping;
  if (!o.config.empty()) grouping = agreement::parse_grouping(io::read_text_file(o.config));
  agreement::StudyTablesOptions options;
  options.strict = !o.lenient;
  options.fleiss.bootstrap.seed = o.seed;
  options.fleiss.bootstrap.replicates = o.replicates;
  const auto tables = agreement::study_tables(records, grouping, options);
  emit(o.out, o.text ? agreement::render_text(tables) : agreement::to_json(tables).dump(2) + '\n', out);
  return kExitOk;
}

int cmd_metrics(const Options& o, std::ostream& out, std::ostream&) {
  const auto predictions = metrics::parse_predictions_jsonl(io::read_text_file(o.in));
  const auto cm = metrics::confusion_from_predictions(predictions);
  const auto report = metrics::evaluate(cm);
  json discrepancies = json::array();
  std::string text = metrics::render_text(report);
  if (!o.reference.empty()) {
    const auto reference = metrics::parse_reference(parse_json_file(o.reference, ErrorKind::ParseError));
    for (const auto& d : metrics::compare_to_reference(report, reference)) {
      discrepancies.push_back(metrics::to_json(d));
      text += "discrepancy: " + d.explanation + '\n';
    }
  }
  if (o.text) {
    emit(o.out, text, out);
  } else {
    const json j{{"confusion", metrics::to_json(cm)},
                 {"metrics", metrics::to_json(report)},
                 {"discrepancies", discrepancies}};
    emit(o.out, j.dump(2) + '\n', out);
  }
  return kExitOk;
}

int cmd_distill(const Options& o, std::ostream& out, std::ostream&) {
  distill::DistillConfig config;
  if (!o.config.empty()) config = distill::distill_config_from_json(parse_json_file(o.config, ErrorKind::InvalidConfig));
  if (o.seed_given) config.seed = o.seed;
  config.validate();
  const auto data = distill::parse_manifest(io::read_text_file(o.in));
  const auto artifacts = distill_pipeline(data, config, o.stratified);
  if (o.out.empty()) {
    out << artifacts.at("report.json");
    return kExitOk;
  }
  std::filesystem::create_directories(o.out);
  for (const auto& [name, content] : artifacts) io::write_text_file((std::filesystem::path(o.out) / name).string(), content);
  return kExitOk;
}

int cmd_synth(const Options& o, std::ostream& out, std::ostream&) {
  distill::SynthConfig config;
  if (!o.config.empty()) config = distill::synth_config_from_json(parse_json_file(o.config, ErrorKind::InvalidConfig));
  if (o.seed_given) config.seed = o.seed;
  config.validate();
  const auto data = distill::synth_generate(config);
  emit(o.out, distill::write_manifest(data.samples), out);
  return kExitOk;
}

int cmd_serve(const Options& o, std::ostream& out, std::ostream& err) {
  std::optional<std::filesystem::path> assets;
  if (!o.static_dir.empty()) assets = o.static_dir;
  service::Service svc(o.in, assets);
  if (!svc.bind(o.host, o.port)) {
    err << "error: cannot listen on " << o.host << ':' << o.port << '\n';
    return kExitRuntime;
  }
  g_stop_requested = false;
  std::signal(SIGINT, on_stop_signal);
  std::signal(SIGTERM, on_stop_signal);
  std::atomic<bool> finished{false};
  std::thread watcher([&] {
    while (!finished) {
      if (g_stop_requested) {
        svc.stop();
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  });
  out << "serving " << o.in << " on http://" << o.host << ':' << o.port << std::endl;
  svc.serve();
  finished = true;
  watcher.join();
  std::signal(SIGINT, SIG_DFL);
  std::signal(SIGTERM, SIG_DFL);
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Canine sector classification, rater agreement, metrics and distillation", "canine-lab"};
  app.require_subcommand(1);
  Options o;

  auto* classify = app.add_subcommand("classify", "Sector labels from landmark annotations");
  classify->add_option("--in", o.in, "Annotation JSON file")->required();
  classify->add_option("--out", o.out, "Output JSON-lines file (default stdout)");
  classify->add_option("--space", o.space, "5, 4, 3 or all")->capture_default_str();
  classify->add_option("--preset", o.preset, "Three-class merge preset")->capture_default_str();

  auto* kappa = app.add_subcommand("kappa", "Agreement tables from a ratings log");
  kappa->add_option("--in", o.in, "Ratings JSON-lines file")->required();
  kappa->add_option("--config,--groups", o.config, "Grouping JSON file (rater -> group)");
  kappa->add_option("--out", o.out, "Output file (default stdout)");
  kappa->add_option("--seed", o.seed, "Bootstrap seed");
  kappa->add_option("--replicates", o.replicates, "Bootstrap replicates")->capture_default_str();
  kappa->add_flag("--lenient", o.lenient, "Use complete rater-phases only instead of failing");
  kappa->add_flag("--text", o.text, "Plain-text tables instead of JSON");

  auto* metrics_cmd = app.add_subcommand("metrics", "Evaluation report from predictions");
  metrics_cmd->add_option("--in", o.in, "Predictions JSON-lines file")->required();
  metrics_cmd->add_option("--reference", o.reference, "Reported values to check against");
  metrics_cmd->add_option("--out", o.out, "Output file (default stdout)");
  metrics_cmd->add_flag("--text", o.text, "Plain-text report instead of JSON");

  auto* distill_cmd = app.add_subcommand("distill", "Train teacher and student from a manifest");
  distill_cmd->add_option("--in", o.in, "Manifest CSV")->required();
  distill_cmd->add_option("--config", o.config, "Training config JSON");
  distill_cmd->add_option("--out", o.out, "Output directory (default: report to stdout)");
  distill_cmd->add_option("--seed", o.seed, "Seed (overrides the config)")->each([&](const std::string&) {
    o.seed_given = true;
  });
  distill_cmd->add_flag("--stratified", o.stratified, "Stratify the train/validation split");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic manifest");
  synth->add_option("--config", o.config, "Generator config JSON");
  synth->add_option("--out", o.out, "Manifest CSV (default stdout)");
  synth->add_option("--seed", o.seed, "Seed (overrides the config)")->each([&](const std::string&) {
    o.seed_given = true;
  });

  auto* serve = app.add_subcommand("serve", "Serve the study API");
  serve->add_option("--in", o.in, "Studies directory")->required();
  serve->add_option("--port", o.port, "TCP port")->capture_default_str();
  serve->add_option("--host", o.host, "Bind address")->capture_default_str();
  serve->add_option("--static", o.static_dir, "Directory of static UI assets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    app.exit(e, out, err);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    if (*classify) return cmd_classify(o, out, err);
    if (*kappa) return cmd_kappa(o, out, err);
    if (*metrics_cmd) return cmd_metrics(o, out, err);
    if (*distill_cmd) return cmd_distill(o, out, err);
    if (*synth) return cmd_synth(o, out, err);
    if (*serve) return cmd_serve(o, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace caninelab::cli
