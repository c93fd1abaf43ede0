// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <chrono>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "caninelab/agreement.hpp"
#include "caninelab/service.hpp"
#include "support.hpp"

using namespace caninelab;
using nlohmann::json;

namespace {

struct Running {
  service::Service svc;
  int port = -1;
  std::thread thread;

  Running(const std::filesystem::path& root, std::optional<std::filesystem::path> assets = {})
      : svc(root, std::move(assets), [] { return std::string("2026-10-18T12:00:00Z"); }) {
    port = svc.bind_any("127.0.0.1");
    REQUIRE(port > 0);
    thread = std::thread([this] { svc.serve(); });
    for (int i = 0; i < 200 && !svc.running(); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  ~Running() {
    svc.stop();
    thread.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }
};

json body_of(const httplib::Result& r) { return json::parse(r->body); }

const std::string kStudy = R"({
  "id": "demo", "space": "THREE", "seed": 3,
  "cases": [{"case": "c1", "asset_ref": "a/c1.png"}, {"case": "c2", "asset_ref": "a/c2.png"},
            {"case": "c3", "asset_ref": "a/c3.png"}, {"case": "c4", "asset_ref": "a/c4.png"}],
  "raters": [{"id": "o1", "group": "O"}, {"id": "g1", "group": "GDP"}],
  "trainer": {"labels": {"c1": "A", "c2": "B", "c3": "C", "c4": "A"}}})";

}  // namespace

TEST_CASE("study API") {
  const auto root = testing::scratch_dir("service");
  Running server(root);
  auto cli = server.client();

  auto created = cli.Post("/studies", kStudy, "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  CHECK(body_of(created)["orderings"]["o1"]["T0"].size() == 4);
  CHECK(cli.Post("/studies", kStudy, "application/json")->status == 409);
  CHECK(cli.Post("/studies", "{not json", "application/json")->status == 400);
  CHECK(cli.Post("/studies", R"({"id": "x", "space": "THREE", "cases": [], "raters": ["r"]})", "application/json")
            ->status == 400);

  auto report = cli.Get("/studies/demo/report");
  REQUIRE(report);
  CHECK(report->status == 200);
  CHECK(body_of(report)["status"]["raters"].size() == 2);
  CHECK(body_of(report)["tables"]["spaces"][0]["trainer_calibration"].empty());
  CHECK(cli.Get("/studies/demo/report?strict=1")->status == 409);

  auto next = cli.Get("/studies/demo/raters/o1/phases/T0/next");
  REQUIRE(next);
  CHECK(next->status == 200);
  const auto item = body_of(next);
  const auto manifest = body_of(cli.Get("/studies/demo"));
  CHECK(item["case"] == manifest["orderings"]["o1"]["T0"][0]);
  CHECK(item["position"] == 1);
  CHECK(item["total"] == 4);
  CHECK(item["asset_ref"] == "a/" + item["case"].get<std::string>() + ".png");

  CHECK(cli.Get("/studies/demo/raters/o1/phases/T1/next")->status == 409);
  CHECK(cli.Get("/studies/nope")->status == 404);
  CHECK(cli.Get("/studies/demo/raters/nobody/phases/T0/next")->status == 404);
  CHECK(cli.Get("/studies/demo/raters/o1/phases/T9/next")->status == 404);

  const std::string path = "/studies/demo/raters/o1/phases/T0/ratings";
  const std::string first_case = item["case"];
  const json rating{{"case", first_case}, {"label", "B"}, {"elapsed_ms", 950}};
  auto posted = cli.Post(path, rating.dump(), "application/json");
  REQUIRE(posted);
  CHECK(posted->status == 201);
  CHECK(body_of(posted)["ts"] == "2026-10-18T12:00:00Z");
  CHECK(cli.Post(path, rating.dump(), "application/json")->status == 200);
  CHECK(cli.Post(path, json{{"case", first_case}, {"label", "C"}}.dump(), "application/json")->status == 409);
  CHECK(cli.Post(path, json{{"case", first_case}, {"label", "IV"}}.dump(), "application/json")->status == 400);
  CHECK(cli.Post(path, json{{"label", "A"}}.dump(), "application/json")->status == 400);
  const std::string wrong = manifest["orderings"]["o1"]["T0"][2];
  CHECK(cli.Post(path, json{{"case", wrong}, {"label", "A"}}.dump(), "application/json")->status == 409);

  auto events = body_of(cli.Get("/studies/demo/events"))["events"];
  CHECK(events.size() == 5);
  CHECK(events.back()["label"] == "B");
  CHECK(events.back()["elapsed_ms"] == 950.0);
}

TEST_CASE("a scripted session completes a phase and the report matches the log") {
  const auto root = testing::scratch_dir("service-session");
  Running server(root);
  auto cli = server.client();
  REQUIRE(cli.Post("/studies", kStudy, "application/json")->status == 201);

  const json trainer{{"c1", "A"}, {"c2", "B"}, {"c3", "C"}, {"c4", "A"}};
  std::vector<std::string> served;
  for (;;) {
    const auto next = body_of(cli.Get("/studies/demo/raters/o1/phases/T0/next"));
    if (next.value("done", false)) break;
    const std::string c = next["case"];
    served.push_back(c);
    const std::string label = c == "c2" ? "A" : trainer[c].get<std::string>();
    REQUIRE(cli.Post("/studies/demo/raters/o1/phases/T0/ratings", json{{"case", c}, {"label", label}}.dump(),
                     "application/json")
                ->status == 201);
  }
  CHECK(served.size() == 4);
  const auto status = body_of(cli.Get("/studies/demo"))["status"];
  CHECK(status["raters"][0]["T0"]["state"] == "COMPLETE");
  CHECK(cli.Get("/studies/demo/raters/o1/phases/T1/next")->status == 200);

  std::vector<agreement::RatingRecord> log;
  const auto events = body_of(cli.Get("/studies/demo/events"));
  for (const auto& e : events["events"]) log.push_back(agreement::rating_from_json(e));
  std::vector<int> rater, truth;
  for (const char* c : {"c1", "c2", "c3", "c4"}) {
    for (const auto& r : log) {
      if (r.case_id != c) continue;
      (r.phase == agreement::Phase::Trainer ? truth : rater).push_back(r.label.index());
    }
  }
  const auto direct = agreement::cohen_kappa(rater, truth, 3);
  const auto report = body_of(cli.Get("/studies/demo/report"));
  CHECK(report["tables"]["spaces"][0]["trainer_calibration"][0]["kappa"]["kappa"].get<double>() == direct.kappa);

  // Replay equivalence: a fresh server over the same directory answers identically.
  const auto manifest = body_of(cli.Get("/studies/demo"));
  server.svc.stop();
  Running second(root);
  auto cli2 = second.client();
  CHECK(body_of(cli2.Get("/studies/demo/report")) == report);
  CHECK(body_of(cli2.Get("/studies/demo")) == manifest);
}

TEST_CASE("static assets and busy ports") {
  const auto root = testing::scratch_dir("service-static");
  const auto assets = testing::scratch_dir("service-assets");
  std::ofstream(assets / "index.html") << "<html>ok</html>";
  Running server(root, assets);
  auto cli = server.client();
  auto page = cli.Get("/index.html");
  REQUIRE(page);
  CHECK(page->status == 200);
  CHECK(page->body == "<html>ok</html>");

  service::Service other(root);
  CHECK_FALSE(other.bind("127.0.0.1", server.port));
}
