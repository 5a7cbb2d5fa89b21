#include <fstream>
#include <set>
#include <thread>

#include "apc/error.hpp"
#include "apc/http.hpp"
#include "apc/rng.hpp"
#include "apc/service.hpp"
#include "doctest.h"
#include "fixtures.hpp"
#include "httplib.h"

using namespace apc;
using nlohmann::json;

namespace {

ServiceOptions options(const std::filesystem::path& dir) {
  ServiceOptions o;
  o.data_dir = dir;
  o.manifests = {fixture::manifest()};
  return o;
}

std::string create(Service& svc, const std::string& policy, std::uint64_t seed) {
  const auto r = svc.create_session(fixture::create_body(policy, seed), std::nullopt);
  REQUIRE(r.status == 201);
  return r.body["session_id"].get<std::string>();
}

std::string choice_body(const char* c) { return json{{"choice", c}}.dump(); }

// Simulated observer answering through the API; true quality q.
void answer(Service& svc, const std::string& id, Rng& rng, double q, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = svc.next_trial(id);
    REQUIRE(t.status == 200);
    bool ref_first = false;
    const int level = fixture::shown_level(t.body, &ref_first);
    const bool prefer_ref =
        rng.bernoulli(prefer_reference_prob(PsychometricModel{q, 2.5, 0.02}, level));
    const char* c = prefer_ref == ref_first ? "first" : "second";
    const auto r = svc.post_response(id, std::to_string(t.body["trial_index"].get<std::size_t>()),
                                     choice_body(c));
    REQUIRE(r.status == 200);
  }
}

std::vector<SessionEvent> events_of(Service& svc, const std::string& id) {
  return read_event_log(svc.log_path(id));
}

}  // namespace

TEST_CASE("create session") {
  fixture::TempDir dir("svc");
  Service svc(options(dir.path()));
  const auto r = svc.create_session(fixture::create_body("bald", 1), std::nullopt);
  CHECK(r.status == 201);
  CHECK(r.body["total_trials"] == 60);
  const auto id = r.body["session_id"].get<std::string>();
  const auto ev = events_of(svc, id);
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].kind == EventKind::Created);
  CHECK(ev[0].seq == 0);
}

TEST_CASE("missing clip is a field error") {
  fixture::TempDir dir("svc");
  Service svc(options(dir.path()));
  auto cfg = fixture::config("bald", 1);
  cfg["clips"][3] = "nowhere";
  const auto r = svc.create_session(json{{"config", cfg}}.dump(), std::nullopt);
  CHECK(r.status == 422);
  REQUIRE(r.body["fields"].size() == 1);
  CHECK(r.body["fields"][0]["field"] == "config.clips[3]");
  CHECK(r.body["fields"][0]["message"].get<std::string>().find("nowhere") != std::string::npos);

  auto bad = fixture::config("sometimes", 1);
  bad["lapse"] = "high";
  const auto r2 = svc.create_session(json{{"config", bad}}.dump(), std::nullopt);
  CHECK(r2.status == 422);
  CHECK(r2.body["fields"].size() == 2);
  CHECK(svc.create_session("{not json", std::nullopt).status == 400);
  CHECK(svc.session_ids().empty());
}

TEST_CASE("idempotent creation") {
  fixture::TempDir dir("svc");
  Service svc(options(dir.path()));
  const auto body = fixture::create_body("bald", 9);
  const auto a = svc.create_session(body, std::string("key-1"));
  const auto b = svc.create_session(body, std::string("key-1"));
  CHECK(a.status == 201);
  CHECK(b.status == 201);
  CHECK(a.body == b.body);
  CHECK(svc.session_ids().size() == 1);
  const auto c = svc.create_session(fixture::create_body("bald", 10), std::string("key-1"));
  CHECK(c.status == 409);
  auto with_key = json::parse(body);
  with_key["idempotency_key"] = "key-2";
  const auto d = svc.create_session(with_key.dump(), std::nullopt);
  const auto e = svc.create_session(with_key.dump(), std::nullopt);
  CHECK(d.body["session_id"] == e.body["session_id"]);
  CHECK(svc.session_ids().size() == 2);
}

TEST_CASE("seed is generated when omitted") {
  fixture::TempDir dir("svc");
  Service svc(options(dir.path()));
  auto cfg = fixture::config("bald", 0);
  cfg.erase("seed");
  const auto r = svc.create_session(json{{"config", cfg}}.dump(), std::nullopt);
  REQUIRE(r.status == 201);
  CHECK(r.body["config"]["seed"].is_number_unsigned());
}

TEST_CASE("staircase starts at the top level") {
  fixture::TempDir dir("svc");
  Service svc(options(dir.path()));
  const auto id = create(svc, "staircase", 3);
  const auto t = svc.next_trial(id);
  REQUIRE(t.status == 200);
  CHECK(fixture::shown_level(t.body) == 50);
  const auto ev = events_of(svc, id);
  REQUIRE(ev.size() == 2);
  CHECK(ev[1].kind == EventKind::TrialPlanned);
  CHECK(ev[1].payload["reference_level"] == 50);
}

TEST_CASE("next trial is idempotent and blinded") {
  fixture::TempDir dir("svc");
  Service svc(options(dir.path()));
  const auto id = create(svc, "bald", 4);
  const auto a = svc.next_trial(id);
  const auto b = svc.next_trial(id);
  CHECK(a.body == b.body);
  CHECK(events_of(svc, id).size() == 2);
  std::set<std::string> keys;
  for (const auto& [k, v] : a.body.items()) keys.insert(k);
  CHECK(keys == std::set<std::string>{"trial_index", "first", "second", "progress", "completed",
                                      "total", "status"});
  const auto text = a.body.dump();
  for (const char* leak : {"level\"", "reference", "variant", "order", "clip\""})
    CHECK(text.find(leak) == std::string::npos);
  // first BALD level on the uniform prior
  const int level = fixture::shown_level(a.body);
  CHECK((level == 25 || level == 26));
}

TEST_CASE("response sequencing") {
  fixture::TempDir dir("svc");
  Service svc(options(dir.path()));
  const auto id = create(svc, "bald", 5);
  CHECK(svc.post_response(id, "0", choice_body("first")).status == 409);  // not planned yet
  svc.next_trial(id);
  CHECK(svc.post_response(id, "0", choice_body("third")).status == 422);
  CHECK(svc.post_response(id, "0", "{}").status == 422);
  CHECK(svc.post_response(id, "x", choice_body("first")).status == 422);
  CHECK(svc.post_response(id, "1", choice_body("first")).status == 409);
  const auto ok = svc.post_response(id, "0", choice_body("first"));
  CHECK(ok.status == 200);
  CHECK(ok.body["duplicate"] == false);
  CHECK(ok.body["completed"] == 1);
  const auto again = svc.post_response(id, "0", choice_body("first"));
  CHECK(again.status == 200);
  CHECK(again.body["duplicate"] == true);
  CHECK(svc.post_response(id, "0", choice_body("second")).status == 409);
  CHECK(events_of(svc, id).size() == 3);
  CHECK(svc.next_trial("nope").status == 404);
  CHECK(svc.post_response("nope", "0", choice_body("first")).status == 404);
  CHECK(svc.estimates("../etc").status == 404);
}

TEST_CASE("sixty responses complete the session") {
  fixture::TempDir dir("svc");
  Service svc(options(dir.path()));
  const auto id = create(svc, "staircase", 6);
  Rng rng(1);
  answer(svc, id, rng, 30.0, 60);
  const auto done = svc.next_trial(id);
  CHECK(done.status == 409);
  CHECK(done.body["summary"]["completed_trials"] == 60);
  CHECK(svc.post_response(id, "60", choice_body("first")).status == 409);
  const auto ev = events_of(svc, id);
  CHECK(ev.back().kind == EventKind::Completed);
  std::size_t responses = 0;
  for (const auto& e : ev) responses += e.kind == EventKind::ResponseRecorded;
  CHECK(responses == 60);
  CHECK(svc.status(id).body["status"] == "complete");
}

TEST_CASE("fresh estimates report the prior mean") {
  fixture::TempDir dir("svc");
  Service svc(options(dir.path()));
  const auto id = create(svc, "bald", 7);
  const auto r = svc.estimates(id);
  REQUIRE(r.status == 200);
  REQUIRE(r.body["estimates"].size() == 2);
  for (const auto& e : r.body["estimates"]) {
    CHECK(e["pse"].get<double>() == doctest::Approx(25.5).epsilon(1e-12));
    CHECK(e["n_trials"] == 0);
  }
  const auto st = svc.estimates(create(svc, "staircase", 7));
  CHECK(st.body["estimates"][0]["pse"].is_null());
}

TEST_CASE("end to end recovery of a simulated rater") {
  fixture::TempDir dir("svc");
  Service svc(options(dir.path()));
  int close = 0, total = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto id = create(svc, "bald", seed);
    Rng rng(derive_seed(seed, 77));
    answer(svc, id, rng, 30.0, 60);
    for (const auto& e : svc.estimates(id).body["estimates"]) {
      close += std::abs(e["pse"].get<double>() - 30.0) <= 3.0;
      ++total;
    }
  }
  CHECK(close >= total * 8 / 10);
}

TEST_CASE("restart rebuilds every endpoint's answer") {
  fixture::TempDir dir("svc");
  std::vector<std::string> ids;
  std::vector<std::vector<ApiResponse>> before;
  auto snapshot = [](Service& svc, const std::string& id) {
    std::vector<ApiResponse> out{svc.status(id), svc.estimates(id), svc.next_trial(id),
                                 svc.post_response(id, "0", choice_body("first"))};
    return out;
  };
  {
    Service svc(options(dir.path()));
    Rng rng(2);
    for (const char* policy : {"bald", "staircase", "random"}) {
      const auto id = create(svc, policy, 11);
      answer(svc, id, rng, 22.0, 23);
      svc.next_trial(id);  // leave a planned, unanswered trial
      ids.push_back(id);
      before.push_back(snapshot(svc, id));
    }
    const auto done = create(svc, "bald", 12);
    answer(svc, done, rng, 22.0, 60);
    ids.push_back(done);
    before.push_back(snapshot(svc, done));
  }
  Service again(options(dir.path()));
  CHECK(again.load_errors().empty());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto after = snapshot(again, ids[i]);
    for (std::size_t k = 0; k < after.size(); ++k) {
      CHECK(after[k].status == before[i][k].status);
      CHECK(after[k].body == before[i][k].body);
    }
  }
}

TEST_CASE("continuing after restart equals an uninterrupted session") {
  fixture::TempDir a_dir("svc"), b_dir("svc");
  Rng a_rng(3), b_rng(3);
  std::string a_id;
  {
    Service a(options(a_dir.path()));
    a_id = create(a, "bald", 21);
    answer(a, a_id, a_rng, 35.0, 31);
  }
  Service a(options(a_dir.path()));
  answer(a, a_id, a_rng, 35.0, 29);
  Service b(options(b_dir.path()));
  const auto b_id = create(b, "bald", 21);
  answer(b, b_id, b_rng, 35.0, 60);
  CHECK(a.estimates(a_id).body["estimates"] == b.estimates(b_id).body["estimates"]);
}

TEST_CASE("torn final line is dropped and repaired") {
  fixture::TempDir dir("svc");
  std::string id;
  {
    Service svc(options(dir.path()));
    id = create(svc, "bald", 8);
    Rng rng(4);
    answer(svc, id, rng, 20.0, 5);
    std::ofstream(svc.log_path(id), std::ios::app) << "{\"schema_version\":1,\"sess";
  }
  Service svc(options(dir.path()));
  CHECK(svc.load_errors().empty());
  CHECK(svc.status(id).body["completed"] == 5);
  CHECK(svc.next_trial(id).status == 200);
  CHECK(events_of(svc, id).size() == 12);
}

TEST_CASE("tampered log is refused at startup") {
  fixture::TempDir dir("svc");
  std::string id;
  std::filesystem::path path;
  {
    Service svc(options(dir.path()));
    id = create(svc, "bald", 8);
    Rng rng(4);
    answer(svc, id, rng, 20.0, 5);
    path = svc.log_path(id);
  }
  auto events = read_event_log(path);
  events[5].payload["reference_level"] = events[5].payload["reference_level"].get<int>() + 1;
  {
    std::ofstream out(path, std::ios::trunc);
    for (const auto& e : events) out << to_json_line(e) << '\n';
  }
  try {
    rebuild_session(events);
    FAIL("expected integrity error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Integrity);
    CHECK(std::string(e.what()).find("event 5: trial 2: logged level") == 0);
  }
  Service svc(options(dir.path()));
  CHECK(svc.load_errors().size() == 1);
  CHECK(svc.status(id).status == 404);
}

TEST_CASE("roles") {
  fixture::TempDir dir("svc");
  auto o = options(dir.path());
  o.rater_token = "rater-secret";
  o.experimenter_token = "exp-secret";
  Service svc(o);
  const Role rater = svc.authenticate("rater-secret");
  const Role exp = svc.authenticate("exp-secret");
  const Role anon = svc.authenticate(std::nullopt);
  CHECK(svc.authenticate("guess") == Role::Anonymous);
  CHECK(svc.create_session(fixture::create_body("bald", 1), std::nullopt, rater).status == 403);
  const auto r = svc.create_session(fixture::create_body("bald", 1), std::nullopt, exp);
  REQUIRE(r.status == 201);
  const auto id = r.body["session_id"].get<std::string>();
  CHECK(svc.next_trial(id, anon).status == 401);
  CHECK(svc.next_trial(id, rater).status == 200);
  CHECK(svc.estimates(id, rater).status == 403);
  CHECK(svc.estimates(id, anon).status == 401);
  CHECK(svc.estimates(id, exp).status == 200);
}

TEST_CASE("concurrent sessions and retries") {
  fixture::TempDir dir("svc");
  Service svc(options(dir.path()));
  std::vector<std::string> ids;
  for (int s = 0; s < 8; ++s) ids.push_back(create(svc, s % 2 ? "staircase" : "bald", 100 + s));
  std::vector<std::jthread> workers;
  for (int s = 0; s < 8; ++s) {
    workers.emplace_back([&, s] {
      Rng rng(static_cast<std::uint64_t>(s));
      for (int i = 0; i < 60; ++i) {
        const auto t1 = svc.next_trial(ids[s]);
        const auto t2 = svc.next_trial(ids[s]);
        CHECK(t1.body == t2.body);
        const auto idx = std::to_string(t1.body["trial_index"].get<std::size_t>());
        const char* c = rng.bernoulli(0.5) ? "first" : "second";
        CHECK(svc.post_response(ids[s], idx, choice_body(c)).status == 200);
        CHECK(svc.post_response(ids[s], idx, choice_body(c)).status == 200);
      }
    });
  }
  // Racing readers on one session see one plan and one log entry.
  const auto shared = create(svc, "bald", 999);
  std::vector<std::jthread> readers;
  std::vector<json> seen(6);
  for (int k = 0; k < 6; ++k) readers.emplace_back([&, k] { seen[k] = svc.next_trial(shared).body; });
  readers.clear();
  workers.clear();
  for (const auto& s : seen) CHECK(s == seen[0]);
  CHECK(events_of(svc, shared).size() == 2);
  for (const auto& id : ids) {
    CHECK(svc.status(id).body["status"] == "complete");
    CHECK(events_of(svc, id).size() == 1 + 60 + 60 + 1);
  }
}

TEST_CASE("http routes") {
  fixture::TempDir dir("http");
  auto o = options(dir.path());
  o.experimenter_token = "exp";
  Service svc(o);
  HttpServer server(svc);
  const int port = server.bind("127.0.0.1", 0);
  std::jthread loop([&] { server.listen(); });
  httplib::Client cli("127.0.0.1", port);
  cli.set_connection_timeout(5);
  const httplib::Headers exp{{"Authorization", "Bearer exp"}, {"Idempotency-Key", "k1"}};

  auto created = cli.Post("/v1/sessions", exp, fixture::create_body("staircase", 5),
                          "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const auto id = json::parse(created->body)["session_id"].get<std::string>();
  auto dup = cli.Post("/v1/sessions", exp, fixture::create_body("staircase", 5),
                      "application/json");
  CHECK(json::parse(dup->body)["session_id"] == id);

  auto bad = cli.Post("/v1/sessions", {{"Authorization", "Bearer exp"}},
                      json{{"config", {{"variants", {"A"}}}}}.dump(), "application/json");
  CHECK(bad->status == 422);

  auto next = cli.Get("/v1/sessions/" + id + "/trials/next");
  REQUIRE(next);
  CHECK(next->status == 200);
  CHECK(next->get_header_value("Content-Type") == "application/json");
  const auto trial = json::parse(next->body);
  CHECK(fixture::shown_level(trial) == 50);

  auto third = cli.Post("/v1/sessions/" + id + "/trials/0/response", choice_body("third"),
                        "application/json");
  CHECK(third->status == 422);
  auto ok = cli.Post("/v1/sessions/" + id + "/trials/0/response", choice_body("second"),
                     "application/json");
  CHECK(ok->status == 200);
  CHECK(json::parse(ok->body)["session_status"] == "active");
  auto stale = cli.Post("/v1/sessions/" + id + "/trials/5/response", choice_body("second"),
                        "application/json");
  CHECK(stale->status == 409);

  CHECK(cli.Get("/v1/sessions/" + id + "/estimates")->status == 401);
  auto est = cli.Get("/v1/sessions/" + id + "/estimates", exp);
  CHECK(est->status == 200);
  CHECK(json::parse(est->body) == svc.estimates(id).body);
  CHECK(cli.Get("/v1/sessions/unknown/trials/next")->status == 404);
  auto missing = cli.Get("/v2/anything");
  CHECK(missing->status == 404);
  CHECK(json::parse(missing->body)["error"] == "not-found");
  server.stop();
}
