#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "mediflow/http_server.hpp"
#include "mediflow/transport.hpp"

using namespace mediflow;
using namespace std::chrono_literals;

namespace {

std::set<std::string> keys(const json& j) {
  std::set<std::string> out;
  for (const auto& [k, _] : j.items()) out.insert(k);
  return out;
}

class Http : public ::testing::Test {
 protected:
  void SetUp() override {
    server_ = std::make_unique<HttpServer>(*demo_.service, HttpServerOptions{"127.0.0.1", 0, 8, {}});
    server_->start();
    client_ = std::make_unique<httplib::Client>(server_->base_url());
  }
  void TearDown() override { server_->stop(); }

  httplib::Result post(const std::string& path, const json& body, const std::string& token = {}) {
    httplib::Headers h;
    if (!token.empty()) h.emplace("Authorization", "Bearer " + token);
    return client_->Post(path, h, body.dump(), "application/json");
  }
  httplib::Result get(const std::string& path, const std::string& token) {
    return client_->Get(path, {{"Authorization", "Bearer " + token}});
  }
  std::string device_token() {
    auto r = post("/api/login", {{"username", "dev1"}, {"password", "pw"}, {"mac", "AA:BB:CC:DD:EE:01"}});
    return json::parse(r->body).at("token");
  }
  std::string physician_token() {
    auto r = post("/api/login", {{"username", "dr.demo"}, {"password", "doctor"}});
    return json::parse(r->body).at("token");
  }

  fixtures::Demo demo_;
  std::unique_ptr<HttpServer> server_;
  std::unique_ptr<httplib::Client> client_;
};

}  // namespace

TEST_F(Http, LoginResponseHasExactlyFourFields) {
  auto r = post("/api/login", {{"username", "dev1"}, {"password", "pw"}, {"mac", "AA:BB:CC:DD:EE:01"}});
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(keys(json::parse(r->body)),
            (std::set<std::string>{"first_name", "last_name", "institute", "token"}));
}

TEST_F(Http, LoginErrorsMapToStatusCodes) {
  auto bad = post("/api/login", {{"username", "dev1"}, {"password", "x"}, {"mac", "AA:BB:CC:DD:EE:01"}});
  EXPECT_EQ(bad->status, 401);
  EXPECT_EQ(json::parse(bad->body), (json{{"error", "invalid_credentials"}}));
  auto mac = post("/api/login", {{"username", "dev1"}, {"password", "pw"}, {"mac", "AA:BB:CC:DD:EE:09"}});
  EXPECT_EQ(mac->status, 403);
  EXPECT_EQ(json::parse(mac->body), (json{{"error", "device_not_registered"}}));
}

TEST_F(Http, MalformedBodyIs400) {
  auto r = post("/api/login", json::object());
  EXPECT_EQ(r->status, 400);
  EXPECT_EQ(json::parse(r->body).at("error"), "bad_request");
  auto raw = client_->Post("/api/login", "{nope", "application/json");
  EXPECT_EQ(raw->status, 400);
}

TEST_F(Http, IndexResponseShape) {
  const auto tok = device_token();
  auto r = post("/api/index", {{"patient_id", "p-001"}}, tok);
  ASSERT_EQ(r->status, 200);
  const auto body = json::parse(r->body);
  EXPECT_EQ(keys(body), (std::set<std::string>{"infusion_index", "token"}));
  EXPECT_EQ(keys(body["infusion_index"]),
            (std::set<std::string>{"prescription_id", "version", "volume_ml", "rate_ml_h"}));
  EXPECT_EQ(body["infusion_index"]["version"], 1);
  EXPECT_EQ(body["infusion_index"]["volume_ml"], 2.0);
  EXPECT_EQ(body["infusion_index"]["rate_ml_h"], 4.0);
  EXPECT_NE(body["token"], tok);
}

TEST_F(Http, IndexAuthErrors) {
  const auto tok = device_token();
  EXPECT_EQ(post("/api/index", {{"patient_id", "p-001"}}, tok)->status, 200);
  auto reused = post("/api/index", {{"patient_id", "p-001"}}, tok);
  EXPECT_EQ(reused->status, 401);
  EXPECT_EQ(json::parse(reused->body), (json{{"error", "token_reused"}}));
  auto missing = post("/api/index", {{"patient_id", "p-001"}});
  EXPECT_EQ(json::parse(missing->body), (json{{"error", "token_invalid"}}));
  const auto old = device_token();
  demo_.clock->advance(300s);
  auto expired = post("/api/index", {{"patient_id", "p-001"}}, old);
  EXPECT_EQ(json::parse(expired->body), (json{{"error", "token_expired"}}));
  auto forbidden = post("/api/index", {{"patient_id", "p-999"}}, device_token());
  EXPECT_EQ(forbidden->status, 403);
  EXPECT_EQ(json::parse(forbidden->body), (json{{"error", "forbidden_patient"}}));
}

TEST_F(Http, PhysicianWorkflow) {
  auto doc = physician_token();
  auto limits = post("/api/patients/p-001/limits", {{"max_volume_ml", 10}, {"max_rate_ml_h", 10}}, doc);
  ASSERT_EQ(limits->status, 200);
  doc = json::parse(limits->body).at("token");

  auto prop = post("/api/proposals", {{"patient_id", "p-001"}, {"volume_ml", 5}, {"rate_ml_h", 5}});
  ASSERT_EQ(prop->status, 200);
  const auto proposal = json::parse(prop->body);
  EXPECT_EQ(proposal.at("state"), "pending");

  auto decision = post("/api/proposals/" + proposal.at("proposal_id").get<std::string>() + "/decision",
                       {{"decision", "approve"}}, doc);
  ASSERT_EQ(decision->status, 200);
  const auto decided = json::parse(decision->body);
  EXPECT_EQ(decided.at("prescription").at("version"), 2);
  doc = decided.at("token");

  auto again = post("/api/proposals/" + proposal.at("proposal_id").get<std::string>() + "/decision",
                    {{"decision", "approve"}}, doc);
  EXPECT_EQ(again->status, 409);

  auto status = get("/api/patients/p-001/status", physician_token());
  ASSERT_EQ(status->status, 200);
  EXPECT_EQ(json::parse(status->body).at("active").at("version"), 2);

  auto bad = post("/api/proposals/x/decision", {{"decision", "maybe"}}, physician_token());
  EXPECT_EQ(bad->status, 400);

  auto missing = post("/api/proposals", {{"patient_id", "p-404"}, {"volume_ml", 1}, {"rate_ml_h", 1}});
  EXPECT_EQ(missing->status, 404);
}

TEST_F(Http, LimitsByDeviceIs403) {
  auto r = post("/api/patients/p-001/limits", {{"max_volume_ml", 10}, {"max_rate_ml_h", 10}},
                device_token());
  EXPECT_EQ(r->status, 403);
  auto neg = post("/api/patients/p-001/limits", {{"max_volume_ml", -1}, {"max_rate_ml_h", 10}},
                  physician_token());
  EXPECT_EQ(neg->status, 400);
}

TEST_F(Http, RecordThenHistory) {
  json rec = {{"patient_id", "p-001"},
              {"prescription_id", "rx-000001"},
              {"version", 1},
              {"started_at", "2023-11-14T22:13:20.000Z"},
              {"finished_at", "2023-11-14T22:43:20.000Z"},
              {"delivered_volume_ml", 2.05},
              {"mean_rate_ml_h", 4.1},
              {"outcome", "completed"}};
  auto r = post("/api/infusions", rec, device_token());
  ASSERT_EQ(r->status, 200);
  EXPECT_EQ(keys(json::parse(r->body)), (std::set<std::string>{"token"}));

  auto h = get("/api/patients/p-001/history", physician_token());
  ASSERT_EQ(h->status, 200);
  auto records = json::parse(h->body).at("records");
  ASSERT_EQ(records.size(), 1u);
  auto stored = records[0];
  EXPECT_EQ(stored.at("record_id"), "rec-000001");
  stored.erase("record_id");
  EXPECT_EQ(stored, rec);

  rec["finished_at"] = "2023-11-14T22:00:00.000Z";
  EXPECT_EQ(post("/api/infusions", rec, device_token())->status, 400);
}

TEST_F(Http, TransportRoundTrip) {
  HttpTransport t(server_->base_url());
  auto login = t.login({"dev1", "pw", "AA:BB:CC:DD:EE:01"});
  ASSERT_TRUE(login);
  auto idx = t.index(login->token, {"p-001", std::nullopt});
  ASSERT_TRUE(idx);
  EXPECT_EQ(idx->infusion_index.volume_ml, 2);
  EXPECT_EQ(t.index(login->token, {"p-001", std::nullopt}).code(), Errc::token_reused);
  EXPECT_EQ(t.login({"dev1", "pw", "AA:BB:CC:DD:EE:02"}).code(), Errc::device_not_registered);
}

TEST(HttpTransport, UnreachableServerIsTransportError) {
  HttpTransport t("http://127.0.0.1:1", 1);
  EXPECT_EQ(t.login({"dev1", "pw", std::nullopt}).code(), Errc::transport);
}
