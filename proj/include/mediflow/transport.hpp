#pragma once

#include "mediflow/httplib.hpp"

#include <memory>
#include <string>

#include "mediflow/api.hpp"
#include "mediflow/service.hpp"
#include "mediflow/wire.hpp"

namespace mediflow {

/// What the pump needs from the network layer.
class DeviceTransport {
 public:
  virtual ~DeviceTransport() = default;
  virtual Result<LoginResponse> login(const LoginRequest& req) = 0;
  virtual Result<IndexResponse> index(const std::string& token, const IndexRequest& req) = 0;
  /// Returns the next token.
  virtual Result<std::string> record(const std::string& token, const InfusionRecord& rec) = 0;
};

/// Calls a Service directly; used by simulated-time runs.
class InProcessTransport final : public DeviceTransport {
 public:
  explicit InProcessTransport(Service& service) : service_(service) {}

  Result<LoginResponse> login(const LoginRequest& req) override { return service_.login(req); }
  Result<IndexResponse> index(const std::string& token, const IndexRequest& req) override {
    return service_.get_index(token, req);
  }
  Result<std::string> record(const std::string& token, const InfusionRecord& rec) override {
    return service_.record_infusion(token, rec);
  }

 private:
  Service& service_;
};

/// Speaks the JSON/HTTP protocol. Any connection-level failure maps to
/// Errc::transport; HTTP errors map back through the {"error": code} body.
class HttpTransport final : public DeviceTransport {
 public:
  explicit HttpTransport(const std::string& base_url, std::time_t timeout_s = 10)
      : client_(base_url) {
    client_.set_connection_timeout(timeout_s, 0);
    client_.set_read_timeout(timeout_s, 0);
    client_.set_write_timeout(timeout_s, 0);
  }

  Result<LoginResponse> login(const LoginRequest& req) override {
    return call<LoginResponse>("/api/login", {}, json(req));
  }

  Result<IndexResponse> index(const std::string& token, const IndexRequest& req) override {
    return call<IndexResponse>("/api/index", token, json(req));
  }

  Result<std::string> record(const std::string& token, const InfusionRecord& rec) override {
    json body = rec;
    body.erase("record_id");
    auto r = call<json>("/api/infusions", token, body);
    if (!r) return r.error();
    try {
      return r->at("token").get<std::string>();
    } catch (const json::exception& e) {
      return Error{Errc::transport, e.what()};
    }
  }

  httplib::Client& client() noexcept { return client_; }

 private:
  template <typename T>
  Result<T> call(const std::string& path, const std::string& token, const json& body) {
    httplib::Headers headers;
    if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
    auto res = client_.Post(path, headers, body.dump(), "application/json");
    if (!res) return Error{Errc::transport, httplib::to_string(res.error())};
    try {
      const json payload = json::parse(res->body);
      if (res->status == 200) return payload.get<T>();
      return Error{errc_from_string(payload.value("error", "internal")),
                   payload.value("detail", "")};
    } catch (const std::exception& e) {
      return Error{Errc::transport, std::string("bad response: ") + e.what()};
    }
  }

  httplib::Client client_;
};

}  // namespace mediflow
