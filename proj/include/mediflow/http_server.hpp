#pragma once

#include "mediflow/httplib.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>

#include "mediflow/service.hpp"
#include "mediflow/wire.hpp"

namespace mediflow {

struct HttpServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::size_t threads = 64;
  std::optional<std::filesystem::path> static_dir;  // served under /app when set
};

namespace http_detail {

inline void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void reply_error(httplib::Response& res, const Error& e) {
  json body = error_body(e);
  if (http_status(e.code) == 400 && !e.detail.empty()) body["detail"] = e.detail;
  reply(res, http_status(e.code), body);
}

/// Token from "Authorization: Bearer <token>", empty when absent.
inline std::string bearer(const httplib::Request& req) {
  const auto header = req.get_header_value("Authorization");
  constexpr std::string_view kScheme = "Bearer ";
  if (header.size() <= kScheme.size() || header.compare(0, kScheme.size(), kScheme) != 0)
    return {};
  return header.substr(kScheme.size());
}

template <typename T>
void reply_result(httplib::Response& res, const Result<T>& r) {
  if (r) reply(res, 200, json(*r));
  else reply_error(res, r.error());
}

/// Runs `fn(body)` with the parsed JSON body; any parse or schema failure is a 400.
template <typename Fn>
void with_body(const httplib::Request& req, httplib::Response& res, Fn&& fn) {
  json body;
  try {
    body = json::parse(req.body);
    fn(body);
  } catch (const json::exception& e) {
    reply_error(res, Error{Errc::bad_request, e.what()});
  } catch (const std::invalid_argument& e) {
    reply_error(res, Error{Errc::bad_request, e.what()});
  }
}

}  // namespace http_detail

/// cpp-httplib front end for Service. Routes:
///   POST /api/login, POST /api/index, POST /api/infusions,
///   GET  /api/patients/{id}/history, GET /api/patients/{id}/status,
///   POST /api/patients/{id}/limits, POST /api/proposals,
///   POST /api/proposals/{id}/decision, GET /api/health
class HttpServer {
 public:
  HttpServer(Service& service, HttpServerOptions options)
      : service_(service), options_(std::move(options)) {
    const auto threads = options_.threads;
    server_.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
    routes();
  }

  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  ~HttpServer() { stop(); }

  /// Binds and starts serving on a background thread; returns the bound port.
  int start() {
    if (options_.port == 0) port_ = server_.bind_to_any_port(options_.host);
    else port_ = server_.bind_to_port(options_.host, options_.port) ? options_.port : -1;
    if (port_ < 0) throw std::runtime_error("cannot bind " + options_.host);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Serves on the calling thread until stop() is called elsewhere.
  void run() {
    if (options_.port == 0) port_ = server_.bind_to_any_port(options_.host);
    else port_ = server_.bind_to_port(options_.host, options_.port) ? options_.port : -1;
    if (port_ < 0) throw std::runtime_error("cannot bind " + options_.host);
    server_.listen_after_bind();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const noexcept { return port_; }
  std::string base_url() const { return "http://" + options_.host + ":" + std::to_string(port_); }

 private:
  void routes() {
    using namespace http_detail;
    using httplib::Request;
    using httplib::Response;

    server_.Get("/api/health", [this](const Request&, Response& res) {
      reply(res, 200, json{{"status", "ok"}, {"poll_advice_s", service_.config().poll_advice_s}});
    });

    server_.Post("/api/login", [this](const Request& req, Response& res) {
      with_body(req, res, [&](const json& body) {
        reply_result(res, service_.login(body.get<LoginRequest>()));
      });
    });

    server_.Post("/api/index", [this](const Request& req, Response& res) {
      with_body(req, res, [&](const json& body) {
        reply_result(res, service_.get_index(bearer(req), body.get<IndexRequest>()));
      });
    });

    server_.Post("/api/infusions", [this](const Request& req, Response& res) {
      with_body(req, res, [&](const json& body) {
        auto token = service_.record_infusion(bearer(req), body.get<InfusionRecord>());
        if (token) reply(res, 200, json{{"token", *token}});
        else reply_error(res, token.error());
      });
    });

    server_.Get(R"(/api/patients/([^/]+)/history)", [this](const Request& req, Response& res) {
      reply_result(res, service_.history(bearer(req), req.matches[1].str()));
    });

    server_.Get(R"(/api/patients/([^/]+)/status)", [this](const Request& req, Response& res) {
      reply_result(res, service_.status(bearer(req), req.matches[1].str()));
    });

    server_.Post(R"(/api/patients/([^/]+)/limits)", [this](const Request& req, Response& res) {
      with_body(req, res, [&](const json& body) {
        reply_result(res, service_.set_limits(bearer(req), req.matches[1].str(),
                                              body.at("max_volume_ml").get<double>(),
                                              body.at("max_rate_ml_h").get<double>()));
      });
    });

    server_.Post("/api/proposals", [this](const Request& req, Response& res) {
      with_body(req, res, [&](const json& body) {
        reply_result(res, service_.propose_adjustment(body.at("patient_id").get<std::string>(),
                                                      body.at("volume_ml").get<double>(),
                                                      body.at("rate_ml_h").get<double>()));
      });
    });

    server_.Post(R"(/api/proposals/([^/]+)/decision)", [this](const Request& req, Response& res) {
      with_body(req, res, [&](const json& body) {
        const auto decision = body.at("decision").get<std::string>();
        if (decision != "approve" && decision != "reject")
          throw std::invalid_argument("decision must be approve or reject");
        reply_result(res, service_.decide_adjustment(
                              bearer(req), req.matches[1].str(),
                              decision == "approve" ? Decision::approve : Decision::reject));
      });
    });

    if (options_.static_dir && !server_.set_mount_point("/app", options_.static_dir->string()))
      throw std::runtime_error("static dir not found: " + options_.static_dir->string());
  }

  Service& service_;
  HttpServerOptions options_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = -1;
};

}  // namespace mediflow
