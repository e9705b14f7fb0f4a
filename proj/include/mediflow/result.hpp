#pragma once

#include <cassert>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <variant>

namespace mediflow {

/// Failure codes shared by the service, the wire protocol and the device.
/// The string form of each code is what travels in {"error": ...} bodies.
enum class Errc {
  bad_request,
  invalid_credentials,
  device_not_registered,
  token_invalid,
  token_expired,
  token_reused,
  forbidden_patient,
  forbidden,
  not_found,
  conflict,
  limit_exceeded,
  patient_mismatch,
  unknown_principal,
  transport,
  internal,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::bad_request: return "bad_request";
    case Errc::invalid_credentials: return "invalid_credentials";
    case Errc::device_not_registered: return "device_not_registered";
    case Errc::token_invalid: return "token_invalid";
    case Errc::token_expired: return "token_expired";
    case Errc::token_reused: return "token_reused";
    case Errc::forbidden_patient: return "forbidden_patient";
    case Errc::forbidden: return "forbidden";
    case Errc::not_found: return "not_found";
    case Errc::conflict: return "conflict";
    case Errc::limit_exceeded: return "limit_exceeded";
    case Errc::patient_mismatch: return "patient_mismatch";
    case Errc::unknown_principal: return "unknown_principal";
    case Errc::transport: return "transport";
    case Errc::internal: return "internal";
  }
  return "internal";
}

inline Errc errc_from_string(std::string_view s) noexcept {
  for (auto c : {Errc::bad_request, Errc::invalid_credentials, Errc::device_not_registered,
                 Errc::token_invalid, Errc::token_expired, Errc::token_reused,
                 Errc::forbidden_patient, Errc::forbidden, Errc::not_found, Errc::conflict,
                 Errc::limit_exceeded, Errc::patient_mismatch, Errc::unknown_principal,
                 Errc::transport, Errc::internal}) {
    if (to_string(c) == s) return c;
  }
  return Errc::internal;
}

constexpr int http_status(Errc code) noexcept {
  switch (code) {
    case Errc::invalid_credentials:
    case Errc::token_invalid:
    case Errc::token_expired:
    case Errc::token_reused: return 401;
    case Errc::device_not_registered:
    case Errc::forbidden_patient:
    case Errc::forbidden: return 403;
    case Errc::not_found:
    case Errc::unknown_principal: return 404;
    case Errc::conflict: return 409;
    case Errc::bad_request:
    case Errc::limit_exceeded:
    case Errc::patient_mismatch: return 400;
    case Errc::transport: return 503;
    case Errc::internal: return 500;
  }
  return 500;
}

/// True for the 401 family the device answers with a fresh login.
constexpr bool is_auth_failure(Errc code) noexcept {
  return code == Errc::token_invalid || code == Errc::token_expired || code == Errc::token_reused;
}

struct Error {
  Errc code = Errc::internal;
  std::string detail;

  friend bool operator==(const Error& a, const Error& b) = default;
};

class BadResultAccess : public std::logic_error {
 public:
  explicit BadResultAccess(const Error& e)
      : std::logic_error("result holds error " + std::string(to_string(e.code)) +
                         (e.detail.empty() ? "" : ": " + e.detail)) {}
};

template <typename T>
class Result {
 public:
  Result(T value) : state_(std::move(value)) {}  // NOLINT(implicit)
  Result(Error error) : state_(std::move(error)) {}  // NOLINT(implicit)
  Result(Errc code, std::string detail = {}) : state_(Error{code, std::move(detail)}) {}

  bool ok() const noexcept { return std::holds_alternative<T>(state_); }
  explicit operator bool() const noexcept { return ok(); }

  const T& value() const& {
    if (!ok()) throw BadResultAccess(std::get<Error>(state_));
    return std::get<T>(state_);
  }
  T& value() & {
    if (!ok()) throw BadResultAccess(std::get<Error>(state_));
    return std::get<T>(state_);
  }
  T&& value() && {
    if (!ok()) throw BadResultAccess(std::get<Error>(state_));
    return std::get<T>(std::move(state_));
  }
  const T& operator*() const& { return value(); }
  const T* operator->() const { return &value(); }

  const Error& error() const {
    if (ok()) throw std::logic_error("result holds a value, not an error");
    return std::get<Error>(state_);
  }
  Errc code() const { return error().code; }

 private:
  std::variant<T, Error> state_;
};

struct Unit {
  friend bool operator==(Unit, Unit) = default;
};
using Status = Result<Unit>;

inline Status ok_status() { return Unit{}; }

}  // namespace mediflow
