#pragma once

#include <fmt/format.h>

#include <algorithm>
#include <string>

#include "mediflow/service.hpp"

namespace mediflow {

/// Fixed demo tenant so every CLI mode works out of the box.
struct DemoSeed {
  std::string physician = "dr.demo";
  std::string physician_password = "doctor";
  std::string device_username = "dev1";
  std::string device_password = "pw";
  std::string mac = "AA:BB:CC:DD:EE:01";
  std::string patient_id = "p-001";
  double max_volume_ml = 10;
  double max_rate_ml_h = 10;
  double volume_ml = 2;
  double rate_ml_h = 4;
};

namespace seed_detail {
inline Status tolerate_conflict(Status s) {
  if (!s && s.code() == Errc::conflict) return ok_status();
  return s;
}
}  // namespace seed_detail

inline Status seed_physician(Service& service, const std::string& username,
                             const std::string& password) {
  return seed_detail::tolerate_conflict(service.add_user(
      {username, password, Role::physician, "Demo", "Physician", "Demo Clinic", std::nullopt}));
}

/// Device account + MAC + profile + initial prescription. Re-running is a
/// no-op for parts that already exist.
inline Status seed_patient(Service& service, const std::string& physician,
                           const std::string& username, const std::string& password,
                           const std::string& mac, const std::string& patient_id,
                           double max_volume_ml, double max_rate_ml_h, double volume_ml,
                           double rate_ml_h) {
  auto s = seed_detail::tolerate_conflict(service.add_user(
      {username, password, Role::patient_device, "Demo", "Patient", "Demo Clinic", patient_id}));
  if (!s) return s;
  auto parsed = MacAddress::parse(mac);
  if (!parsed) return Error{Errc::bad_request, "bad mac " + mac};
  s = seed_detail::tolerate_conflict(service.register_device(*parsed, username));
  if (!s) return s;
  if (!service.profile(patient_id)) {
    s = service.put_profile({patient_id, max_volume_ml, max_rate_ml_h, physician});
    if (!s) return s;
  }
  if (!service.active_prescription(patient_id)) {
    auto rx = service.create_prescription(patient_id, volume_ml, rate_ml_h);
    if (!rx) return rx.error();
  }
  return ok_status();
}

inline Status seed_demo(Service& service, const DemoSeed& demo = {}) {
  auto s = seed_physician(service, demo.physician, demo.physician_password);
  if (!s) return s;
  return seed_patient(service, demo.physician, demo.device_username, demo.device_password,
                      demo.mac, demo.patient_id, demo.max_volume_ml, demo.max_rate_ml_h,
                      demo.volume_ml, demo.rate_ml_h);
}

/// Credentials of the i-th load-test device (1-based).
struct LoadAccount {
  std::string username;
  std::string password;
  std::string mac;
  std::string patient_id;
};

inline LoadAccount load_account(int i) {
  return {fmt::format("load{:04d}", i), "load", fmt::format("02:00:00:00:{:02X}:{:02X}", (i >> 8) & 0xFF, i & 0xFF),
          fmt::format("lp-{:04d}", i)};
}

inline Status seed_load_accounts(Service& service, int count, const DemoSeed& demo = {}) {
  auto s = seed_physician(service, demo.physician, demo.physician_password);
  if (!s) return s;
  for (int i = 1; i <= count; ++i) {
    const auto a = load_account(i);
    s = seed_patient(service, demo.physician, a.username, a.password, a.mac, a.patient_id,
                     demo.max_volume_ml, demo.max_rate_ml_h, demo.volume_ml, demo.rate_ml_h);
    if (!s) return s;
  }
  return ok_status();
}

}  // namespace mediflow
