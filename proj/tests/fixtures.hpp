#pragma once

#include <filesystem>
#include <memory>
#include <random>
#include <string>

#include "mediflow/seed.hpp"
#include "mediflow/service.hpp"

namespace fixtures {

using namespace mediflow;

inline ServiceConfig fast_config() {
  ServiceConfig c;
  c.pbkdf2_iterations = 1000;
  return c;
}

/// Demo tenant (dr.demo / dev1 @ AA:BB:CC:DD:EE:01, p-001, limits 10/10, rx 2 mL @ 4 mL/h)
/// on a manual clock.
struct Demo {
  std::shared_ptr<ManualClock> clock = std::make_shared<ManualClock>();
  std::unique_ptr<Service> service;
  DemoSeed seed;

  explicit Demo(ServiceConfig config = fast_config()) {
    service = std::make_unique<Service>(std::move(config), clock);
    auto s = seed_demo(*service, seed);
    if (!s) throw BadResultAccess(s.error());
  }

  LoginRequest device_login() const { return {seed.device_username, seed.device_password, seed.mac}; }
  LoginRequest physician_login() const {
    return {seed.physician, seed.physician_password, std::nullopt};
  }
  std::string device_token() { return service->login(device_login()).value().token; }
  std::string physician_token() { return service->login(physician_login()).value().token; }
};

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("mediflow-test-" + std::to_string(rd()) + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures
