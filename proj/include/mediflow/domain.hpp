#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "mediflow/result.hpp"
#include "mediflow/time.hpp"

namespace mediflow {

enum class Role { patient_device, physician };

constexpr std::string_view to_string(Role r) noexcept {
  return r == Role::physician ? "physician" : "patient_device";
}

inline std::optional<Role> role_from_string(std::string_view s) {
  if (s == "physician") return Role::physician;
  if (s == "patient_device") return Role::patient_device;
  return std::nullopt;
}

/// Six-octet hardware address. The canonical text form is
/// "AA:BB:CC:DD:EE:FF"; parsing also accepts lowercase and '-' separators.
class MacAddress {
 public:
  using Octets = std::array<std::uint8_t, 6>;

  constexpr MacAddress() = default;
  constexpr explicit MacAddress(Octets octets) : octets_(octets) {}

  static std::optional<MacAddress> parse(std::string_view text) {
    if (text.size() != 17) return std::nullopt;
    const char sep = text[2];
    if (sep != ':' && sep != '-') return std::nullopt;
    Octets out{};
    for (std::size_t i = 0; i < 6; ++i) {
      const auto hi = hex_value(text[i * 3]);
      const auto lo = hex_value(text[i * 3 + 1]);
      if (hi < 0 || lo < 0) return std::nullopt;
      if (i < 5 && text[i * 3 + 2] != sep) return std::nullopt;
      out[i] = static_cast<std::uint8_t>(hi * 16 + lo);
    }
    return MacAddress{out};
  }

  std::string to_string() const {
    static constexpr char kDigits[] = "0123456789ABCDEF";
    std::string s;
    s.reserve(17);
    for (std::size_t i = 0; i < 6; ++i) {
      if (i) s.push_back(':');
      s.push_back(kDigits[octets_[i] >> 4]);
      s.push_back(kDigits[octets_[i] & 0x0F]);
    }
    return s;
  }

  constexpr const Octets& octets() const noexcept { return octets_; }

  friend bool operator==(const MacAddress&, const MacAddress&) = default;
  friend auto operator<=>(const MacAddress&, const MacAddress&) = default;

 private:
  static constexpr int hex_value(char c) noexcept {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  }

  Octets octets_{};
};

struct UserAccount {
  std::string username;
  std::string password_hash;  // encoded by crypto::hash_password
  Role role = Role::patient_device;
  std::string first_name;
  std::string last_name;
  std::string institute;
  std::optional<std::string> patient_id;  // present iff role == patient_device

  friend bool operator==(const UserAccount&, const UserAccount&) = default;
};

struct DeviceIdentity {
  MacAddress mac;
  std::string owner_username;

  friend bool operator==(const DeviceIdentity&, const DeviceIdentity&) = default;
};

struct PatientProfile {
  std::string patient_id;
  double max_volume_ml = 0;
  double max_rate_ml_h = 0;
  std::string physician_username;

  friend bool operator==(const PatientProfile&, const PatientProfile&) = default;
};

enum class PrescriptionStatus { active, superseded };

constexpr std::string_view to_string(PrescriptionStatus s) noexcept {
  return s == PrescriptionStatus::active ? "active" : "superseded";
}

/// The "infusion index" a pump executes: a versioned {volume, rate} order.
struct Prescription {
  std::string prescription_id;
  std::string patient_id;
  std::int64_t version = 1;
  double volume_ml = 0;
  double rate_ml_h = 0;
  PrescriptionStatus status = PrescriptionStatus::active;

  friend bool operator==(const Prescription&, const Prescription&) = default;
};

enum class InfusionOutcome { completed, superseded_mid_infusion, fault };

constexpr std::string_view to_string(InfusionOutcome o) noexcept {
  switch (o) {
    case InfusionOutcome::completed: return "completed";
    case InfusionOutcome::superseded_mid_infusion: return "superseded_mid_infusion";
    case InfusionOutcome::fault: return "fault";
  }
  return "fault";
}

inline std::optional<InfusionOutcome> outcome_from_string(std::string_view s) {
  if (s == "completed") return InfusionOutcome::completed;
  if (s == "superseded_mid_infusion") return InfusionOutcome::superseded_mid_infusion;
  if (s == "fault") return InfusionOutcome::fault;
  return std::nullopt;
}

struct InfusionRecord {
  std::string record_id;
  std::string patient_id;
  std::string prescription_id;
  std::int64_t version = 0;
  Timestamp started_at{};
  Timestamp finished_at{};
  double delivered_volume_ml = 0;
  double mean_rate_ml_h = 0;
  InfusionOutcome outcome = InfusionOutcome::completed;

  friend bool operator==(const InfusionRecord&, const InfusionRecord&) = default;
};

inline bool is_positive_finite(double x) { return std::isfinite(x) && x > 0; }

/// Checks a prescription against its patient's limits. Bounds are inclusive.
/// A limit violation names every offending field, comma separated.
inline Status validate_prescription(const Prescription& p, const PatientProfile& profile) {
  if (p.patient_id != profile.patient_id) {
    return Error{Errc::patient_mismatch, p.patient_id + " != " + profile.patient_id};
  }
  std::string fields;
  auto flag = [&fields](std::string_view name) {
    if (!fields.empty()) fields += ',';
    fields += name;
  };
  if (!is_positive_finite(p.volume_ml) || p.volume_ml > profile.max_volume_ml) flag("volume_ml");
  if (!is_positive_finite(p.rate_ml_h) || p.rate_ml_h > profile.max_rate_ml_h) flag("rate_ml_h");
  if (!fields.empty()) return Error{Errc::limit_exceeded, fields};
  return ok_status();
}

}  // namespace mediflow
