#pragma once

#include <json.hpp>

#include <stdexcept>
#include <string>

#include "mediflow/api.hpp"
#include "mediflow/domain.hpp"
#include "mediflow/token_store.hpp"

// JSON mapping for everything that crosses the wire or lands in the store.
// Parsing is strict: missing or mistyped fields throw nlohmann::json
// exceptions (or std::invalid_argument for bad enum/format values), which
// the HTTP layer turns into 400.
namespace mediflow {

using nlohmann::json;

namespace wire_detail {
inline Timestamp timestamp_at(const json& j, const char* key) {
  auto parsed = parse_iso8601(j.at(key).get<std::string>());
  if (!parsed) throw std::invalid_argument(std::string("bad timestamp in ") + key);
  return *parsed;
}

template <typename T>
std::optional<T> optional_at(const json& j, const char* key) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) return it->get<T>();
  return std::nullopt;
}
}  // namespace wire_detail

inline void to_json(json& j, const MacAddress& m) { j = m.to_string(); }
inline void from_json(const json& j, MacAddress& m) {
  auto parsed = MacAddress::parse(j.get<std::string>());
  if (!parsed) throw std::invalid_argument("bad mac address");
  m = *parsed;
}

inline void to_json(json& j, const UserAccount& u) {
  j = json{{"username", u.username},     {"password_hash", u.password_hash},
           {"role", to_string(u.role)},  {"first_name", u.first_name},
           {"last_name", u.last_name},   {"institute", u.institute}};
  if (u.patient_id) j["patient_id"] = *u.patient_id;
}
inline void from_json(const json& j, UserAccount& u) {
  u.username = j.at("username").get<std::string>();
  u.password_hash = j.at("password_hash").get<std::string>();
  auto role = role_from_string(j.at("role").get<std::string>());
  if (!role) throw std::invalid_argument("bad role");
  u.role = *role;
  u.first_name = j.value("first_name", "");
  u.last_name = j.value("last_name", "");
  u.institute = j.value("institute", "");
  u.patient_id = wire_detail::optional_at<std::string>(j, "patient_id");
}

inline void to_json(json& j, const DeviceIdentity& d) {
  j = json{{"mac", d.mac}, {"owner_username", d.owner_username}};
}
inline void from_json(const json& j, DeviceIdentity& d) {
  d.mac = j.at("mac").get<MacAddress>();
  d.owner_username = j.at("owner_username").get<std::string>();
}

inline void to_json(json& j, const PatientProfile& p) {
  j = json{{"patient_id", p.patient_id},
           {"max_volume_ml", p.max_volume_ml},
           {"max_rate_ml_h", p.max_rate_ml_h},
           {"physician_username", p.physician_username}};
}
inline void from_json(const json& j, PatientProfile& p) {
  p.patient_id = j.at("patient_id").get<std::string>();
  p.max_volume_ml = j.at("max_volume_ml").get<double>();
  p.max_rate_ml_h = j.at("max_rate_ml_h").get<double>();
  p.physician_username = j.at("physician_username").get<std::string>();
}

inline void to_json(json& j, const Prescription& p) {
  j = json{{"prescription_id", p.prescription_id}, {"patient_id", p.patient_id},
           {"version", p.version},                 {"volume_ml", p.volume_ml},
           {"rate_ml_h", p.rate_ml_h},             {"status", to_string(p.status)}};
}
inline void from_json(const json& j, Prescription& p) {
  p.prescription_id = j.at("prescription_id").get<std::string>();
  p.patient_id = j.at("patient_id").get<std::string>();
  p.version = j.at("version").get<std::int64_t>();
  p.volume_ml = j.at("volume_ml").get<double>();
  p.rate_ml_h = j.at("rate_ml_h").get<double>();
  const auto status = j.at("status").get<std::string>();
  if (status == "active") p.status = PrescriptionStatus::active;
  else if (status == "superseded") p.status = PrescriptionStatus::superseded;
  else throw std::invalid_argument("bad prescription status");
}

inline void to_json(json& j, const InfusionRecord& r) {
  j = json{{"record_id", r.record_id},
           {"patient_id", r.patient_id},
           {"prescription_id", r.prescription_id},
           {"version", r.version},
           {"started_at", format_iso8601(r.started_at)},
           {"finished_at", format_iso8601(r.finished_at)},
           {"delivered_volume_ml", r.delivered_volume_ml},
           {"mean_rate_ml_h", r.mean_rate_ml_h},
           {"outcome", to_string(r.outcome)}};
}
/// record_id is assigned by the server, so it may be absent on the way in.
inline void from_json(const json& j, InfusionRecord& r) {
  r.record_id = j.value("record_id", "");
  r.patient_id = j.at("patient_id").get<std::string>();
  r.prescription_id = j.at("prescription_id").get<std::string>();
  r.version = j.at("version").get<std::int64_t>();
  r.started_at = wire_detail::timestamp_at(j, "started_at");
  r.finished_at = wire_detail::timestamp_at(j, "finished_at");
  r.delivered_volume_ml = j.at("delivered_volume_ml").get<double>();
  r.mean_rate_ml_h = j.at("mean_rate_ml_h").get<double>();
  auto outcome = outcome_from_string(j.at("outcome").get<std::string>());
  if (!outcome) throw std::invalid_argument("bad outcome");
  r.outcome = *outcome;
}

inline void to_json(json& j, const AuthToken& t) {
  j = json{{"value", t.value},
           {"principal", t.principal},
           {"issued_at_ms", to_epoch_ms(t.issued_at)},
           {"expires_at_ms", to_epoch_ms(t.expires_at)},
           {"consumed", t.consumed}};
}
inline void from_json(const json& j, AuthToken& t) {
  t.value = j.at("value").get<std::string>();
  t.principal = j.at("principal").get<std::string>();
  t.issued_at = from_epoch_ms(j.at("issued_at_ms").get<std::int64_t>());
  t.expires_at = from_epoch_ms(j.at("expires_at_ms").get<std::int64_t>());
  t.consumed = j.at("consumed").get<bool>();
}

// --- protocol messages

inline void to_json(json& j, const LoginRequest& r) {
  j = json{{"username", r.username}, {"password", r.password}};
  if (r.mac) j["mac"] = *r.mac;
}
inline void from_json(const json& j, LoginRequest& r) {
  r.username = j.at("username").get<std::string>();
  r.password = j.at("password").get<std::string>();
  r.mac = wire_detail::optional_at<std::string>(j, "mac");
}

inline void to_json(json& j, const LoginResponse& r) {
  j = json{{"first_name", r.first_name},
           {"last_name", r.last_name},
           {"institute", r.institute},
           {"token", r.token}};
}
inline void from_json(const json& j, LoginResponse& r) {
  r.first_name = j.at("first_name").get<std::string>();
  r.last_name = j.at("last_name").get<std::string>();
  r.institute = j.at("institute").get<std::string>();
  r.token = j.at("token").get<std::string>();
}

inline void to_json(json& j, const InfusionIndex& i) {
  j = json{{"prescription_id", i.prescription_id},
           {"version", i.version},
           {"volume_ml", i.volume_ml},
           {"rate_ml_h", i.rate_ml_h}};
}
inline void from_json(const json& j, InfusionIndex& i) {
  i.prescription_id = j.at("prescription_id").get<std::string>();
  i.version = j.at("version").get<std::int64_t>();
  i.volume_ml = j.at("volume_ml").get<double>();
  i.rate_ml_h = j.at("rate_ml_h").get<double>();
}

inline void to_json(json& j, const DeliveryProgress& p) {
  j = json{{"version", p.version}, {"delivered_ml", p.delivered_ml}, {"elapsed_s", p.elapsed_s}};
}
inline void from_json(const json& j, DeliveryProgress& p) {
  p.version = j.at("version").get<std::int64_t>();
  p.delivered_ml = j.at("delivered_ml").get<double>();
  p.elapsed_s = j.at("elapsed_s").get<double>();
}

inline void to_json(json& j, const IndexRequest& r) {
  j = json{{"patient_id", r.patient_id}};
  if (r.progress) j["progress"] = *r.progress;
}
inline void from_json(const json& j, IndexRequest& r) {
  r.patient_id = j.at("patient_id").get<std::string>();
  r.progress = wire_detail::optional_at<DeliveryProgress>(j, "progress");
}

inline void to_json(json& j, const IndexResponse& r) {
  j = json{{"infusion_index", r.infusion_index}, {"token", r.token}};
}
inline void from_json(const json& j, IndexResponse& r) {
  r.infusion_index = j.at("infusion_index").get<InfusionIndex>();
  r.token = j.at("token").get<std::string>();
}

inline void to_json(json& j, const AdjustmentProposal& p) {
  j = json{{"proposal_id", p.proposal_id},
           {"patient_id", p.patient_id},
           {"proposed_volume_ml", p.proposed_volume_ml},
           {"proposed_rate_ml_h", p.proposed_rate_ml_h},
           {"state", to_string(p.state)},
           {"decided_by", p.decided_by ? json(*p.decided_by) : json(nullptr)},
           {"created_at", format_iso8601(p.created_at)}};
  if (p.reason) j["reason"] = *p.reason;
}
inline void from_json(const json& j, AdjustmentProposal& p) {
  p.proposal_id = j.at("proposal_id").get<std::string>();
  p.patient_id = j.at("patient_id").get<std::string>();
  p.proposed_volume_ml = j.at("proposed_volume_ml").get<double>();
  p.proposed_rate_ml_h = j.at("proposed_rate_ml_h").get<double>();
  auto state = proposal_state_from_string(j.at("state").get<std::string>());
  if (!state) throw std::invalid_argument("bad proposal state");
  p.state = *state;
  p.decided_by = wire_detail::optional_at<std::string>(j, "decided_by");
  p.reason = wire_detail::optional_at<std::string>(j, "reason");
  p.created_at = wire_detail::timestamp_at(j, "created_at");
}

inline void to_json(json& j, const LiveProgress& p) {
  j = json{{"version", p.version},
           {"delivered_ml", p.delivered_ml},
           {"elapsed_s", p.elapsed_s},
           {"updated_at", format_iso8601(p.updated_at)}};
}

inline void to_json(json& j, const LimitsResponse& r) {
  j = json{{"patient_id", r.profile.patient_id},
           {"max_volume_ml", r.profile.max_volume_ml},
           {"max_rate_ml_h", r.profile.max_rate_ml_h},
           {"physician_username", r.profile.physician_username},
           {"auto_rejected", r.auto_rejected},
           {"token", r.token}};
  if (r.warning) j["warning"] = *r.warning;
}

inline void to_json(json& j, const DecisionResponse& r) {
  j = json{{"proposal", r.proposal}, {"token", r.token}};
  if (r.prescription) j["prescription"] = *r.prescription;
}

inline void to_json(json& j, const StatusResponse& r) {
  j = json{{"patient_id", r.patient_id},
           {"profile", r.profile},
           {"active", r.active ? json(*r.active) : json(nullptr)},
           {"progress", r.progress ? json(*r.progress) : json(nullptr)},
           {"proposals", r.proposals},
           {"token", r.token}};
}

inline void to_json(json& j, const HistoryResponse& r) {
  j = json{{"patient_id", r.patient_id}, {"records", r.records}, {"token", r.token}};
}

inline json error_body(const Error& e) { return json{{"error", to_string(e.code)}}; }

}  // namespace mediflow
