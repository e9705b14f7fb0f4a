#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "mediflow/api.hpp"
#include "mediflow/crypto.hpp"
#include "mediflow/domain.hpp"
#include "mediflow/store.hpp"
#include "mediflow/token_store.hpp"
#include "mediflow/wire.hpp"

namespace mediflow {

struct ServiceConfig {
  Millis token_ttl = kDefaultTokenTtl;
  std::optional<std::filesystem::path> data_dir;  // in-memory when unset
  bool persist_tokens = false;
  bool snapshot_on_shutdown = true;
  int pbkdf2_iterations = crypto::kDefaultPbkdf2Iterations;
  double poll_advice_s = 60;
};

struct NewUser {
  std::string username;
  std::string password;
  Role role = Role::patient_device;
  std::string first_name;
  std::string last_name;
  std::string institute;
  std::optional<std::string> patient_id;
};

inline constexpr std::string_view kLimitWarning = "active_prescription_exceeds_limits";

/// The network layer's behaviour, independent of HTTP. Every public API call
/// that authenticates consumes the presented token and, on success only,
/// returns the next token in the chain.
///
/// Requests are checked for well-formedness before the token is touched, so
/// a malformed body (400) never burns a credential; authorization failures
/// after consumption do.
class Service {
 public:
  explicit Service(ServiceConfig config = {},
                   std::shared_ptr<const Clock> clock = std::make_shared<SystemClock>())
      : config_(std::move(config)),
        clock_(std::move(clock)),
        tokens_(config_.token_ttl, [this](std::string_view principal) {
          std::shared_lock lock(mu_);
          return users_.contains(std::string(principal));
        }) {
    if (config_.data_dir) {
      log_ = std::make_unique<EventLog>(*config_.data_dir);
      load();
    }
  }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  ~Service() {
    try {
      shutdown();
    } catch (...) {
    }
  }

  /// Clean shutdown: compacts the logs into a snapshot.
  void shutdown() {
    std::unique_lock lock(mu_);
    if (!log_ || shut_down_ || !config_.snapshot_on_shutdown) return;
    log_->write_snapshot(state_json_locked(config_.persist_tokens));
    shut_down_ = true;
  }

  const ServiceConfig& config() const noexcept { return config_; }
  const Clock& clock() const noexcept { return *clock_; }
  TokenStore& tokens() noexcept { return tokens_; }

  // ---- provisioning

  Status add_user(const NewUser& u) {
    if (u.username.empty()) return Error{Errc::bad_request, "username must be non-empty"};
    if (u.role == Role::patient_device && (!u.patient_id || u.patient_id->empty()))
      return Error{Errc::bad_request, "device accounts need a patient_id"};
    if (u.role == Role::physician && u.patient_id)
      return Error{Errc::bad_request, "physician accounts have no patient_id"};
    UserAccount account{u.username, crypto::hash_password(u.password, config_.pbkdf2_iterations),
                        u.role,     u.first_name,
                        u.last_name, u.institute,
                        u.patient_id};
    std::unique_lock lock(mu_);
    if (users_.contains(u.username)) return Error{Errc::conflict, "username taken"};
    if (u.patient_id && patient_owner_.contains(*u.patient_id))
      return Error{Errc::conflict, "patient already has a device account"};
    apply_user(account);
    persist("users", account);
    return ok_status();
  }

  Status register_device(const MacAddress& mac, std::string_view username) {
    std::unique_lock lock(mu_);
    auto user = users_.find(std::string(username));
    if (user == users_.end()) return Error{Errc::not_found, "unknown user"};
    if (user->second.role != Role::patient_device)
      return Error{Errc::bad_request, "only device accounts bind a mac"};
    if (devices_.contains(mac)) return Error{Errc::conflict, "mac already registered"};
    if (device_by_owner_.contains(std::string(username)))
      return Error{Errc::conflict, "account already has a device"};
    DeviceIdentity device{mac, std::string(username)};
    apply_device(device);
    persist("devices", device);
    return ok_status();
  }

  Status put_profile(const PatientProfile& profile) {
    if (profile.patient_id.empty()) return Error{Errc::bad_request, "patient_id"};
    if (!is_positive_finite(profile.max_volume_ml) || !is_positive_finite(profile.max_rate_ml_h))
      return Error{Errc::bad_request, "limits must be positive"};
    std::unique_lock lock(mu_);
    auto doc = users_.find(profile.physician_username);
    if (doc == users_.end() || doc->second.role != Role::physician)
      return Error{Errc::bad_request, "physician_username must name a physician"};
    apply_profile(profile);
    persist("profiles", profile);
    return ok_status();
  }

  /// Administrative order entry (seeding); approvals go through decide_adjustment.
  Result<Prescription> create_prescription(std::string_view patient_id, double volume_ml,
                                           double rate_ml_h) {
    std::unique_lock lock(mu_);
    return activate_locked(std::string(patient_id), volume_ml, rate_ml_h);
  }

  // ---- login API

  Result<LoginResponse> login(const LoginRequest& req) {
    std::optional<UserAccount> account;
    {
      std::shared_lock lock(mu_);
      if (auto it = users_.find(req.username); it != users_.end()) account = it->second;
    }
    if (!account || !crypto::verify_password(req.password, account->password_hash))
      return Error{Errc::invalid_credentials, {}};
    if (account->role == Role::patient_device) {
      const auto mac = req.mac ? MacAddress::parse(*req.mac) : std::nullopt;
      std::shared_lock lock(mu_);
      auto it = mac ? devices_.find(*mac) : devices_.end();
      if (it == devices_.end() || it->second.owner_username != account->username)
        return Error{Errc::device_not_registered, {}};
    }
    auto token = issue(account->username);
    if (!token) return token.error();
    return LoginResponse{account->first_name, account->last_name, account->institute, *token};
  }

  // ---- index API

  Result<IndexResponse> get_index(std::string_view token, const IndexRequest& req) {
    if (req.patient_id.empty()) return Error{Errc::bad_request, "patient_id"};
    auto user = authenticate(token);
    if (!user) return user.error();
    if (user->role != Role::patient_device || user->patient_id != req.patient_id)
      return Error{Errc::forbidden_patient, {}};
    InfusionIndex index;
    {
      std::unique_lock lock(mu_);
      auto active = active_locked(req.patient_id);
      if (!active) return Error{Errc::not_found, "no active prescription"};
      index = InfusionIndex::from(*active);
      if (req.progress) {
        progress_[req.patient_id] = LiveProgress{req.progress->version, req.progress->delivered_ml,
                                                 req.progress->elapsed_s, clock_->now()};
      }
    }
    auto next = issue(user->username);
    if (!next) return next.error();
    return IndexResponse{index, *next};
  }

  Result<std::string> record_infusion(std::string_view token, InfusionRecord record) {
    if (record.finished_at < record.started_at)
      return Error{Errc::bad_request, "finished_at precedes started_at"};
    if (!std::isfinite(record.delivered_volume_ml) || record.delivered_volume_ml < 0)
      return Error{Errc::bad_request, "delivered_volume_ml"};
    if (!std::isfinite(record.mean_rate_ml_h) || record.mean_rate_ml_h < 0)
      return Error{Errc::bad_request, "mean_rate_ml_h"};
    auto user = authenticate(token);
    if (!user) return user.error();
    if (user->role != Role::patient_device || user->patient_id != record.patient_id)
      return Error{Errc::forbidden_patient, {}};
    {
      std::unique_lock lock(mu_);
      record.record_id = next_id("rec", records_.size());
      apply_record(record);
      persist("records", record);
      progress_.erase(record.patient_id);
    }
    return issue(user->username);
  }

  // ---- physician endpoints

  Result<LimitsResponse> set_limits(std::string_view token, std::string_view patient_id,
                                    double max_volume_ml, double max_rate_ml_h) {
    if (!is_positive_finite(max_volume_ml) || !is_positive_finite(max_rate_ml_h))
      return Error{Errc::bad_request, "limits must be positive"};
    auto user = authenticate(token);
    if (!user) return user.error();
    LimitsResponse out;
    {
      std::unique_lock lock(mu_);
      auto profile = physician_profile_locked(*user, patient_id);
      if (!profile) return profile.error();
      PatientProfile updated = **profile;
      updated.max_volume_ml = max_volume_ml;
      updated.max_rate_ml_h = max_rate_ml_h;
      apply_profile(updated);
      persist("profiles", updated);
      for (auto& p : proposals_) {
        if (p.patient_id != patient_id || p.state != ProposalState::pending) continue;
        if (p.proposed_volume_ml > max_volume_ml || p.proposed_rate_ml_h > max_rate_ml_h) {
          p.state = ProposalState::rejected;
          p.reason = std::string(to_string(Errc::limit_exceeded));
          persist("proposals", p);
          out.auto_rejected.push_back(p.proposal_id);
        }
      }
      if (auto active = active_locked(std::string(patient_id));
          active && !validate_prescription(*active, updated))
        out.warning = std::string(kLimitWarning);
      out.profile = updated;
    }
    auto next = issue(user->username);
    if (!next) return next.error();
    out.token = *next;
    return out;
  }

  /// Entry point for the dosage algorithm. Out-of-limit proposals are stored
  /// already rejected and never reach the physician.
  Result<AdjustmentProposal> propose_adjustment(std::string_view patient_id, double volume_ml,
                                                double rate_ml_h) {
    if (!is_positive_finite(volume_ml) || !is_positive_finite(rate_ml_h))
      return Error{Errc::bad_request, "volume and rate must be positive"};
    std::unique_lock lock(mu_);
    auto profile = profiles_.find(std::string(patient_id));
    if (profile == profiles_.end()) return Error{Errc::not_found, "unknown patient"};
    AdjustmentProposal p;
    p.proposal_id = next_id("prop", proposals_.size());
    p.patient_id = std::string(patient_id);
    p.proposed_volume_ml = volume_ml;
    p.proposed_rate_ml_h = rate_ml_h;
    p.created_at = clock_->now();
    if (volume_ml > profile->second.max_volume_ml || rate_ml_h > profile->second.max_rate_ml_h) {
      p.state = ProposalState::rejected;
      p.reason = std::string(to_string(Errc::limit_exceeded));
    }
    apply_proposal(p);
    persist("proposals", p);
    return p;
  }

  Result<DecisionResponse> decide_adjustment(std::string_view token, std::string_view proposal_id,
                                             Decision decision) {
    auto user = authenticate(token);
    if (!user) return user.error();
    DecisionResponse out;
    {
      std::unique_lock lock(mu_);
      if (user->role != Role::physician) return Error{Errc::forbidden, {}};
      auto idx = proposal_index_.find(std::string(proposal_id));
      if (idx == proposal_index_.end()) return Error{Errc::not_found, "unknown proposal"};
      AdjustmentProposal& p = proposals_[idx->second];
      auto profile = physician_profile_locked(*user, p.patient_id);
      if (!profile) return profile.error();
      if (p.state != ProposalState::pending) return Error{Errc::conflict, "already decided"};
      if (decision == Decision::approve) {
        auto rx = activate_locked(p.patient_id, p.proposed_volume_ml, p.proposed_rate_ml_h);
        if (!rx) {
          p.state = ProposalState::rejected;
          p.reason = std::string(to_string(Errc::limit_exceeded));
          persist("proposals", p);
          return rx.error();
        }
        p.state = ProposalState::approved;
        out.prescription = *rx;
      } else {
        p.state = ProposalState::rejected;
      }
      p.decided_by = user->username;
      persist("proposals", p);
      out.proposal = p;
    }
    auto next = issue(user->username);
    if (!next) return next.error();
    out.token = *next;
    return out;
  }

  Result<StatusResponse> status(std::string_view token, std::string_view patient_id) {
    auto user = authenticate(token);
    if (!user) return user.error();
    StatusResponse out;
    {
      std::shared_lock lock(mu_);
      auto profile = physician_profile_locked(*user, patient_id);
      if (!profile) return profile.error();
      out.patient_id = std::string(patient_id);
      out.profile = **profile;
      out.active = active_locked(out.patient_id);
      if (auto it = progress_.find(out.patient_id); it != progress_.end()) out.progress = it->second;
      for (const auto& p : proposals_)
        if (p.patient_id == patient_id) out.proposals.push_back(p);
    }
    auto next = issue(user->username);
    if (!next) return next.error();
    out.token = *next;
    return out;
  }

  Result<HistoryResponse> history(std::string_view token, std::string_view patient_id) {
    auto user = authenticate(token);
    if (!user) return user.error();
    HistoryResponse out;
    {
      std::shared_lock lock(mu_);
      auto profile = physician_profile_locked(*user, patient_id);
      if (!profile) return profile.error();
      out.patient_id = std::string(patient_id);
      for (const auto& r : records_)
        if (r.patient_id == patient_id) out.records.push_back(r);
    }
    auto next = issue(user->username);
    if (!next) return next.error();
    out.token = *next;
    return out;
  }

  // ---- inspection

  std::optional<Prescription> active_prescription(std::string_view patient_id) const {
    std::shared_lock lock(mu_);
    return active_locked(std::string(patient_id));
  }

  std::vector<Prescription> prescriptions(std::string_view patient_id) const {
    std::shared_lock lock(mu_);
    std::vector<Prescription> out;
    for (const auto& p : prescriptions_)
      if (p.patient_id == patient_id) out.push_back(p);
    return out;
  }

  std::optional<PatientProfile> profile(std::string_view patient_id) const {
    std::shared_lock lock(mu_);
    auto it = profiles_.find(std::string(patient_id));
    if (it == profiles_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<AdjustmentProposal> proposals(std::string_view patient_id) const {
    std::shared_lock lock(mu_);
    std::vector<AdjustmentProposal> out;
    for (const auto& p : proposals_)
      if (p.patient_id == patient_id) out.push_back(p);
    return out;
  }

  std::vector<InfusionRecord> records(std::string_view patient_id) const {
    std::shared_lock lock(mu_);
    std::vector<InfusionRecord> out;
    for (const auto& r : records_)
      if (r.patient_id == patient_id) out.push_back(r);
    return out;
  }

  /// Everything the store persists except tokens; equal before and after a restart.
  json state_json() const {
    std::shared_lock lock(mu_);
    return state_json_locked(false);
  }

 private:
  static std::string next_id(std::string_view prefix, std::size_t count) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.*s-%06zu", int(prefix.size()), prefix.data(), count + 1);
    return buf;
  }

  Result<std::string> issue(const std::string& principal) {
    const auto now = clock_->now();
    if (++issued_since_purge_ % 256 == 0) tokens_.purge_expired(now);
    auto token = tokens_.issue(principal, now);
    if (!token) return token.error();
    return std::move(token).value().value;
  }

  Result<UserAccount> authenticate(std::string_view token) {
    auto principal = tokens_.consume(token, clock_->now());
    if (!principal) return principal.error();
    std::shared_lock lock(mu_);
    auto it = users_.find(*principal);
    if (it == users_.end()) return Error{Errc::token_invalid, {}};
    return it->second;
  }

  Result<const PatientProfile*> physician_profile_locked(const UserAccount& user,
                                                         std::string_view patient_id) const {
    if (user.role != Role::physician) return Error{Errc::forbidden, {}};
    auto it = profiles_.find(std::string(patient_id));
    if (it == profiles_.end()) return Error{Errc::not_found, "unknown patient"};
    if (it->second.physician_username != user.username) return Error{Errc::forbidden, {}};
    return &it->second;
  }

  std::optional<Prescription> active_locked(const std::string& patient_id) const {
    auto it = active_by_patient_.find(patient_id);
    if (it == active_by_patient_.end()) return std::nullopt;
    return prescriptions_[it->second];
  }

  /// New active version for the patient, validated against current limits.
  Result<Prescription> activate_locked(const std::string& patient_id, double volume_ml,
                                       double rate_ml_h) {
    auto profile = profiles_.find(patient_id);
    if (profile == profiles_.end()) return Error{Errc::not_found, "unknown patient"};
    Prescription rx{next_id("rx", prescriptions_.size()), patient_id, 1, volume_ml, rate_ml_h,
                    PrescriptionStatus::active};
    if (auto ok = validate_prescription(rx, profile->second); !ok) return ok.error();
    std::optional<std::size_t> previous;
    if (auto it = active_by_patient_.find(patient_id); it != active_by_patient_.end()) {
      previous = it->second;
      rx.version = prescriptions_[it->second].version + 1;
    }
    // New version first: a crash between the two appends replays to the
    // higher version being active.
    apply_prescription(rx);
    persist("prescriptions", rx);
    if (previous) {
      Prescription& old = prescriptions_[*previous];
      old.status = PrescriptionStatus::superseded;
      persist("prescriptions", old);
    }
    return rx;
  }

  template <typename T>
  void persist(std::string_view family, const T& entity) {
    if (log_) log_->append(family, json(entity));
  }

  // ---- replay-safe upserts

  void apply_user(const UserAccount& u) {
    users_.insert_or_assign(u.username, u);
    if (u.patient_id) patient_owner_.insert_or_assign(*u.patient_id, u.username);
  }

  void apply_device(const DeviceIdentity& d) {
    devices_.insert_or_assign(d.mac, d);
    device_by_owner_.insert_or_assign(d.owner_username, d.mac);
  }

  void apply_profile(const PatientProfile& p) { profiles_.insert_or_assign(p.patient_id, p); }

  void apply_prescription(const Prescription& p) {
    auto [it, inserted] = prescription_index_.try_emplace(p.prescription_id, prescriptions_.size());
    if (inserted) prescriptions_.push_back(p);
    else prescriptions_[it->second] = p;
    const std::size_t idx = it->second;
    auto active = active_by_patient_.find(p.patient_id);
    if (p.status == PrescriptionStatus::active) {
      if (active == active_by_patient_.end() || prescriptions_[active->second].version <= p.version)
        active_by_patient_[p.patient_id] = idx;
    } else if (active != active_by_patient_.end() && active->second == idx) {
      active_by_patient_.erase(active);
    }
  }

  void apply_proposal(const AdjustmentProposal& p) {
    auto [it, inserted] = proposal_index_.try_emplace(p.proposal_id, proposals_.size());
    if (inserted) proposals_.push_back(p);
    else proposals_[it->second] = p;
  }

  void apply_record(const InfusionRecord& r) {
    if (record_ids_.insert(r.record_id).second) records_.push_back(r);
  }

  void apply_family(std::string_view family, const json& j) {
    if (family == "users") apply_user(j.get<UserAccount>());
    else if (family == "devices") apply_device(j.get<DeviceIdentity>());
    else if (family == "profiles") apply_profile(j.get<PatientProfile>());
    else if (family == "prescriptions") apply_prescription(j.get<Prescription>());
    else if (family == "proposals") apply_proposal(j.get<AdjustmentProposal>());
    else if (family == "records") apply_record(j.get<InfusionRecord>());
    else if (family == "tokens" && config_.persist_tokens)
      tokens_.restore({j.get<AuthToken>()});
  }

  void load() {
    std::unique_lock lock(mu_);
    if (auto snapshot = log_->read_snapshot(); !snapshot.is_null()) {
      for (auto family : EventLog::kFamilies) {
        if (auto it = snapshot.find(std::string(family)); it != snapshot.end())
          for (const auto& entity : *it) apply_family(family, entity);
      }
    }
    for (auto family : EventLog::kFamilies)
      log_->replay(family, [&](const json& j) { apply_family(family, j); });
  }

  json state_json_locked(bool with_tokens) const {
    json state = json::object();
    auto& users = state["users"] = json::array();
    for (const auto& [_, u] : users_) users.push_back(u);
    auto& devices = state["devices"] = json::array();
    for (const auto& [_, d] : devices_) devices.push_back(d);
    auto& profiles = state["profiles"] = json::array();
    for (const auto& [_, p] : profiles_) profiles.push_back(p);
    state["prescriptions"] = prescriptions_;
    state["proposals"] = proposals_;
    state["records"] = records_;
    if (with_tokens) state["tokens"] = tokens_.snapshot();
    return state;
  }

  ServiceConfig config_;
  std::shared_ptr<const Clock> clock_;
  mutable std::shared_mutex mu_;
  TokenStore tokens_;
  std::unique_ptr<EventLog> log_;
  bool shut_down_ = false;
  std::atomic<std::uint64_t> issued_since_purge_{0};

  std::map<std::string, UserAccount> users_;
  std::map<std::string, std::string> patient_owner_;
  std::map<MacAddress, DeviceIdentity> devices_;
  std::map<std::string, MacAddress> device_by_owner_;
  std::map<std::string, PatientProfile> profiles_;
  std::vector<Prescription> prescriptions_;
  std::map<std::string, std::size_t> prescription_index_;
  std::map<std::string, std::size_t> active_by_patient_;
  std::vector<AdjustmentProposal> proposals_;
  std::map<std::string, std::size_t> proposal_index_;
  std::vector<InfusionRecord> records_;
  std::set<std::string> record_ids_;
  std::map<std::string, LiveProgress> progress_;
};

}  // namespace mediflow
