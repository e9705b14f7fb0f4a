#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mediflow/domain.hpp"

// Request/response shapes of the network layer. Field names here match the
// JSON keys in wire.hpp one to one.
namespace mediflow {

struct LoginRequest {
  std::string username;
  std::string password;
  std::optional<std::string> mac;  // physicians log in without one
};

/// Exactly four fields go back to the caller.
struct LoginResponse {
  std::string first_name;
  std::string last_name;
  std::string institute;
  std::string token;
};

/// Prescription as the pump sees it.
struct InfusionIndex {
  std::string prescription_id;
  std::int64_t version = 0;
  double volume_ml = 0;
  double rate_ml_h = 0;

  static InfusionIndex from(const Prescription& p) {
    return {p.prescription_id, p.version, p.volume_ml, p.rate_ml_h};
  }
  friend bool operator==(const InfusionIndex&, const InfusionIndex&) = default;
};

/// Optional progress report piggybacked on a poll; feeds the live status view.
struct DeliveryProgress {
  std::int64_t version = 0;
  double delivered_ml = 0;
  double elapsed_s = 0;
};

struct IndexRequest {
  std::string patient_id;
  std::optional<DeliveryProgress> progress;
};

struct IndexResponse {
  InfusionIndex infusion_index;
  std::string token;
};

enum class ProposalState { pending, approved, rejected };

constexpr std::string_view to_string(ProposalState s) noexcept {
  switch (s) {
    case ProposalState::pending: return "pending";
    case ProposalState::approved: return "approved";
    case ProposalState::rejected: return "rejected";
  }
  return "pending";
}

inline std::optional<ProposalState> proposal_state_from_string(std::string_view s) {
  if (s == "pending") return ProposalState::pending;
  if (s == "approved") return ProposalState::approved;
  if (s == "rejected") return ProposalState::rejected;
  return std::nullopt;
}

struct AdjustmentProposal {
  std::string proposal_id;
  std::string patient_id;
  double proposed_volume_ml = 0;
  double proposed_rate_ml_h = 0;
  ProposalState state = ProposalState::pending;
  std::optional<std::string> decided_by;
  std::optional<std::string> reason;  // "limit_exceeded" for automatic rejections
  Timestamp created_at{};

  friend bool operator==(const AdjustmentProposal&, const AdjustmentProposal&) = default;
};

enum class Decision { approve, reject };

struct LimitsResponse {
  PatientProfile profile;
  std::optional<std::string> warning;  // "active_prescription_exceeds_limits"
  std::vector<std::string> auto_rejected;
  std::string token;
};

struct DecisionResponse {
  AdjustmentProposal proposal;
  std::optional<Prescription> prescription;  // set on approve
  std::string token;
};

struct LiveProgress {
  std::int64_t version = 0;
  double delivered_ml = 0;
  double elapsed_s = 0;
  Timestamp updated_at{};
};

struct StatusResponse {
  std::string patient_id;
  PatientProfile profile;
  std::optional<Prescription> active;
  std::optional<LiveProgress> progress;
  std::vector<AdjustmentProposal> proposals;  // creation order
  std::string token;
};

struct HistoryResponse {
  std::string patient_id;
  std::vector<InfusionRecord> records;  // insertion order
  std::string token;
};

}  // namespace mediflow
