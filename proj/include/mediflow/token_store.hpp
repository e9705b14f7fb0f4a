#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mediflow/crypto.hpp"
#include "mediflow/result.hpp"
#include "mediflow/time.hpp"

namespace mediflow {

inline constexpr Millis kDefaultTokenTtl = std::chrono::seconds{300};

/// One-time-use bearer credential. Valid on [issued_at, expires_at).
struct AuthToken {
  std::string value;
  std::string principal;
  Timestamp issued_at{};
  Timestamp expires_at{};
  bool consumed = false;

  friend bool operator==(const AuthToken&, const AuthToken&) = default;
};

/// Server-side registry of opaque tokens. Tokens carry no claims; every
/// check is a lookup here, and consumption is a single check-and-set under
/// the store's lock.
class TokenStore {
 public:
  using PrincipalLookup = std::function<bool(std::string_view)>;

  explicit TokenStore(Millis ttl = kDefaultTokenTtl, PrincipalLookup known = {})
      : ttl_(ttl), known_(std::move(known)) {
    if (ttl_ <= Millis::zero()) throw std::invalid_argument("token TTL must be positive");
  }

  Millis ttl() const noexcept { return ttl_; }

  Result<AuthToken> issue(std::string_view principal, Timestamp now) {
    if (principal.empty() || (known_ && !known_(principal)))
      return Error{Errc::unknown_principal, std::string(principal)};
    AuthToken token{crypto::random_token(), std::string(principal), now, now + ttl_, false};
    std::lock_guard lock(mu_);
    // 256-bit values; a collision means the RNG is broken.
    if (!tokens_.emplace(token.value, token).second)
      return Error{Errc::internal, "token collision"};
    return token;
  }

  /// Returns the principal on success and marks the token consumed.
  Result<std::string> consume(std::string_view value, Timestamp now) {
    std::lock_guard lock(mu_);
    auto it = tokens_.find(std::string(value));
    if (it == tokens_.end()) return Error{Errc::token_invalid, {}};
    AuthToken& token = it->second;
    if (token.consumed) return Error{Errc::token_reused, {}};
    if (now >= token.expires_at) return Error{Errc::token_expired, {}};
    token.consumed = true;
    return token.principal;
  }

  /// Drops every token with expires_at <= now, consumed or not.
  std::size_t purge_expired(Timestamp now) {
    std::lock_guard lock(mu_);
    return std::erase_if(tokens_, [now](const auto& kv) { return kv.second.expires_at <= now; });
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return tokens_.size();
  }

  std::optional<AuthToken> find(std::string_view value) const {
    std::lock_guard lock(mu_);
    auto it = tokens_.find(std::string(value));
    if (it == tokens_.end()) return std::nullopt;
    return it->second;
  }

  std::vector<AuthToken> snapshot() const {
    std::lock_guard lock(mu_);
    std::vector<AuthToken> out;
    out.reserve(tokens_.size());
    for (const auto& [_, t] : tokens_) out.push_back(t);
    return out;
  }

  void restore(const std::vector<AuthToken>& tokens) {
    std::lock_guard lock(mu_);
    for (const auto& t : tokens) tokens_.insert_or_assign(t.value, t);
  }

 private:
  Millis ttl_;
  PrincipalLookup known_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, AuthToken> tokens_;
};

}  // namespace mediflow
