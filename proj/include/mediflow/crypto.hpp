#pragma once

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/rand.h>

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mediflow::crypto {

inline void random_bytes(std::span<std::uint8_t> out) {
  if (RAND_bytes(out.data(), static_cast<int>(out.size())) != 1)
    throw std::runtime_error("RAND_bytes failed");
}

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s;
  s.reserve(bytes.size() * 2);
  for (auto b : bytes) {
    s.push_back(kDigits[b >> 4]);
    s.push_back(kDigits[b & 0x0F]);
  }
  return s;
}

inline std::vector<std::uint8_t> from_hex(std::string_view hex) {
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
  };
  if (hex.size() % 2) throw std::invalid_argument("odd-length hex");
  std::vector<std::uint8_t> out(hex.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const int hi = nibble(hex[2 * i]), lo = nibble(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw std::invalid_argument("bad hex digit");
    out[i] = static_cast<std::uint8_t>(hi * 16 + lo);
  }
  return out;
}

/// 32 random bytes as 64 lowercase hex characters.
inline std::string random_token() {
  std::array<std::uint8_t, 32> raw{};
  random_bytes(raw);
  return to_hex(raw);
}

inline constexpr int kDefaultPbkdf2Iterations = 10'000;

namespace detail {
inline std::array<std::uint8_t, 32> pbkdf2(std::string_view password,
                                           std::span<const std::uint8_t> salt, int iterations) {
  std::array<std::uint8_t, 32> out{};
  if (PKCS5_PBKDF2_HMAC(password.data(), static_cast<int>(password.size()), salt.data(),
                        static_cast<int>(salt.size()), iterations, EVP_sha256(),
                        static_cast<int>(out.size()), out.data()) != 1)
    throw std::runtime_error("PBKDF2 failed");
  return out;
}
}  // namespace detail

/// Encoded as "pbkdf2-sha256$<iterations>$<salt hex>$<hash hex>".
inline std::string hash_password(std::string_view password,
                                 int iterations = kDefaultPbkdf2Iterations) {
  std::array<std::uint8_t, 16> salt{};
  random_bytes(salt);
  const auto digest = detail::pbkdf2(password, salt, iterations);
  return "pbkdf2-sha256$" + std::to_string(iterations) + "$" + to_hex(salt) + "$" + to_hex(digest);
}

inline bool verify_password(std::string_view password, std::string_view encoded) {
  constexpr std::string_view kPrefix = "pbkdf2-sha256$";
  if (encoded.substr(0, kPrefix.size()) != kPrefix) return false;
  encoded.remove_prefix(kPrefix.size());
  const auto p1 = encoded.find('$');
  if (p1 == std::string_view::npos) return false;
  const auto p2 = encoded.find('$', p1 + 1);
  if (p2 == std::string_view::npos) return false;
  try {
    const int iterations = std::stoi(std::string(encoded.substr(0, p1)));
    if (iterations <= 0) return false;
    const auto salt = from_hex(encoded.substr(p1 + 1, p2 - p1 - 1));
    const auto expected = from_hex(encoded.substr(p2 + 1));
    if (expected.size() != 32) return false;
    const auto actual = detail::pbkdf2(password, salt, iterations);
    return CRYPTO_memcmp(actual.data(), expected.data(), actual.size()) == 0;
  } catch (const std::exception&) {
    return false;
  }
}

}  // namespace mediflow::crypto
