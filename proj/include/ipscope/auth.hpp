#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ipscope/clock.hpp"

namespace ipscope::auth {

using Bytes = std::vector<std::uint8_t>;

/// RFC 4648 base32, upper case, no padding.
std::string base32_encode(const Bytes& data);
/// Case-insensitive; tolerates padding and spaces. nullopt on bad input.
std::optional<Bytes> base32_decode(std::string_view text);

std::string hex(const Bytes& data);
Bytes random_bytes(std::size_t n);
/// URL-safe random token of `n` bytes of entropy, hex encoded.
std::string random_token(std::size_t n = 24);

Bytes sha256(std::string_view data);
/// Constant-time comparison.
bool equal_ct(std::string_view a, std::string_view b);

/// HMAC-SHA1 one-time password with dynamic truncation.
std::uint32_t hotp(const Bytes& key, std::uint64_t counter, int digits = 6);

inline constexpr int kTotpStep = 30;
inline constexpr int kTotpDigits = 6;

std::uint64_t totp_counter(Timestamp t, int step = kTotpStep);
/// Zero-padded code for the step containing `t`.
std::string totp_code(const Bytes& key, Timestamp t);
/// Accepts the codes for steps t-1, t and t+1 exactly.
bool totp_verify(const Bytes& key, std::string_view code, Timestamp t);

std::string otpauth_uri(std::string_view secret_b32, std::string_view account, std::string_view issuer = "ipscope");

struct ScryptParams {
  std::uint64_t n = 1 << 15;
  std::uint32_t r = 8;
  std::uint32_t p = 1;
};

/// `scrypt$N$r$p$salt_b32$hash_b32`.
std::string hash_password(std::string_view password, const ScryptParams& params = {});
bool verify_password(std::string_view password, std::string_view encoded);

}  // namespace ipscope::auth
