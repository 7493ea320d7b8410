#include "ipscope/auth.hpp"

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/hmac.h>
#include <openssl/rand.h>
#include <openssl/sha.h>

#include <cctype>
#include <charconv>

#include "ipscope/error.hpp"

namespace ipscope::auth {

namespace {

constexpr char kB32[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZ234567";

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    auto next = s.find(sep, pos);
    out.push_back(s.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
    if (next == std::string_view::npos) break;
    pos = next + 1;
  }
  return out;
}

template <typename T>
std::optional<T> to_number(std::string_view s) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

std::string uri_escape(std::string_view s) {
  static constexpr char digits[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '.' || c == '_' || c == '~') {
      out += static_cast<char>(c);
    } else {
      out += '%';
      out += digits[c >> 4];
      out += digits[c & 15];
    }
  }
  return out;
}

}  // namespace

std::string base32_encode(const Bytes& data) {
  std::string out;
  std::uint32_t buffer = 0;
  int bits = 0;
  for (auto b : data) {
    buffer = (buffer << 8) | b;
    bits += 8;
    while (bits >= 5) {
      out += kB32[(buffer >> (bits - 5)) & 31];
      bits -= 5;
    }
  }
  if (bits > 0) out += kB32[(buffer << (5 - bits)) & 31];
  return out;
}

std::optional<Bytes> base32_decode(std::string_view text) {
  Bytes out;
  std::uint32_t buffer = 0;
  int bits = 0;
  for (char ch : text) {
    if (ch == '=' || ch == ' ' || ch == '-') continue;
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    int v;
    if (c >= 'A' && c <= 'Z') {
      v = c - 'A';
    } else if (c >= '2' && c <= '7') {
      v = c - '2' + 26;
    } else {
      return std::nullopt;
    }
    buffer = (buffer << 5) | static_cast<std::uint32_t>(v);
    bits += 5;
    if (bits >= 8) {
      out.push_back(static_cast<std::uint8_t>(buffer >> (bits - 8)));
      bits -= 8;
    }
  }
  return out;
}

std::string hex(const Bytes& data) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(data.size() * 2);
  for (auto b : data) {
    out += digits[b >> 4];
    out += digits[b & 15];
  }
  return out;
}

Bytes random_bytes(std::size_t n) {
  Bytes out(n);
  if (n && RAND_bytes(out.data(), static_cast<int>(n)) != 1) throw IoError("random number generator failed");
  return out;
}

std::string random_token(std::size_t n) { return hex(random_bytes(n)); }

Bytes sha256(std::string_view data) {
  Bytes out(SHA256_DIGEST_LENGTH);
  SHA256(reinterpret_cast<const unsigned char*>(data.data()), data.size(), out.data());
  return out;
}

bool equal_ct(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  return CRYPTO_memcmp(a.data(), b.data(), a.size()) == 0;
}

std::uint32_t hotp(const Bytes& key, std::uint64_t counter, int digits) {
  unsigned char msg[8];
  for (int i = 7; i >= 0; --i) {
    msg[i] = static_cast<unsigned char>(counter & 0xff);
    counter >>= 8;
  }
  unsigned char mac[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  HMAC(EVP_sha1(), key.data(), static_cast<int>(key.size()), msg, sizeof msg, mac, &len);
  const int off = mac[len - 1] & 0x0f;
  const std::uint32_t bin = (static_cast<std::uint32_t>(mac[off] & 0x7f) << 24) |
                            (static_cast<std::uint32_t>(mac[off + 1]) << 16) |
                            (static_cast<std::uint32_t>(mac[off + 2]) << 8) | mac[off + 3];
  std::uint32_t mod = 1;
  for (int i = 0; i < digits; ++i) mod *= 10;
  return bin % mod;
}

std::uint64_t totp_counter(Timestamp t, int step) {
  const auto s = to_unix_seconds(t);
  return s < 0 ? 0 : static_cast<std::uint64_t>(s) / static_cast<std::uint64_t>(step);
}

std::string totp_code(const Bytes& key, Timestamp t) {
  std::string code = std::to_string(hotp(key, totp_counter(t), kTotpDigits));
  return std::string(kTotpDigits - code.size(), '0') + code;
}

bool totp_verify(const Bytes& key, std::string_view code, Timestamp t) {
  if (code.size() != kTotpDigits) return false;
  for (char c : code) {
    if (c < '0' || c > '9') return false;
  }
  const auto counter = totp_counter(t);
  bool ok = false;
  for (std::int64_t d = -1; d <= 1; ++d) {
    if (d < 0 && counter == 0) continue;
    std::string expect = std::to_string(hotp(key, counter + static_cast<std::uint64_t>(d), kTotpDigits));
    expect = std::string(kTotpDigits - expect.size(), '0') + expect;
    ok |= equal_ct(expect, code);
  }
  return ok;
}

std::string otpauth_uri(std::string_view secret_b32, std::string_view account, std::string_view issuer) {
  return "otpauth://totp/" + uri_escape(issuer) + ":" + uri_escape(account) + "?secret=" + std::string(secret_b32) +
         "&issuer=" + uri_escape(issuer) + "&algorithm=SHA1&digits=6&period=30";
}

namespace {

Bytes scrypt(std::string_view password, const Bytes& salt, const ScryptParams& p, std::size_t len) {
  Bytes out(len);
  const std::uint64_t maxmem = 128 * p.n * p.r * p.p + (64ull << 20);
  if (EVP_PBE_scrypt(password.data(), password.size(), salt.data(), salt.size(), p.n, p.r, p.p, maxmem, out.data(),
                     out.size()) != 1) {
    throw InvalidArgument("scrypt parameters rejected");
  }
  return out;
}

}  // namespace

std::string hash_password(std::string_view password, const ScryptParams& params) {
  const auto salt = random_bytes(16);
  const auto key = scrypt(password, salt, params, 32);
  return "scrypt$" + std::to_string(params.n) + "$" + std::to_string(params.r) + "$" + std::to_string(params.p) + "$" +
         base32_encode(salt) + "$" + base32_encode(key);
}

bool verify_password(std::string_view password, std::string_view encoded) {
  const auto parts = split(encoded, '$');
  if (parts.size() != 6 || parts[0] != "scrypt") return false;
  const auto n = to_number<std::uint64_t>(parts[1]);
  const auto r = to_number<std::uint32_t>(parts[2]);
  const auto p = to_number<std::uint32_t>(parts[3]);
  const auto salt = base32_decode(parts[4]);
  const auto want = base32_decode(parts[5]);
  if (!n || !r || !p || !salt || !want || want->empty()) return false;
  try {
    const auto got = scrypt(password, *salt, ScryptParams{*n, *r, *p}, want->size());
    return CRYPTO_memcmp(got.data(), want->data(), got.size()) == 0;
  } catch (const Error&) {
    return false;
  }
}

}  // namespace ipscope::auth
