#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace ipscope {

enum class IpFamily : std::uint8_t { v4, v6 };

/// An IPv4 or IPv6 address in network byte order. IPv4 occupies the first
/// four bytes; the rest are zero.
class IpAddress {
 public:
  IpAddress() = default;

  static IpAddress v4(std::uint32_t host_order);
  static IpAddress v6(const std::array<std::uint8_t, 16>& bytes);

  /// Strict literal parse; no domain fallback, no canonicalization errors.
  static std::optional<IpAddress> parse(std::string_view text);

  IpFamily family() const noexcept { return family_; }
  bool is_v4() const noexcept { return family_ == IpFamily::v4; }
  unsigned bit_width() const noexcept { return is_v4() ? 32 : 128; }
  const std::array<std::uint8_t, 16>& bytes() const noexcept { return bytes_; }
  std::uint32_t v4_value() const noexcept;

  /// Bit `i` counted from the most significant bit.
  bool bit(unsigned i) const noexcept { return (bytes_[i / 8] >> (7 - i % 8)) & 1u; }

  /// Zeroes every bit past `prefix_len`.
  IpAddress masked(unsigned prefix_len) const noexcept;

  /// Dotted quad for IPv4, RFC 5952 text for IPv6.
  std::string to_string() const;

  auto operator<=>(const IpAddress&) const = default;

 private:
  IpFamily family_ = IpFamily::v4;
  std::array<std::uint8_t, 16> bytes_{};
};

struct IpPrefix {
  IpAddress network;
  unsigned length = 0;

  /// Parses `addr/len`; a bare address is a host prefix. Host bits past the
  /// length are cleared.
  static std::optional<IpPrefix> parse(std::string_view text);

  bool contains(const IpAddress& ip) const noexcept;
  std::string to_string() const;

  auto operator<=>(const IpPrefix&) const = default;
};

enum class TargetKind : std::uint8_t { ipv4, ipv6, domain };

std::string_view to_string(TargetKind kind) noexcept;
std::optional<TargetKind> target_kind_from_string(std::string_view text) noexcept;

class Target {
 public:
  /// The unspecified IPv4 address; placeholder for default-constructed records.
  Target() : kind_(TargetKind::ipv4), text_("0.0.0.0") {}

  TargetKind kind() const noexcept { return kind_; }
  const std::string& canonical_text() const noexcept { return text_; }
  bool is_ip() const noexcept { return kind_ != TargetKind::domain; }

  /// The address for ipv4/ipv6 targets; nullopt for domains.
  std::optional<IpAddress> address() const;

  static Target from_ip(const IpAddress& ip);

  bool operator==(const Target&) const = default;

 private:
  friend Target parse_target(std::string_view text);
  Target(TargetKind kind, std::string text) : kind_(kind), text_(std::move(text)) {}

  TargetKind kind_ = TargetKind::domain;
  std::string text_;
};

/// Classifies `text` as IPv4, then IPv6, then domain. All-numeric dotted text
/// is never reinterpreted as a domain. Throws ParseError naming the first
/// violated rule.
Target parse_target(std::string_view text);

enum class AddressScope : std::uint8_t { global, private_use, loopback, reserved };

/// `public`, `private`, `loopback`, `reserved`.
std::string_view to_string(AddressScope scope) noexcept;

/// Special-use registry lookup. Throws UnsupportedTarget for domains.
AddressScope classify_scope(const Target& t);
AddressScope classify_scope(const IpAddress& ip);

}  // namespace ipscope
