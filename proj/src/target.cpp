#include "ipscope/target.hpp"

#include <arpa/inet.h>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>

#include "ipscope/error.hpp"

namespace ipscope {

namespace {

constexpr std::size_t kMaxTargetLength = 1024;
constexpr std::size_t kMaxDomainLength = 253;
constexpr std::size_t kMaxLabelLength = 63;

bool all_digits_and_dots(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return c == '.' || std::isdigit(static_cast<unsigned char>(c));
  });
}

// Decimal dotted quad. Leading zeros are read as decimal and dropped on
// output. Returns an error description on failure.
std::optional<std::uint32_t> parse_ipv4(std::string_view s, std::string* why) {
  std::uint32_t value = 0;
  int parts = 0;
  std::size_t pos = 0;
  while (true) {
    const auto dot = s.find('.', pos);
    const auto part = s.substr(pos, dot == std::string_view::npos ? std::string_view::npos : dot - pos);
    if (part.empty() || part.size() > 3 ||
        !std::all_of(part.begin(), part.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      if (why) *why = "malformed IPv4 octet '" + std::string(part) + "'";
      return std::nullopt;
    }
    unsigned octet = 0;
    std::from_chars(part.data(), part.data() + part.size(), octet);
    if (octet > 255) {
      if (why) *why = "IPv4 octet out of range: " + std::string(part);
      return std::nullopt;
    }
    value = (value << 8) | octet;
    ++parts;
    if (dot == std::string_view::npos) break;
    if (parts == 4) {
      if (why) *why = "IPv4 address has more than four octets";
      return std::nullopt;
    }
    pos = dot + 1;
  }
  if (parts != 4) {
    if (why) *why = "IPv4 address needs four octets";
    return std::nullopt;
  }
  return value;
}

std::optional<std::array<std::uint8_t, 16>> parse_ipv6(std::string_view s) {
  if (s.find(':') == std::string_view::npos || s.size() > 45) return std::nullopt;
  std::string buf(s);
  std::array<std::uint8_t, 16> out{};
  if (inet_pton(AF_INET6, buf.c_str(), out.data()) != 1) return std::nullopt;
  return out;
}

std::string format_ipv6(const std::array<std::uint8_t, 16>& b) {
  std::array<unsigned, 8> words{};
  for (int i = 0; i < 8; ++i) words[i] = (unsigned(b[2 * i]) << 8) | b[2 * i + 1];

  // IPv4-mapped addresses keep the dotted tail.
  const bool mapped = std::all_of(words.begin(), words.begin() + 5, [](unsigned w) { return w == 0; }) &&
                      words[5] == 0xffff;
  const int hex_words = mapped ? 6 : 8;

  // Longest run of zero words, length >= 2, first one on ties.
  int best_start = -1, best_len = 0;
  for (int i = 0; i < hex_words;) {
    if (words[i] != 0) {
      ++i;
      continue;
    }
    int j = i;
    while (j < hex_words && words[j] == 0) ++j;
    if (j - i > best_len) {
      best_start = i;
      best_len = j - i;
    }
    i = j;
  }
  if (best_len < 2) best_start = -1;

  std::string out;
  char tmp[8];
  for (int i = 0; i < hex_words;) {
    if (i == best_start) {
      out += "::";
      i += best_len;
      continue;
    }
    if (!out.empty() && out.back() != ':') out += ':';
    std::snprintf(tmp, sizeof tmp, "%x", words[i]);
    out += tmp;
    ++i;
  }
  if (mapped) {
    if (!out.empty() && out.back() != ':') out += ':';
    std::snprintf(tmp, sizeof tmp, "%u", unsigned(b[12]));
    out += tmp;
    for (int i = 13; i < 16; ++i) {
      std::snprintf(tmp, sizeof tmp, ".%u", unsigned(b[i]));
      out += tmp;
    }
  }
  return out;
}

std::optional<std::string> normalize_domain(std::string_view s, std::string* why) {
  std::string text(s);
  std::transform(text.begin(), text.end(), text.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (!text.empty() && text.back() == '.') text.pop_back();
  if (text.empty()) {
    *why = "empty domain";
    return std::nullopt;
  }
  if (text.size() > kMaxDomainLength) {
    *why = "domain longer than 253 characters";
    return std::nullopt;
  }
  std::size_t pos = 0;
  while (true) {
    const auto dot = text.find('.', pos);
    const auto label = std::string_view(text).substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (label.empty()) {
      *why = "empty domain label";
      return std::nullopt;
    }
    if (label.size() > kMaxLabelLength) {
      *why = "domain label longer than 63 characters";
      return std::nullopt;
    }
    for (char c : label) {
      if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-')) {
        *why = std::string("invalid character '") + c + "' in domain label";
        return std::nullopt;
      }
    }
    if (label.front() == '-' || label.back() == '-') {
      *why = "domain label starts or ends with a hyphen";
      return std::nullopt;
    }
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  return text;
}

}  // namespace

IpAddress IpAddress::v4(std::uint32_t host_order) {
  IpAddress ip;
  ip.family_ = IpFamily::v4;
  ip.bytes_[0] = static_cast<std::uint8_t>(host_order >> 24);
  ip.bytes_[1] = static_cast<std::uint8_t>(host_order >> 16);
  ip.bytes_[2] = static_cast<std::uint8_t>(host_order >> 8);
  ip.bytes_[3] = static_cast<std::uint8_t>(host_order);
  return ip;
}

IpAddress IpAddress::v6(const std::array<std::uint8_t, 16>& bytes) {
  IpAddress ip;
  ip.family_ = IpFamily::v6;
  ip.bytes_ = bytes;
  return ip;
}

std::optional<IpAddress> IpAddress::parse(std::string_view text) {
  if (auto v4 = parse_ipv4(text, nullptr)) return IpAddress::v4(*v4);
  if (auto v6 = parse_ipv6(text)) return IpAddress::v6(*v6);
  return std::nullopt;
}

std::uint32_t IpAddress::v4_value() const noexcept {
  return (std::uint32_t(bytes_[0]) << 24) | (std::uint32_t(bytes_[1]) << 16) | (std::uint32_t(bytes_[2]) << 8) |
         bytes_[3];
}

IpAddress IpAddress::masked(unsigned prefix_len) const noexcept {
  IpAddress out = *this;
  const unsigned width = bit_width();
  for (unsigned i = prefix_len; i < width; ++i) {
    out.bytes_[i / 8] &= static_cast<std::uint8_t>(~(1u << (7 - i % 8)));
  }
  return out;
}

std::string IpAddress::to_string() const {
  if (is_v4()) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%u.%u.%u.%u", bytes_[0], bytes_[1], bytes_[2], bytes_[3]);
    return buf;
  }
  return format_ipv6(bytes_);
}

std::optional<IpPrefix> IpPrefix::parse(std::string_view text) {
  const auto slash = text.find('/');
  auto ip = IpAddress::parse(text.substr(0, slash));
  if (!ip) return std::nullopt;
  unsigned len = ip->bit_width();
  if (slash != std::string_view::npos) {
    const auto digits = text.substr(slash + 1);
    if (digits.empty() || digits.size() > 3) return std::nullopt;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), len);
    if (ec != std::errc{} || ptr != digits.data() + digits.size()) return std::nullopt;
    if (len > ip->bit_width()) return std::nullopt;
  }
  return IpPrefix{ip->masked(len), len};
}

bool IpPrefix::contains(const IpAddress& ip) const noexcept {
  return ip.family() == network.family() && ip.masked(length) == network;
}

std::string IpPrefix::to_string() const { return network.to_string() + "/" + std::to_string(length); }

std::string_view to_string(TargetKind kind) noexcept {
  switch (kind) {
    case TargetKind::ipv4: return "ipv4";
    case TargetKind::ipv6: return "ipv6";
    case TargetKind::domain: return "domain";
  }
  return "domain";
}

std::optional<TargetKind> target_kind_from_string(std::string_view text) noexcept {
  if (text == "ipv4") return TargetKind::ipv4;
  if (text == "ipv6") return TargetKind::ipv6;
  if (text == "domain") return TargetKind::domain;
  return std::nullopt;
}

std::optional<IpAddress> Target::address() const {
  if (!is_ip()) return std::nullopt;
  return IpAddress::parse(text_);
}

Target Target::from_ip(const IpAddress& ip) {
  return Target(ip.is_v4() ? TargetKind::ipv4 : TargetKind::ipv6, ip.to_string());
}

Target parse_target(std::string_view text) {
  if (text.empty()) throw ParseError("empty target");
  if (text.size() > kMaxTargetLength) throw ParseError("target longer than 1024 characters");

  if (all_digits_and_dots(text)) {
    std::string why;
    auto v4 = parse_ipv4(text, &why);
    if (!v4) throw ParseError(why);
    return Target::from_ip(IpAddress::v4(*v4));
  }
  if (auto v6 = parse_ipv6(text)) return Target::from_ip(IpAddress::v6(*v6));
  if (text.find(':') != std::string_view::npos) throw ParseError("malformed IPv6 address");

  std::string why;
  auto domain = normalize_domain(text, &why);
  if (!domain) throw ParseError(why);
  return Target(TargetKind::domain, std::move(*domain));
}

std::string_view to_string(AddressScope scope) noexcept {
  switch (scope) {
    case AddressScope::global: return "public";
    case AddressScope::private_use: return "private";
    case AddressScope::loopback: return "loopback";
    case AddressScope::reserved: return "reserved";
  }
  return "reserved";
}

namespace {

struct ScopeRange {
  const char* prefix;
  AddressScope scope;
};

// IANA IPv4/IPv6 special-purpose registries, reduced to the four buckets.
constexpr ScopeRange kV4Ranges[] = {
    {"0.0.0.0/8", AddressScope::reserved},        {"10.0.0.0/8", AddressScope::private_use},
    {"100.64.0.0/10", AddressScope::reserved},    {"127.0.0.0/8", AddressScope::loopback},
    {"169.254.0.0/16", AddressScope::reserved},   {"172.16.0.0/12", AddressScope::private_use},
    {"192.0.0.0/24", AddressScope::reserved},     {"192.0.2.0/24", AddressScope::reserved},
    {"192.88.99.0/24", AddressScope::reserved},   {"192.168.0.0/16", AddressScope::private_use},
    {"198.18.0.0/15", AddressScope::reserved},    {"198.51.100.0/24", AddressScope::reserved},
    {"203.0.113.0/24", AddressScope::reserved},   {"224.0.0.0/4", AddressScope::reserved},
    {"240.0.0.0/4", AddressScope::reserved},
};

constexpr ScopeRange kV6Ranges[] = {
    {"::1/128", AddressScope::loopback},      {"::/128", AddressScope::reserved},
    {"100::/64", AddressScope::reserved},     {"2001::/23", AddressScope::reserved},
    {"2001:db8::/32", AddressScope::reserved}, {"3fff::/20", AddressScope::reserved},
    {"fc00::/7", AddressScope::private_use},  {"fe80::/10", AddressScope::reserved},
    {"ff00::/8", AddressScope::reserved},
};

template <std::size_t N>
std::optional<AddressScope> match(const ScopeRange (&table)[N], const IpAddress& ip) {
  std::optional<AddressScope> best;
  unsigned best_len = 0;
  for (const auto& r : table) {
    const auto prefix = IpPrefix::parse(r.prefix);
    if (prefix->contains(ip) && (!best || prefix->length >= best_len)) {
      best = r.scope;
      best_len = prefix->length;
    }
  }
  return best;
}

}  // namespace

AddressScope classify_scope(const IpAddress& ip) {
  if (ip.is_v4()) return match(kV4Ranges, ip).value_or(AddressScope::global);

  const auto& b = ip.bytes();
  const bool mapped = std::all_of(b.begin(), b.begin() + 10, [](std::uint8_t x) { return x == 0; }) &&
                      b[10] == 0xff && b[11] == 0xff;
  if (mapped) {
    return classify_scope(IpAddress::v4((std::uint32_t(b[12]) << 24) | (std::uint32_t(b[13]) << 16) |
                                        (std::uint32_t(b[14]) << 8) | b[15]));
  }
  return match(kV6Ranges, ip).value_or(AddressScope::global);
}

AddressScope classify_scope(const Target& t) {
  if (t.kind() == TargetKind::domain) throw UnsupportedTarget("scope classification needs an IP address");
  return classify_scope(*t.address());
}

}  // namespace ipscope
