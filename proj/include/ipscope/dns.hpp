#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ipscope/net.hpp"
#include "ipscope/target.hpp"

namespace ipscope::dns {

enum class Status { ok, nxdomain, servfail, timeout, error };

std::string_view to_string(Status s) noexcept;

struct Answer {
  Status status = Status::error;
  int rcode = -1;
  std::vector<IpAddress> addresses;
};

struct ResolverConfig {
  IpAddress server = IpAddress::v4(0x7f000001);
  std::uint16_t port = 53;
  std::chrono::milliseconds timeout{2000};
};

/// First `nameserver` line of /etc/resolv.conf, if any.
std::optional<ResolverConfig> system_resolver();

inline constexpr std::uint16_t kTypeA = 1;

/// Wire-format query with RD set and one question of class IN.
std::vector<std::uint8_t> encode_query(std::uint16_t id, std::string_view name, std::uint16_t qtype);

struct ParsedResponse {
  std::uint16_t id = 0;
  bool truncated = false;
  int rcode = 0;
  std::string question;
  std::vector<IpAddress> a_records;
};

/// Parses a response datagram; nullopt when malformed.
std::optional<ParsedResponse> parse_response(const std::uint8_t* data, std::size_t size);

/// Decodes the question name of a query datagram (used by test servers).
std::optional<std::string> parse_query_name(const std::uint8_t* data, std::size_t size, std::uint16_t* id = nullptr,
                                            std::uint16_t* qtype = nullptr);

/// Builds a response for `query` with the given rcode and A answers.
std::vector<std::uint8_t> build_response(const std::uint8_t* query, std::size_t size, int rcode,
                                         const std::vector<IpAddress>& a_records, bool truncated = false);

/// A-record stub resolver over UDP with TCP fallback on truncation.
class Client {
 public:
  explicit Client(ResolverConfig cfg, NetMeter* meter = nullptr) : cfg_(cfg), meter_(meter) {}

  Answer query_a(std::string_view name) const;

  const ResolverConfig& config() const noexcept { return cfg_; }

 private:
  Answer query_tcp(std::string_view name, std::uint16_t id) const;

  ResolverConfig cfg_;
  NetMeter* meter_;
};

/// `d.c.b.a.<zone>` for IPv4 a.b.c.d.
std::string dnsbl_query_name(const IpAddress& ip, std::string_view zone);

}  // namespace ipscope::dns
