#pragma once

#include <chrono>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "ipscope/error.hpp"
#include "ipscope/model.hpp"
#include "ipscope/net.hpp"

namespace ipscope::probes {

struct WhoisOptions {
  std::string root_server = "whois.iana.org";
  /// Upper bound on servers consulted, root included.
  int max_hops = 3;
  std::chrono::milliseconds timeout{10000};
  std::size_t max_response_bytes = 1 << 20;
  /// Server name -> `host:port` to dial instead of `name:43`.
  std::map<std::string, std::string> server_overrides;
};

/// A referral pointed back at a server already consulted. Carries the record
/// parsed from the last distinct hop.
class ReferralLoop : public Error {
 public:
  ReferralLoop(const std::string& what, WhoisRecord partial);
  const WhoisRecord& partial() const noexcept { return partial_; }

 private:
  WhoisRecord partial_;
};

/// Referral target named in a response (`refer:`, `whois:`,
/// `Registrar WHOIS Server:`, `ReferralServer: whois://`), lowercased.
std::optional<std::string> find_referral(std::string_view response);

/// Fills registrar, nameservers and dates from `response`; keeps `raw`.
WhoisRecord parse_whois(std::string_view response);

/// Throws ConnectError, ReferralLoop, EmptyResponse, InvalidArgument.
WhoisRecord whois_lookup(const Target& query, const WhoisOptions& opts = {}, NetMeter* meter = nullptr);

}  // namespace ipscope::probes
