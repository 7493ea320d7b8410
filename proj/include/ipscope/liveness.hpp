#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "ipscope/clock.hpp"
#include "ipscope/model.hpp"
#include "ipscope/net.hpp"

namespace ipscope::probes {

struct LivenessOptions {
  int attempts = 3;
  int timeout_ms = 1000;
  bool consent = false;
  /// When false the ICMP path is never tried.
  bool allow_icmp = true;
  /// Ports tried together by the TCP fallback.
  std::vector<std::uint16_t> tcp_ports{443, 80};
};

/// Median of `samples`; mean of the middle pair for even counts.
std::optional<double> median(std::vector<double> samples);

/// Whether this process may send ICMP echo requests.
bool icmp_available(bool v6 = false);

/// ICMP echo when permitted, else TCP connect to 443 and 80. A refused TCP
/// connect still proves the host is up. Throws ResolveError, ConsentRequired,
/// InvalidArgument.
LivenessResult check_liveness(const Target& target, const LivenessOptions& opts, NetMeter* meter = nullptr);

}  // namespace ipscope::probes
