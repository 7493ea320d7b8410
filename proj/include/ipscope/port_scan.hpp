#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "ipscope/clock.hpp"
#include "ipscope/model.hpp"
#include "ipscope/net.hpp"

namespace ipscope::probes {

/// Resolves a target to one address. Domains go through the system resolver.
/// Throws ResolveError.
IpAddress resolve_target(const Target& target, NetMeter* meter = nullptr);

/// Whether probing `ip` needs the owner's consent: anything that is not
/// loopback or private address space.
bool needs_consent(const IpAddress& ip);

/// Throws ConsentRequired when `ip` needs consent and `consent` is false.
void require_consent(const IpAddress& ip, bool consent);

/// top20, proxy, full_1_1024. Throws UnknownPortSet.
std::vector<std::uint16_t> default_port_set(std::string_view name);

/// A named set, a range `a-b`, or a comma list mixing both (`22,80,8000-8010`).
/// Result is sorted and de-duplicated. Throws InvalidArgument or UnknownPortSet.
std::vector<std::uint16_t> parse_port_spec(std::string_view spec);

struct ScanOptions {
  int timeout_ms = 1000;
  int parallelism = 64;
  std::string port_set_name;
  bool consent = false;
  /// Called with the in-flight connect count each time it changes.
  std::function<void(std::size_t)> on_inflight;
};

/// TCP connect scan. Throws ResolveError, ConsentRequired, InvalidArgument.
PortScanResult scan_ports(const Target& target, const std::vector<std::uint16_t>& ports, const ScanOptions& opts,
                          const Clock& clock = system_clock(), NetMeter* meter = nullptr);

}  // namespace ipscope::probes
