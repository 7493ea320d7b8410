#include "ipscope/net.hpp"

#include "ipscope/error.hpp"

namespace ipscope {

std::string_view to_string(Channel c) noexcept {
  switch (c) {
    case Channel::http: return "http";
    case Channel::dns: return "dns";
    case Channel::tcp: return "tcp";
    case Channel::whois: return "whois";
    case Channel::icmp: return "icmp";
  }
  return "unknown";
}

void NetMeter::begin(Channel c) {
  if (offline_.load()) {
    throw OfflineViolation("network operation (" + std::string(to_string(c)) + ") attempted in offline mode");
  }
  counts_[static_cast<std::size_t>(c)].fetch_add(1);
}

std::uint64_t NetMeter::total() const noexcept {
  std::uint64_t sum = 0;
  for (const auto& c : counts_) sum += c.load();
  return sum;
}

void NetMeter::reset() noexcept {
  for (auto& c : counts_) c.store(0);
}

NetMeter& default_meter() {
  static NetMeter meter;
  return meter;
}

}  // namespace ipscope
