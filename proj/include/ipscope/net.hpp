#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <string>
#include <string_view>

namespace ipscope {

enum class Channel : std::uint8_t { http, dns, tcp, whois, icmp };
inline constexpr std::size_t kChannelCount = 5;

std::string_view to_string(Channel c) noexcept;

/// Counts every outbound network operation and enforces offline mode. All
/// code that touches the network calls `begin()` first.
class NetMeter {
 public:
  /// Records one outbound operation. Throws OfflineViolation when offline.
  void begin(Channel c);

  std::uint64_t count(Channel c) const noexcept { return counts_[static_cast<std::size_t>(c)].load(); }
  std::uint64_t total() const noexcept;
  void reset() noexcept;

  void set_offline(bool offline) noexcept { offline_.store(offline); }
  bool offline() const noexcept { return offline_.load(); }

 private:
  std::array<std::atomic<std::uint64_t>, kChannelCount> counts_{};
  std::atomic<bool> offline_{false};
};

/// Process-wide meter used when a caller does not supply one.
NetMeter& default_meter();

inline NetMeter& meter_or_default(NetMeter* m) { return m ? *m : default_meter(); }

}  // namespace ipscope
