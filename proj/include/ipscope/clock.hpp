#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace ipscope {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

/// Time source. Everything that reasons about TTLs or TOTP steps takes one of
/// these so tests can pin the wall clock.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual Timestamp now() const = 0;
};

class SystemClock final : public Clock {
 public:
  Timestamp now() const override;
};

class ManualClock final : public Clock {
 public:
  explicit ManualClock(Timestamp start = Timestamp{}) : ms_(start.time_since_epoch().count()) {}

  Timestamp now() const override { return Timestamp{std::chrono::milliseconds{ms_.load()}}; }
  void set(Timestamp t) { ms_.store(t.time_since_epoch().count()); }
  void advance(std::chrono::milliseconds d) { ms_.fetch_add(d.count()); }

 private:
  std::atomic<std::int64_t> ms_;
};

const Clock& system_clock();

Timestamp from_unix_seconds(std::int64_t s);
std::int64_t to_unix_seconds(Timestamp t);
std::int64_t to_unix_millis(Timestamp t);
Timestamp from_unix_millis(std::int64_t ms);

/// RFC 3339 UTC rendering, e.g. `2024-05-01T12:00:00.250Z`. The fractional
/// part is omitted when the timestamp falls on a whole second.
std::string format_rfc3339(Timestamp t);

/// Accepts `YYYY-MM-DDTHH:MM:SS[.frac](Z|+hh:mm|-hh:mm)`; `t`/`z` and a space
/// separator are tolerated.
std::optional<Timestamp> parse_rfc3339(std::string_view text);

/// Plain `YYYY-MM-DD`, interpreted as midnight UTC.
std::optional<Timestamp> parse_iso_date(std::string_view text);

}  // namespace ipscope
