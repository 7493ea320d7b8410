#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ipscope/clock.hpp"
#include "ipscope/model.hpp"

namespace ipscope::cache {

struct CacheKey {
  std::string target;  ///< canonical text
  FeatureKind feature = FeatureKind::tor;

  auto operator<=>(const CacheKey&) const = default;
};

struct Receipt {
  CacheKey key;
  Timestamp fetched_at{};
  Timestamp expires_at{};
};

struct StaleHit {
  std::string fragment;
  Timestamp fetched_at{};
  /// Seconds since `fetched_at`.
  std::int64_t age_s = 0;
};

struct QueryLogEntry {
  std::string target;
  FeatureSet features;
  std::string user_id;
  Timestamp at{};
  std::map<FeatureKind, bool> cache_hits;
};

json to_json(const QueryLogEntry& e);

/// Per-feature TTLs in seconds.
struct TtlPolicy {
  std::int64_t detection_s = 24 * 3600;
  std::int64_t geolocation_s = 7 * 24 * 3600;
  std::int64_t whois_s = 7 * 24 * 3600;
  std::int64_t portscan_s = 3600;
  std::int64_t liveness_s = 3600;
  std::int64_t max_stale_s = 24 * 3600;

  std::int64_t ttl_for(FeatureKind f) const;
  static TtlPolicy from_json(const json& j);
};

/// Fragment cache plus the query log. Implementations are safe for
/// concurrent use; writes to one key are last-write-wins.
class CacheStore {
 public:
  virtual ~CacheStore() = default;

  /// The fragment when `now <= fetched_at + ttl`.
  virtual std::optional<std::string> get_fresh(const CacheKey& key) = 0;

  /// An expired entry still within `max_stale_s` of its expiry.
  virtual std::optional<StaleHit> get_stale_fallback(const CacheKey& key, std::int64_t max_stale_s) = 0;

  /// Upsert. `fragment` must be a JSON object. Throws InvalidArgument for
  /// ttl_s <= 0 and SerializationError for a malformed fragment.
  virtual Receipt put(const CacheKey& key, const std::string& fragment, std::int64_t ttl_s,
                      std::optional<Timestamp> fetched_at = std::nullopt) = 0;

  /// Appends; `at` is clamped so the log never runs backwards.
  virtual QueryLogEntry log_query(QueryLogEntry entry) = 0;

  /// Newest first. `limit` in 1..1000.
  virtual std::vector<QueryLogEntry> history(const std::optional<std::string>& target, int limit,
                                             const std::optional<std::string>& user_id = std::nullopt) = 0;

  /// Removes entries past `fetched_at + ttl + grace_s`. The log is untouched.
  virtual std::int64_t purge_expired(std::int64_t grace_s) = 0;

  /// One JSON object per line: {target, feature, fragment, fetched_at, ttl_s}.
  virtual std::int64_t export_jsonl(std::ostream& out) = 0;
  /// Keeps whichever of the imported and existing entry is newer.
  virtual std::int64_t import_jsonl(std::istream& in) = 0;
};

/// SQLite-backed store in a single file (":memory:" for a private one).
/// Throws StoreUnavailable when the file cannot be opened.
std::unique_ptr<CacheStore> open_sqlite_store(const std::string& path, const Clock& clock = system_clock());

}  // namespace ipscope::cache
