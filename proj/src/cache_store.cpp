#include "ipscope/cache_store.hpp"

#include <algorithm>
#include <istream>
#include <mutex>
#include <ostream>

#include "ipscope/error.hpp"
#include "sqlite_db.hpp"

namespace ipscope::cache {

namespace {

constexpr std::int64_t kMsPerS = 1000;

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS cache_entries (
  target TEXT NOT NULL,
  feature TEXT NOT NULL,
  fragment TEXT NOT NULL,
  fetched_at_ms INTEGER NOT NULL,
  ttl_s INTEGER NOT NULL CHECK (ttl_s > 0),
  PRIMARY KEY (target, feature)
);
CREATE TABLE IF NOT EXISTS query_log (
  seq INTEGER PRIMARY KEY AUTOINCREMENT,
  target TEXT NOT NULL,
  features TEXT NOT NULL,
  user_id TEXT NOT NULL,
  at_ms INTEGER NOT NULL,
  cache_hits TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS query_log_target ON query_log (target, seq);
)sql";

FeatureKind feature_of(const std::string& s) {
  auto f = feature_from_string(s);
  if (!f) throw SerializationError("unknown feature in store: " + s);
  return *f;
}

}  // namespace

std::int64_t TtlPolicy::ttl_for(FeatureKind f) const {
  switch (f) {
    case FeatureKind::geolocation: return geolocation_s;
    case FeatureKind::whois: return whois_s;
    case FeatureKind::portscan: return portscan_s;
    case FeatureKind::liveness: return liveness_s;
    default: return detection_s;
  }
}

TtlPolicy TtlPolicy::from_json(const json& j) {
  TtlPolicy p;
  if (!j.is_object()) throw InvalidArgument("ttl config must be a JSON object");
  p.detection_s = j.value("detection_s", p.detection_s);
  p.geolocation_s = j.value("geolocation_s", p.geolocation_s);
  p.whois_s = j.value("whois_s", p.whois_s);
  p.portscan_s = j.value("portscan_s", p.portscan_s);
  p.liveness_s = j.value("liveness_s", p.liveness_s);
  p.max_stale_s = j.value("max_stale_s", p.max_stale_s);
  for (auto v : {p.detection_s, p.geolocation_s, p.whois_s, p.portscan_s, p.liveness_s}) {
    if (v <= 0) throw InvalidArgument("TTLs must be positive");
  }
  if (p.max_stale_s < 0) throw InvalidArgument("max_stale_s must be non-negative");
  return p;
}

json to_json(const QueryLogEntry& e) {
  json features = json::array();
  for (auto f : e.features) features.push_back(to_string(f));
  json hits = json::object();
  for (const auto& [f, hit] : e.cache_hits) hits[std::string(to_string(f))] = hit;
  return json{{"target", e.target},
              {"features", features},
              {"user_id", e.user_id},
              {"at", format_rfc3339(e.at)},
              {"cache_hits", hits}};
}

namespace {

class SqliteStore final : public CacheStore {
 public:
  SqliteStore(const std::string& path, const Clock& clock) : db_(path), clock_(&clock) {
    db_.exec(kSchema);
    auto s = db_.prepare("SELECT MAX(at_ms) FROM query_log");
    if (s.step() && !s.is_null(0)) last_log_ms_ = s.integer(0);
  }

  std::optional<std::string> get_fresh(const CacheKey& key) override {
    std::lock_guard lock(mu_);
    auto s = lookup(key);
    if (!s->step()) return std::nullopt;
    const auto now = to_unix_millis(clock_->now());
    if (now > s->integer(1) + s->integer(2) * kMsPerS) return std::nullopt;
    return s->text(0);
  }

  std::optional<StaleHit> get_stale_fallback(const CacheKey& key, std::int64_t max_stale_s) override {
    std::lock_guard lock(mu_);
    auto s = lookup(key);
    if (!s->step()) return std::nullopt;
    const auto now = to_unix_millis(clock_->now());
    const auto fetched = s->integer(1);
    const auto expiry = fetched + s->integer(2) * kMsPerS;
    if (now <= expiry || now > expiry + max_stale_s * kMsPerS) return std::nullopt;
    return StaleHit{s->text(0), from_unix_millis(fetched), (now - fetched) / kMsPerS};
  }

  Receipt put(const CacheKey& key, const std::string& fragment, std::int64_t ttl_s,
              std::optional<Timestamp> fetched_at) override {
    if (ttl_s <= 0) throw InvalidArgument("ttl_s must be positive");
    const auto parsed = json::parse(fragment, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object()) throw SerializationError("fragment is not a JSON object");
    const Timestamp at = fetched_at.value_or(clock_->now());
    std::lock_guard lock(mu_);
    db_.prepare(
           "INSERT INTO cache_entries (target, feature, fragment, fetched_at_ms, ttl_s) VALUES (?1, ?2, ?3, ?4, ?5) "
           "ON CONFLICT (target, feature) DO UPDATE SET fragment = excluded.fragment, "
           "fetched_at_ms = excluded.fetched_at_ms, ttl_s = excluded.ttl_s")
        .bind(1, key.target)
        .bind(2, to_string(key.feature))
        .bind(3, fragment)
        .bind(4, to_unix_millis(at))
        .bind(5, ttl_s)
        .exec();
    return Receipt{key, at, at + std::chrono::seconds(ttl_s)};
  }

  QueryLogEntry log_query(QueryLogEntry entry) override {
    std::lock_guard lock(mu_);
    auto at_ms = std::max(to_unix_millis(entry.at), last_log_ms_);
    entry.at = from_unix_millis(at_ms);
    json features = json::array();
    for (auto f : entry.features) features.push_back(to_string(f));
    json hits = json::object();
    for (const auto& [f, hit] : entry.cache_hits) hits[std::string(to_string(f))] = hit;
    db_.prepare("INSERT INTO query_log (target, features, user_id, at_ms, cache_hits) VALUES (?1, ?2, ?3, ?4, ?5)")
        .bind(1, entry.target)
        .bind(2, features.dump())
        .bind(3, entry.user_id)
        .bind(4, at_ms)
        .bind(5, hits.dump())
        .exec();
    last_log_ms_ = at_ms;
    return entry;
  }

  std::vector<QueryLogEntry> history(const std::optional<std::string>& target, int limit,
                                     const std::optional<std::string>& user_id) override {
    if (limit < 1 || limit > 1000) throw InvalidArgument("limit must be in 1..1000");
    std::lock_guard lock(mu_);
    auto s = db_.prepare(
        "SELECT target, features, user_id, at_ms, cache_hits FROM query_log "
        "WHERE (?1 IS NULL OR target = ?1) AND (?2 IS NULL OR user_id = ?2) ORDER BY seq DESC LIMIT ?3");
    s.bind_opt(1, target).bind_opt(2, user_id).bind(3, static_cast<std::int64_t>(limit));
    std::vector<QueryLogEntry> out;
    while (s.step()) {
      QueryLogEntry e;
      e.target = s.text(0);
      for (const auto& f : json::parse(s.text(1))) e.features.insert(feature_of(f.get<std::string>()));
      e.user_id = s.text(2);
      e.at = from_unix_millis(s.integer(3));
      const json hits = json::parse(s.text(4));
      for (const auto& [f, hit] : hits.items()) e.cache_hits[feature_of(f)] = hit.get<bool>();
      out.push_back(std::move(e));
    }
    return out;
  }

  std::int64_t purge_expired(std::int64_t grace_s) override {
    if (grace_s < 0) throw InvalidArgument("grace_s must be non-negative");
    std::lock_guard lock(mu_);
    db_.prepare("DELETE FROM cache_entries WHERE ?1 > fetched_at_ms + (ttl_s + ?2) * 1000")
        .bind(1, to_unix_millis(clock_->now()))
        .bind(2, grace_s)
        .exec();
    return db_.changes();
  }

  std::int64_t export_jsonl(std::ostream& out) override {
    std::lock_guard lock(mu_);
    auto s = db_.prepare(
        "SELECT target, feature, fragment, fetched_at_ms, ttl_s FROM cache_entries ORDER BY target, feature");
    std::int64_t n = 0;
    while (s.step()) {
      json line{{"target", s.text(0)},
                {"feature", s.text(1)},
                {"fragment", json::parse(s.text(2))},
                {"fetched_at", format_rfc3339(from_unix_millis(s.integer(3)))},
                {"ttl_s", s.integer(4)}};
      out << line.dump() << '\n';
      ++n;
    }
    return n;
  }

  std::int64_t import_jsonl(std::istream& in) override {
    std::vector<std::tuple<CacheKey, std::string, std::int64_t, std::int64_t>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      try {
        const auto j = json::parse(line);
        CacheKey key{j.at("target").get<std::string>(), feature_of(j.at("feature").get<std::string>())};
        const auto& frag = j.at("fragment");
        if (!frag.is_object()) throw SerializationError("fragment is not an object");
        auto at = parse_rfc3339(j.at("fetched_at").get<std::string>());
        if (!at) throw SerializationError("bad fetched_at");
        const auto ttl = j.at("ttl_s").get<std::int64_t>();
        if (ttl <= 0) throw SerializationError("ttl_s must be positive");
        rows.emplace_back(key, frag.dump(), to_unix_millis(*at), ttl);
      } catch (const json::exception& e) {
        throw SerializationError("import line " + std::to_string(lineno) + ": " + e.what());
      } catch (const Error& e) {
        throw SerializationError("import line " + std::to_string(lineno) + ": " + e.what());
      }
    }
    std::lock_guard lock(mu_);
    sql::Transaction tx(db_);
    std::int64_t n = 0;
    for (const auto& [key, frag, at_ms, ttl] : rows) {
      db_.prepare(
             "INSERT INTO cache_entries (target, feature, fragment, fetched_at_ms, ttl_s) VALUES (?1, ?2, ?3, ?4, ?5) "
             "ON CONFLICT (target, feature) DO UPDATE SET fragment = excluded.fragment, "
             "fetched_at_ms = excluded.fetched_at_ms, ttl_s = excluded.ttl_s "
             "WHERE excluded.fetched_at_ms > cache_entries.fetched_at_ms")
          .bind(1, key.target)
          .bind(2, to_string(key.feature))
          .bind(3, frag)
          .bind(4, at_ms)
          .bind(5, ttl)
          .exec();
      n += db_.changes();
    }
    tx.commit();
    return n;
  }

 private:
  std::unique_ptr<sql::Stmt> lookup(const CacheKey& key) {
    auto s = std::make_unique<sql::Stmt>(
        db_.raw(), "SELECT fragment, fetched_at_ms, ttl_s FROM cache_entries WHERE target = ?1 AND feature = ?2");
    s->bind(1, key.target).bind(2, to_string(key.feature));
    return s;
  }

  std::mutex mu_;
  sql::Db db_;
  const Clock* clock_;
  std::int64_t last_log_ms_ = 0;
};

}  // namespace

std::unique_ptr<CacheStore> open_sqlite_store(const std::string& path, const Clock& clock) {
  return std::make_unique<SqliteStore>(path, clock);
}

}  // namespace ipscope::cache
