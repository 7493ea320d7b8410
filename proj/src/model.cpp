#include "ipscope/model.hpp"

#include <array>

#include "ipscope/error.hpp"

namespace ipscope {

namespace {

constexpr std::array<std::pair<FeatureKind, std::string_view>, 10> kFeatureNames{{
    {FeatureKind::geolocation, "geolocation"},
    {FeatureKind::tor, "tor"},
    {FeatureKind::vpn, "vpn"},
    {FeatureKind::proxy, "proxy"},
    {FeatureKind::bot, "bot"},
    {FeatureKind::threat, "threat"},
    {FeatureKind::blocklist, "blocklist"},
    {FeatureKind::portscan, "portscan"},
    {FeatureKind::liveness, "liveness"},
    {FeatureKind::whois, "whois"},
}};

std::string require_string(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_string()) {
    throw SerializationError(std::string("missing string field '") + key + "'");
  }
  return j.at(key).get<std::string>();
}

Timestamp require_time(const json& j, const char* key) {
  auto t = parse_rfc3339(require_string(j, key));
  if (!t) throw SerializationError(std::string("bad timestamp in '") + key + "'");
  return *t;
}

std::optional<Timestamp> optional_time(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return require_time(j, key);
}

void put_optional_time(json& j, const char* key, const std::optional<Timestamp>& t) {
  if (t) j[key] = format_rfc3339(*t);
}

FeatureKind require_feature(const json& j, const char* key) {
  auto f = feature_from_string(require_string(j, key));
  if (!f) throw SerializationError("unknown feature '" + j.at(key).get<std::string>() + "'");
  return *f;
}

}  // namespace

std::string_view to_string(FeatureKind f) noexcept {
  for (const auto& [kind, name] : kFeatureNames) {
    if (kind == f) return name;
  }
  return "unknown";
}

std::optional<FeatureKind> feature_from_string(std::string_view text) noexcept {
  for (const auto& [kind, name] : kFeatureNames) {
    if (name == text) return kind;
  }
  return std::nullopt;
}

FeatureSet parse_feature_list(std::string_view text) {
  FeatureSet out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    auto item = text.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    if (!item.empty()) {
      auto f = feature_from_string(item);
      if (!f) throw InvalidArgument("unknown feature '" + std::string(item) + "'");
      out.insert(*f);
    }
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

bool is_detection_feature(FeatureKind f) noexcept {
  switch (f) {
    case FeatureKind::tor:
    case FeatureKind::vpn:
    case FeatureKind::proxy:
    case FeatureKind::bot:
    case FeatureKind::threat:
    case FeatureKind::blocklist:
      return true;
    default:
      return false;
  }
}

const FeatureSet& all_features() {
  static const FeatureSet set = [] {
    FeatureSet s;
    for (const auto& [kind, name] : kFeatureNames) s.insert(kind);
    return s;
  }();
  return set;
}

const FeatureSet& detection_features() {
  static const FeatureSet set{FeatureKind::tor,    FeatureKind::vpn,    FeatureKind::proxy,
                              FeatureKind::bot,    FeatureKind::threat, FeatureKind::blocklist};
  return set;
}

const FeatureSet& default_analyze_features() {
  static const FeatureSet set{FeatureKind::geolocation, FeatureKind::tor,    FeatureKind::vpn,
                              FeatureKind::proxy,       FeatureKind::bot,    FeatureKind::threat,
                              FeatureKind::blocklist};
  return set;
}

std::string_view to_string(Verdict v) noexcept {
  switch (v) {
    case Verdict::positive: return "positive";
    case Verdict::negative: return "negative";
    case Verdict::unknown: return "unknown";
  }
  return "unknown";
}

std::string_view to_string(ResultVerdict v) noexcept {
  switch (v) {
    case ResultVerdict::positive: return "positive";
    case ResultVerdict::negative: return "negative";
    case ResultVerdict::no_data: return "no_data";
  }
  return "no_data";
}

std::optional<Verdict> verdict_from_string(std::string_view text) noexcept {
  if (text == "positive") return Verdict::positive;
  if (text == "negative") return Verdict::negative;
  if (text == "unknown") return Verdict::unknown;
  return std::nullopt;
}

std::string_view to_string(PortState s) noexcept {
  switch (s) {
    case PortState::open: return "open";
    case PortState::closed: return "closed";
    case PortState::filtered: return "filtered";
  }
  return "filtered";
}

std::string_view to_string(LivenessMethod m) noexcept {
  return m == LivenessMethod::icmp_echo ? "icmp_echo" : "tcp_connect";
}

// --- Target ---------------------------------------------------------------

void to_json(json& j, const Target& t) {
  j = json{{"kind", to_string(t.kind())}, {"text", t.canonical_text()}};
}

void from_json(const json& j, Target& t) {
  try {
    t = parse_target(require_string(j, "text"));
  } catch (const ParseError& e) {
    throw SerializationError(std::string("bad target: ") + e.what());
  }
  if (j.contains("kind") && j.at("kind") != to_string(t.kind())) {
    throw SerializationError("target kind does not match its text");
  }
}

// --- Evidence / FeatureResult ---------------------------------------------

void to_json(json& j, const Evidence& e) {
  j = json{{"provider_id", e.provider_id},
           {"feature", to_string(e.feature)},
           {"verdict", to_string(e.verdict)},
           {"weight", e.weight},
           {"raw", e.raw},
           {"fetched_at", format_rfc3339(e.fetched_at)},
           {"latency_ms", e.latency_ms}};
}

void from_json(const json& j, Evidence& e) {
  e.provider_id = require_string(j, "provider_id");
  e.feature = require_feature(j, "feature");
  auto v = verdict_from_string(require_string(j, "verdict"));
  if (!v) throw SerializationError("bad evidence verdict");
  e.verdict = *v;
  e.weight = j.value("weight", 1.0);
  if (e.weight < 0) throw SerializationError("negative evidence weight");
  e.raw = j.value("raw", json::object());
  e.fetched_at = require_time(j, "fetched_at");
  e.latency_ms = j.value("latency_ms", std::int64_t{0});
}

void to_json(json& j, const FeatureResult& r) {
  j = json{{"feature", to_string(r.feature)}, {"verdict", to_string(r.verdict)}, {"evidence", r.evidence}};
  j["confidence"] = r.confidence ? json(*r.confidence) : json(nullptr);
}

void from_json(const json& j, FeatureResult& r) {
  r.feature = require_feature(j, "feature");
  const auto v = require_string(j, "verdict");
  if (v == "positive") {
    r.verdict = ResultVerdict::positive;
  } else if (v == "negative") {
    r.verdict = ResultVerdict::negative;
  } else if (v == "no_data") {
    r.verdict = ResultVerdict::no_data;
  } else {
    throw SerializationError("bad result verdict '" + v + "'");
  }
  r.confidence.reset();
  if (j.contains("confidence") && !j.at("confidence").is_null()) r.confidence = j.at("confidence").get<int>();
  r.evidence = j.value("evidence", std::vector<Evidence>{});
}

// --- Records --------------------------------------------------------------

void to_json(json& j, const GeoRecord& g) {
  j = json{{"cidr", g.cidr.to_string()},
           {"country", g.country},
           {"city", g.city},
           {"latitude", g.latitude},
           {"longitude", g.longitude}};
}

void from_json(const json& j, GeoRecord& g) {
  auto p = IpPrefix::parse(require_string(j, "cidr"));
  if (!p) throw SerializationError("bad geo cidr");
  g.cidr = *p;
  g.country = require_string(j, "country");
  g.city = j.value("city", "");
  g.latitude = j.value("latitude", 0.0);
  g.longitude = j.value("longitude", 0.0);
}

void to_json(json& j, const PortScanResult& p) {
  json entries = json::array();
  for (const auto& e : p.entries) {
    json item{{"port", e.port}, {"state", to_string(e.state)}};
    if (e.latency_ms) item["latency_ms"] = *e.latency_ms;
    entries.push_back(std::move(item));
  }
  j = json{{"target", p.target},
           {"entries", std::move(entries)},
           {"started_at", format_rfc3339(p.started_at)},
           {"finished_at", format_rfc3339(p.finished_at)},
           {"params",
            {{"timeout_ms", p.params.timeout_ms},
             {"parallelism", p.params.parallelism},
             {"port_set_name", p.params.port_set_name}}}};
}

void from_json(const json& j, PortScanResult& p) {
  p.target = j.at("target").get<Target>();
  p.entries.clear();
  for (const auto& item : j.at("entries")) {
    PortEntry e;
    e.port = item.at("port").get<std::uint16_t>();
    const auto s = item.at("state").get<std::string>();
    e.state = s == "open" ? PortState::open : s == "closed" ? PortState::closed : PortState::filtered;
    if (item.contains("latency_ms")) e.latency_ms = item.at("latency_ms").get<double>();
    p.entries.push_back(e);
  }
  p.started_at = require_time(j, "started_at");
  p.finished_at = require_time(j, "finished_at");
  const auto& params = j.at("params");
  p.params.timeout_ms = params.value("timeout_ms", 1000);
  p.params.parallelism = params.value("parallelism", 64);
  p.params.port_set_name = params.value("port_set_name", "");
}

void to_json(json& j, const LivenessResult& l) {
  j = json{{"method", to_string(l.method)}, {"reachable", l.reachable}, {"attempts", l.attempts}};
  j["rtt_ms"] = l.rtt_ms ? json(*l.rtt_ms) : json(nullptr);
}

void from_json(const json& j, LivenessResult& l) {
  l.method = require_string(j, "method") == "icmp_echo" ? LivenessMethod::icmp_echo : LivenessMethod::tcp_connect;
  l.reachable = j.at("reachable").get<bool>();
  l.attempts = j.value("attempts", 1);
  l.rtt_ms.reset();
  if (j.contains("rtt_ms") && !j.at("rtt_ms").is_null()) l.rtt_ms = j.at("rtt_ms").get<double>();
}

void to_json(json& j, const WhoisRecord& w) {
  j = json{{"queried", w.queried},
           {"server_chain", w.server_chain},
           {"nameservers", w.nameservers},
           {"raw", w.raw}};
  j["registrar"] = w.registrar ? json(*w.registrar) : json(nullptr);
  put_optional_time(j, "created", w.created);
  put_optional_time(j, "updated", w.updated);
  put_optional_time(j, "expires", w.expires);
}

void from_json(const json& j, WhoisRecord& w) {
  w.queried = require_string(j, "queried");
  w.server_chain = j.at("server_chain").get<std::vector<std::string>>();
  w.nameservers = j.value("nameservers", std::vector<std::string>{});
  w.registrar.reset();
  if (j.contains("registrar") && j.at("registrar").is_string()) w.registrar = j.at("registrar").get<std::string>();
  w.created = optional_time(j, "created");
  w.updated = optional_time(j, "updated");
  w.expires = optional_time(j, "expires");
  w.raw = j.value("raw", "");
}

void to_json(json& j, const AbuseSummary& a) {
  json reports = json::array();
  for (const auto& r : a.reports) {
    reports.push_back({{"reported_at", format_rfc3339(r.reported_at)},
                       {"categories", r.categories},
                       {"comment", r.comment},
                       {"place", r.place}});
  }
  json categories = json::array();
  for (const auto& [code, count] : a.categories) categories.push_back({{"code", code}, {"count", count}});
  j = json{{"provider_id", a.provider_id},
           {"score", a.score},
           {"total_reports", a.total_reports},
           {"window_days", a.window_days},
           {"categories", std::move(categories)},
           {"reports", std::move(reports)},
           {"excluded_reports", a.excluded_reports}};
  j["is_tor"] = a.is_tor ? json(*a.is_tor) : json(nullptr);
  j["isp"] = a.isp ? json(*a.isp) : json(nullptr);
}

void from_json(const json& j, AbuseSummary& a) {
  a.provider_id = require_string(j, "provider_id");
  a.score = j.at("score").get<int>();
  if (a.score < 0 || a.score > 100) throw SerializationError("abuse score out of range");
  a.total_reports = j.value("total_reports", 0);
  a.window_days = j.value("window_days", 90);
  a.excluded_reports = j.value("excluded_reports", 0);
  a.categories.clear();
  for (const auto& c : j.value("categories", json::array())) a.categories[c.at("code").get<int>()] = c.at("count").get<int>();
  a.reports.clear();
  for (const auto& r : j.value("reports", json::array())) {
    AbuseReport rep;
    rep.reported_at = require_time(r, "reported_at");
    rep.categories = r.value("categories", std::vector<int>{});
    rep.comment = r.value("comment", "");
    rep.place = r.value("place", "");
    a.reports.push_back(std::move(rep));
  }
  a.is_tor.reset();
  if (j.contains("is_tor") && j.at("is_tor").is_boolean()) a.is_tor = j.at("is_tor").get<bool>();
  a.isp.reset();
  if (j.contains("isp") && j.at("isp").is_string()) a.isp = j.at("isp").get<std::string>();
}

// --- Report ---------------------------------------------------------------

namespace {

const std::array<std::string_view, 11> kReportKeys{"schema_version", "target", "generated_at", "results",
                                                   "geo",            "ports",  "whois",        "liveness",
                                                   "abuse",          "from_cache", "stale"};

bool is_known_key(std::string_view key) {
  for (auto k : kReportKeys) {
    if (k == key) return true;
  }
  return false;
}

template <typename T>
void put_optional(json& j, const char* key, const std::optional<T>& v) {
  j[key] = v ? json(*v) : json(nullptr);
}

template <typename T>
void get_optional(const json& j, const char* key, std::optional<T>& out) {
  out.reset();
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

json flag_map(const std::map<FeatureKind, bool>& flags) {
  json out = json::object();
  for (const auto& [f, v] : flags) out[std::string(to_string(f))] = v;
  return out;
}

std::map<FeatureKind, bool> read_flag_map(const json& j) {
  std::map<FeatureKind, bool> out;
  for (const auto& [k, v] : j.items()) {
    if (auto f = feature_from_string(k)) out[*f] = v.get<bool>();
  }
  return out;
}

}  // namespace

void to_json(json& j, const AnalysisReport& r) {
  j = r.extensions.is_object() ? r.extensions : json::object();
  json results = json::object();
  for (const auto& [f, res] : r.results) results[std::string(to_string(f))] = res;
  j["schema_version"] = r.schema_version;
  j["target"] = r.target;
  j["generated_at"] = format_rfc3339(r.generated_at);
  j["results"] = std::move(results);
  put_optional(j, "geo", r.geo);
  put_optional(j, "ports", r.ports);
  put_optional(j, "whois", r.whois);
  put_optional(j, "liveness", r.liveness);
  put_optional(j, "abuse", r.abuse);
  j["from_cache"] = flag_map(r.from_cache);
  j["stale"] = flag_map(r.stale);
}

void from_json(const json& j, AnalysisReport& r) {
  if (!j.is_object()) throw SerializationError("report must be a JSON object");
  r.schema_version = j.value("schema_version", 0);
  if (r.schema_version < 1) throw SerializationError("missing schema_version");
  r.target = j.at("target").get<Target>();
  r.generated_at = require_time(j, "generated_at");
  r.results.clear();
  for (const auto& [k, v] : j.at("results").items()) {
    auto f = feature_from_string(k);
    if (!f) continue;
    r.results[*f] = v.get<FeatureResult>();
  }
  get_optional(j, "geo", r.geo);
  get_optional(j, "ports", r.ports);
  get_optional(j, "whois", r.whois);
  get_optional(j, "liveness", r.liveness);
  get_optional(j, "abuse", r.abuse);
  r.from_cache = read_flag_map(j.value("from_cache", json::object()));
  r.stale = read_flag_map(j.value("stale", json::object()));
  r.extensions = json::object();
  for (const auto& [k, v] : j.items()) {
    if (!is_known_key(k)) r.extensions[k] = v;
  }
}

std::vector<std::string> validate_report_json(const json& doc) {
  std::vector<std::string> problems;
  auto need = [&](const char* key, bool ok, const char* what) {
    if (!ok) problems.push_back(std::string(key) + ": " + what);
  };
  if (!doc.is_object()) return {"document is not an object"};

  need("schema_version", doc.contains("schema_version") && doc["schema_version"].is_number_integer() &&
                             doc["schema_version"] == kSchemaVersion,
       "must be integer 1");
  need("target", doc.contains("target") && doc["target"].is_object(), "must be an object");
  need("generated_at", doc.contains("generated_at") && doc["generated_at"].is_string() &&
                           parse_rfc3339(doc["generated_at"].get<std::string>()).has_value(),
       "must be an RFC 3339 timestamp");
  need("results", doc.contains("results") && doc["results"].is_object(), "must be an object");
  need("from_cache", doc.contains("from_cache") && doc["from_cache"].is_object(), "must be an object");
  if (!problems.empty()) return problems;

  try {
    (void)doc["target"].get<Target>();
  } catch (const std::exception& e) {
    problems.push_back(std::string("target: ") + e.what());
  }

  for (const auto& [k, v] : doc["results"].items()) {
    auto f = feature_from_string(k);
    if (!f || !is_detection_feature(*f)) {
      problems.push_back("results." + k + ": not a detection feature");
      continue;
    }
    try {
      const auto res = v.get<FeatureResult>();
      if (res.feature != *f) problems.push_back("results." + k + ": feature field mismatch");
      const bool has_conf = res.confidence.has_value();
      if (has_conf == (res.verdict == ResultVerdict::no_data)) {
        problems.push_back("results." + k + ": confidence must be present iff verdict is not no_data");
      }
      if (has_conf && (*res.confidence < 0 || *res.confidence > 100)) {
        problems.push_back("results." + k + ": confidence out of range");
      }
      for (const auto& e : res.evidence) {
        if (e.feature != *f) problems.push_back("results." + k + ": evidence for another feature");
      }
    } catch (const std::exception& e) {
      problems.push_back("results." + k + ": " + e.what());
    }
  }

  auto check_optional = [&]<typename T>(const char* key, T*) {
    if (!doc.contains(key) || doc[key].is_null()) return;
    try {
      (void)doc[key].get<T>();
    } catch (const std::exception& e) {
      problems.push_back(std::string(key) + ": " + e.what());
    }
  };
  check_optional("geo", static_cast<GeoRecord*>(nullptr));
  check_optional("ports", static_cast<PortScanResult*>(nullptr));
  check_optional("whois", static_cast<WhoisRecord*>(nullptr));
  check_optional("liveness", static_cast<LivenessResult*>(nullptr));
  check_optional("abuse", static_cast<AbuseSummary*>(nullptr));

  for (const auto& [k, v] : doc["from_cache"].items()) {
    if (!feature_from_string(k)) problems.push_back("from_cache." + k + ": unknown feature");
    if (!v.is_boolean()) problems.push_back("from_cache." + k + ": must be boolean");
  }
  return problems;
}

}  // namespace ipscope
