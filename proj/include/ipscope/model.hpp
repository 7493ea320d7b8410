#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "ipscope/clock.hpp"
#include "ipscope/target.hpp"

namespace ipscope {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

enum class FeatureKind : std::uint8_t {
  geolocation,
  tor,
  vpn,
  proxy,
  bot,
  threat,
  blocklist,
  portscan,
  liveness,
  whois,
};

using FeatureSet = std::set<FeatureKind>;

std::string_view to_string(FeatureKind f) noexcept;
std::optional<FeatureKind> feature_from_string(std::string_view text) noexcept;
/// Comma separated list, e.g. `tor,vpn`. Throws InvalidArgument on unknown names.
FeatureSet parse_feature_list(std::string_view text);

/// Detection features are scored from Evidence; the rest carry probe or
/// dataset records.
bool is_detection_feature(FeatureKind f) noexcept;
const FeatureSet& all_features();
const FeatureSet& detection_features();
/// Features an analyze call runs when none are requested: everything passive.
const FeatureSet& default_analyze_features();

enum class Verdict : std::uint8_t { positive, negative, unknown };
enum class ResultVerdict : std::uint8_t { positive, negative, no_data };

std::string_view to_string(Verdict v) noexcept;
std::string_view to_string(ResultVerdict v) noexcept;
std::optional<Verdict> verdict_from_string(std::string_view text) noexcept;

struct Evidence {
  std::string provider_id;
  FeatureKind feature = FeatureKind::tor;
  Verdict verdict = Verdict::unknown;
  double weight = 1.0;
  json raw = json::object();
  Timestamp fetched_at{};
  std::int64_t latency_ms = 0;
};

struct FeatureResult {
  FeatureKind feature = FeatureKind::tor;
  ResultVerdict verdict = ResultVerdict::no_data;
  std::optional<int> confidence;
  std::vector<Evidence> evidence;
};

struct GeoRecord {
  IpPrefix cidr;
  std::string country;
  std::string city;
  double latitude = 0;
  double longitude = 0;
};

enum class PortState : std::uint8_t { open, closed, filtered };
std::string_view to_string(PortState s) noexcept;

struct PortEntry {
  std::uint16_t port = 0;
  PortState state = PortState::filtered;
  std::optional<double> latency_ms;
};

struct PortScanParams {
  int timeout_ms = 1000;
  int parallelism = 64;
  std::string port_set_name;
};

struct PortScanResult {
  Target target;
  std::vector<PortEntry> entries;
  Timestamp started_at{};
  Timestamp finished_at{};
  PortScanParams params;
};

enum class LivenessMethod : std::uint8_t { icmp_echo, tcp_connect };
std::string_view to_string(LivenessMethod m) noexcept;

struct LivenessResult {
  LivenessMethod method = LivenessMethod::tcp_connect;
  bool reachable = false;
  std::optional<double> rtt_ms;
  int attempts = 1;
};

struct WhoisRecord {
  std::string queried;
  std::vector<std::string> server_chain;
  std::optional<std::string> registrar;
  std::vector<std::string> nameservers;
  std::optional<Timestamp> created;
  std::optional<Timestamp> updated;
  std::optional<Timestamp> expires;
  std::string raw;
};

struct AbuseReport {
  Timestamp reported_at{};
  std::vector<int> categories;
  std::string comment;
  std::string place;
};

struct AbuseSummary {
  std::string provider_id;
  int score = 0;
  int total_reports = 0;
  int window_days = 90;
  /// category code -> occurrences among the retained reports
  std::map<int, int> categories;
  std::vector<AbuseReport> reports;
  int excluded_reports = 0;
  std::optional<bool> is_tor;
  std::optional<std::string> isp;
};

struct AnalysisReport {
  Target target;
  std::map<FeatureKind, FeatureResult> results;
  std::optional<GeoRecord> geo;
  std::optional<PortScanResult> ports;
  std::optional<WhoisRecord> whois;
  std::optional<LivenessResult> liveness;
  std::optional<AbuseSummary> abuse;
  Timestamp generated_at{};
  std::map<FeatureKind, bool> from_cache;
  std::map<FeatureKind, bool> stale;
  int schema_version = kSchemaVersion;
  /// Top-level members this version does not understand, kept verbatim.
  json extensions = json::object();
};

void to_json(json& j, const Target& t);
void from_json(const json& j, Target& t);
void to_json(json& j, const Evidence& e);
void from_json(const json& j, Evidence& e);
void to_json(json& j, const FeatureResult& r);
void from_json(const json& j, FeatureResult& r);
void to_json(json& j, const GeoRecord& g);
void from_json(const json& j, GeoRecord& g);
void to_json(json& j, const PortScanResult& p);
void from_json(const json& j, PortScanResult& p);
void to_json(json& j, const LivenessResult& l);
void from_json(const json& j, LivenessResult& l);
void to_json(json& j, const WhoisRecord& w);
void from_json(const json& j, WhoisRecord& w);
void to_json(json& j, const AbuseSummary& a);
void from_json(const json& j, AbuseSummary& a);
void to_json(json& j, const AnalysisReport& r);
void from_json(const json& j, AnalysisReport& r);

/// Structural check of a report document against schema version 1. Returns
/// the list of problems; empty means valid.
std::vector<std::string> validate_report_json(const json& doc);

}  // namespace ipscope
