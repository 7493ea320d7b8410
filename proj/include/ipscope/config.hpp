#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "ipscope/aggregator.hpp"
#include "ipscope/cache_store.hpp"
#include "ipscope/datasets.hpp"
#include "ipscope/detectors.hpp"
#include "ipscope/dns.hpp"
#include "ipscope/reputation.hpp"
#include "ipscope/whois.hpp"

namespace ipscope {

struct DatasetSource {
  std::string id;
  datasets::DatasetKind kind = datasets::DatasetKind::exact_ips;
  /// Local file loaded at startup; may be empty.
  std::string path;
  /// Where `datasets refresh` fetches from; defaults to `path`.
  std::string source_uri;
};

struct ProbeDefaults {
  int scan_timeout_ms = 1000;
  int scan_parallelism = 64;
  std::string scan_port_set = "top20";
  int ping_attempts = 3;
  int ping_timeout_ms = 1000;
  bool allow_icmp = true;
};

struct Config {
  std::string listen = "127.0.0.1:8080";
  std::string store_path = "ipscope.db";
  /// Defaults to `store_path`.
  std::string users_path;
  std::vector<DatasetSource> datasets;
  std::vector<reputation::ProviderConfig> providers;
  std::vector<detectors::DnsblZone> dnsbl_zones;
  /// Unset means the system resolver.
  std::optional<dns::ResolverConfig> dns;
  probes::WhoisOptions whois;
  aggregator::WeightPolicy weights;
  cache::TtlPolicy ttl;
  detectors::DetectorConfig detectors;
  ProbeDefaults probes;
  std::chrono::seconds session_ttl{3600};
  /// Static files served at `/` by `serve`, if set.
  std::string console_dir;
  /// Directory relative paths were resolved against.
  std::string base_dir = ".";
};

/// Parses a config document. Relative paths resolve against `base_dir`.
/// Throws InvalidArgument.
Config config_from_json(const json& j, const std::string& base_dir = ".");

/// Reads and parses `path`. Throws IoError or InvalidArgument.
Config load_config(const std::string& path);

/// `explicit_path`, else $IPSCOPE_CONFIG, else nullopt.
std::optional<std::string> resolve_config_path(const std::optional<std::string>& explicit_path);

}  // namespace ipscope
