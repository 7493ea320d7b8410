#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ipscope/clock.hpp"
#include "ipscope/datasets.hpp"
#include "ipscope/dns.hpp"
#include "ipscope/model.hpp"

namespace ipscope::detectors {

struct DnsblZone {
  std::string zone;
  /// Answers meaning "listed". Empty means any 127.0.0.0/8 answer.
  std::vector<IpAddress> listed_codes;
  double weight = 1.0;
};

/// JSON array of `{zone, listed_codes?, weight?}`. Throws InvalidArgument.
std::vector<DnsblZone> zones_from_json(const json& j);

using HeaderMap = std::vector<std::pair<std::string, std::string>>;

struct HeaderFindings {
  HeaderMap suspicious_headers;
  Verdict verdict_contribution = Verdict::negative;
};

/// Via, X-Forwarded-For, Forwarded, Proxy-Connection, X-Proxy-Id.
const std::vector<std::string>& default_header_watch();

/// Ports whose exposure suggests an open proxy: 1080, 3128, 8080, 8888.
const std::vector<std::uint16_t>& default_proxy_ports();

/// Case-insensitive scan of `headers` for names in `watch`.
HeaderFindings scan_headers(const HeaderMap& headers, const std::vector<std::string>& watch);

struct DetectorConfig {
  /// Analyze private and loopback addresses too.
  bool allow_private = false;
  int threat_threshold = 50;
  std::vector<std::string> header_watch = default_header_watch();
  double dataset_weight = 1.0;
  double header_weight = 1.0;
  /// Multiplier applied to Evidence drawn from a dataset older than
  /// `dataset_max_age`.
  double stale_dataset_factor = 0.5;
  std::chrono::seconds dataset_max_age{7 * 24 * 3600};
  /// Weight of the open-proxy-port signal; 0 disables it.
  double open_proxy_port_weight = 0.0;
  int dnsbl_parallelism = 8;
};

/// Evidence the reputation providers returned for one target, all features
/// mixed. Detectors pick out their own feature.
using ProviderEvidence = std::vector<Evidence>;

/// True when passive detectors should look at `ip` under `cfg`.
bool in_scope(const Target& ip, const DetectorConfig& cfg);

class Detectors {
 public:
  Detectors(const datasets::Registry& registry, DetectorConfig cfg, const Clock& clock = system_clock());

  std::vector<Evidence> detect_tor(const Target& ip, const ProviderEvidence& providers = {}) const;
  std::vector<Evidence> detect_vpn(const Target& ip, const ProviderEvidence& providers = {}) const;

  /// `headers` is present only for requests observed by the service;
  /// `cached_scan` only when a fresh cached port scan exists.
  std::vector<Evidence> detect_proxy(const Target& ip, const ProviderEvidence& providers = {},
                                     const std::optional<HeaderMap>& headers = std::nullopt,
                                     const std::optional<PortScanResult>& cached_scan = std::nullopt) const;

  std::vector<Evidence> detect_bot(const Target& ip, const ProviderEvidence& providers = {}) const;

  /// Re-thresholds provider abuse scores at `threshold` (config default when
  /// omitted); score >= threshold is positive.
  std::vector<Evidence> detect_threat(const Target& ip, const ProviderEvidence& providers = {},
                                      std::optional<int> threshold = std::nullopt) const;

  /// One Evidence per zone. `resolver` null means no resolver is available.
  std::vector<Evidence> check_blocklists(const Target& ip, const std::vector<DnsblZone>& zones,
                                         const dns::Client* resolver) const;

  const DetectorConfig& config() const noexcept { return cfg_; }

 private:
  Evidence dataset_evidence(const std::string& id, FeatureKind feature, const Target& ip) const;
  std::vector<Evidence> scope_guard(const Target& ip, FeatureKind feature) const;

  const datasets::Registry* registry_;
  DetectorConfig cfg_;
  const Clock* clock_;
};

/// Picks `feature` items out of a mixed provider batch.
std::vector<Evidence> select_feature(const ProviderEvidence& providers, FeatureKind feature);

}  // namespace ipscope::detectors
