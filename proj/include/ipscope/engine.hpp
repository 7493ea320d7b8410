#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ipscope/aggregator.hpp"
#include "ipscope/cache_store.hpp"
#include "ipscope/clock.hpp"
#include "ipscope/config.hpp"
#include "ipscope/datasets.hpp"
#include "ipscope/detectors.hpp"
#include "ipscope/dns.hpp"
#include "ipscope/net.hpp"
#include "ipscope/reputation.hpp"

namespace ipscope {

struct AnalyzeRequest {
  Target target;
  /// Empty means the default passive set.
  FeatureSet features;
  bool allow_stale = true;
  bool force_refresh = false;
  /// No network at all: cache and local datasets only.
  bool offline = false;
  /// Owner consent for active probes against non-private targets.
  bool consent = false;
  std::string user_id = "local";
  /// Request headers seen by the service, for proxy header analysis.
  std::optional<detectors::HeaderMap> headers;
};

struct AnalyzeOutcome {
  AnalysisReport report;
  /// Features whose every source failed and no stale copy was available.
  FeatureSet failed;
  /// Every requested feature failed.
  bool total_failure = false;
};

/// Wires datasets, providers, probes, cache and scoring together.
class Engine {
 public:
  /// Loads configured datasets that exist on disk; missing files leave the
  /// dataset declared but unloaded. Throws StoreUnavailable.
  Engine(Config cfg, const Clock& clock = system_clock(), NetMeter* meter = nullptr);

  /// Throws ConsentRequired before any network activity when an active probe
  /// is requested for a target that needs consent.
  AnalyzeOutcome analyze(const AnalyzeRequest& req);

  const Config& config() const noexcept { return cfg_; }
  datasets::Registry& registry() noexcept { return registry_; }
  cache::CacheStore& store() noexcept { return *store_; }
  const std::vector<reputation::ProviderClientPtr>& providers() const noexcept { return providers_; }
  const detectors::Detectors& detectors() const noexcept { return detectors_; }
  NetMeter& meter() noexcept { return meter_or_default(meter_); }
  const Clock& clock() const noexcept { return *clock_; }

  /// DNS client for blocklists and domain resolution; null when no resolver
  /// is configured or found.
  const dns::Client* resolver() const noexcept { return resolver_.get(); }

  /// Warnings collected while loading (missing dataset files and the like).
  const std::vector<std::string>& warnings() const noexcept { return warnings_; }

 private:
  struct Live;
  aggregator::Fragment compute(FeatureKind f, const AnalyzeRequest& req, const std::optional<IpAddress>& ip,
                               Live& live, bool& failed);
  std::optional<IpAddress> resolve(const Target& t, bool offline);

  Config cfg_;
  const Clock* clock_;
  NetMeter* meter_;
  datasets::Registry registry_;
  std::unique_ptr<cache::CacheStore> store_;
  std::vector<reputation::ProviderClientPtr> providers_;
  detectors::Detectors detectors_;
  std::unique_ptr<dns::Client> resolver_;
  std::vector<std::string> warnings_;
};

/// Loads one configured dataset into `registry`.
datasets::DatasetManifest load_dataset(datasets::Registry& registry, const DatasetSource& src);

}  // namespace ipscope
